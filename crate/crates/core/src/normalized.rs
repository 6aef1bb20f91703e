//! The normalized chain `(z, p, q, Sigma, r)`, its smooth version with
//! `det(Sigma_hat) = 1`, the map between them and the projected chains obtained
//! when a cumulation rate equals one.

use nalgebra::DVector;
use rand::RngCore;

use crate::cma::{f_cov, f_path, weighted_outer, weighted_sum, Hyperparameters, RawState, Regime};
use crate::error::{Error, Result};
use crate::linalg::{eval_norm, rho, NormalizationFn, SpdMatrix};
use crate::objectives::{rank_centered, Objective, Ranking};
use crate::sampling::sample_batch;

/// State with `R(Sigma) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedState {
    pub z: DVector<f64>,
    pub p: DVector<f64>,
    pub q: DVector<f64>,
    pub sigma: SpdMatrix,
    pub r: f64,
}

/// State with `rho(Sigma_hat) = det(Sigma_hat)^{1/d} = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothState {
    pub z: DVector<f64>,
    pub p: DVector<f64>,
    pub q: DVector<f64>,
    pub sigma_hat: SpdMatrix,
    pub r: f64,
}

/// Reduced states of the regimes where `p`, `q` (and `r`) are redundant.
#[derive(Debug, Clone, PartialEq)]
pub enum ProjectedState {
    /// `c_sigma = 1`: `(z, q, Sigma_hat, r)`
    II {
        z: DVector<f64>,
        q: DVector<f64>,
        sigma_hat: SpdMatrix,
        r: f64,
    },
    /// `c_c = 1`: `(z, p, Sigma_hat)`
    III {
        z: DVector<f64>,
        p: DVector<f64>,
        sigma_hat: SpdMatrix,
    },
    /// `c_sigma = c_c = 1`: `(z, Sigma_hat)`
    IV { z: DVector<f64>, sigma_hat: SpdMatrix },
}

fn check_vec(v: &DVector<f64>, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_scalar(x: f64, what: &'static str) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

impl NormalizedState {
    pub fn dim(&self) -> usize {
        self.z.len()
    }

    /// `|R(Sigma) - 1|`
    pub fn normalization_defect(&self, norm: &NormalizationFn) -> Result<f64> {
        Ok((eval_norm(norm, &self.sigma)? - 1.0).abs())
    }
}

impl SmoothState {
    /// The canonical attracting state `(0, 0, 0, I, 1 - c_1 - c_mu)`.
    pub fn target(hp: &Hyperparameters) -> Self {
        let d = hp.dim;
        Self {
            z: DVector::zeros(d),
            p: DVector::zeros(d),
            q: DVector::zeros(d),
            sigma_hat: SpdMatrix::identity(d),
            r: hp.shrink(),
        }
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    /// `|rho(Sigma_hat) - 1|`
    pub fn normalization_defect(&self) -> f64 {
        (rho(&self.sigma_hat) - 1.0).abs()
    }

    /// `Sigma = Sigma_hat / R(Sigma_hat)`
    pub fn sigma(&self, norm: &NormalizationFn) -> Result<SpdMatrix> {
        Ok(self.sigma_hat.scaled(1.0 / eval_norm(norm, &self.sigma_hat)?))
    }

    fn check(&self) -> Result<()> {
        check_vec(&self.z, "z")?;
        check_vec(&self.p, "p")?;
        check_vec(&self.q, "q")?;
        check_scalar(self.r, "r")
    }
}

/// Normalizes raw states at times `t-1` and `t`.
pub fn normalize(prev: &RawState, cur: &RawState, x_star: &DVector<f64>, norm: &NormalizationFn) -> Result<NormalizedState> {
    let r_prev = eval_norm(norm, &prev.cov)?;
    let r_cur = eval_norm(norm, &cur.cov)?;
    Ok(NormalizedState {
        z: (&cur.m - x_star) / (cur.sigma * r_cur.sqrt()),
        p: cur.p_sigma.clone(),
        q: &cur.p_c / r_prev.sqrt(),
        sigma: cur.cov.scaled(1.0 / r_cur),
        r: r_cur / r_prev,
    })
}

/// Ranks `x* + z + sqrt(Sigma) U^i`.
pub fn rank_normalized(z: &DVector<f64>, sqrt_sigma: &SpdMatrix, f: &dyn Objective, batch: &[DVector<f64>]) -> Result<Ranking> {
    let offsets: Vec<DVector<f64>> = batch.iter().map(|u| z + sqrt_sigma.matrix() * u).collect();
    rank_centered(f, &offsets)
}

#[derive(Debug, Clone)]
pub struct NormalizedStep {
    pub state: NormalizedState,
    pub ranking: Ranking,
}

/// One step of the normalized chain on the batch `U^1..U^lambda`.
pub fn step_normalized(
    state: &NormalizedState,
    hp: &Hyperparameters,
    f: &dyn Objective,
    batch: &[DVector<f64>],
) -> Result<NormalizedStep> {
    let sqrt_sigma = state.sigma.sqrt();
    let ranking = rank_normalized(&state.z, &sqrt_sigma, f, batch)?;
    let next = step_normalized_ranked(state, hp, batch, &ranking)?;
    Ok(NormalizedStep { state: next, ranking })
}

/// Normalized update for an already ranked batch.
pub fn step_normalized_ranked(
    state: &NormalizedState,
    hp: &Hyperparameters,
    batch: &[DVector<f64>],
    ranking: &Ranking,
) -> Result<NormalizedState> {
    let selected: Vec<DVector<f64>> = ranking.order[..hp.mu].iter().map(|&i| batch[i].clone()).collect();
    let me = hp.mu_eff();
    let sqrt_sigma = state.sigma.sqrt();
    let ss = sqrt_sigma.matrix();
    let y = weighted_sum(&hp.weights, &selected);
    let sy = ss * &y;
    let p = f_path(&state.p, &y, hp.c_sigma, me);
    let q = &state.q * ((1.0 - hp.c_c) / state.r.sqrt()) + &sy * (hp.c_c * (2.0 - hp.c_c) * me).sqrt();
    let rank_mu = ss * weighted_outer(&hp.cov_weights, &selected) * ss;
    let tilde = f_cov(state.sigma.matrix(), &q, &rank_mu, hp.c_1, hp.c_mu)?;
    let r = eval_norm(&hp.norm, &tilde)?;
    let sigma = tilde.scaled(1.0 / r);
    let z = (&state.z + &sy * hp.c_m) / (r.sqrt() * hp.step_size_change(&p));
    let next = NormalizedState { z, p, q, sigma, r };
    check_vec(&next.z, "z")?;
    check_vec(&next.p, "p")?;
    check_vec(&next.q, "q")?;
    check_scalar(next.r, "r")?;
    Ok(next)
}

/// `Sigma -> Sigma / rho(Sigma)`
pub fn xi(y: &NormalizedState) -> SmoothState {
    SmoothState {
        z: y.z.clone(),
        p: y.p.clone(),
        q: y.q.clone(),
        sigma_hat: y.sigma.scaled(1.0 / rho(&y.sigma)),
        r: y.r,
    }
}

/// `Sigma_hat -> Sigma_hat / R(Sigma_hat)`
pub fn xi_inv(x: &SmoothState, norm: &NormalizationFn) -> Result<NormalizedState> {
    Ok(NormalizedState {
        z: x.z.clone(),
        p: x.p.clone(),
        q: x.q.clone(),
        sigma: x.sigma(norm)?,
        r: x.r,
    })
}

/// The smooth transition `F_Theta(theta, v)` for a selected block
/// `v = (v_1, .., v_mu)`, where `v_i = sqrt(Sigma) U^{s(i)}` in the stochastic
/// chain.
pub fn f_theta(theta: &SmoothState, v: &[DVector<f64>], hp: &Hyperparameters) -> Result<SmoothState> {
    if v.len() != hp.mu {
        return Err(Error::DimensionMismatch {
            expected: hp.mu,
            got: v.len(),
        });
    }
    let sigma = theta.sigma(&hp.norm)?;
    let me = hp.mu_eff();
    let wv = weighted_sum(&hp.weights, v);
    let p = f_path(&theta.p, &(sigma.inv_sqrt() * &wv), hp.c_sigma, me);
    let q = &theta.q * ((1.0 - hp.c_c) / theta.r.sqrt()) + &wv * (hp.c_c * (2.0 - hp.c_c) * me).sqrt();
    let a = f_cov(sigma.matrix(), &q, &weighted_outer(&hp.cov_weights, v), hp.c_1, hp.c_mu)?;
    let r = eval_norm(&hp.norm, &a)?;
    let once = a.scaled(1.0 / rho(&a));
    let sigma_hat = once.scaled(1.0 / rho(&once));
    let z = (&theta.z + &wv * hp.c_m) / (r.sqrt() * hp.step_size_change(&p));
    let next = SmoothState { z, p, q, sigma_hat, r };
    next.check()?;
    Ok(next)
}

/// The selection map: ranks `x* + z + sqrt(Sigma) U^i` and returns the block
/// `sqrt(Sigma) U^{s(i)}`, `i <= mu`.
pub fn alpha(theta: &SmoothState, hp: &Hyperparameters, f: &dyn Objective, batch: &[DVector<f64>]) -> Result<(Vec<DVector<f64>>, Ranking)> {
    let sqrt_sigma = theta.sigma(&hp.norm)?.sqrt();
    let ranking = rank_normalized(&theta.z, &sqrt_sigma, f, batch)?;
    let v = ranking.order[..hp.mu]
        .iter()
        .map(|&i| sqrt_sigma.matrix() * &batch[i])
        .collect();
    Ok((v, ranking))
}

pub fn step_smooth_with_batch(theta: &SmoothState, hp: &Hyperparameters, f: &dyn Objective, batch: &[DVector<f64>]) -> Result<SmoothState> {
    let (v, _) = alpha(theta, hp, f, batch)?;
    f_theta(theta, &v, hp)
}

pub fn step_smooth(theta: &SmoothState, hp: &Hyperparameters, f: &dyn Objective, rng: &mut dyn RngCore) -> Result<SmoothState> {
    let batch = sample_batch(hp.dist.as_ref(), rng, hp.lambda);
    step_smooth_with_batch(theta, hp, f, &batch)
}

fn justify(hp: &Hyperparameters, regime: Regime) -> Result<()> {
    if regime == Regime::I {
        return Err(Error::RegimeMismatch("regime i has no redundant coordinates".into()));
    }
    if regime.drops_p() && hp.c_sigma != 1.0 {
        return Err(Error::RegimeMismatch(format!(
            "dropping p requires c_sigma = 1, got {}",
            hp.c_sigma
        )));
    }
    if regime.drops_q() && hp.c_c != 1.0 {
        return Err(Error::RegimeMismatch(format!("dropping q requires c_c = 1, got {}", hp.c_c)));
    }
    Ok(())
}

/// Drops the coordinates that the regime makes redundant.
pub fn project(theta: &SmoothState, hp: &Hyperparameters, regime: Regime) -> Result<ProjectedState> {
    justify(hp, regime)?;
    let (z, sigma_hat) = (theta.z.clone(), theta.sigma_hat.clone());
    Ok(match regime {
        Regime::II => ProjectedState::II {
            z,
            q: theta.q.clone(),
            sigma_hat,
            r: theta.r,
        },
        Regime::III => ProjectedState::III {
            z,
            p: theta.p.clone(),
            sigma_hat,
        },
        Regime::IV => ProjectedState::IV { z, sigma_hat },
        Regime::I => unreachable!(),
    })
}

impl ProjectedState {
    pub fn regime(&self) -> Regime {
        match self {
            ProjectedState::II { .. } => Regime::II,
            ProjectedState::III { .. } => Regime::III,
            ProjectedState::IV { .. } => Regime::IV,
        }
    }

    pub fn z(&self) -> &DVector<f64> {
        match self {
            ProjectedState::II { z, .. } | ProjectedState::III { z, .. } | ProjectedState::IV { z, .. } => z,
        }
    }

    pub fn sigma_hat(&self) -> &SpdMatrix {
        match self {
            ProjectedState::II { sigma_hat, .. }
            | ProjectedState::III { sigma_hat, .. }
            | ProjectedState::IV { sigma_hat, .. } => sigma_hat,
        }
    }

    /// Full state with zeros standing in for the dropped path coordinates and
    /// `r = 1` when `r` is dropped.
    pub fn lift(&self) -> SmoothState {
        let d = self.z().len();
        let zero = DVector::zeros(d);
        match self {
            ProjectedState::II { z, q, sigma_hat, r } => SmoothState {
                z: z.clone(),
                p: zero,
                q: q.clone(),
                sigma_hat: sigma_hat.clone(),
                r: *r,
            },
            ProjectedState::III { z, p, sigma_hat } => SmoothState {
                z: z.clone(),
                p: p.clone(),
                q: zero,
                sigma_hat: sigma_hat.clone(),
                r: 1.0,
            },
            ProjectedState::IV { z, sigma_hat } => SmoothState {
                z: z.clone(),
                p: zero.clone(),
                q: zero,
                sigma_hat: sigma_hat.clone(),
                r: 1.0,
            },
        }
    }
}

/// One step of the projected chain on a given batch.
pub fn step_projected(state: &ProjectedState, hp: &Hyperparameters, f: &dyn Objective, batch: &[DVector<f64>]) -> Result<ProjectedState> {
    let regime = state.regime();
    justify(hp, regime)?;
    let next = step_smooth_with_batch(&state.lift(), hp, f, batch)?;
    project(&next, hp, regime)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cma::GammaVariant;
    use crate::objectives::Builtin;
    use nalgebra::DMatrix;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn normalize_identity_covariances() {
        let raw = RawState::new(v(&[1.0, 2.0]), 0.5, SpdMatrix::identity(2));
        let n = normalize(&raw, &raw, &v(&[1.0, 2.0]), &NormalizationFn::DetRoot).unwrap();
        assert_eq!(n.r, 1.0);
        assert_eq!(n.sigma, SpdMatrix::identity(2));
        assert_eq!(n.z, DVector::zeros(2));
    }

    #[test]
    fn zero_samples_shrink_r() {
        let hp = Hyperparameters::standard(3, GammaVariant::Csa1);
        let sigma = SpdMatrix::from_diagonal(&[2.0, 1.0, 0.5]).unwrap();
        let state = NormalizedState {
            z: DVector::zeros(3),
            p: v(&[0.3, 0.1, -0.2]),
            q: DVector::zeros(3),
            sigma: sigma.clone(),
            r: 0.9,
        };
        let batch = vec![DVector::zeros(3); hp.lambda];
        let out = step_normalized(&state, &hp, &Builtin::sphere(3), &batch).unwrap().state;
        assert_eq!(out.z, DVector::zeros(3));
        assert_eq!(out.q, DVector::zeros(3));
        assert!((out.r - hp.shrink()).abs() < 1e-15);
        assert!(out.sigma.frobenius_distance(&sigma) < 1e-14);
    }

    #[test]
    fn xi_examples() {
        let y = NormalizedState {
            z: DVector::zeros(2),
            p: DVector::zeros(2),
            q: DVector::zeros(2),
            sigma: SpdMatrix::identity(2),
            r: 1.0,
        };
        assert!(xi(&y).sigma_hat.frobenius_distance(&SpdMatrix::identity(2)) < 1e-15);
        let base = SpdMatrix::from_diagonal(&[2.0, 0.5]).unwrap();
        let norm = NormalizationFn::Eigen(2);
        let sigma = base.scaled(1.0 / eval_norm(&norm, &base).unwrap());
        let y = NormalizedState { sigma, ..y };
        let x = xi(&y);
        assert!(x.sigma_hat.frobenius_distance(&base) < 1e-14);
        let back = xi_inv(&x, &norm).unwrap();
        assert!(back.sigma.frobenius_distance(&y.sigma) < 1e-12);
    }

    #[test]
    fn projection_requires_unit_rates() {
        let hp = Hyperparameters::standard(2, GammaVariant::Csa1);
        let theta = SmoothState::target(&hp);
        assert!(matches!(project(&theta, &hp, Regime::IV), Err(Error::RegimeMismatch(_))));
        let hp4 = hp.clone().with_rates(1.0, 1.0, hp.c_1, hp.c_mu);
        match project(&theta, &hp4, Regime::IV).unwrap() {
            ProjectedState::IV { z, sigma_hat } => {
                assert_eq!(z, theta.z);
                assert_eq!(sigma_hat, theta.sigma_hat);
            }
            other => panic!("unexpected {other:?}"),
        }
        let hp2 = hp.clone().with_rates(1.0, hp.c_c, hp.c_1, hp.c_mu);
        assert!(matches!(project(&theta, &hp2, Regime::II).unwrap(), ProjectedState::II { .. }));
    }

    #[test]
    fn unit_c_sigma_forgets_p() {
        let hp = Hyperparameters::standard(2, GammaVariant::Csa1).with_rates(1.0, 0.4, 0.1, 0.2);
        let sigma = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.2, 0.1, 0.1, 1.0])).unwrap();
        let sigma = sigma.scaled(1.0 / rho(&sigma));
        let mk = |p: DVector<f64>| NormalizedState {
            z: v(&[0.5, -0.4]),
            p,
            q: v(&[0.1, 0.2]),
            sigma: sigma.clone(),
            r: 0.8,
        };
        let batch: Vec<_> = (0..hp.lambda).map(|i| v(&[i as f64 * 0.3 - 0.5, 0.2 - 0.1 * i as f64])).collect();
        let f = Builtin::sphere(2);
        let a = step_normalized(&mk(v(&[5.0, 5.0])), &hp, &f, &batch).unwrap().state;
        let b = step_normalized(&mk(v(&[-1.0, 0.0])), &hp, &f, &batch).unwrap().state;
        assert_eq!(a.p, b.p);
    }
}
