//! Hyperparameters, elementary update maps and one iteration of CMA-ES.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{NormalizationFn, SpdMatrix};
use crate::objectives::{rank_candidates, Objective, Ranking};
use crate::sampling::{sample_batch, Gaussian, SampleDistribution};

/// Step-size change function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GammaVariant {
    /// `exp((c_s/d_s)(||p|| / E||U|| - 1))`
    Csa1,
    /// `exp((c_s/(2 d_s))(||p||^2 / E||U||^2 - 1))`
    Csa2,
}

/// Classification by which cumulation rates equal one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// `c_sigma < 1`, `c_c < 1`
    I,
    /// `c_sigma = 1`, `c_c < 1`
    II,
    /// `c_sigma < 1`, `c_c = 1`
    III,
    /// `c_sigma = c_c = 1`
    IV,
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Regime::I => "i",
            Regime::II => "ii",
            Regime::III => "iii",
            Regime::IV => "iv",
        }
    }

    pub fn parse(s: &str) -> Option<Regime> {
        match s.trim().to_ascii_lowercase().as_str() {
            "i" | "1" => Some(Regime::I),
            "ii" | "2" => Some(Regime::II),
            "iii" | "3" => Some(Regime::III),
            "iv" | "4" => Some(Regime::IV),
            _ => None,
        }
    }

    pub fn drops_p(&self) -> bool {
        matches!(self, Regime::II | Regime::IV)
    }

    pub fn drops_q(&self) -> bool {
        matches!(self, Regime::III | Regime::IV)
    }
}

/// All algorithm constants.
#[derive(Debug, Clone)]
pub struct Hyperparameters {
    pub dim: usize,
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub cov_weights: Vec<f64>,
    pub c_m: f64,
    pub c_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub d_sigma: f64,
    pub gamma: GammaVariant,
    pub norm: NormalizationFn,
    pub dist: Arc<dyn SampleDistribution>,
}

/// `w_i ~ ln((lambda+1)/2) - ln i`, normalized to sum to one.
///
/// When `mu > lambda / 2` the offset `ln((lambda + 1) / 2)` would give
/// nonpositive trailing weights; `ln(mu + 1/2)` is used instead.
pub fn default_weights(lambda: usize, mu: usize) -> Vec<f64> {
    let offset = if 2 * mu <= lambda {
        0.5 * (lambda as f64 + 1.0)
    } else {
        mu as f64 + 0.5
    };
    let raw: Vec<f64> = (1..=mu).map(|i| offset.ln() - (i as f64).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|w| w / s).collect()
}

pub fn mu_eff_of(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

pub fn default_d_sigma(variant: GammaVariant, mu_eff: f64, d: usize) -> f64 {
    match variant {
        GammaVariant::Csa1 => 1.0 + 2.0 * (mu_eff / d as f64).sqrt(),
        GammaVariant::Csa2 => 1.0 + 2.0 * mu_eff / d as f64,
    }
}

impl Hyperparameters {
    /// Conventional defaults: `lambda = 4 + floor(3 ln d)`, `mu = lambda / 2`,
    /// logarithmic weights and the usual learning rates; Gaussian sampling,
    /// `R = det^{1/d}`.
    pub fn standard(d: usize, gamma: GammaVariant) -> Self {
        assert!(d >= 1);
        let df = d as f64;
        let lambda = 4 + (3.0 * df.ln()).floor() as usize;
        let mu = lambda / 2;
        let weights = default_weights(lambda, mu);
        let me = mu_eff_of(&weights);
        let c_sigma = (me + 2.0) / (df + me + 5.0);
        let c_c = (4.0 + me / df) / (df + 4.0 + 2.0 * me / df);
        let c_1 = 2.0 / ((df + 1.3).powi(2) + me);
        let c_mu = (1.0 - c_1).min(2.0 * (me - 2.0 + 1.0 / me) / ((df + 2.0).powi(2) + me));
        Self {
            dim: d,
            lambda,
            mu,
            cov_weights: weights.clone(),
            weights,
            c_m: 1.0,
            c_sigma,
            c_c,
            c_1,
            c_mu,
            d_sigma: default_d_sigma(gamma, me, d),
            gamma,
            norm: NormalizationFn::DetRoot,
            dist: Arc::new(Gaussian::new(d)),
        }
    }

    /// Replaces `lambda` and `mu`, resetting both weight vectors to the defaults.
    pub fn with_population(mut self, lambda: usize, mu: usize) -> Self {
        self.lambda = lambda;
        self.mu = mu;
        self.weights = default_weights(lambda, mu);
        self.cov_weights = self.weights.clone();
        self
    }

    pub fn with_rates(mut self, c_sigma: f64, c_c: f64, c_1: f64, c_mu: f64) -> Self {
        self.c_sigma = c_sigma;
        self.c_c = c_c;
        self.c_1 = c_1;
        self.c_mu = c_mu;
        self
    }

    pub fn with_norm(mut self, norm: NormalizationFn) -> Self {
        self.norm = norm;
        self
    }

    pub fn mu_eff(&self) -> f64 {
        mu_eff_of(&self.weights)
    }

    pub fn regime(&self) -> Regime {
        match (self.c_sigma == 1.0, self.c_c == 1.0) {
            (false, false) => Regime::I,
            (true, false) => Regime::II,
            (false, true) => Regime::III,
            (true, true) => Regime::IV,
        }
    }

    /// `1 - c_1 - c_mu`.
    pub fn shrink(&self) -> f64 {
        1.0 - self.c_1 - self.c_mu
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidHyperparameters(m));
        if self.dim == 0 {
            return bad("dimension must be positive".into());
        }
        if self.mu == 0 || self.mu > self.lambda {
            return bad(format!("need 1 <= mu <= lambda, got mu={} lambda={}", self.mu, self.lambda));
        }
        for (name, w) in [("weights", &self.weights), ("cov_weights", &self.cov_weights)] {
            if w.len() != self.mu {
                return bad(format!("{name} has {} entries, expected mu={}", w.len(), self.mu));
            }
            if w.iter().any(|x| !(*x > 0.0)) || w.windows(2).any(|p| p[0] < p[1]) {
                return bad(format!("{name} must be positive and nonincreasing"));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return bad(format!("{name} sum to {s}, expected 1"));
            }
        }
        if !(self.c_m > 0.0) {
            return bad("c_m must be positive".into());
        }
        for (name, c) in [("c_sigma", self.c_sigma), ("c_c", self.c_c)] {
            if !(c > 0.0 && c <= 1.0) {
                return bad(format!("{name}={c} must lie in (0, 1]"));
            }
        }
        if !(self.c_1 >= 0.0) || !(self.c_mu >= 0.0) {
            return bad("c_1 and c_mu must be nonnegative".into());
        }
        let s = self.c_1 + self.c_mu;
        if !(s > 0.0 && s < 1.0) {
            return bad(format!("c_1 + c_mu = {s} violates 0 < c_1 + c_mu < 1"));
        }
        if !(self.d_sigma > 0.0) {
            return bad("d_sigma must be positive".into());
        }
        if self.dist.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: self.dist.dim(),
            });
        }
        self.norm.validate(self.dim)
    }

    /// Extra conditions under which the normalized chain is known to be a
    /// well-behaved (irreducible, aperiodic) chain in the given regime.
    pub fn check_regime(&self, regime: Regime) -> Result<()> {
        self.validate()?;
        let actual = self.regime();
        if actual != regime {
            return Err(Error::RegimeMismatch(format!(
                "c_sigma={}, c_c={} give regime {}, not {}",
                self.c_sigma,
                self.c_c,
                actual.label(),
                regime.label()
            )));
        }
        match regime {
            Regime::I | Regime::II => {
                if !(self.c_mu > 0.0) {
                    return Err(Error::RegimeMismatch(format!(
                        "regime {} requires c_mu > 0",
                        regime.label()
                    )));
                }
                if regime == Regime::I {
                    let lhs = 1.0 - self.c_c;
                    let rhs = (1.0 - self.c_sigma) * self.shrink().sqrt();
                    if (lhs - rhs).abs() <= 1e-12 {
                        return Err(Error::RegimeMismatch(
                            "regime i requires 1 - c_c != (1 - c_sigma) sqrt(1 - c_1 - c_mu)".into(),
                        ));
                    }
                }
                Ok(())
            }
            Regime::III | Regime::IV => Ok(()),
        }
    }

    pub fn step_size_change(&self, p: &DVector<f64>) -> f64 {
        gamma(self.gamma, p, self.c_sigma, self.d_sigma, self.dist.as_ref())
    }
}

/// `m + c_m v`
pub fn f_mean(m: &DVector<f64>, v: &DVector<f64>, c_m: f64) -> DVector<f64> {
    m + v * c_m
}

/// `(1 - c) p + sqrt(c (2 - c) mu_eff) v`
pub fn f_path(p: &DVector<f64>, v: &DVector<f64>, c: f64, mu_eff: f64) -> DVector<f64> {
    p * (1.0 - c) + v * (c * (2.0 - c) * mu_eff).sqrt()
}

/// Step-size change factor.
pub fn gamma(
    variant: GammaVariant,
    p: &DVector<f64>,
    c_sigma: f64,
    d_sigma: f64,
    dist: &dyn SampleDistribution,
) -> f64 {
    match variant {
        GammaVariant::Csa1 => ((c_sigma / d_sigma) * (p.norm() / dist.mean_norm() - 1.0)).exp(),
        GammaVariant::Csa2 => {
            ((c_sigma / (2.0 * d_sigma)) * (p.norm_squared() / dist.mean_sq_norm() - 1.0)).exp()
        }
    }
}

/// `(1 - c_1 - c_mu) C + c_1 p p^T + c_mu M`, re-symmetrized.
pub fn f_cov(c: &DMatrix<f64>, p: &DVector<f64>, m: &DMatrix<f64>, c_1: f64, c_mu: f64) -> Result<SpdMatrix> {
    let out = c * (1.0 - c_1 - c_mu) + p * p.transpose() * c_1 + m * c_mu;
    SpdMatrix::symmetrized(out)
}

/// `sum_i w_i v_i`
pub fn weighted_sum(weights: &[f64], vs: &[DVector<f64>]) -> DVector<f64> {
    let mut out = DVector::zeros(vs[0].len());
    for (w, v) in weights.iter().zip(vs) {
        out.axpy(*w, v, 1.0);
    }
    out
}

/// `sum_i w_i v_i v_i^T`
pub fn weighted_outer(weights: &[f64], vs: &[DVector<f64>]) -> DMatrix<f64> {
    let d = vs[0].len();
    let mut out = DMatrix::zeros(d, d);
    for (w, v) in weights.iter().zip(vs) {
        out.ger(*w, v, v, 1.0);
    }
    out
}

/// State of the original chain.
#[derive(Debug, Clone, PartialEq)]
pub struct RawState {
    pub m: DVector<f64>,
    pub p_sigma: DVector<f64>,
    pub p_c: DVector<f64>,
    pub sigma: f64,
    pub cov: SpdMatrix,
}

impl RawState {
    /// Zero cumulation paths.
    pub fn new(m: DVector<f64>, sigma: f64, cov: SpdMatrix) -> Self {
        let d = m.len();
        Self {
            m,
            p_sigma: DVector::zeros(d),
            p_c: DVector::zeros(d),
            sigma,
            cov,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("mean"));
        }
        if self.p_sigma.iter().chain(self.p_c.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("evolution path"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::NonFinite("step-size"));
        }
        Ok(())
    }
}

/// Output of one raw iteration.
#[derive(Debug, Clone)]
pub struct RawStep {
    pub state: RawState,
    pub ranking: Ranking,
    pub batch: Vec<DVector<f64>>,
}

/// One iteration with fresh samples from `rng`.
pub fn step_raw(state: &RawState, hp: &Hyperparameters, f: &dyn Objective, rng: &mut dyn RngCore) -> Result<RawStep> {
    let batch = sample_batch(hp.dist.as_ref(), rng, hp.lambda);
    step_raw_with_batch(state, hp, f, batch)
}

/// One iteration on a given batch `U^1..U^lambda`.
pub fn step_raw_with_batch(
    state: &RawState,
    hp: &Hyperparameters,
    f: &dyn Objective,
    batch: Vec<DVector<f64>>,
) -> Result<RawStep> {
    let sqrt_c = state.cov.sqrt();
    let candidates: Vec<DVector<f64>> = batch
        .iter()
        .map(|u| &state.m + sqrt_c.matrix() * u * state.sigma)
        .collect();
    let ranking = rank_candidates(f, &candidates)?;
    let next = step_raw_ranked(state, hp, &batch, &ranking)?;
    Ok(RawStep {
        state: next,
        ranking,
        batch,
    })
}

/// Applies the updates for a batch with a given ranking. With a fixed ranking
/// this is neutral selection.
pub fn step_raw_ranked(state: &RawState, hp: &Hyperparameters, batch: &[DVector<f64>], ranking: &Ranking) -> Result<RawState> {
    let selected: Vec<DVector<f64>> = ranking.order[..hp.mu].iter().map(|&i| batch[i].clone()).collect();
    let sqrt_c = state.cov.sqrt();
    let sc = sqrt_c.matrix();
    let me = hp.mu_eff();
    let y = weighted_sum(&hp.weights, &selected);
    let cy = sc * &y;
    let m = f_mean(&state.m, &(&cy * state.sigma), hp.c_m);
    let p_sigma = f_path(&state.p_sigma, &y, hp.c_sigma, me);
    let p_c = f_path(&state.p_c, &cy, hp.c_c, me);
    let sigma = state.sigma * hp.step_size_change(&p_sigma);
    let rank_mu = sc * weighted_outer(&hp.cov_weights, &selected) * sc;
    let cov = f_cov(state.cov.matrix(), &p_c, &rank_mu, hp.c_1, hp.c_mu)?;
    let next = RawState {
        m,
        p_sigma,
        p_c,
        sigma,
        cov,
    };
    next.check_finite()?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::Builtin;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn f_mean_examples() {
        assert_eq!(f_mean(&v(&[0.0, 0.0]), &v(&[1.0, 2.0]), 1.0), v(&[1.0, 2.0]));
        assert_eq!(f_mean(&v(&[3.0, -1.0]), &v(&[0.0, 0.0]), 0.7), v(&[3.0, -1.0]));
        assert_eq!(f_mean(&v(&[1.0, 1.0]), &v(&[2.0, 0.0]), 0.5), v(&[2.0, 1.0]));
    }

    #[test]
    fn f_path_examples() {
        assert_eq!(f_path(&v(&[5.0, 5.0]), &v(&[1.0, -2.0]), 1.0, 1.0), v(&[1.0, -2.0]));
        assert_eq!(f_path(&v(&[2.0, 4.0]), &v(&[0.0, 0.0]), 0.25, 3.0), v(&[1.5, 3.0]));
        let out = f_path(&v(&[0.0, 0.0]), &v(&[1.0, 0.0]), 0.5, 2.0);
        assert!((out[0] - 1.5f64.sqrt()).abs() < 1e-15 && out[1] == 0.0);
    }

    #[test]
    fn gamma_examples() {
        let g = Gaussian::new(3);
        let (cs, ds) = (0.3, 1.7);
        let zero = DVector::zeros(3);
        let g0 = gamma(GammaVariant::Csa1, &zero, cs, ds, &g);
        assert!((g0 - (-cs / ds).exp()).abs() < 1e-15 && g0 < 1.0);
        let p = v(&[g.mean_norm(), 0.0, 0.0]);
        assert!((gamma(GammaVariant::Csa1, &p, cs, ds, &g) - 1.0).abs() < 1e-15);
        let p2 = v(&[3f64.sqrt(), 0.0, 0.0]);
        assert!((gamma(GammaVariant::Csa2, &p2, cs, ds, &g) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn f_cov_examples() {
        let c = DMatrix::identity(3, 3);
        let zero = DMatrix::zeros(3, 3);
        let shrunk = f_cov(&c, &DVector::zeros(3), &zero, 0.2, 0.3).unwrap();
        assert!((shrunk.matrix() - &c * 0.5).norm() < 1e-15);
        let e1 = v(&[1.0, 0.0, 0.0]);
        let out = f_cov(&c, &e1, &zero, 0.2, 0.3).unwrap();
        let expected = DMatrix::from_diagonal(&v(&[0.7, 0.5, 0.5]));
        assert!((out.matrix() - expected).norm() < 1e-15);

        let cm = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let p = v(&[0.4, -1.2]);
        let mm = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.7]);
        let out = f_cov(&cm, &p, &mm, 0.1, 0.25).unwrap();
        let tr = 0.65 * cm.trace() + 0.1 * p.norm_squared() + 0.25 * mm.trace();
        assert!((out.trace() - tr).abs() < 1e-14);
    }

    #[test]
    fn default_weights_are_valid() {
        for d in 1..=20 {
            let hp = Hyperparameters::standard(d, GammaVariant::Csa1);
            hp.validate().unwrap();
            assert_eq!(hp.regime(), Regime::I);
            hp.check_regime(Regime::I).unwrap();
        }
    }

    #[test]
    fn invalid_rates_rejected() {
        let hp = Hyperparameters::standard(3, GammaVariant::Csa1).with_rates(0.3, 0.4, 0.5, 0.5);
        assert!(matches!(hp.validate(), Err(Error::InvalidHyperparameters(m)) if m.contains("c_1 + c_mu")));
    }

    #[test]
    fn equal_samples_move_mean_along_sample() {
        let hp = Hyperparameters::standard(2, GammaVariant::Csa1);
        let cov = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let state = RawState::new(v(&[1.0, -1.0]), 0.3, cov.clone());
        let u = v(&[0.4, 0.9]);
        let step = step_raw_with_batch(&state, &hp, &Builtin::sphere(2), vec![u.clone(); hp.lambda]).unwrap();
        let expected = &state.m + cov.sqrt().matrix() * &u * 0.3;
        assert!((step.state.m - expected).norm() < 1e-14);
    }

    #[test]
    fn unit_cumulation_paths_forget_the_past() {
        let hp = Hyperparameters::standard(2, GammaVariant::Csa1).with_rates(1.0, 1.0, 0.1, 0.2);
        let cov = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.8])).unwrap();
        let mut state = RawState::new(v(&[1.0, 2.0]), 0.5, cov.clone());
        state.p_sigma = v(&[9.0, 9.0]);
        state.p_c = v(&[-9.0, 9.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let step = step_raw(&state, &hp, &Builtin::sphere(2), &mut rng).unwrap();
        let sel: Vec<_> = step.ranking.order[..hp.mu].iter().map(|&i| step.batch[i].clone()).collect();
        let y = weighted_sum(&hp.weights, &sel);
        let me = hp.mu_eff();
        assert!((&step.state.p_sigma - &y * me.sqrt()).norm() < 1e-13);
        assert!((&step.state.p_c - cov.sqrt().matrix() * &y * me.sqrt()).norm() < 1e-13);
    }

    #[test]
    fn hand_computed_single_step() {
        // d=2, lambda=2, mu=1, C = I so sqrt(C) = I and every update is scalar arithmetic
        let mut hp = Hyperparameters::standard(2, GammaVariant::Csa1).with_population(2, 1);
        hp.c_m = 0.5;
        hp.c_sigma = 0.5;
        hp.c_c = 0.25;
        hp.c_1 = 0.125;
        hp.c_mu = 0.25;
        hp.d_sigma = 2.0;
        hp.validate().unwrap();
        let state = RawState {
            m: v(&[1.0, 0.0]),
            p_sigma: v(&[0.0, 1.0]),
            p_c: v(&[1.0, 1.0]),
            sigma: 2.0,
            cov: SpdMatrix::identity(2),
        };
        // candidate 0: (1,0)+2(1,1) = (3,2); candidate 1: (1,0)+2(-0.5,0) = (0,0) -> best
        let batch = vec![v(&[1.0, 1.0]), v(&[-0.5, 0.0])];
        let out = step_raw_with_batch(&state, &hp, &Builtin::sphere(2), batch).unwrap();
        assert_eq!(out.ranking.order, vec![1, 0]);
        let s = out.state;
        let y = [-0.5, 0.0];
        let m = [1.0 + 0.5 * 2.0 * y[0], 0.0];
        let ks = (0.5f64 * 1.5).sqrt();
        let ps = [0.5 * 0.0 + ks * y[0], 0.5 * 1.0 + ks * y[1]];
        let kc = (0.25f64 * 1.75).sqrt();
        let pc = [0.75 * 1.0 + kc * y[0], 0.75 * 1.0 + kc * y[1]];
        let en = gaussian_norm_2();
        let sig = 2.0 * ((0.5 / 2.0) * ((ps[0] * ps[0] + ps[1] * ps[1]).sqrt() / en - 1.0)).exp();
        let c = [
            0.625 + 0.125 * pc[0] * pc[0] + 0.25 * y[0] * y[0],
            0.125 * pc[0] * pc[1] + 0.25 * y[0] * y[1],
            0.625 + 0.125 * pc[1] * pc[1] + 0.25 * y[1] * y[1],
        ];
        let tol = 1e-14;
        assert!((s.m[0] - m[0]).abs() < tol && (s.m[1] - m[1]).abs() < tol);
        assert!((s.p_sigma[0] - ps[0]).abs() < tol && (s.p_sigma[1] - ps[1]).abs() < tol);
        assert!((s.p_c[0] - pc[0]).abs() < tol && (s.p_c[1] - pc[1]).abs() < tol);
        assert!((s.sigma - sig).abs() < tol);
        let cm = s.cov.matrix();
        assert!((cm[(0, 0)] - c[0]).abs() < tol && (cm[(0, 1)] - c[1]).abs() < tol && (cm[(1, 1)] - c[2]).abs() < tol);
    }

    fn gaussian_norm_2() -> f64 {
        (std::f64::consts::PI / 2.0).sqrt()
    }
}
