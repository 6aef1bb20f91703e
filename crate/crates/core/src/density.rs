//! Density of the ranked and selected sample block, with a Monte Carlo
//! estimate of the exceedance probability `Q`.

use nalgebra::DVector;

use crate::cma::Hyperparameters;
use crate::control::ControlPath;
use crate::error::Result;
use crate::linalg::SpdMatrix;
use crate::normalized::{f_theta, SmoothState};
use crate::objectives::Objective;
use crate::sampling::{sample_batch, SampleDistribution, StreamKey};

/// Default number of Monte Carlo draws for `Q`.
pub const DEFAULT_N_Q: usize = 100_000;

/// Everything the selected-block density depends on.
#[derive(Debug, Clone, Copy)]
pub struct RankedDensityContext<'a> {
    pub z: &'a DVector<f64>,
    /// Normalized covariance `Sigma` (with `R(Sigma) = 1`).
    pub sigma: &'a SpdMatrix,
    pub f: &'a dyn Objective,
    pub dist: &'a dyn SampleDistribution,
    pub lambda: usize,
    pub mu: usize,
    pub n_q: usize,
    pub key: StreamKey,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// Sorted Monte Carlo sample of `f_*(z + sqrt(Sigma) xi)`, so that every
/// `Q(u)` query shares the same draws.
#[derive(Debug, Clone)]
pub struct ExceedanceTable {
    values: Vec<f64>,
    sqrt_sigma: SpdMatrix,
}

impl ExceedanceTable {
    pub fn new(ctx: &RankedDensityContext) -> Self {
        assert!(ctx.n_q >= 1);
        let sqrt_sigma = ctx.sigma.sqrt();
        let mut rng = ctx.key.rng_at(0);
        let draws = sample_batch(ctx.dist, &mut rng, ctx.n_q);
        let mut values: Vec<f64> = draws
            .iter()
            .map(|xi| ctx.f.eval_centered(&(ctx.z + sqrt_sigma.matrix() * xi)))
            .collect();
        values.sort_by(f64::total_cmp);
        Self { values, sqrt_sigma }
    }

    /// `P[f_*(z + sqrt(Sigma) xi) < level]`.
    pub fn below(&self, level: f64) -> QEstimate {
        let n = self.values.len() as f64;
        let count = self.values.partition_point(|&v| v < level) as f64;
        let q = count / n;
        QEstimate {
            value: q,
            stderr: (q * (1.0 - q) / n).sqrt(),
        }
    }

    /// `Q(u)` for a point `u` in sample space.
    pub fn q(&self, ctx: &RankedDensityContext, u: &DVector<f64>) -> QEstimate {
        self.below(ctx.f.eval_centered(&(ctx.z + self.sqrt_sigma.matrix() * u)))
    }

    pub fn sqrt_sigma(&self) -> &SpdMatrix {
        &self.sqrt_sigma
    }
}

/// Monte Carlo estimate of `Q(u) = P[f_*(z + sqrt(Sigma) xi) < f_*(z + sqrt(Sigma) u)]`.
pub fn q_exceed(ctx: &RankedDensityContext, u: &DVector<f64>) -> QEstimate {
    ExceedanceTable::new(ctx).q(ctx, u)
}

/// `ln(lambda! / (lambda - mu)!)`
fn log_falling_factorial(lambda: usize, mu: usize) -> f64 {
    ((lambda - mu + 1)..=lambda).map(|k| (k as f64).ln()).sum()
}

/// Log-density of the ranked block `v = (v_1, .., v_mu)` in sample space,
/// `-inf` outside the strict ordering.
pub fn log_density_with(table: &ExceedanceTable, ctx: &RankedDensityContext, v: &[DVector<f64>]) -> f64 {
    assert_eq!(v.len(), ctx.mu, "block length must equal mu");
    let ss = table.sqrt_sigma.matrix();
    let levels: Vec<f64> = v.iter().map(|vi| ctx.f.eval_centered(&(ctx.z + ss * vi))).collect();
    if levels.windows(2).any(|w| !(w[0] < w[1])) {
        return f64::NEG_INFINITY;
    }
    let mut out = log_falling_factorial(ctx.lambda, ctx.mu);
    if ctx.lambda > ctx.mu {
        let q = table.below(levels[ctx.mu - 1]).value;
        out += (ctx.lambda - ctx.mu) as f64 * (1.0 - q).ln();
    }
    out + v.iter().map(|vi| ctx.dist.log_density(vi)).sum::<f64>()
}

pub fn density_with(table: &ExceedanceTable, ctx: &RankedDensityContext, v: &[DVector<f64>]) -> f64 {
    log_density_with(table, ctx, v).exp()
}

/// Density of the ranked block in sample space.
pub fn density(ctx: &RankedDensityContext, v: &[DVector<f64>]) -> f64 {
    density_with(&ExceedanceTable::new(ctx), ctx, v)
}

/// Log-density of the selection output `w_i = sqrt(Sigma) v_i`. The
/// change of variables acts on all `mu` blocks, hence `det(Sigma)^{-mu/2}`.
pub fn log_density_alpha_with(table: &ExceedanceTable, ctx: &RankedDensityContext, w: &[DVector<f64>]) -> f64 {
    let inv_sqrt = ctx.sigma.inv_sqrt();
    let v: Vec<DVector<f64>> = w.iter().map(|wi| &inv_sqrt * wi).collect();
    log_density_with(table, ctx, &v) - 0.5 * ctx.mu as f64 * ctx.sigma.log_det()
}

pub fn density_alpha(ctx: &RankedDensityContext, w: &[DVector<f64>]) -> f64 {
    log_density_alpha_with(&ExceedanceTable::new(ctx), ctx, w).exp()
}

/// Sum of the log-densities of each input of `path` along its own trajectory
/// from `theta0`; `-inf` if some step leaves the control set.
pub fn path_log_density(
    theta0: &SmoothState,
    path: &ControlPath,
    hp: &Hyperparameters,
    f: &dyn Objective,
    n_q: usize,
    key: StreamKey,
) -> Result<f64> {
    let mut theta = theta0.clone();
    let mut total = 0.0;
    for (t, w) in path.steps.iter().enumerate() {
        let sigma = theta.sigma(&hp.norm)?;
        let ctx = RankedDensityContext {
            z: &theta.z,
            sigma: &sigma,
            f,
            dist: hp.dist.as_ref(),
            lambda: hp.lambda,
            mu: hp.mu,
            n_q,
            key: key.with_chain(key.chain.wrapping_add(t as u64)),
        };
        let table = ExceedanceTable::new(&ctx);
        total += log_density_alpha_with(&table, &ctx, w);
        if total == f64::NEG_INFINITY {
            return Ok(total);
        }
        theta = f_theta(&theta, w, hp)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::Builtin;
    use crate::sampling::{Gaussian, Purpose};

    fn s(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn ctx<'a>(z: &'a DVector<f64>, sigma: &'a SpdMatrix, f: &'a Builtin, g: &'a Gaussian, lambda: usize, mu: usize) -> RankedDensityContext<'a> {
        RankedDensityContext {
            z,
            sigma,
            f,
            dist: g,
            lambda,
            mu,
            n_q: 100_000,
            key: StreamKey::new(9, 0, Purpose::Exceedance),
        }
    }

    #[test]
    fn q_extremes_and_median() {
        let (z, sigma, f, g) = (DVector::zeros(1), SpdMatrix::identity(1), Builtin::sphere(1), Gaussian::new(1));
        let c = ctx(&z, &sigma, &f, &g, 3, 2);
        assert_eq!(q_exceed(&c, &s(0.0)).value, 0.0);
        // median of |xi| for a standard normal
        let med = 0.674_489_750_196_081_7;
        let q = q_exceed(&c, &s(med));
        assert!((q.value - 0.5).abs() < 3.0 * q.stderr, "{q:?}");
        let table = ExceedanceTable::new(&c);
        assert!(table.q(&c, &s(0.3)).value <= table.q(&c, &s(-0.9)).value);
    }

    #[test]
    fn trivial_population_reduces_to_sample_density() {
        let (z, sigma, f, g) = (DVector::zeros(1), SpdMatrix::identity(1), Builtin::sphere(1), Gaussian::new(1));
        let c = ctx(&z, &sigma, &f, &g, 1, 1);
        for x in [-2.0, 0.1, 1.5] {
            assert!((density(&c, &[s(x)]) - g.density(&s(x))).abs() < 1e-15);
        }
    }

    #[test]
    fn ordering_violation_has_zero_density() {
        let (z, sigma, f, g) = (DVector::zeros(1), SpdMatrix::identity(1), Builtin::sphere(1), Gaussian::new(1));
        let c = ctx(&z, &sigma, &f, &g, 3, 2);
        assert_eq!(density(&c, &[s(1.0), s(0.5)]), 0.0);
        assert_eq!(density(&c, &[s(1.0), s(-1.0)]), 0.0);
        assert!(density(&c, &[s(0.5), s(1.0)]) > 0.0);
    }

    #[test]
    fn identity_covariance_alpha_equals_density() {
        let (z, sigma, f, g) = (DVector::from_element(2, 0.3), SpdMatrix::identity(2), Builtin::sphere(2), Gaussian::new(2));
        let c = ctx(&z, &sigma, &f, &g, 4, 2);
        let w = vec![DVector::from_vec(vec![-0.3, -0.2]), DVector::from_vec(vec![0.5, 0.1])];
        let a = density_alpha(&c, &w);
        let b = density(&c, &w);
        assert!(a > 0.0 && (a - b).abs() < 1e-14 * b);
    }
}
