//! Deterministic control model: paths of selected blocks fed straight into
//! `F_Theta`, constructive steering paths towards the attracting state, and
//! finite-difference controllability checks.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cma::{Hyperparameters, Regime};
use crate::error::{Error, Result};
use crate::linalg::{eval_norm, rho_gradient, sym_to_coords, SpdMatrix};
use crate::normalized::{f_theta, SmoothState};
use crate::objectives::{rank_values, Objective};
use crate::rootfind::{expand_and_bisect, BisectionOptions};

/// A finite sequence of inputs, each a block of `mu` vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlPath {
    pub steps: Vec<Vec<DVector<f64>>>,
}

impl ControlPath {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn zeros(k: usize, mu: usize, d: usize) -> Self {
        Self {
            steps: vec![vec![DVector::zeros(d); mu]; k],
        }
    }

    /// One step `[u, .., u]`.
    pub fn replicated(u: &DVector<f64>, mu: usize) -> Self {
        Self {
            steps: vec![vec![u.clone(); mu]],
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn then(mut self, other: ControlPath) -> Self {
        self.steps.extend(other.steps);
        self
    }

    /// Whether step `t` is `[u, .., u]`; such steps lie on the boundary of the
    /// control set rather than inside it.
    pub fn is_replicated(&self, t: usize) -> bool {
        self.steps[t].windows(2).all(|w| w[0] == w[1])
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.steps.iter().flatten().flat_map(|v| v.iter().copied()).collect()
    }

    pub fn from_flat(x: &[f64], k: usize, mu: usize, d: usize) -> Self {
        assert_eq!(x.len(), k * mu * d);
        let steps = (0..k)
            .map(|t| {
                (0..mu)
                    .map(|i| DVector::from_column_slice(&x[(t * mu + i) * d..(t * mu + i + 1) * d]))
                    .collect()
            })
            .collect();
        Self { steps }
    }

    pub fn max_norm(&self) -> f64 {
        self.steps.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// States `S^0 = theta0, S^1, .., S^k` along the path.
pub fn extended_transition(theta0: &SmoothState, path: &ControlPath, hp: &Hyperparameters) -> Result<Vec<SmoothState>> {
    let mut out = Vec::with_capacity(path.len() + 1);
    out.push(theta0.clone());
    for step in &path.steps {
        let next = f_theta(out.last().unwrap(), step, hp)?;
        out.push(next);
    }
    Ok(out)
}

/// Endpoint `S^k`.
pub fn endpoint(theta0: &SmoothState, path: &ControlPath, hp: &Hyperparameters) -> Result<SmoothState> {
    let mut theta = theta0.clone();
    for step in &path.steps {
        theta = f_theta(&theta, step, hp)?;
    }
    Ok(theta)
}

/// One step to `z = 0`: `v_1 = -[z_0, .., z_0] / c_m`.
pub fn path_zero_mean(theta0: &SmoothState, hp: &Hyperparameters) -> ControlPath {
    ControlPath::replicated(&(&theta0.z * (-1.0 / hp.c_m)), hp.mu)
}

const ZERO_TOL: f64 = 1e-9;

fn require_zero(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.norm() > ZERO_TOL {
        return Err(Error::Precondition(format!("{what} must vanish, has norm {:e}", v.norm())));
    }
    Ok(())
}

/// From `z_0 = 0`: `v_1 = [u, .., u]`, then `v_2 = -v_1 / (sqrt(r_1) Gamma(p_1))`,
/// which lands at `z_2 = 0`.
pub fn path_return_zero_mean(theta0: &SmoothState, u1: &DVector<f64>, hp: &Hyperparameters) -> Result<ControlPath> {
    require_zero(&theta0.z, "z_0")?;
    let first = ControlPath::replicated(u1, hp.mu);
    let theta1 = f_theta(theta0, &first.steps[0], hp)?;
    let back = u1 * (-1.0 / (theta1.r.sqrt() * hp.step_size_change(&theta1.p)));
    Ok(first.then(ControlPath::replicated(&back, hp.mu)))
}

/// Coefficient `c` with `q_2 = c q_0` after the two-step path with `u_1 = kappa q_0`.
fn q_coefficient(theta0: &SmoothState, kappa: f64, hp: &Hyperparameters) -> Result<f64> {
    let path = path_return_zero_mean(theta0, &(&theta0.q * kappa), hp)?;
    let end = endpoint(theta0, &path, hp)?;
    Ok(end.q.dot(&theta0.q) / theta0.q.norm_squared())
}

fn bisection_to_rounding() -> BisectionOptions {
    BisectionOptions {
        residual_tol: 0.0,
        ..BisectionOptions::default()
    }
}

/// Side of zero on which the coefficient of `q_0` first decreases.
fn linear_side(theta0: &SmoothState, hp: &Hyperparameters) -> Result<f64> {
    let h = 1e-6 / theta0.q.norm().max(1.0);
    let slope = q_coefficient(theta0, h, hp)? - q_coefficient(theta0, -h, hp)?;
    Ok(if slope > 0.0 { -1.0 } else { 1.0 })
}

/// `path_zero_q` restricted to roots `kappa` with the sign of `side`.
fn zero_q_on_side(theta0: &SmoothState, hp: &Hyperparameters, side: f64) -> Result<ControlPath> {
    let scale = 1.0 / theta0.q.norm().max(1.0);
    let root = expand_and_bisect(
        |k| q_coefficient(theta0, k, hp),
        0.0,
        side * scale,
        &bisection_to_rounding(),
        "q coefficient",
    )?;
    path_return_zero_mean(theta0, &(&theta0.q * root.x), hp)
}

/// Two steps from `z_0 = 0` ending at `z_2 = q_2 = 0`, with `u_1 = kappa q_0`.
/// The coefficient is positive at `kappa = 0`; the bracket first grows on the
/// side where it initially decreases, so for small `q_0` the root follows the
/// linearization and the returned inputs vanish with `q_0`.
pub fn path_zero_q(theta0: &SmoothState, hp: &Hyperparameters) -> Result<ControlPath> {
    if hp.c_c >= 1.0 {
        return Err(Error::Precondition("zeroing q requires c_c < 1".into()));
    }
    require_zero(&theta0.z, "z_0")?;
    if theta0.q.norm() == 0.0 {
        return Ok(ControlPath::zeros(2, hp.mu, theta0.dim()));
    }
    let side = linear_side(theta0, hp)?;
    // far from the linear regime the root may only exist on the other side
    zero_q_on_side(theta0, hp, side).or_else(|_| zero_q_on_side(theta0, hp, -side))
}

/// `||q||` below which the four-step blocks skip the clearing steps. Clearing a
/// rounding-level `q` would need an input of order `1 / ||q||`.
const Q_NEGLIGIBLE: f64 = 1e-12;

/// Four steps from `z = q = 0`: push along `dir` with `kappa`, come back to
/// `z = 0`, then clear `q` with a root on the given side. Returns the path and
/// the endpoint.
fn push_block(
    theta0: &SmoothState,
    dir: &DVector<f64>,
    kappa: f64,
    side: f64,
    hp: &Hyperparameters,
) -> Result<(ControlPath, SmoothState)> {
    let first = path_return_zero_mean(theta0, &(dir * kappa), hp)?;
    let theta2 = endpoint(theta0, &first, hp)?;
    let second = if theta2.q.norm() <= Q_NEGLIGIBLE {
        ControlPath::zeros(2, hp.mu, theta0.dim())
    } else {
        zero_q_on_side(&theta2, hp, side)?
    };
    let theta4 = endpoint(&theta2, &second, hp)?;
    Ok((first.then(second), theta4))
}

fn log_ratio(s: &SpdMatrix, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let m = s.matrix();
    (a.dot(&(m * a))).ln() - (b.dot(&(m * b))).ln()
}

/// Largest log-ratio residual accepted at the end of a ratio block.
const RATIO_RESIDUAL_TOL: f64 = 1e-9;

/// Smallest push tried on the branch that does not connect to `kappa = 0`.
const KAPPA_FLOOR: f64 = 1e-8;

/// Four-step block from `z = q = 0` after which
/// `ln(dir' S dir / ref' S ref) = target`, with `S` the endpoint `Sigma_hat`.
///
/// The clearing steps pick their root on a fixed side of zero, which keeps the
/// ratio continuous in `kappa`. The side that follows the linearization is
/// tried first and connects to the unpushed state; the other is a fallback.
pub fn ratio_block(
    theta0: &SmoothState,
    dir: &DVector<f64>,
    reference: &DVector<f64>,
    target: f64,
    hp: &Hyperparameters,
) -> Result<ControlPath> {
    require_zero(&theta0.z, "z_0")?;
    require_zero(&theta0.q, "q_0")?;
    let g0 = log_ratio(&theta0.sigma_hat, dir, reference) - target;
    if g0 > 1e-12 {
        return Err(Error::Precondition(format!(
            "the block can only raise the ratio, current excess {g0:e}"
        )));
    }
    if g0.abs() <= RATIO_RESIDUAL_TOL {
        return Ok(ControlPath::zeros(4, hp.mu, theta0.dim()));
    }
    let probe = endpoint(theta0, &path_return_zero_mean(theta0, &(dir * KAPPA_FLOOR), hp)?, hp)?;
    let first_side = if probe.q.norm() > Q_NEGLIGIBLE { linear_side(&probe, hp)? } else { -1.0 };
    let mut last_err = Error::BracketNotFound("eigenvalue ratio");
    for (side, anchor) in [(first_side, 0.0), (-first_side, KAPPA_FLOOR)] {
        let g = |k: f64| -> Result<f64> {
            if k == 0.0 {
                return Ok(g0);
            }
            let (_, end) = push_block(theta0, dir, k, side, hp)?;
            Ok(log_ratio(&end.sigma_hat, dir, reference) - target)
        };
        match expand_and_bisect(g, anchor, 1.0, &BisectionOptions::default(), "eigenvalue ratio") {
            Ok(root) if root.residual.abs() <= RATIO_RESIDUAL_TOL => {
                return Ok(push_block(theta0, dir, root.x, side, hp)?.0);
            }
            Ok(root) => {
                last_err = Error::Precondition(format!(
                    "eigenvalue ratio bisection ended on a discontinuity, residual {:e}",
                    root.residual
                ))
            }
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

/// Relative tolerance for treating consecutive eigenvalues as equal.
pub const EIGEN_CLUSTER_TOL: f64 = 1e-6;

/// From `z = q = 0` with `lambda_1 = .. = lambda_{k-1} >= lambda_k`, raises the
/// `k`-th eigenvalue of `Sigma_hat` to the `(k-1)`-th in four steps. A zero gap
/// gives the empty path.
pub fn path_equalize_eigen(theta0: &SmoothState, k: usize, hp: &Hyperparameters) -> Result<ControlPath> {
    let d = theta0.dim();
    if k < 2 || k > d {
        return Err(Error::IndexOutOfRange { index: k, dim: d });
    }
    let vals = theta0.sigma_hat.eigenvalues();
    let vecs = theta0.sigma_hat.eigenvectors();
    for i in 1..(k - 1) {
        if (vals[0] - vals[i]).abs() > EIGEN_CLUSTER_TOL * vals[0] {
            return Err(Error::Precondition(format!(
                "eigenvalues 1..{} must coincide, got {} and {}",
                k - 1,
                vals[0],
                vals[i]
            )));
        }
    }
    if vals[k - 2] - vals[k - 1] <= 1e-14 * vals[k - 2] {
        return Ok(ControlPath::empty());
    }
    let dir = vecs.column(k - 1).into_owned();
    let reference = vecs.column(k - 2).into_owned();
    ratio_block(theta0, &dir, &reference, 0.0, hp)
}

fn require_regime_i(hp: &Hyperparameters) -> Result<()> {
    if hp.regime() != Regime::I {
        return Err(Error::RegimeMismatch(format!(
            "steering paths need regime i, got {}",
            hp.regime().label()
        )));
    }
    Ok(())
}

/// Steers any state to `z = q = 0`, `Sigma_hat = I` and then appends
/// `zero_steps` zero inputs, after which `r = 1 - c_1 - c_mu` and `p` decays
/// geometrically.
pub fn path_to_identity(theta0: &SmoothState, hp: &Hyperparameters, zero_steps: usize) -> Result<ControlPath> {
    require_regime_i(hp)?;
    let d = theta0.dim();
    let mut path = path_zero_mean(theta0, hp);
    let mut theta = endpoint(theta0, &path, hp)?;
    let clear = path_zero_q(&theta, hp)?;
    theta = endpoint(&theta, &clear, hp)?;
    path = path.then(clear);
    for k in 2..=d {
        let block = path_equalize_eigen(&theta, k, hp)?;
        theta = endpoint(&theta, &block, hp)?;
        path = path.then(block);
    }
    Ok(path.then(ControlPath::zeros(zero_steps, hp.mu, d)))
}

/// Starting from a state with `z = q = 0` and `Sigma_hat = I`, reaches
/// `Sigma_hat = target` in `4d` steps, one four-step block per eigenvector of
/// `target` (the last block is all zeros).
pub fn path_from_identity_to_sigma(theta0: &SmoothState, target: &SpdMatrix, hp: &Hyperparameters) -> Result<ControlPath> {
    require_regime_i(hp)?;
    let d = theta0.dim();
    let vals = target.eigenvalues();
    let vecs = target.eigenvectors();
    let reference = vecs.column(d - 1).into_owned();
    let mut theta = theta0.clone();
    let mut path = ControlPath::empty();
    for j in 0..(d - 1) {
        let dir = vecs.column(j).into_owned();
        let goal = (vals[j] / vals[d - 1]).ln();
        let block = if goal <= 0.0 {
            ControlPath::zeros(4, hp.mu, d)
        } else {
            ratio_block(&theta, &dir, &reference, goal, hp)?
        };
        theta = endpoint(&theta, &block, hp)?;
        path = path.then(block);
    }
    Ok(path.then(ControlPath::zeros(4, hp.mu, d)))
}

/// Steers any state to `(0, p, 0, target, 1 - c_1 - c_mu)`: first to the
/// identity, then `4d` steps along the eigenvectors of `target`.
pub fn path_to_target_sigma(theta0: &SmoothState, target: &SpdMatrix, hp: &Hyperparameters) -> Result<ControlPath> {
    let to_id = path_to_identity(theta0, hp, 0)?;
    let mid = endpoint(theta0, &to_id, hp)?;
    Ok(to_id.then(path_from_identity_to_sigma(&mid, target, hp)?))
}

/// Perturbs every input by `eps` Gaussian noise and sorts each block by
/// `f_*(z_t + w_i)` along the new trajectory, so that constant-replicated
/// steps move into the interior of the control set.
pub fn jitter_into_control_set(
    theta0: &SmoothState,
    path: &ControlPath,
    hp: &Hyperparameters,
    f: &dyn Objective,
    eps: f64,
    rng: &mut dyn RngCore,
) -> Result<ControlPath> {
    let mut theta = theta0.clone();
    let mut out = ControlPath::empty();
    for step in &path.steps {
        let noisy: Vec<DVector<f64>> = step
            .iter()
            .map(|w| w.map(|x| x + eps * Distribution::<f64>::sample(&StandardNormal, &mut *rng)))
            .collect();
        let levels: Vec<f64> = noisy.iter().map(|w| f.eval_centered(&(&theta.z + w))).collect();
        let order = rank_values(&levels)?.order;
        let sorted: Vec<DVector<f64>> = order.iter().map(|&i| noisy[i].clone()).collect();
        theta = f_theta(&theta, &sorted, hp)?;
        out.steps.push(sorted);
    }
    Ok(out)
}

/// Orthonormal basis (as columns) of the complement of `g` in `R^n`.
fn complement_basis(g: &DVector<f64>) -> DMatrix<f64> {
    let n = g.len();
    let gh = g / g.norm();
    let mut e1 = DVector::zeros(n);
    e1[0] = 1.0;
    let w = &gh - &e1;
    let householder = if w.norm() < 1e-300 {
        DMatrix::identity(n, n)
    } else {
        let w = &w / w.norm();
        DMatrix::identity(n, n) - &w * w.transpose() * 2.0
    };
    householder.columns(1, n - 1).into_owned()
}

/// Coordinates `(z, p, q, tangent Sigma_hat, r)` of a state, with the
/// covariance expressed in an orthonormal basis of the tangent space of
/// `{rho = 1}` given by `basis`.
pub fn state_coords(theta: &SmoothState, basis: &DMatrix<f64>) -> DVector<f64> {
    let s = DVector::from_vec(sym_to_coords(theta.sigma_hat.matrix()));
    let tangent = basis.transpose() * s;
    let mut out: Vec<f64> = theta.z.iter().chain(theta.p.iter()).chain(theta.q.iter()).copied().collect();
    out.extend(tangent.iter());
    out.push(theta.r);
    DVector::from_vec(out)
}

/// Tangent-space basis of `{rho = 1}` at `sigma_hat`, in the coordinates of
/// [`sym_to_coords`].
pub fn tangent_basis(sigma_hat: &SpdMatrix) -> DMatrix<f64> {
    complement_basis(&DVector::from_vec(sym_to_coords(&rho_gradient(sigma_hat))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianReport {
    pub rows: usize,
    pub cols: usize,
    /// Row-major Jacobian entries.
    pub matrix: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
    pub rank: usize,
    /// Dimension of the state manifold, `3d + d(d+1)/2`.
    pub max_rank: usize,
    pub threshold: f64,
    pub h: f64,
}

impl JacobianReport {
    pub fn is_full_rank(&self) -> bool {
        self.rank == self.max_rank
    }
}

/// Relative singular-value threshold for the numerical rank.
pub const RANK_THRESHOLD: f64 = 1e-8;

/// Central finite-difference Jacobian of the endpoint `S^k(v)` with respect to
/// all path inputs, with per-coordinate step `h (1 + |v_i|)` and the
/// covariance rows expressed in the tangent space at the nominal endpoint.
pub fn jacobian_fd(theta0: &SmoothState, path: &ControlPath, hp: &Hyperparameters, h: f64) -> Result<JacobianReport> {
    let d = theta0.dim();
    let (k, mu) = (path.len(), hp.mu);
    let nominal = endpoint(theta0, path, hp)?;
    let basis = tangent_basis(&nominal.sigma_hat);
    let rows = 3 * d + d * (d + 1) / 2;
    let x = path.flatten();
    let columns: Vec<Result<DVector<f64>>> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let hi = h * (1.0 + x[i].abs());
            let mut plus = x.clone();
            plus[i] += hi;
            let mut minus = x.clone();
            minus[i] -= hi;
            let sp = endpoint(theta0, &ControlPath::from_flat(&plus, k, mu, d), hp)?;
            let sm = endpoint(theta0, &ControlPath::from_flat(&minus, k, mu, d), hp)?;
            Ok((state_coords(&sp, &basis) - state_coords(&sm, &basis)) / (2.0 * hi))
        })
        .collect();
    let mut jac = DMatrix::zeros(rows, x.len());
    for (i, c) in columns.into_iter().enumerate() {
        let c = c?;
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("jacobian column"));
        }
        jac.set_column(i, &c);
    }
    let mut singular_values: Vec<f64> = if x.is_empty() {
        Vec::new()
    } else {
        jac.clone().svd(false, false).singular_values.iter().copied().collect()
    };
    singular_values.sort_by(|a, b| b.total_cmp(a));
    let rank = match singular_values.first() {
        Some(&top) if top > 0.0 => singular_values.iter().filter(|&&s| s / top > RANK_THRESHOLD).count(),
        _ => 0,
    };
    Ok(JacobianReport {
        rows,
        cols: x.len(),
        matrix: jac.row_iter().map(|r| r.iter().copied().collect()).collect(),
        singular_values,
        rank,
        max_rank: rows,
        threshold: RANK_THRESHOLD,
        h,
    })
}

/// Reduced `2 x 2` matrix `A_j` and its `j -> inf` limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpqReport {
    pub a: [[f64; 2]; 2],
    pub det: f64,
    /// The three factors whose product is the limit determinant.
    pub limit_factors: [f64; 3],
    pub limit: f64,
}

/// `Gamma_k = Gamma((1 - c_sigma)^k p)`.
fn gamma_k(hp: &Hyperparameters, p: &DVector<f64>, k: usize) -> f64 {
    hp.step_size_change(&(p * (1.0 - hp.c_sigma).powi(k as i32)))
}

/// Determinant of the reduced controllability matrix `A_j` at path value `p`
/// and its limit
/// `(1 - c_s - a/Gamma(0)) (1 - c_c - 1/Gamma(0)) ((1 - c_s)^2 - (1 - c_c)^2 / (1 - c_1 - c_mu))`,
/// where `a = (1 - c_1 - c_mu)^{-1/2}`.
pub fn lpq_determinant(j: usize, hp: &Hyperparameters, p: &DVector<f64>) -> Result<LpqReport> {
    if hp.c_sigma >= 1.0 || hp.c_c >= 1.0 {
        return Err(Error::RegimeMismatch("A_j needs c_sigma < 1 and c_c < 1".into()));
    }
    let (cs, cc, sh) = (hp.c_sigma, hp.c_c, hp.shrink());
    let a_fac = 1.0 / sh.sqrt();
    let g1 = gamma_k(hp, p, j + 1);
    let g3 = gamma_k(hp, p, j + 3);
    let a = [
        [(1.0 - cs).powi(2) * (1.0 - cs - a_fac / g1), 1.0 - cs - a_fac / g3],
        [(1.0 - cc).powi(2) / sh * (1.0 - cc - 1.0 / g1), 1.0 - cc - 1.0 / g3],
    ];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let g0 = hp.step_size_change(&DVector::zeros(p.len()));
    let limit_factors = [
        1.0 - cs - a_fac / g0,
        1.0 - cc - 1.0 / g0,
        (1.0 - cs).powi(2) - (1.0 - cc).powi(2) / sh,
    ];
    Ok(LpqReport {
        a,
        det,
        limit_factors,
        limit: limit_factors.iter().product(),
    })
}

/// The full `2d x 2d` matrix `L^{p,q}_j` acting on `(p, q)` perturbations.
/// Its `q` rows carry the factor `1 - c_c` and vanish when `c_c = 1`.
pub fn lpq_matrix(j: usize, hp: &Hyperparameters, p: &DVector<f64>, sigma_hat: &SpdMatrix) -> Result<DMatrix<f64>> {
    let d = p.len();
    let (cs, cc, sh) = (hp.c_sigma, hp.c_c, hp.shrink());
    let me = hp.mu_eff();
    let a_fac = 1.0 / sh.sqrt();
    let cp = |k: usize| (1.0 - cs - a_fac / gamma_k(hp, p, k)) * (cs * (2.0 - cs) * me).sqrt();
    let dp = |k: usize| a_fac * (1.0 - cc - 1.0 / gamma_k(hp, p, k)) * (cc * (2.0 - cc) * me).sqrt();
    let scale = sigma_hat.inv_sqrt() * eval_norm(&hp.norm, sigma_hat)?.sqrt();
    let id = DMatrix::<f64>::identity(d, d);
    let mut l = DMatrix::zeros(2 * d, 2 * d);
    l.view_mut((0, 0), (d, d)).copy_from(&(&scale * ((1.0 - cs).powi(3) * cp(j + 1))));
    l.view_mut((0, d), (d, d)).copy_from(&(&scale * ((1.0 - cs) * cp(j + 3))));
    l.view_mut((d, 0), (d, d))
        .copy_from(&(&id * ((1.0 - cc).powi(3) * sh.powf(-1.5) * dp(j + 1))));
    l.view_mut((d, d), (d, d)).copy_from(&(&id * ((1.0 - cc) * a_fac * dp(j + 3))));
    Ok(l)
}
