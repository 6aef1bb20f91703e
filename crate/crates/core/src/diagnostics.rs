//! Empirical witnesses for convergence and stability: the log-progress
//! decomposition, rate estimates, two-sample stationarity checks and hitting
//! frequencies.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cma::{step_raw_with_batch, Hyperparameters, RawState};
use crate::control::{endpoint, jitter_into_control_set, path_to_identity};
use crate::error::{Error, Result};
use crate::linalg::{eval_norm, NormalizationFn};
use crate::normalized::{normalize, step_normalized, step_smooth_with_batch, xi, NormalizedState, ProjectedState, SmoothState};
use crate::objectives::Objective;
use crate::sampling::{Purpose, StreamKey};

/// Terms of `log ||m_{t+1} - x*|| - log ||m_t - x*||
/// = dlog||z|| + log Gamma(p_{t+1}) + log(r_{t+1}) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgressRecord {
    pub t: usize,
    pub dlog_z: f64,
    pub log_gamma: f64,
    pub half_log_r: f64,
    pub lhs: Option<f64>,
}

impl ProgressRecord {
    pub fn rhs(&self) -> f64 {
        self.dlog_z + self.log_gamma + self.half_log_r
    }

    /// `log Gamma + log(r) / 2`, the per-step contribution to the rate.
    pub fn rate_term(&self) -> f64 {
        self.log_gamma + self.half_log_r
    }

    pub fn residual(&self) -> Option<f64> {
        self.lhs.map(|l| (l - self.rhs()).abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub records: Vec<ProgressRecord>,
    pub max_residual: f64,
}

fn log_distance(m: &DVector<f64>, x_star: &DVector<f64>, t: usize) -> Result<f64> {
    let n = (m - x_star).norm();
    if n == 0.0 {
        return Err(Error::ZeroDistance(t));
    }
    Ok(n.ln())
}

fn log_norm(z: &DVector<f64>, t: usize) -> Result<f64> {
    let n = z.norm();
    if n == 0.0 {
        return Err(Error::ZeroDistance(t));
    }
    Ok(n.ln())
}

fn finish(records: Vec<ProgressRecord>) -> Decomposition {
    let max_residual = records.iter().filter_map(|r| r.residual()).fold(0.0, f64::max);
    Decomposition { records, max_residual }
}

/// Decomposes the progress of a raw trajectory `raw[0..=T]` using the
/// normalized trajectory `normalized[t]` that corresponds to `raw[t]`.
pub fn decompose_progress(
    raw: &[RawState],
    normalized: &[NormalizedState],
    x_star: &DVector<f64>,
    hp: &Hyperparameters,
) -> Result<Decomposition> {
    if raw.len() != normalized.len() {
        return Err(Error::DimensionMismatch {
            expected: raw.len(),
            got: normalized.len(),
        });
    }
    let mut records = Vec::with_capacity(raw.len().saturating_sub(1));
    for t in 0..raw.len().saturating_sub(1) {
        let next = &normalized[t + 1];
        records.push(ProgressRecord {
            t,
            dlog_z: log_norm(&next.z, t + 1)? - log_norm(&normalized[t].z, t)?,
            log_gamma: hp.step_size_change(&next.p).ln(),
            half_log_r: 0.5 * next.r.ln(),
            lhs: Some(log_distance(&raw[t + 1].m, x_star, t + 1)? - log_distance(&raw[t].m, x_star, t)?),
        });
    }
    Ok(finish(records))
}

/// Decomposition along a smooth trajectory alone (no left-hand side).
pub fn decompose_smooth(traj: &[SmoothState], hp: &Hyperparameters) -> Result<Decomposition> {
    let mut records = Vec::with_capacity(traj.len().saturating_sub(1));
    for t in 0..traj.len().saturating_sub(1) {
        let next = &traj[t + 1];
        records.push(ProgressRecord {
            t,
            dlog_z: log_norm(&next.z, t + 1)? - log_norm(&traj[t].z, t)?,
            log_gamma: hp.step_size_change(&next.p).ln(),
            half_log_r: 0.5 * next.r.ln(),
            lhs: None,
        });
    }
    Ok(finish(records))
}

/// Decomposition for a projected chain. The step-size factor and, when `r` was
/// dropped, the covariance scale ratio come from the co-run raw chain.
pub fn decompose_projected(
    raw: &[RawState],
    projected: &[ProjectedState],
    x_star: &DVector<f64>,
    hp: &Hyperparameters,
) -> Result<Decomposition> {
    if raw.len() != projected.len() {
        return Err(Error::DimensionMismatch {
            expected: raw.len(),
            got: projected.len(),
        });
    }
    let mut records = Vec::with_capacity(raw.len().saturating_sub(1));
    for t in 0..raw.len().saturating_sub(1) {
        let r = match &projected[t + 1] {
            ProjectedState::II { r, .. } => *r,
            _ => eval_norm(&hp.norm, &raw[t + 1].cov)? / eval_norm(&hp.norm, &raw[t].cov)?,
        };
        records.push(ProgressRecord {
            t,
            dlog_z: log_norm(projected[t + 1].z(), t + 1)? - log_norm(projected[t].z(), t)?,
            log_gamma: (raw[t + 1].sigma / raw[t].sigma).ln(),
            half_log_r: 0.5 * r.ln(),
            lhs: Some(log_distance(&raw[t + 1].m, x_star, t + 1)? - log_distance(&raw[t].m, x_star, t)?),
        });
    }
    Ok(finish(records))
}

/// Raw and normalized trajectories driven by the same batches.
#[derive(Debug, Clone)]
pub struct CoRun {
    pub raw: Vec<RawState>,
    pub normalized: Vec<NormalizedState>,
}

/// Runs the raw chain from `raw0` and, in lockstep, the normalized chain from
/// `normalize(raw0, raw0)` on the same batches (batch `t` from `key` at step `t`).
pub fn co_run(raw0: &RawState, hp: &Hyperparameters, f: &dyn Objective, key: StreamKey, steps: usize) -> Result<CoRun> {
    let x_star = f.optimum();
    let mut raw = vec![raw0.clone()];
    let mut normalized = vec![normalize(raw0, raw0, x_star, &hp.norm)?];
    for t in 0..steps {
        let batch = key.batch_at(hp.dist.as_ref(), t as u64, hp.lambda);
        let next_norm = step_normalized(normalized.last().unwrap(), hp, f, &batch)?.state;
        let next_raw = step_raw_with_batch(raw.last().unwrap(), hp, f, batch)?.state;
        raw.push(next_raw);
        normalized.push(next_norm);
    }
    Ok(CoRun { raw, normalized })
}

/// Normalized images of a raw trajectory, pairing each state with its predecessor
/// (the first with itself). Unlike an independently iterated normalized chain this
/// cannot drift apart through rounding.
pub fn normalized_from_raw(raw: &[RawState], x_star: &DVector<f64>, norm: &NormalizationFn) -> Result<Vec<NormalizedState>> {
    let mut out = Vec::with_capacity(raw.len());
    for t in 0..raw.len() {
        out.push(normalize(&raw[t.saturating_sub(1)], &raw[t], x_star, norm)?);
    }
    Ok(out)
}

/// Smooth trajectory of `steps` transitions from `theta0`.
pub fn run_smooth(theta0: &SmoothState, hp: &Hyperparameters, f: &dyn Objective, key: StreamKey, steps: usize) -> Result<Vec<SmoothState>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(theta0.clone());
    for t in 0..steps {
        let batch = key.batch_at(hp.dist.as_ref(), t as u64, hp.lambda);
        let next = step_smooth_with_batch(out.last().unwrap(), hp, f, &batch)?;
        out.push(next);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub rate: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Number of batches for the batch-means standard error.
pub const RATE_BATCHES: usize = 50;

/// Mean of `terms[burn_in..]` with a batch-means standard error.
pub fn estimate_rate(terms: &[f64], burn_in: usize) -> Result<RateEstimate> {
    if terms.len() <= burn_in {
        return Err(Error::Precondition(format!(
            "trajectory of length {} does not exceed burn-in {burn_in}",
            terms.len()
        )));
    }
    let xs = &terms[burn_in..];
    let n = xs.len();
    let rate = xs.iter().sum::<f64>() / n as f64;
    let b = n / RATE_BATCHES;
    let stderr = if b == 0 {
        f64::NAN
    } else {
        let means: Vec<f64> = xs.chunks_exact(b).take(RATE_BATCHES).map(|c| c.iter().sum::<f64>() / b as f64).collect();
        let mm = means.iter().sum::<f64>() / means.len() as f64;
        let var = means.iter().map(|m| (m - mm).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
        (var / means.len() as f64).sqrt()
    };
    Ok(RateEstimate { rate, stderr, samples: n })
}

/// Raw chain kept representable over long runs: the state is periodically
/// rescaled (which leaves rankings unchanged on scaling-invariant functions)
/// and the removed scales are accumulated in log form.
#[derive(Debug, Clone)]
pub struct RescaledRaw {
    pub state: RawState,
    /// True `m - x*` is `exp(log_m_scale) (m - x*)`.
    pub log_m_scale: f64,
    /// True `C` is `exp(log_c_scale) C`.
    pub log_c_scale: f64,
}

/// Outcome of one [`RescaledRaw`] step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescaledStep {
    pub log_gamma: f64,
    pub half_log_r: f64,
    pub log_distance: f64,
}

const RESCALE_LO: f64 = 1e-40;
const RESCALE_HI: f64 = 1e40;

impl RescaledRaw {
    pub fn new(state: RawState) -> Self {
        Self {
            state,
            log_m_scale: 0.0,
            log_c_scale: 0.0,
        }
    }

    pub fn log_distance(&self, x_star: &DVector<f64>) -> f64 {
        (&self.state.m - x_star).norm().ln() + self.log_m_scale
    }

    pub fn step(&mut self, hp: &Hyperparameters, f: &dyn Objective, batch: Vec<DVector<f64>>) -> Result<RescaledStep> {
        let x_star = f.optimum();
        let r_prev = eval_norm(&hp.norm, &self.state.cov)?;
        let next = step_raw_with_batch(&self.state, hp, f, batch)?.state;
        let r_next = eval_norm(&hp.norm, &next.cov)?;
        let log_gamma = (next.sigma / self.state.sigma).ln();
        self.state = next;
        let dist = (&self.state.m - x_star).norm();
        if dist == 0.0 {
            return Err(Error::ZeroDistance(0));
        }
        if !(RESCALE_LO..=RESCALE_HI).contains(&dist) {
            let a = 1.0 / dist;
            self.state.m = x_star + (&self.state.m - x_star) * a;
            self.state.sigma *= a;
            self.log_m_scale -= a.ln();
        }
        if !(RESCALE_LO..=RESCALE_HI).contains(&r_next) {
            let g = 1.0 / r_next;
            self.state.cov = self.state.cov.scaled(g);
            self.state.sigma /= g.sqrt();
            self.state.p_c *= g.sqrt();
            self.log_c_scale -= g.ln();
        }
        Ok(RescaledStep {
            log_gamma,
            half_log_r: 0.5 * (r_next / r_prev).ln(),
            log_distance: self.log_distance(x_star),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateComparison {
    pub estimate: RateEstimate,
    /// `(log ||m_T - x*|| - log ||m_b - x*||) / (T - b)` from the raw chain.
    pub direct_slope: f64,
}

/// Runs a rescaled raw chain for `steps` iterations and compares the
/// decomposition-based rate with the slope of the log-distance.
pub fn simulate_rate(
    raw0: &RawState,
    hp: &Hyperparameters,
    f: &dyn Objective,
    key: StreamKey,
    steps: usize,
    burn_in: usize,
) -> Result<RateComparison> {
    let mut chain = RescaledRaw::new(raw0.clone());
    let mut terms = Vec::with_capacity(steps);
    let mut log_d = vec![chain.log_distance(f.optimum())];
    for t in 0..steps {
        let batch = key.batch_at(hp.dist.as_ref(), t as u64, hp.lambda);
        let s = chain.step(hp, f, batch)?;
        terms.push(s.log_gamma + s.half_log_r);
        log_d.push(s.log_distance);
    }
    let estimate = estimate_rate(&terms, burn_in)?;
    let direct_slope = (log_d[steps] - log_d[burn_in]) / (steps - burn_in) as f64;
    Ok(RateComparison { estimate, direct_slope })
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a: Vec<f64> = a.to_vec();
    let mut b: Vec<f64> = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut best) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    best
}

/// Scalar summaries compared by [`stationarity_probe`].
pub const SUMMARY_NAMES: [&str; 4] = ["log_norm_z", "log_gamma", "log_r", "log_cond_sigma"];

pub fn summaries(theta: &SmoothState, hp: &Hyperparameters) -> [f64; 4] {
    [
        theta.z.norm().ln(),
        hp.step_size_change(&theta.p).ln(),
        theta.r.ln(),
        theta.sigma_hat.condition().ln(),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub ks: [f64; 4],
    pub samples: usize,
}

impl StationarityReport {
    pub fn max_ks(&self) -> f64 {
        self.ks.iter().copied().fold(0.0, f64::max)
    }
}

/// KS distances between the summaries of two trajectories over
/// `[burn_in, burn_in + window)`, keeping every `thin`-th state.
pub fn stationarity_probe(a: &[SmoothState], b: &[SmoothState], hp: &Hyperparameters, burn_in: usize, window: usize, thin: usize) -> Result<StationarityReport> {
    let end = burn_in + window;
    if a.len() < end || b.len() < end || thin == 0 {
        return Err(Error::Precondition("trajectories shorter than burn-in plus window".into()));
    }
    let pick = |traj: &[SmoothState]| -> Vec<[f64; 4]> { traj[burn_in..end].iter().step_by(thin).map(|s| summaries(s, hp)).collect() };
    let (sa, sb) = (pick(a), pick(b));
    let mut ks = [0.0; 4];
    for (k, slot) in ks.iter_mut().enumerate() {
        let xa: Vec<f64> = sa.iter().map(|s| s[k]).collect();
        let xb: Vec<f64> = sb.iter().map(|s| s[k]).collect();
        *slot = ks_distance(&xa, &xb);
    }
    Ok(StationarityReport { ks, samples: sa.len() })
}

/// Axis-aligned box of half-width `half_width` around `center` in every
/// coordinate of `(z, p, q, Sigma_hat, r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetBox {
    pub center: SmoothState,
    pub half_width: f64,
}

impl TargetBox {
    /// Box with side `side` around `(0, 0, 0, I, 1 - c_1 - c_mu)`.
    pub fn around_target(hp: &Hyperparameters, side: f64) -> Self {
        Self {
            center: SmoothState::target(hp),
            half_width: 0.5 * side,
        }
    }

    pub fn contains(&self, theta: &SmoothState) -> bool {
        let c = &self.center;
        let h = self.half_width;
        let close = |a: &DVector<f64>, b: &DVector<f64>| a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= h);
        close(&theta.z, &c.z)
            && close(&theta.p, &c.p)
            && close(&theta.q, &c.q)
            && theta
                .sigma_hat
                .matrix()
                .iter()
                .zip(c.sigma_hat.matrix().iter())
                .all(|(x, y)| (x - y).abs() <= h)
            && (theta.r - c.r).abs() <= h
    }
}

/// Fraction of `replicas` stochastic chains from each start that enter `target`
/// within `horizon` steps (time 0 included).
pub fn hitting_probe(
    starts: &[SmoothState],
    hp: &Hyperparameters,
    f: &dyn Objective,
    target: &TargetBox,
    horizon: usize,
    replicas: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    starts
        .iter()
        .enumerate()
        .map(|(si, start)| {
            let hits: Result<Vec<bool>> = (0..replicas)
                .into_par_iter()
                .map(|rep| {
                    let key = StreamKey::new(seed, ((si as u64) << 24) | rep as u64, Purpose::Probe);
                    let mut theta = start.clone();
                    if target.contains(&theta) {
                        return Ok(true);
                    }
                    for t in 0..horizon {
                        let batch = key.batch_at(hp.dist.as_ref(), t as u64, hp.lambda);
                        theta = step_smooth_with_batch(&theta, hp, f, &batch)?;
                        if target.contains(&theta) {
                            return Ok(true);
                        }
                    }
                    Ok(false)
                })
                .collect();
            let hits = hits?;
            Ok(hits.iter().filter(|&&h| h).count() as f64 / replicas as f64)
        })
        .collect()
}

/// Deterministic counterpart of [`hitting_probe`]: each start is steered with
/// [`path_to_identity`] (plus `zero_steps` zero inputs), the path is jittered
/// into the control set by `eps`, and the endpoint is tested.
pub fn hitting_probe_steered(
    starts: &[SmoothState],
    hp: &Hyperparameters,
    f: &dyn Objective,
    target: &TargetBox,
    zero_steps: usize,
    eps: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    starts
        .iter()
        .enumerate()
        .map(|(si, start)| {
            let path = path_to_identity(start, hp, zero_steps)?;
            let mut rng = StreamKey::new(seed, si as u64, Purpose::Jitter).rng_at(0);
            let jittered = jitter_into_control_set(start, &path, hp, f, eps, &mut rng)?;
            let end = endpoint(start, &jittered, hp)?;
            Ok(if target.contains(&end) { 1.0 } else { 0.0 })
        })
        .collect()
}

/// Smooth state corresponding to a raw start, `xi(normalize(raw0, raw0))`.
pub fn smooth_start(raw0: &RawState, x_star: &DVector<f64>, hp: &Hyperparameters) -> Result<SmoothState> {
    Ok(xi(&normalize(raw0, raw0, x_star, &hp.norm)?))
}
