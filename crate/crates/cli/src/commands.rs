//! Subcommand bodies. Each returns the list of files it wrote.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use cmachain::cma::{step_raw_with_batch, Regime};
use cmachain::control::{extended_transition, jacobian_fd, jitter_into_control_set, lpq_determinant, path_to_identity, ControlPath};
use cmachain::density::{log_density_alpha_with, ExceedanceTable, RankedDensityContext};
use cmachain::diagnostics::{
    co_run, decompose_progress, decompose_projected, hitting_probe, hitting_probe_steered, normalized_from_raw, run_smooth,
    simulate_rate, smooth_start, stationarity_probe, Decomposition, TargetBox, SUMMARY_NAMES,
};
use cmachain::linalg::SpdMatrix;
use cmachain::normalized::{alpha, project, xi, SmoothState};
use cmachain::objectives::Objective;
use cmachain::sampling::{Purpose, StreamKey};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::Experiment;
use crate::CliError;

type Out = Result<Vec<PathBuf>, CliError>;

fn csv_file(exp: &Experiment, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<PathBuf, CliError> {
    let mut s = format!("# {}\n{}\n", exp.provenance(), header.join(","));
    for row in rows {
        let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        writeln!(s, "{}", cells.join(",")).unwrap();
    }
    let path = exp.out.join(name);
    fs::write(&path, s)?;
    Ok(path)
}

fn provenance_value(exp: &Experiment) -> Value {
    json!({ "config_sha256": exp.config_hash, "seed": exp.seed, "regime": exp.regime.label() })
}

/// JSONL with a leading provenance record.
fn jsonl_file(exp: &Experiment, name: &str, records: &[Value]) -> Result<PathBuf, CliError> {
    let mut s = json!({ "provenance": provenance_value(exp) }).to_string();
    s.push('\n');
    for r in records {
        s.push_str(&r.to_string());
        s.push('\n');
    }
    let path = exp.out.join(name);
    fs::write(&path, s)?;
    Ok(path)
}

fn json_file(exp: &Experiment, name: &str, mut report: Value) -> Result<PathBuf, CliError> {
    report["provenance"] = provenance_value(exp);
    let path = exp.out.join(name);
    fs::write(&path, serde_json::to_string_pretty(&report).unwrap() + "\n")?;
    Ok(path)
}

fn candidates(exp: &Experiment, chain: u64) -> StreamKey {
    StreamKey::new(exp.seed, chain, Purpose::Candidates)
}

pub fn run(exp: &Experiment) -> Out {
    let (hp, f) = (&exp.hp, &exp.objective);
    let x_star = &f.optimum;
    let key = candidates(exp, 0);
    let mut raw = vec![exp.raw_start()];
    for t in 0..exp.steps {
        let batch = key.batch_at(hp.dist.as_ref(), t as u64, hp.lambda);
        let next = step_raw_with_batch(raw.last().unwrap(), hp, f, batch)?.state;
        raw.push(next);
    }
    let normalized = normalized_from_raw(&raw, x_star, &hp.norm)?;
    let raw_rows: Vec<Vec<f64>> = raw
        .iter()
        .enumerate()
        .skip(1)
        .map(|(t, s)| {
            vec![
                t as f64,
                f.eval(&s.m),
                s.sigma,
                (&s.m - x_star).norm(),
                s.cov.trace(),
                s.cov.min_eigenvalue(),
                s.cov.max_eigenvalue(),
            ]
        })
        .collect();
    let norm_rows: Vec<Vec<f64>> = normalized
        .iter()
        .enumerate()
        .skip(1)
        .map(|(t, y)| {
            let sh = xi(y).sigma_hat;
            vec![t as f64, y.z.norm(), y.p.norm(), y.q.norm(), y.r, sh.log_det(), sh.condition()]
        })
        .collect();
    Ok(vec![
        csv_file(exp, "raw.csv", &["t", "f_m", "sigma", "dist_to_opt", "trace_c", "lambda_min_c", "lambda_max_c"], &raw_rows)?,
        csv_file(exp, "normalized.csv", &["t", "norm_z", "norm_p", "norm_q", "r", "logdet_sigma_hat", "cond_sigma_hat"], &norm_rows)?,
    ])
}

pub fn rate(exp: &Experiment) -> Out {
    if exp.burn_in >= exp.steps {
        return Err(CliError::Config(format!("field `run.burn_in`: {} must be below steps = {}", exp.burn_in, exp.steps)));
    }
    let start = exp.raw_start();
    let results: Result<Vec<_>, _> = (0..exp.replicas)
        .into_par_iter()
        .map(|rep| simulate_rate(&start, &exp.hp, &exp.objective, candidates(exp, rep as u64), exp.steps, exp.burn_in))
        .collect();
    let results = results?;
    let mut records: Vec<Value> = results
        .iter()
        .enumerate()
        .map(|(rep, c)| {
            json!({
                "kind": "replica",
                "replica": rep,
                "rate": c.estimate.rate,
                "stderr": c.estimate.stderr,
                "samples": c.estimate.samples,
                "direct_slope": c.direct_slope,
            })
        })
        .collect();
    let n = results.len() as f64;
    let mean = results.iter().map(|c| c.estimate.rate).sum::<f64>() / n;
    records.push(json!({ "kind": "summary", "replicas": results.len(), "mean_rate": mean, "burn_in": exp.burn_in, "steps": exp.steps }));
    Ok(vec![jsonl_file(exp, "rate.jsonl", &records)?])
}

pub fn decompose(exp: &Experiment) -> Out {
    let (hp, f) = (&exp.hp, &exp.objective);
    let x_star = &f.optimum;
    let raw = co_run(&exp.raw_start(), hp, f, candidates(exp, 0), exp.steps)?.raw;
    let normalized = normalized_from_raw(&raw, x_star, &hp.norm)?;
    let dec: Decomposition = match exp.regime {
        Regime::I => decompose_progress(&raw, &normalized, x_star, hp)?,
        regime => {
            let projected: Result<Vec<_>, _> = normalized.iter().map(|y| project(&xi(y), hp, regime)).collect();
            decompose_projected(&raw, &projected?, x_star, hp)?
        }
    };
    let mut records: Vec<Value> = dec
        .records
        .iter()
        .map(|r| {
            json!({
                "t": r.t,
                "dlog_z": r.dlog_z,
                "log_gamma": r.log_gamma,
                "half_log_r": r.half_log_r,
                "lhs": r.lhs,
                "rhs": r.rhs(),
                "residual": r.residual(),
            })
        })
        .collect();
    records.push(json!({ "kind": "summary", "steps": dec.records.len(), "max_residual": dec.max_residual }));
    Ok(vec![jsonl_file(exp, "decompose.jsonl", &records)?])
}

/// Marginal density of the first selected sample on bin centers against a
/// histogram of the selection map. One-dimensional problems with `mu <= 2`.
pub fn density_check(exp: &Experiment) -> Out {
    let (hp, f) = (&exp.hp, &exp.objective);
    let dc = &exp.config.density;
    if hp.dim != 1 || hp.mu > 2 {
        return Err(CliError::Config(format!(
            "density-check needs objective.dim = 1 and mu <= 2, got dim = {} and mu = {}",
            hp.dim, hp.mu
        )));
    }
    let theta = smooth_start(&exp.raw_start(), &f.optimum, hp)?;
    let sigma = theta.sigma(&hp.norm)?;
    let ctx = RankedDensityContext {
        z: &theta.z,
        sigma: &sigma,
        f,
        dist: hp.dist.as_ref(),
        lambda: hp.lambda,
        mu: hp.mu,
        n_q: dc.n_q,
        key: StreamKey::new(exp.seed, 0, Purpose::Exceedance),
    };
    let table = ExceedanceTable::new(&ctx);
    let s = |x: f64| DVector::from_element(1, x);
    let (lo, width) = (-dc.half_width, 2.0 * dc.half_width / dc.bins as f64);
    let centers: Vec<f64> = (0..dc.bins).map(|b| lo + (b as f64 + 0.5) * width).collect();

    // the second coordinate is integrated on a grid offset from the tie set
    let outer = 4.0 * dc.half_width;
    let n = 40 * dc.bins;
    let h = 2.0 * outer / n as f64;
    let shift = h / 5f64.sqrt();
    let analytic: Vec<f64> = centers
        .par_iter()
        .map(|&v1| match hp.mu {
            1 => log_density_alpha_with(&table, &ctx, &[s(v1)]).exp(),
            _ => (0..n)
                .map(|j| {
                    let v2 = -outer + (j as f64 + 0.5) * h + shift;
                    log_density_alpha_with(&table, &ctx, &[s(v1), s(v2)]).exp() * h
                })
                .sum(),
        })
        .collect();

    let mut hist = vec![0.0; dc.bins];
    let mut rng = candidates(exp, 0).rng_at(0);
    for _ in 0..dc.draws {
        let batch: Vec<DVector<f64>> = (0..hp.lambda).map(|_| hp.dist.sample(&mut rng)).collect();
        let (v, _) = alpha(&theta, hp, f, &batch)?;
        let k = ((v[0][0] - lo) / width).floor();
        if k >= 0.0 && (k as usize) < dc.bins {
            hist[k as usize] += 1.0;
        }
    }
    let rows: Vec<Vec<f64>> = centers
        .iter()
        .zip(analytic.iter().zip(hist.iter()))
        .map(|(&c, (&a, &count))| {
            let e = count / (dc.draws as f64 * width);
            vec![c, a, e, a - e]
        })
        .collect();
    Ok(vec![csv_file(exp, "density_check.csv", &["v", "analytic", "empirical", "diff"], &rows)?])
}

fn state_record(t: usize, theta: &SmoothState, target: &SmoothState) -> Value {
    json!({
        "t": t,
        "norm_z": theta.z.norm(),
        "norm_p": theta.p.norm(),
        "norm_q": theta.q.norm(),
        "r": theta.r,
        "cond_sigma_hat": theta.sigma_hat.condition(),
        "dist_sigma_hat_identity": (theta.sigma_hat.matrix() - target.sigma_hat.matrix()).norm(),
    })
}

pub fn control_path(exp: &Experiment) -> Out {
    let hp = &exp.hp;
    let theta0 = smooth_start(&exp.raw_start(), &exp.objective.optimum, hp)?;
    let path = path_to_identity(&theta0, hp, exp.config.control.zero_steps)?;
    let traj = extended_transition(&theta0, &path, hp)?;
    let target = SmoothState::target(hp);
    let mut records: Vec<Value> = traj
        .iter()
        .enumerate()
        .map(|(t, theta)| {
            let mut r = state_record(t, theta, &target);
            if t > 0 {
                let inputs: Vec<Vec<f64>> = path.steps[t - 1].iter().map(|v| v.iter().copied().collect()).collect();
                r["inputs"] = json!(inputs);
            }
            r
        })
        .collect();
    let end = traj.last().unwrap();
    let gap = end.z.norm() + end.p.norm() + end.q.norm() + (end.sigma_hat.matrix() - target.sigma_hat.matrix()).norm() + (end.r - target.r).abs();
    records.push(json!({ "kind": "summary", "steps": path.len(), "max_input_norm": path.max_norm(), "distance_to_target": gap }));
    Ok(vec![jsonl_file(exp, "control_path.jsonl", &records)?])
}

pub fn jacobian_rank(exp: &Experiment) -> Out {
    let (hp, f) = (&exp.hp, &exp.objective);
    let c = &exp.config.control;
    let d = hp.dim;
    let theta0 = smooth_start(&exp.raw_start(), &f.optimum, hp)?;
    let mut rng = StreamKey::new(exp.seed, 0, Purpose::Jitter).rng_at(0);
    let mut path = path_to_identity(&theta0, hp, 2)?;
    let extra = ControlPath {
        steps: (0..c.extra_blocks)
            .map(|_| (0..hp.mu).map(|_| DVector::from_fn(d, |_, _| 0.1 * sample_normal(&mut rng))).collect())
            .collect(),
    };
    path = path.then(extra);
    let path = jitter_into_control_set(&theta0, &path, hp, f, c.eps, &mut rng)?;
    let rep = jacobian_fd(&theta0, &path, hp, c.h)?;
    let lpq = lpq_determinant(c.lpq_j, hp, &theta0.p)?;
    let report = json!({
        "regime": exp.regime.label(),
        "rows": rep.rows,
        "cols": rep.cols,
        "rank": rep.rank,
        "max_rank": rep.max_rank,
        "full_rank": rep.is_full_rank(),
        "threshold": rep.threshold,
        "h": rep.h,
        "singular_values": rep.singular_values,
        "lpq": lpq,
    });
    Ok(vec![json_file(exp, "jacobian.json", report)?])
}

fn sample_normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Start states with standard normal `z, p, q`, `Sigma_hat = I` and `r` uniform
/// in `[0.5, 1.5]`.
fn probe_starts(exp: &Experiment) -> Result<Vec<SmoothState>, CliError> {
    let d = exp.hp.dim;
    let mut rng = StreamKey::new(exp.seed, 0, Purpose::Init).rng_at(0);
    Ok((0..exp.replicas)
        .map(|_| SmoothState {
            z: DVector::from_fn(d, |_, _| sample_normal(&mut rng)),
            p: DVector::from_fn(d, |_, _| sample_normal(&mut rng)),
            q: DVector::from_fn(d, |_, _| sample_normal(&mut rng)),
            sigma_hat: SpdMatrix::identity(d),
            r: rng.random_range(0.5..1.5),
        })
        .collect())
}

pub fn probe(exp: &Experiment) -> Out {
    let (hp, f) = (&exp.hp, &exp.objective);
    let c = &exp.config.control;
    let target = TargetBox::around_target(hp, c.target_side);
    let starts = probe_starts(exp)?;
    let stochastic = hitting_probe(&starts, hp, f, &target, exp.steps, exp.replicas, exp.seed)?;
    let steered = match exp.regime {
        Regime::I => Some(hitting_probe_steered(&starts, hp, f, &target, c.zero_steps, c.eps, exp.seed)?),
        _ => None,
    };
    let mut records: Vec<Value> = (0..starts.len())
        .map(|i| {
            json!({
                "kind": "hitting",
                "start": i,
                "horizon": exp.steps,
                "stochastic_frequency": stochastic[i],
                "steered_hit": steered.as_ref().map(|s| s[i]),
            })
        })
        .collect();

    if exp.burn_in >= exp.steps {
        return Err(CliError::Config(format!("field `run.burn_in`: {} must be below steps = {}", exp.burn_in, exp.steps)));
    }
    let theta0 = smooth_start(&exp.raw_start(), &f.optimum, hp)?;
    let a = run_smooth(&theta0, hp, f, candidates(exp, 0), exp.steps)?;
    let b = run_smooth(&theta0, hp, f, candidates(exp, 1), exp.steps)?;
    let st = stationarity_probe(&a, &b, hp, exp.burn_in, exp.steps - exp.burn_in, 1)?;
    let ks: serde_json::Map<String, Value> = SUMMARY_NAMES.iter().zip(st.ks.iter()).map(|(n, v)| (n.to_string(), json!(v))).collect();
    records.push(json!({ "kind": "stationarity", "samples": st.samples, "ks": ks, "max_ks": st.max_ks() }));
    Ok(vec![jsonl_file(exp, "probe.jsonl", &records)?])
}
