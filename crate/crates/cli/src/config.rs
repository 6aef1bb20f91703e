//! Experiment configuration: TOML sections, validation and construction of
//! the library objects.

use std::path::PathBuf;
use std::sync::Arc;

use cmachain::cma::{default_d_sigma, GammaVariant, Hyperparameters, RawState, Regime};
use cmachain::linalg::{NormalizationFn, SpdMatrix};
use cmachain::objectives::{Builtin, Kind, Transform};
use cmachain::sampling::Gaussian;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    /// sphere, ellipsoid, l1, linear or tilted_sphere
    pub name: String,
    pub dim: usize,
    pub optimum: Option<Vec<f64>>,
    /// Gradient of the linear objective.
    pub weights: Option<Vec<f64>>,
    /// exp, cube, log1p or affine
    pub transform: Option<String>,
    pub affine: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    /// csa1 or csa2
    pub gamma: String,
    pub lambda: Option<usize>,
    pub mu: Option<usize>,
    pub c_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub c_m: Option<f64>,
    pub d_sigma: Option<f64>,
    /// det_root, eigen:K or min_eigen
    #[serde(default = "default_normalization")]
    pub normalization: String,
    #[serde(default = "default_distribution")]
    pub distribution: String,
}

fn default_normalization() -> String {
    "det_root".into()
}

fn default_distribution() -> String {
    "gaussian".into()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub replicas: Option<usize>,
    pub burn_in: Option<usize>,
    pub out: Option<PathBuf>,
    pub m0: Option<Vec<f64>>,
    pub sigma0: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySection {
    #[serde(default = "default_n_q")]
    pub n_q: usize,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
}

fn default_n_q() -> usize {
    cmachain::density::DEFAULT_N_Q
}
fn default_draws() -> usize {
    200_000
}
fn default_bins() -> usize {
    50
}
fn default_half_width() -> f64 {
    4.0
}

impl Default for DensitySection {
    fn default() -> Self {
        Self {
            n_q: default_n_q(),
            draws: default_draws(),
            bins: default_bins(),
            half_width: default_half_width(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    #[serde(default = "default_zero_steps")]
    pub zero_steps: usize,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Extra random blocks appended to the steering path for the rank test.
    #[serde(default = "default_extra_blocks")]
    pub extra_blocks: usize,
    #[serde(default = "default_lpq_j")]
    pub lpq_j: usize,
    #[serde(default = "default_target_side")]
    pub target_side: f64,
}

fn default_zero_steps() -> usize {
    30
}
fn default_h() -> f64 {
    1e-6
}
fn default_eps() -> f64 {
    1e-6
}
fn default_extra_blocks() -> usize {
    5
}
fn default_lpq_j() -> usize {
    50
}
fn default_target_side() -> f64 {
    0.5
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            zero_steps: default_zero_steps(),
            h: default_h(),
            eps: default_eps(),
            extra_blocks: default_extra_blocks(),
            lpq_j: default_lpq_j(),
            target_side: default_target_side(),
        }
    }
}

/// Parsed configuration file, with command-line overrides applied.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: ObjectiveSection,
    pub algorithm: AlgorithmSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub density: DensitySection,
    #[serde(default)]
    pub control: ControlSection,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub replicas: Option<usize>,
    pub out: Option<PathBuf>,
    pub regime: Option<Regime>,
}

/// Everything a subcommand needs.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub hp: Hyperparameters,
    pub objective: Builtin,
    pub regime: Regime,
    pub seed: u64,
    pub steps: usize,
    pub replicas: usize,
    pub burn_in: usize,
    pub out: PathBuf,
    /// Hex SHA-256 of the effective configuration, output directory excluded.
    pub config_hash: String,
}

fn field(name: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("field `{name}`: {msg}"))
}

pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

impl Experiment {
    pub fn load(text: &str, ov: &Overrides) -> Result<Self, CliError> {
        let mut config = parse(text)?;
        if ov.seed.is_some() {
            config.run.seed = ov.seed;
        }
        if ov.steps.is_some() {
            config.run.steps = ov.steps;
        }
        if ov.replicas.is_some() {
            config.run.replicas = ov.replicas;
        }
        if ov.out.is_some() {
            config.run.out = ov.out.clone();
        }
        let objective = build_objective(&config.objective)?;
        let hp = build_hyperparameters(&config.algorithm, config.objective.dim)?;
        let regime = ov.regime.unwrap_or_else(|| hp.regime());
        hp.check_regime(regime).map_err(|e| CliError::Config(format!("section `algorithm`: {e}")))?;

        let run = &config.run;
        if let Some(m0) = &run.m0 {
            if m0.len() != config.objective.dim {
                return Err(field("run.m0", format!("has {} entries, expected dim = {}", m0.len(), config.objective.dim)));
            }
        }
        if let Some(s) = run.sigma0 {
            if !(s > 0.0 && s.is_finite()) {
                return Err(field("run.sigma0", "must be positive"));
            }
        }
        let steps = run.steps.unwrap_or(100);
        let replicas = run.replicas.unwrap_or(4);
        if replicas == 0 {
            return Err(field("run.replicas", "must be positive"));
        }
        let burn_in = run.burn_in.unwrap_or(steps / 10);
        let c = &config.control;
        if !(c.h > 0.0) || !(c.eps >= 0.0) || !(c.target_side > 0.0) {
            return Err(field("control", "h and target_side must be positive, eps nonnegative"));
        }
        let dn = &config.density;
        if dn.n_q == 0 || dn.draws == 0 || dn.bins == 0 || !(dn.half_width > 0.0) {
            return Err(field("density", "n_q, draws, bins and half_width must be positive"));
        }

        // the output location does not affect results
        let mut hashed = config.clone();
        hashed.run.out = None;
        let canonical = toml::to_string(&hashed).map_err(|e| CliError::Config(e.to_string()))?;
        let config_hash = format!("{:x}", Sha256::digest(format!("{canonical}regime={}", regime.label()).as_bytes()));
        Ok(Self {
            seed: config.run.seed.unwrap_or(0),
            out: config.run.out.clone().unwrap_or_else(|| PathBuf::from("out")),
            config,
            hp,
            objective,
            regime,
            steps,
            replicas,
            burn_in,
            config_hash,
        })
    }

    pub fn provenance(&self) -> String {
        format!("config_sha256={} seed={}", self.config_hash, self.seed)
    }

    /// `m_0` (default all ones), `sigma_0` (default 1), `C_0 = I`, zero paths.
    pub fn raw_start(&self) -> RawState {
        let d = self.hp.dim;
        let m = match &self.config.run.m0 {
            Some(v) => DVector::from_column_slice(v),
            None => DVector::from_element(d, 1.0),
        };
        RawState::new(m, self.config.run.sigma0.unwrap_or(1.0), SpdMatrix::identity(d))
    }
}

fn build_objective(o: &ObjectiveSection) -> Result<Builtin, CliError> {
    let d = o.dim;
    if d == 0 {
        return Err(field("objective.dim", "must be positive"));
    }
    let kind = match o.name.as_str() {
        "sphere" => Kind::Sphere,
        "ellipsoid" => Kind::Ellipsoid,
        "l1" => Kind::L1,
        "tilted_sphere" => Kind::TiltedSphere,
        "linear" => {
            let w = o.weights.clone().ok_or_else(|| field("objective.weights", "required for the linear objective"))?;
            if w.len() != d {
                return Err(field("objective.weights", format!("has {} entries, expected dim = {d}", w.len())));
            }
            Kind::Linear(DVector::from_vec(w))
        }
        other => return Err(field("objective.name", format!("unknown objective `{other}`"))),
    };
    let optimum = match &o.optimum {
        Some(v) if v.len() != d => return Err(field("objective.optimum", format!("has {} entries, expected dim = {d}", v.len()))),
        Some(v) => DVector::from_column_slice(v),
        None => DVector::zeros(d),
    };
    let f = Builtin::new(kind, optimum);
    let g = match o.transform.as_deref() {
        None => return Ok(f),
        Some("exp") => Transform::Exp,
        Some("cube") => Transform::Cube,
        Some("log1p") => Transform::Log1p,
        Some("affine") => {
            let [a, b] = o.affine.ok_or_else(|| field("objective.affine", "required for the affine transform"))?;
            if !(a > 0.0) {
                return Err(field("objective.affine", "slope must be positive"));
            }
            Transform::Affine(a, b)
        }
        Some(other) => return Err(field("objective.transform", format!("unknown transform `{other}`"))),
    };
    Ok(f.composed(g))
}

fn build_hyperparameters(a: &AlgorithmSection, d: usize) -> Result<Hyperparameters, CliError> {
    let gamma = match a.gamma.as_str() {
        "csa1" => GammaVariant::Csa1,
        "csa2" => GammaVariant::Csa2,
        other => return Err(field("algorithm.gamma", format!("expected csa1 or csa2, got `{other}`"))),
    };
    let mut hp = Hyperparameters::standard(d, gamma);
    if a.lambda.is_some() || a.mu.is_some() {
        let lambda = a.lambda.unwrap_or(hp.lambda);
        let mu = a.mu.unwrap_or(lambda / 2);
        if lambda == 0 || mu == 0 || mu > lambda {
            return Err(field("algorithm.mu", format!("need 1 <= mu <= lambda, got mu={mu} lambda={lambda}")));
        }
        hp = hp.with_population(lambda, mu);
        hp.d_sigma = default_d_sigma(gamma, hp.mu_eff(), d);
    }
    hp = hp.with_rates(a.c_sigma, a.c_c, a.c_1, a.c_mu);
    if let Some(c_m) = a.c_m {
        hp.c_m = c_m;
    }
    if let Some(ds) = a.d_sigma {
        hp.d_sigma = ds;
    }
    hp.norm = match a.normalization.as_str() {
        "det_root" => NormalizationFn::DetRoot,
        "min_eigen" => NormalizationFn::min_eigen(d),
        s => match s.strip_prefix("eigen:").and_then(|k| k.parse::<usize>().ok()) {
            Some(k) => NormalizationFn::Eigen(k),
            None => return Err(field("algorithm.normalization", format!("expected det_root, eigen:K or min_eigen, got `{s}`"))),
        },
    };
    if a.distribution != "gaussian" {
        return Err(field("algorithm.distribution", format!("only `gaussian` is supported, got `{}`", a.distribution)));
    }
    hp.dist = Arc::new(Gaussian::new(d));
    hp.validate().map_err(|e| CliError::Config(format!("section `algorithm`: {e}")))?;
    Ok(hp)
}
