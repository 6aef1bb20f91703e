//! Objective functions, candidate ranking and a scaling-invariance probe.

use std::fmt::Debug;

use nalgebra::DVector;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// A function to be minimized, together with its reference point `x*`.
pub trait Objective: Debug + Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> f64;
    fn optimum(&self) -> &DVector<f64>;
    fn name(&self) -> String;

    /// `f(x^* + rho x) <= f(x^* + rho y)` does not depend on `rho > 0`.
    fn claims_scaling_invariant(&self) -> bool {
        true
    }

    fn claims_negligible_levels(&self) -> bool {
        true
    }

    /// `f_*(x) = f(x^* + x)`.
    fn eval_centered(&self, x: &DVector<f64>) -> f64 {
        self.eval(&(self.optimum() + x))
    }
}

/// Strictly increasing scalar maps used to build composites `g(f(x))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    Exp,
    Cube,
    Log1p,
    /// `a t + b` with `a > 0`.
    Affine(f64, f64),
}

impl Transform {
    pub fn apply(&self, t: f64) -> f64 {
        match *self {
            Transform::Exp => t.exp(),
            Transform::Cube => t * t * t,
            Transform::Log1p => t.ln_1p(),
            Transform::Affine(a, b) => a * t + b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Kind {
    /// `||x - x*||^2`
    Sphere,
    /// `sum_i 10^{6(i-1)/(d-1)} (x_i - x*_i)^2`
    Ellipsoid,
    /// `||x - x*||_1`
    L1,
    /// `w . (x - x*)`
    Linear(DVector<f64>),
    /// `g(h(x))` for a strictly increasing `g`.
    Composite(Box<Kind>, Transform),
    /// `||x - x*||^2 + (x - x*)_1`, which is not scaling-invariant.
    TiltedSphere,
}

impl Kind {
    fn eval_centered(&self, y: &DVector<f64>) -> f64 {
        match self {
            Kind::Sphere => y.norm_squared(),
            Kind::Ellipsoid => {
                let d = y.len();
                y.iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let e = if d == 1 { 0.0 } else { 6.0 * i as f64 / (d - 1) as f64 };
                        10f64.powf(e) * v * v
                    })
                    .sum()
            }
            Kind::L1 => y.iter().map(|v| v.abs()).sum(),
            Kind::Linear(w) => w.dot(y),
            Kind::Composite(inner, g) => g.apply(inner.eval_centered(y)),
            Kind::TiltedSphere => y.norm_squared() + y[0],
        }
    }

    fn label(&self) -> String {
        match self {
            Kind::Sphere => "sphere".into(),
            Kind::Ellipsoid => "ellipsoid".into(),
            Kind::L1 => "l1".into(),
            Kind::Linear(_) => "linear".into(),
            Kind::Composite(inner, g) => format!("{g:?}({})", inner.label()),
            Kind::TiltedSphere => "tilted_sphere".into(),
        }
    }

    fn scaling_invariant(&self) -> bool {
        match self {
            Kind::TiltedSphere => false,
            Kind::Composite(inner, _) => inner.scaling_invariant(),
            _ => true,
        }
    }
}

/// Built-in objectives centered at `x*`.
#[derive(Debug, Clone, PartialEq)]
pub struct Builtin {
    pub kind: Kind,
    pub optimum: DVector<f64>,
}

impl Builtin {
    pub fn new(kind: Kind, optimum: DVector<f64>) -> Self {
        if let Kind::Linear(w) = &kind {
            assert_eq!(w.len(), optimum.len(), "linear weights must match the dimension");
        }
        Self { kind, optimum }
    }

    pub fn sphere(d: usize) -> Self {
        Self::new(Kind::Sphere, DVector::zeros(d))
    }

    pub fn ellipsoid(d: usize) -> Self {
        Self::new(Kind::Ellipsoid, DVector::zeros(d))
    }

    pub fn l1(d: usize) -> Self {
        Self::new(Kind::L1, DVector::zeros(d))
    }

    pub fn linear(w: DVector<f64>) -> Self {
        let d = w.len();
        Self::new(Kind::Linear(w), DVector::zeros(d))
    }

    pub fn with_optimum(mut self, optimum: DVector<f64>) -> Self {
        assert_eq!(optimum.len(), self.optimum.len());
        self.optimum = optimum;
        self
    }

    pub fn composed(self, g: Transform) -> Self {
        Self {
            kind: Kind::Composite(Box::new(self.kind), g),
            optimum: self.optimum,
        }
    }
}

impl Objective for Builtin {
    fn dim(&self) -> usize {
        self.optimum.len()
    }

    fn eval(&self, x: &DVector<f64>) -> f64 {
        self.kind.eval_centered(&(x - &self.optimum))
    }

    fn eval_centered(&self, x: &DVector<f64>) -> f64 {
        self.kind.eval_centered(x)
    }

    fn optimum(&self) -> &DVector<f64> {
        &self.optimum
    }

    fn name(&self) -> String {
        self.kind.label()
    }

    fn claims_scaling_invariant(&self) -> bool {
        self.kind.scaling_invariant()
    }
}

/// A ranking permutation: `order[i]` is the (0-based) index of the `i`-th best
/// point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    pub order: Vec<usize>,
}

impl Ranking {
    pub fn identity(lambda: usize) -> Self {
        Self {
            order: (0..lambda).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Inverse permutation: the rank of each point.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.order.len()];
        for (rank, &i) in self.order.iter().enumerate() {
            inv[i] = rank;
        }
        inv
    }
}

/// Stable ascending argsort; exact ties keep index order.
pub fn rank_values(values: &[f64]) -> Result<Ranking> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective value"));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    Ok(Ranking { order })
}

/// Ranks `points` by `f`, breaking exact ties by index.
pub fn rank_candidates(f: &dyn Objective, points: &[DVector<f64>]) -> Result<Ranking> {
    let values: Vec<f64> = points.iter().map(|x| f.eval(x)).collect();
    rank_values(&values)
}

/// Ranks points `x* + x_i` given the centered offsets `x_i`.
pub fn rank_centered(f: &dyn Objective, offsets: &[DVector<f64>]) -> Result<Ranking> {
    let values: Vec<f64> = offsets.iter().map(|x| f.eval_centered(x)).collect();
    rank_values(&values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScalingReport {
    pub trials: usize,
    pub violations: usize,
}

/// Counts random `(x, y, rho)` for which the ordering of `f(x + x*)` and
/// `f(y + x*)` differs from that of `f(rho x + x*)` and `f(rho y + x*)`.
pub fn probe_scaling_invariance(
    f: &dyn Objective,
    x_star: &DVector<f64>,
    trials: usize,
    rng: &mut dyn RngCore,
) -> ScalingReport {
    let d = f.dim();
    let mut violations = 0;
    for _ in 0..trials {
        let sx = 10f64.powf(rng.random_range(-3.0..3.0));
        let sy = 10f64.powf(rng.random_range(-3.0..3.0));
        let x = DVector::from_fn(d, |_, _| sx * Distribution::<f64>::sample(&StandardNormal, &mut *rng));
        let y = DVector::from_fn(d, |_, _| sy * Distribution::<f64>::sample(&StandardNormal, &mut *rng));
        let rho = 10f64.powf(rng.random_range(-2.0..2.0));
        let before = f.eval(&(&x + x_star)) <= f.eval(&(&y + x_star));
        let after = f.eval(&(&x * rho + x_star)) <= f.eval(&(&y * rho + x_star));
        if before != after {
            violations += 1;
        }
    }
    ScalingReport { trials, violations }
}
