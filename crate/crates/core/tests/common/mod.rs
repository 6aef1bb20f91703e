#![allow(dead_code)]

use cmachain::cma::{GammaVariant, Hyperparameters, RawState};
use cmachain::linalg::{rho, SpdMatrix};
use cmachain::normalized::SmoothState;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal_vec(rng: &mut impl Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| scale * Distribution::<f64>::sample(&StandardNormal, rng))
}

/// SPD matrix with log-eigenvalues uniform in `[-spread, spread]` and a random
/// orthonormal eigenbasis.
pub fn random_spd(rng: &mut impl Rng, d: usize, spread: f64) -> SpdMatrix {
    let g = DMatrix::from_fn(d, d, |_, _| Distribution::<f64>::sample(&StandardNormal, rng));
    let q = g.qr().q();
    let vals: Vec<f64> = (0..d).map(|_| rng.random_range(-spread..=spread).exp()).collect();
    SpdMatrix::from_spectrum(&q, &vals).unwrap()
}

pub fn random_unit_det(rng: &mut impl Rng, d: usize, spread: f64) -> SpdMatrix {
    let a = random_spd(rng, d, spread);
    let r = rho(&a);
    a.scaled(1.0 / r)
}

pub fn random_smooth_state(rng: &mut impl Rng, d: usize) -> SmoothState {
    SmoothState {
        z: normal_vec(rng, d, 1.0),
        p: normal_vec(rng, d, 1.0),
        q: normal_vec(rng, d, 1.0),
        sigma_hat: random_unit_det(rng, d, 1.0),
        r: rng.random_range(0.5..1.5),
    }
}

pub fn random_raw_state(rng: &mut impl Rng, d: usize) -> RawState {
    RawState {
        m: normal_vec(rng, d, 2.0),
        p_sigma: normal_vec(rng, d, 1.0),
        p_c: normal_vec(rng, d, 1.0),
        sigma: rng.random_range(0.1..2.0),
        cov: random_spd(rng, d, 1.0),
    }
}

pub fn csa1(d: usize) -> Hyperparameters {
    Hyperparameters::standard(d, GammaVariant::Csa1)
}

/// `|a - b| <= tol * max(1, |a|)` for every entry.
pub fn close_vec(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
    a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(1.0))
}

pub fn close_mat(a: &SpdMatrix, b: &SpdMatrix, tol: f64) -> bool {
    a.matrix().iter().zip(b.matrix().iter()).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(1.0))
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(1.0)
}
