mod common;

use cmachain::cma::{step_raw_ranked, step_raw_with_batch, GammaVariant, Hyperparameters, RawState, Regime};
use cmachain::diagnostics::run_smooth;
use cmachain::linalg::{NormalizationFn, SpdMatrix};
use cmachain::normalized::{
    f_theta, normalize, project, step_normalized_ranked, xi, NormalizedState, ProjectedState, SmoothState,
};
use cmachain::objectives::{Builtin, Ranking};
use cmachain::sampling::{gaussian_mean_norm, sample_batch, Gaussian, Purpose, SampleDistribution, StreamKey};
use common::*;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn batches_repeat_for_a_fixed_seed() {
    let g = Gaussian::new(2);
    let a = sample_batch(&g, &mut ChaCha8Rng::seed_from_u64(9), 3);
    let b = sample_batch(&g, &mut ChaCha8Rng::seed_from_u64(9), 3);
    assert_eq!(a, b);
    let key = StreamKey::new(9, 0, Purpose::Candidates);
    assert_eq!(key.batch_at(&g, 5, 3), key.batch_at(&g, 5, 3));
    assert_ne!(key.batch_at(&g, 5, 3), key.batch_at(&g, 6, 3));
}

#[test]
fn gaussian_moments_match_monte_carlo() {
    let n = 1_000_000;
    for d in [1, 2, 5] {
        let g = Gaussian::new(d);
        let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
        let draws = sample_batch(&g, &mut rng, n);
        let mean: DVector<f64> = draws.iter().fold(DVector::zeros(d), |acc, u| acc + u) / n as f64;
        assert!(mean.amax() < 4.0 / (n as f64).sqrt(), "d = {d}: mean {mean}");

        let norms: Vec<f64> = draws.iter().map(|u| u.norm()).collect();
        let (m1, se1) = mean_and_se(&norms);
        assert!((m1 - g.mean_norm()).abs() < 3.0 * se1, "d = {d}: E|U| {m1} vs {}", g.mean_norm());
        assert_eq!(g.mean_norm(), gaussian_mean_norm(d));

        let sq: Vec<f64> = draws.iter().map(|u| u.norm_squared()).collect();
        let (m2, se2) = mean_and_se(&sq);
        assert!((m2 - d as f64).abs() < 3.0 * se2, "d = {d}: E|U|^2 {m2}");
        assert_eq!(g.mean_sq_norm(), d as f64);
    }
}

fn mean_and_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn unit_cumulation_rates_give_memoryless_paths() {
    let d = 3;
    let hp = Hyperparameters::standard(d, GammaVariant::Csa1).with_rates(1.0, 1.0, 0.1, 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let state = random_raw_state(&mut rng, d);
    let batch: Vec<DVector<f64>> = (0..hp.lambda).map(|_| normal_vec(&mut rng, d, 1.0)).collect();
    let step = step_raw_with_batch(&state, &hp, &Builtin::sphere(d), batch.clone()).unwrap();
    let y = step.ranking.order[..hp.mu]
        .iter()
        .zip(&hp.weights)
        .fold(DVector::zeros(d), |acc, (&i, w)| acc + &batch[i] * *w);
    let me = hp.mu_eff().sqrt();
    assert!(close_vec(&step.state.p_sigma, &(&y * me), 1e-13));
    assert!(close_vec(&step.state.p_c, &(state.cov.sqrt().matrix() * &y * me), 1e-13));
}

/// Under a fixed ranking, `p_sigma` started from a standard Gaussian stays one.
#[test]
fn neutral_selection_keeps_sigma_path_gaussian() {
    let d = 3;
    let hp = Hyperparameters::standard(d, GammaVariant::Csa1);
    let replicas = 10_000;
    let ranking = Ranking::identity(hp.lambda);
    let g = Gaussian::new(d);
    let mut states: Vec<RawState> = (0..replicas)
        .map(|i| {
            let mut rng = StreamKey::new(3, i, Purpose::Init).rng_at(0);
            let mut s = RawState::new(DVector::zeros(d), 1.0, SpdMatrix::identity(d));
            s.p_sigma = g.sample(&mut rng);
            s
        })
        .collect();
    for t in 1..=50u64 {
        for (i, s) in states.iter_mut().enumerate() {
            let batch = StreamKey::new(3, i as u64, Purpose::Candidates).batch_at(&g, t, hp.lambda);
            *s = step_raw_ranked(s, &hp, &batch, &ranking).unwrap();
        }
        if t % 10 == 0 {
            let cov = states
                .iter()
                .fold(DMatrix::zeros(d, d), |acc, s| acc + &s.p_sigma * s.p_sigma.transpose())
                / replicas as f64;
            let err = (&cov - DMatrix::identity(d, d)).norm() / (d as f64).sqrt();
            assert!(err < 0.05, "t = {t}: relative covariance error {err}");
        }
    }
}

#[test]
fn normalized_zero_inputs_shrink_r_only() {
    let d = 3;
    let hp = Hyperparameters::standard(d, GammaVariant::Csa1);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let sigma = random_unit_det(&mut rng, d, 1.0);
    let y = NormalizedState {
        z: DVector::zeros(d),
        p: normal_vec(&mut rng, d, 1.0),
        q: DVector::zeros(d),
        sigma: sigma.clone(),
        r: 1.3,
    };
    let batch = vec![DVector::zeros(d); hp.lambda];
    let next = step_normalized_ranked(&y, &hp, &batch, &Ranking::identity(hp.lambda)).unwrap();
    assert_eq!(next.z, DVector::zeros(d));
    assert_eq!(next.q, DVector::zeros(d));
    assert!(close_mat(&next.sigma, &sigma, 1e-13));
    assert!((next.r - (1.0 - hp.c_1 - hp.c_mu)).abs() < 1e-14);
}

#[test]
fn normalize_examples() {
    let d = 2;
    let x_star = DVector::from_vec(vec![0.5, -1.0]);
    let raw = RawState::new(x_star.clone(), 2.0, SpdMatrix::identity(d));
    let y = normalize(&raw, &raw, &x_star, &NormalizationFn::DetRoot).unwrap();
    assert_eq!(y.r, 1.0);
    assert_eq!(y.z, DVector::zeros(d));
    assert!(close_mat(&y.sigma, &SpdMatrix::identity(d), 1e-15));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for norm in [NormalizationFn::DetRoot, NormalizationFn::Eigen(1), NormalizationFn::min_eigen(d)] {
        let (a, b) = (random_raw_state(&mut rng, d), random_raw_state(&mut rng, d));
        let y = normalize(&a, &b, &x_star, &norm).unwrap();
        assert!(y.normalization_defect(&norm).unwrap() < 1e-12);
    }
}

#[test]
fn smooth_chain_is_deterministic_given_its_stream() {
    let d = 4;
    let hp = Hyperparameters::standard(d, GammaVariant::Csa2);
    let f = Builtin::ellipsoid(d);
    let theta0 = random_smooth_state(&mut ChaCha8Rng::seed_from_u64(2), d);
    let key = StreamKey::new(8, 1, Purpose::Candidates);
    let a = run_smooth(&theta0, &hp, &f, key, 1000).unwrap();
    let b = run_smooth(&theta0, &hp, &f, key, 1000).unwrap();
    assert_eq!(a, b);
    for s in &a {
        assert!(s.r > 0.0);
        assert!(s.normalization_defect() < 1e-9);
    }
}

#[test]
fn smooth_zero_inputs_from_the_target_decay_p_only() {
    let d = 3;
    let hp = Hyperparameters::standard(d, GammaVariant::Csa1);
    let theta0 = SmoothState {
        p: DVector::from_vec(vec![1.0, -2.0, 0.5]),
        ..SmoothState::target(&hp)
    };
    let zeros = vec![DVector::zeros(d); hp.mu];
    let next = f_theta(&theta0, &zeros, &hp).unwrap();
    assert_eq!(next.z, DVector::zeros(d));
    assert!(close_vec(&next.p, &(&theta0.p * (1.0 - hp.c_sigma)), 1e-15));
    assert!((next.r - (1.0 - hp.c_1 - hp.c_mu)).abs() < 1e-15);
    assert!(close_mat(&next.sigma_hat, &SpdMatrix::identity(d), 1e-14));
}

#[test]
fn xi_of_diagonal_example() {
    // R = largest-index eigenvalue; Sigma = diag(2, 1/2) / R(diag(2, 1/2)) = diag(4, 1)
    let y = NormalizedState {
        z: DVector::zeros(2),
        p: DVector::zeros(2),
        q: DVector::zeros(2),
        sigma: SpdMatrix::from_diagonal(&[4.0, 1.0]).unwrap(),
        r: 1.0,
    };
    let theta = xi(&y);
    assert!(close_mat(&theta.sigma_hat, &SpdMatrix::from_diagonal(&[2.0, 0.5]).unwrap(), 1e-15));
}

#[test]
fn projections_keep_the_regime_components() {
    let d = 2;
    let base = Hyperparameters::standard(d, GammaVariant::Csa1);
    let theta = random_smooth_state(&mut ChaCha8Rng::seed_from_u64(5), d);
    let iv = base.clone().with_rates(1.0, 1.0, base.c_1, base.c_mu);
    match project(&theta, &iv, Regime::IV).unwrap() {
        ProjectedState::IV { z, sigma_hat } => {
            assert_eq!(z, theta.z);
            assert_eq!(sigma_hat, theta.sigma_hat);
        }
        other => panic!("unexpected projection {other:?}"),
    }
    let ii = base.clone().with_rates(1.0, base.c_c, base.c_1, base.c_mu);
    assert!(matches!(project(&theta, &ii, Regime::II).unwrap(), ProjectedState::II { r, .. } if r == theta.r));
    assert!(project(&theta, &base, Regime::II).is_err());
    assert!(project(&theta, &ii, Regime::IV).is_err());
}
