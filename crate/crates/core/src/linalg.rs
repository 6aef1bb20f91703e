//! Symmetric positive definite matrices and normalization functionals.
//!
//! [`SpdMatrix`] caches its eigendecomposition at construction, with
//! eigenvalues sorted in descending order (ties keep the solver's order), so
//! square roots, determinants and eigenvalue-indexed normalizations are all
//! read off the same spectrum.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance on `|A_ij - A_ji|`.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Smallest admissible ratio `lambda_min / lambda_max`.
pub const SPD_RATIO_TOL: f64 = 1e-14;

/// A symmetric positive definite matrix together with its spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    mat: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl SpdMatrix {
    /// Validates symmetry and positive definiteness of `mat`.
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        if !mat.is_square() || mat.nrows() == 0 {
            return Err(Error::NonSpd(format!(
                "expected a non-empty square matrix, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        if mat.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        let d = mat.nrows();
        for i in 0..d {
            for j in (i + 1)..d {
                let (a, b) = (mat[(i, j)], mat[(j, i)]);
                if (a - b).abs() > SYMMETRY_TOL * (1.0 + a.abs()) {
                    return Err(Error::NonSpd(format!(
                        "asymmetric entries ({i},{j}): {a} vs {b}"
                    )));
                }
            }
        }
        Self::from_symmetric_unchecked(mat)
    }

    /// Re-symmetrizes with `(A + A^T) / 2` before validating.
    pub fn symmetrized(mat: DMatrix<f64>) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::NonSpd("matrix is not square".into()));
        }
        let sym = (&mat + mat.transpose()) * 0.5;
        Self::new(sym)
    }

    fn from_symmetric_unchecked(mat: DMatrix<f64>) -> Result<Self> {
        let eig = SymmetricEigen::new(mat.clone());
        let d = mat.nrows();
        let mut order: Vec<usize> = (0..d).collect();
        // stable: ties keep the solver's order
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigenvalues = DVector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut eigenvectors = DMatrix::zeros(d, d);
        for (k, &i) in order.iter().enumerate() {
            eigenvectors.set_column(k, &eig.eigenvectors.column(i));
        }
        let (max, min) = (eigenvalues[0], eigenvalues[d - 1]);
        if !(min > 0.0) || min <= SPD_RATIO_TOL * max {
            return Err(Error::NonSpd(format!(
                "smallest eigenvalue {min:e} vs largest {max:e}"
            )));
        }
        Ok(Self {
            mat,
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mat: DMatrix::identity(dim, dim),
            eigenvalues: DVector::from_element(dim, 1.0),
            eigenvectors: DMatrix::identity(dim, dim),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Builds `V diag(values) V^T` from an orthonormal basis and positive values.
    pub fn from_spectrum(basis: &DMatrix<f64>, values: &[f64]) -> Result<Self> {
        let diag = DMatrix::from_diagonal(&DVector::from_column_slice(values));
        Self::symmetrized(basis * diag * basis.transpose())
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.mat
    }

    /// Eigenvalues in descending order, counted with multiplicity.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors as columns, matching [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.dim() - 1]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn condition(&self) -> f64 {
        self.max_eigenvalue() / self.min_eigenvalue()
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace()
    }

    pub fn log_det(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.ln()).sum()
    }

    /// `det(A)^{1/d}`, computed from the log-spectrum.
    pub fn det_root(&self) -> f64 {
        (self.log_det() / self.dim() as f64).exp()
    }

    fn spectral_map(&self, g: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        let diag = DMatrix::from_diagonal(&self.eigenvalues.map(g));
        let out = v * diag * v.transpose();
        (&out + out.transpose()) * 0.5
    }

    /// Symmetric positive definite square root.
    pub fn sqrt(&self) -> SpdMatrix {
        SpdMatrix {
            mat: self.spectral_map(f64::sqrt),
            eigenvalues: self.eigenvalues.map(f64::sqrt),
            eigenvectors: self.eigenvectors.clone(),
        }
    }

    pub fn inv_sqrt(&self) -> DMatrix<f64> {
        self.spectral_map(|l| 1.0 / l.sqrt())
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.spectral_map(|l| 1.0 / l)
    }

    /// `gamma * A` for `gamma > 0`, reusing the eigenbasis.
    pub fn scaled(&self, gamma: f64) -> SpdMatrix {
        assert!(gamma > 0.0, "scale factor must be positive");
        SpdMatrix {
            mat: &self.mat * gamma,
            eigenvalues: &self.eigenvalues * gamma,
            eigenvectors: self.eigenvectors.clone(),
        }
    }

    pub fn frobenius_distance(&self, other: &SpdMatrix) -> f64 {
        (&self.mat - &other.mat).norm()
    }
}

/// Symmetric positive definite square root `S` with `S * S = A`.
pub fn sym_sqrt(a: &SpdMatrix) -> SpdMatrix {
    a.sqrt()
}

/// Normalization functional `R` on SPD matrices, positively homogeneous of degree 1.
#[derive(Debug, Clone, PartialEq)]
pub enum NormalizationFn {
    /// `det(A)^{1/d}`.
    DetRoot,
    /// The `i`-th largest eigenvalue, 1-based, counted with multiplicity.
    Eigen(usize),
    /// `lambda_min(H^{1/2} A H^{1/2}) / lambda_min(H)`.
    MetricMinEigen(SpdMatrix),
}

impl Default for NormalizationFn {
    fn default() -> Self {
        NormalizationFn::DetRoot
    }
}

impl NormalizationFn {
    /// Minimum eigenvalue in the identity metric.
    pub fn min_eigen(dim: usize) -> Self {
        NormalizationFn::MetricMinEigen(SpdMatrix::identity(dim))
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            NormalizationFn::DetRoot => Ok(()),
            NormalizationFn::Eigen(i) => {
                if *i == 0 || *i > dim {
                    Err(Error::IndexOutOfRange {
                        index: *i,
                        dim,
                    })
                } else {
                    Ok(())
                }
            }
            NormalizationFn::MetricMinEigen(h) => {
                if h.dim() != dim {
                    Err(Error::DimensionMismatch {
                        expected: dim,
                        got: h.dim(),
                    })
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn eval(&self, a: &SpdMatrix) -> Result<f64> {
        eval_norm(self, a)
    }

    /// Whether `R` is smooth on the whole SPD cone.
    pub fn is_smooth(&self) -> bool {
        matches!(self, NormalizationFn::DetRoot)
    }
}

/// Evaluates a normalization function on `a`.
pub fn eval_norm(norm: &NormalizationFn, a: &SpdMatrix) -> Result<f64> {
    match norm {
        NormalizationFn::DetRoot => Ok(a.det_root()),
        NormalizationFn::Eigen(i) => {
            norm.validate(a.dim())?;
            Ok(a.eigenvalues()[i - 1])
        }
        NormalizationFn::MetricMinEigen(h) => {
            norm.validate(a.dim())?;
            let hs = h.sqrt();
            let m = hs.matrix() * a.matrix() * hs.matrix();
            let congruent = SpdMatrix::symmetrized(m)?;
            Ok(congruent.min_eigenvalue() / h.min_eigenvalue())
        }
    }
}

/// The smooth normalization `rho = det^{1/d}`.
pub fn rho(a: &SpdMatrix) -> f64 {
    a.det_root()
}

/// Directional derivative of `rho` at `a` along the symmetric direction `h`:
/// `rho(A) tr(A^{-1} H) / d`.
pub fn d_rho(a: &SpdMatrix, h: &DMatrix<f64>) -> f64 {
    let inv = a.inverse();
    rho(a) * (inv * h).trace() / a.dim() as f64
}

/// Gradient of `rho` at `a` with respect to the Frobenius inner product.
pub fn rho_gradient(a: &SpdMatrix) -> DMatrix<f64> {
    a.inverse() * (rho(a) / a.dim() as f64)
}

/// Coordinates of a symmetric matrix in the Frobenius-orthonormal basis
/// (diagonal entries, then `sqrt(2) * A_ij` for `i < j`, row by row).
pub fn sym_to_coords(a: &DMatrix<f64>) -> Vec<f64> {
    let d = a.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        out.push(a[(i, i)]);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            out.push(std::f64::consts::SQRT_2 * 0.5 * (a[(i, j)] + a[(j, i)]));
        }
    }
    out
}

/// Inverse of [`sym_to_coords`].
pub fn coords_to_sym(coords: &[f64], d: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        a[(i, i)] = coords[i];
    }
    let mut k = d;
    for i in 0..d {
        for j in (i + 1)..d {
            let v = coords[k] / std::f64::consts::SQRT_2;
            a[(i, j)] = v;
            a[(j, i)] = v;
            k += 1;
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut impl Rng, d: usize) -> SpdMatrix {
        let b = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        SpdMatrix::symmetrized(&b * b.transpose() + DMatrix::identity(d, d) * 0.1).unwrap()
    }

    #[test]
    fn sqrt_of_diagonal() {
        let a = SpdMatrix::from_diagonal(&[4.0, 9.0]).unwrap();
        let s = sym_sqrt(&a);
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        assert!((s.matrix() - expected).norm() < 1e-14);
        let id = SpdMatrix::identity(3);
        assert!((sym_sqrt(&id).matrix() - DMatrix::identity(3, 3)).norm() < 1e-15);
    }

    #[test]
    fn sqrt_multiplies_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let d = rng.random_range(1..=10);
            let a = random_spd(&mut rng, d);
            let s = sym_sqrt(&a);
            let err = (s.matrix() * s.matrix() - a.matrix()).norm() / a.matrix().norm();
            assert!(err < 1e-10, "relative error {err}");
            assert!(s.min_eigenvalue() > 0.0);
        }
    }

    #[test]
    fn rejects_invalid_matrices() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(SpdMatrix::new(asym), Err(Error::NonSpd(_))));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(SpdMatrix::new(indefinite), Err(Error::NonSpd(_))));
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-16]);
        assert!(matches!(SpdMatrix::new(singular), Err(Error::NonSpd(_))));
    }

    #[test]
    fn norm_examples() {
        let a = SpdMatrix::identity(3).scaled(2.0);
        assert!((eval_norm(&NormalizationFn::DetRoot, &a).unwrap() - 2.0).abs() < 1e-14);
        let b = SpdMatrix::from_diagonal(&[5.0, 3.0, 1.0]).unwrap();
        assert_eq!(eval_norm(&NormalizationFn::Eigen(2), &b).unwrap(), 3.0);
        let c = SpdMatrix::from_diagonal(&[4.0, 1.0]).unwrap();
        let r = eval_norm(&NormalizationFn::min_eigen(2), &c).unwrap();
        assert!((r - 1.0).abs() < 1e-14);
        assert_eq!(
            eval_norm(&NormalizationFn::Eigen(4), &b),
            Err(Error::IndexOutOfRange { index: 4, dim: 3 })
        );
        assert!(eval_norm(&NormalizationFn::Eigen(0), &b).is_err());
    }

    #[test]
    fn eigen_norm_is_nonincreasing_in_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let d = rng.random_range(2..=8);
            let a = random_spd(&mut rng, d);
            let vals: Vec<f64> = (1..=d)
                .map(|i| eval_norm(&NormalizationFn::Eigen(i), &a).unwrap())
                .collect();
            assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn d_rho_examples() {
        let i2 = SpdMatrix::identity(2);
        assert!((d_rho(&i2, &DMatrix::identity(2, 2)) - 1.0).abs() < 1e-15);
        let traceless = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.3, -2.0, 0.1, 0.0, 0.1, 1.0]);
        assert!(d_rho(&SpdMatrix::identity(3), &traceless).abs() < 1e-15);
    }

    #[test]
    fn d_rho_matches_central_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let d = rng.random_range(1..=6);
            let a = random_spd(&mut rng, d);
            let raw = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let h = (&raw + raw.transpose()) * 0.5;
            let step = 1e-6;
            let plus = SpdMatrix::new(a.matrix() + &h * step).unwrap();
            let minus = SpdMatrix::new(a.matrix() - &h * step).unwrap();
            let fd = (rho(&plus) - rho(&minus)) / (2.0 * step);
            let an = d_rho(&a, &h);
            assert!(
                (fd - an).abs() <= 1e-5 * an.abs().max(1e-3),
                "fd {fd} analytic {an}"
            );
            // scale invariance of the derivative
            let gamma = rng.random_range(0.1..10.0);
            let scaled = d_rho(&a.scaled(gamma), &h);
            assert!((scaled - an).abs() <= 1e-10 * an.abs().max(1.0));
        }
    }

    #[test]
    fn sym_coords_round_trip() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let c = sym_to_coords(&a);
        assert_eq!(c.len(), 6);
        let norm2: f64 = c.iter().map(|x| x * x).sum();
        assert!((norm2 - a.norm_squared()).abs() < 1e-12);
        assert!((coords_to_sym(&c, 3) - a).norm() < 1e-14);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn spd_strategy() -> impl Strategy<Value = SpdMatrix> {
        (1usize..=6).prop_flat_map(|d| {
            prop::collection::vec(-2.0f64..2.0, d * d).prop_map(move |v| {
                let b = DMatrix::from_vec(d, d, v);
                SpdMatrix::symmetrized(&b * b.transpose() + DMatrix::identity(d, d) * 0.05).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn norms_are_homogeneous(a in spd_strategy(), gamma in 0.1f64..10.0, idx in 0usize..6) {
            let d = a.dim();
            let metric = {
                let m = DMatrix::from_fn(d, d, |i, j| if i == j { 2.0 + i as f64 } else { 0.1 });
                SpdMatrix::new(m).unwrap()
            };
            let norms = [
                NormalizationFn::DetRoot,
                NormalizationFn::Eigen(idx % d + 1),
                NormalizationFn::MetricMinEigen(metric),
            ];
            for n in &norms {
                let base = eval_norm(n, &a).unwrap();
                let scaled = eval_norm(n, &a.scaled(gamma)).unwrap();
                prop_assert!((scaled - gamma * base).abs() <= 1e-10 * gamma * base);
            }
        }

        #[test]
        fn norms_are_locally_lipschitz(a in spd_strategy(), seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let d = a.dim();
            let raw = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let dir = (&raw + raw.transpose()) * 0.5;
            let eps = 1e-7 * a.min_eigenvalue();
            let b = SpdMatrix::new(a.matrix() + &dir * eps).unwrap();
            for n in [NormalizationFn::DetRoot, NormalizationFn::Eigen(1), NormalizationFn::min_eigen(d)] {
                let q = (eval_norm(&n, &b).unwrap() - eval_norm(&n, &a).unwrap()).abs() / (eps * dir.norm());
                // Weyl / determinant bounds: difference quotient bounded by a spectrum-dependent constant
                prop_assert!(q <= 1.0 + a.condition(), "quotient {}", q);
            }
        }
    }
}
