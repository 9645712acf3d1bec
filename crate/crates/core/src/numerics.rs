//! Complex linear algebra used throughout the crate.
//!
//! Covariances are stored as [`HermitianCov`]. Densities follow the circular
//! convention `N_c(x|a,A) = det(pi A)^-1 exp(-(x-a)^H A^-1 (x-a))`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::NumericsError;

pub type Complex = Complex64;
pub type ComplexMatrix = DMatrix<Complex64>;
pub type RowVector = DVector<Complex64>;

/// Relative jitter added to a matrix whose factorization fails.
pub const DEFAULT_JITTER: f64 = 1e-9;
/// Absolute tolerance on `|a_ij - conj(a_ji)|`.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Relative eigenvalue threshold of the PSD test.
pub const PSD_TOL: f64 = 1e-10;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// A Hermitian M x M matrix, normally positive semidefinite.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianCov(ComplexMatrix);

impl HermitianCov {
    /// Wraps `mat` after checking it is square and Hermitian.
    pub fn new(mat: ComplexMatrix) -> Result<Self, NumericsError> {
        if !mat.is_square() {
            return Err(NumericsError::DimensionMismatch {
                expected: mat.nrows(),
                found: mat.ncols(),
            });
        }
        let n = mat.nrows();
        for i in 0..n {
            for j in i..n {
                let d = (mat[(i, j)] - mat[(j, i)].conj()).norm();
                if !d.is_finite() || d > HERMITIAN_TOL {
                    return Err(NumericsError::NotHermitian { deviation: d });
                }
            }
        }
        Ok(Self::symmetrized(mat))
    }

    /// Hermitian part `(M + M^H) / 2` of a square matrix.
    pub fn symmetrized(mat: ComplexMatrix) -> Self {
        assert!(mat.is_square(), "covariance must be square");
        let n = mat.nrows();
        let mut out = mat;
        for i in 0..n {
            out[(i, i)] = Complex64::new(out[(i, i)].re, 0.0);
            for j in (i + 1)..n {
                let v = (out[(i, j)] + out[(j, i)].conj()) * 0.5;
                out[(i, j)] = v;
                out[(j, i)] = v.conj();
            }
        }
        Self(out)
    }

    pub fn identity(m: usize) -> Self {
        Self(ComplexMatrix::identity(m, m))
    }

    pub fn zeros(m: usize) -> Self {
        Self(ComplexMatrix::zeros(m, m))
    }

    pub fn scaled_identity(m: usize, v: f64) -> Self {
        Self(ComplexMatrix::identity(m, m) * Complex64::new(v, 0.0))
    }

    pub fn from_real_diagonal(d: &[f64]) -> Self {
        let m = d.len();
        Self(ComplexMatrix::from_fn(m, m, |i, j| {
            if i == j {
                Complex64::new(d[i], 0.0)
            } else {
                ZERO
            }
        }))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.0[(i, i)].re).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.0[(i, i)].re).collect()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(&self.0 * Complex64::new(s, 0.0))
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(&self.0 - &other.0)
    }

    /// `a * self + b * other`, used for damping.
    pub fn blend(&self, a: f64, other: &Self, b: f64) -> Self {
        Self(&self.0 * Complex64::new(a, 0.0) + &other.0 * Complex64::new(b, 0.0))
    }

    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }

    /// Largest absolute imaginary part of any entry.
    pub fn max_imag(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, z| m.max(z.im.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.0.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    /// Eigenvalue PSD test with threshold `-PSD_TOL * trace / M`.
    pub fn is_psd(&self) -> bool {
        let m = self.dim().max(1) as f64;
        self.min_eigenvalue() >= -PSD_TOL * self.trace().abs() / m
    }

    /// Zeroes the off-diagonal entries.
    pub fn diagonal_part(&self) -> Self {
        Self::from_real_diagonal(&self.diagonal())
    }

    /// Row-major entries, used for serialization.
    pub fn to_row_major(&self) -> Vec<[f64; 2]> {
        let m = self.dim();
        let mut out = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                out.push([self.0[(i, j)].re, self.0[(i, j)].im]);
            }
        }
        out
    }
}

impl Serialize for HermitianCov {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MatrixRecord::from_matrix(&self.0).serialize(s)
    }
}

impl<'de> Deserialize<'de> for HermitianCov {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rec = MatrixRecord::deserialize(d)?;
        let mat = rec.to_matrix().map_err(serde::de::Error::custom)?;
        HermitianCov::new(mat).map_err(serde::de::Error::custom)
    }
}

/// Shape header plus row-major `[re, im]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl MatrixRecord {
    pub fn from_matrix(m: &ComplexMatrix) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push([m[(i, j)].re, m[(i, j)].im]);
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }

    pub fn to_matrix(&self) -> Result<ComplexMatrix, NumericsError> {
        if self.data.len() != self.rows * self.cols {
            return Err(NumericsError::DimensionMismatch {
                expected: self.rows * self.cols,
                found: self.data.len(),
            });
        }
        Ok(ComplexMatrix::from_fn(self.rows, self.cols, |i, j| {
            let [re, im] = self.data[i * self.cols + j];
            Complex64::new(re, im)
        }))
    }
}

/// Cholesky factorization that fails on non-positive pivots; the complex
/// square root inside nalgebra never does.
pub fn cholesky(m: ComplexMatrix) -> Option<Cholesky<Complex64, Dyn>> {
    let chol = Cholesky::new(m)?;
    let l = chol.l_dirty();
    let ok = (0..l.nrows()).all(|i| {
        let d = l[(i, i)];
        d.re.is_finite() && d.re > 0.0 && d.im.abs() <= 1e-12 * d.re
    });
    ok.then_some(chol)
}

/// Cholesky factor of a Hermitian PD matrix, obtained with the jitter rule.
#[derive(Clone, Debug)]
pub struct HermitianFactor {
    chol: Cholesky<Complex64, Dyn>,
    jitter_added: f64,
}

impl HermitianFactor {
    /// Factorizes `cov`; on failure retries once with `rel_jitter * trace / M`
    /// added to the diagonal (or `rel_jitter` when the trace is not positive).
    pub fn new(cov: &HermitianCov, rel_jitter: f64, operand: &str) -> Result<Self, NumericsError> {
        if !cov.is_finite() {
            return Err(NumericsError::Singular { operand: operand.to_string() });
        }
        if let Some(chol) = cholesky(cov.0.clone()) {
            return Ok(Self { chol, jitter_added: 0.0 });
        }
        let m = cov.dim().max(1) as f64;
        let tr = cov.trace();
        let delta = if tr > 0.0 { rel_jitter * tr / m } else { rel_jitter };
        if delta > 0.0 {
            let shifted = &cov.0 + ComplexMatrix::identity(cov.dim(), cov.dim()) * Complex64::new(delta, 0.0);
            if let Some(chol) = cholesky(shifted) {
                return Ok(Self { chol, jitter_added: delta });
            }
        }
        Err(NumericsError::Singular { operand: operand.to_string() })
    }

    pub fn jitter_added(&self) -> f64 {
        self.jitter_added
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// `log det` of the (possibly jittered) matrix.
    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>()
    }

    pub fn solve_vec(&self, b: &RowVector) -> RowVector {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &ComplexMatrix) -> ComplexMatrix {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> HermitianCov {
        HermitianCov::symmetrized(self.chol.inverse())
    }

    /// Quadratic form `v^H A^-1 v`.
    pub fn quad_form(&self, v: &RowVector) -> f64 {
        let w = self.chol.l_dirty().solve_lower_triangular(v).unwrap_or_else(|| v.clone());
        w.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `log N_c(x | mean, A)` for the factored covariance `A`.
    pub fn log_density(&self, x: &RowVector, mean: &RowVector) -> f64 {
        let d = x - mean;
        -(self.dim() as f64) * PI.ln() - self.log_det() - self.quad_form(&d)
    }
}

/// Inverse of a Hermitian PD matrix with the jitter rule.
pub fn hermitian_inverse(cov: &HermitianCov, rel_jitter: f64, operand: &str) -> Result<HermitianCov, NumericsError> {
    Ok(HermitianFactor::new(cov, rel_jitter, operand)?.inverse())
}

/// Inverse of an invertible (not necessarily definite) Hermitian matrix.
fn hermitian_inverse_strict(cov: &HermitianCov, operand: &str) -> Result<ComplexMatrix, NumericsError> {
    let eig = SymmetricEigen::new(cov.0.clone());
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let m = cov.dim() as f64;
    let floor = 1e-13 * m * scale;
    if scale == 0.0 || !scale.is_finite() || eig.eigenvalues.iter().any(|v| v.abs() <= floor) {
        return Err(NumericsError::Singular { operand: operand.to_string() });
    }
    let inv_diag = eig.eigenvalues.map(|v| Complex64::new(1.0 / v, 0.0));
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&inv_diag) * v.adjoint())
}

/// Product of two Gaussian densities: `N_c(x|a,A) N_c(x|b,B) = N_c(0|a-b,A+B) N_c(x|c,C)`.
///
/// Returns `(c, C, log N_c(0|a-b, A+B))`.
pub fn gaussian_product(
    a: &RowVector,
    cov_a: &HermitianCov,
    b: &RowVector,
    cov_b: &HermitianCov,
) -> Result<(RowVector, HermitianCov, f64), NumericsError> {
    let m = a.len();
    for dim in [cov_a.dim(), b.len(), cov_b.dim()] {
        if dim != m {
            return Err(NumericsError::DimensionMismatch { expected: m, found: dim });
        }
    }
    HermitianFactor::new(cov_a, DEFAULT_JITTER, "A")?;
    HermitianFactor::new(cov_b, DEFAULT_JITTER, "B")?;
    let sum = cov_a.add(cov_b);
    let fs = HermitianFactor::new(&sum, DEFAULT_JITTER, "A+B")?;
    // (A^-1 + B^-1)^-1 = A (A+B)^-1 B and C A^-1 = B (A+B)^-1.
    let s_inv_b = fs.solve_mat(cov_b.matrix());
    let s_inv_a = fs.solve_mat(cov_a.matrix());
    let c_cov = HermitianCov::symmetrized(cov_a.matrix() * &s_inv_b);
    let c = s_inv_b.adjoint() * a + s_inv_a.adjoint() * b;
    let zero = RowVector::zeros(m);
    let log_scale = fs.log_density(&(a - b), &zero);
    Ok((c, c_cov, log_scale))
}

/// Assembles `Q = I_{tau+1} (x) (A-B) + 1 1^T (x) B`.
pub fn assemble_block_symmetric(a: &HermitianCov, b: &HermitianCov, tau: usize) -> ComplexMatrix {
    let m = a.dim();
    let k = tau + 1;
    let d = a.sub(b);
    ComplexMatrix::from_fn(k * m, k * m, |i, j| {
        let (bi, ii) = (i / m, i % m);
        let (bj, jj) = (j / m, j % m);
        let base = b.matrix()[(ii, jj)];
        if bi == bj {
            base + d.matrix()[(ii, jj)]
        } else {
            base
        }
    })
}

/// Closed-form inverse of the replica-symmetric block matrix
/// `Q = I (x) (A-B) + 1 1^T (x) B` with `tau + 1` blocks:
/// `Q^-1 = I (x) (A-B)^-1 - 1 1^T (x) [(A-B) B^-1 (A-B) + (tau+1)(A-B)]^-1`.
pub fn block_symmetric_inverse(a: &HermitianCov, b: &HermitianCov, tau: usize) -> Result<ComplexMatrix, NumericsError> {
    let m = a.dim();
    if b.dim() != m {
        return Err(NumericsError::DimensionMismatch { expected: m, found: b.dim() });
    }
    let d = a.sub(b);
    let d_inv = hermitian_inverse_strict(&d, "A-B")?;
    let b_inv = hermitian_inverse_strict(b, "B")?;
    let k = tau + 1;
    let inner = d.matrix() * &b_inv * d.matrix() + d.matrix() * Complex64::new(k as f64, 0.0);
    let inner_inv = hermitian_inverse_strict(&HermitianCov::symmetrized(inner), "(A-B)B^-1(A-B)+(tau+1)(A-B)")?;
    Ok(ComplexMatrix::from_fn(k * m, k * m, |i, j| {
        let (bi, ii) = (i / m, i % m);
        let (bj, jj) = (j / m, j % m);
        let off = -inner_inv[(ii, jj)];
        if bi == bj {
            off + d_inv[(ii, jj)]
        } else {
            off
        }
    }))
}

/// Symmetrizes and, if the smallest eigenvalue is negative, shifts the
/// spectrum by `|lambda_min| + rel_jitter * trace / M`.
pub fn ensure_psd(cov: &HermitianCov, rel_jitter: f64) -> HermitianCov {
    let sym = HermitianCov::symmetrized(cov.0.clone());
    // A successful Cholesky already certifies positive definiteness.
    if cholesky(sym.0.clone()).is_some() {
        return sym;
    }
    let lmin = sym.min_eigenvalue();
    if lmin >= 0.0 {
        return sym;
    }
    let m = sym.dim().max(1) as f64;
    let shift = lmin.abs() + rel_jitter * sym.trace().abs() / m;
    let mut out = sym.0;
    for i in 0..out.nrows() {
        out[(i, i)] += Complex64::new(shift, 0.0);
    }
    HermitianCov(out)
}

/// Hermitian PSD square root via eigendecomposition; negative eigenvalues are clipped to zero.
pub fn psd_sqrt(cov: &HermitianCov) -> ComplexMatrix {
    let eig = SymmetricEigen::new(cov.0.clone());
    let root = eig.eigenvalues.map(|v| Complex64::new(v.max(0.0).sqrt(), 0.0));
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&root) * v.adjoint()
}

/// Draws one standard circular complex normal `CN(0, 1)`.
pub fn standard_complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Vector of IID `CN(0, 1)` entries.
pub fn standard_complex_vector<R: Rng + ?Sized>(rng: &mut R, m: usize) -> RowVector {
    RowVector::from_fn(m, |_, _| standard_complex_normal(rng))
}

/// Reusable sampler for `CN(mean, cov)`.
#[derive(Clone, Debug)]
pub struct ComplexGaussianSampler {
    mean: RowVector,
    factor: ComplexMatrix,
}

impl ComplexGaussianSampler {
    pub fn new(mean: RowVector, cov: &HermitianCov) -> Result<Self, NumericsError> {
        if mean.len() != cov.dim() {
            return Err(NumericsError::DimensionMismatch { expected: cov.dim(), found: mean.len() });
        }
        if !cov.is_psd() {
            return Err(NumericsError::NotPsd { min_eigenvalue: cov.min_eigenvalue() });
        }
        Ok(Self { mean, factor: psd_sqrt(cov) })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RowVector {
        let g = standard_complex_vector(rng, self.mean.len());
        &self.mean + &self.factor * g
    }

    /// The colouring matrix `cov^{1/2}`.
    pub fn factor(&self) -> &ComplexMatrix {
        &self.factor
    }
}

/// One draw of `CN(mean, cov)`.
pub fn sample_complex_gaussian<R: Rng + ?Sized>(
    rng: &mut R,
    mean: &RowVector,
    cov: &HermitianCov,
) -> Result<RowVector, NumericsError> {
    Ok(ComplexGaussianSampler::new(mean.clone(), cov)?.sample(rng))
}

/// Outer product `u v^H`.
pub fn outer(u: &RowVector, v: &RowVector) -> ComplexMatrix {
    u * v.adjoint()
}

/// Squared Frobenius norm.
pub fn frob_sqr(m: &ComplexMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Dense generic inverse (LU), used as an oracle and for small systems.
pub fn dense_inverse(m: &ComplexMatrix) -> Option<ComplexMatrix> {
    m.clone().try_inverse()
}

pub(crate) fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}
