//! Dense matrices, the thin SVD, and the affine measurement operator.
//!
//! [`DenseMatrix`] is a thin wrapper over `nalgebra::DMatrix<f64>` that
//! enforces non-empty shape and finite entries. The measurement operator
//! stores its `s` sensing matrices stacked as the rows of one `s x (m*n)`
//! matrix, each row holding a sensing matrix vectorized in column-major
//! order (the storage order of `DMatrix`). That layout turns `apply` and
//! `adjoint` into a single matrix-vector product each.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::jacobi;
use crate::error::{invalid, mismatch, Error, Result};

/// A finite, non-empty `m x n` real matrix.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix(DMatrix<f64>);

impl DenseMatrix {
    /// Builds a matrix from entries listed row by row.
    pub fn new(rows: usize, cols: usize, row_major: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid(format!("matrix shape {rows}x{cols} is empty")));
        }
        if row_major.len() != rows * cols {
            return Err(mismatch(rows * cols, row_major.len()));
        }
        Self::from_nalgebra(DMatrix::from_row_slice(rows, cols, &row_major))
    }

    pub fn from_nalgebra(inner: DMatrix<f64>) -> Result<Self> {
        if inner.nrows() == 0 || inner.ncols() == 0 {
            return Err(invalid("matrix shape is empty"));
        }
        if inner.iter().any(|x| !x.is_finite()) {
            return Err(invalid("matrix has non-finite entries"));
        }
        Ok(Self(inner))
    }

    /// Wraps an already-validated matrix. Callers guarantee the invariants.
    pub(crate) fn wrap(inner: DMatrix<f64>) -> Self {
        debug_assert!(inner.nrows() > 0 && inner.ncols() > 0);
        Self(inner)
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix shape {rows}x{cols} is empty");
        Self(DMatrix::zeros(rows, cols))
    }

    /// # Panics
    /// If `n` is zero.
    pub fn identity(n: usize) -> Self {
        assert!(n > 0, "identity of order zero");
        Self(DMatrix::identity(n, n))
    }

    /// Rectangular matrix with `diag` on its main diagonal.
    pub fn diagonal(rows: usize, cols: usize, diag: &[f64]) -> Result<Self> {
        if diag.len() > rows.min(cols) {
            return Err(mismatch(format!("at most {}", rows.min(cols)), diag.len()));
        }
        let mut inner = DMatrix::zeros(rows.max(1), cols.max(1));
        for (i, &d) in diag.iter().enumerate() {
            inner[(i, i)] = d;
        }
        Self::from_nalgebra(inner)
    }

    /// Outer product `u vᵀ`.
    pub fn outer(u: &[f64], v: &[f64]) -> Result<Self> {
        Self::from_nalgebra(DVector::from_column_slice(u) * DVector::from_column_slice(v).transpose())
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[(row, col)]
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        self.0.transpose().as_slice().to_vec()
    }

    pub fn as_nalgebra(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_nalgebra(self) -> DMatrix<f64> {
        self.0
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// Trace inner product `⟨self, other⟩`.
    pub fn inner(&self, other: &DenseMatrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(mismatch(fmt_shape(self.shape()), fmt_shape(other.shape())));
        }
        Ok(self.0.dot(&other.0))
    }

    pub fn transpose(&self) -> DenseMatrix {
        Self(self.0.transpose())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    /// `U diag(sigma) Vᵀ` for the given factors.
    pub fn from_svd(u: &DMatrix<f64>, sigma: &[f64], v: &DMatrix<f64>) -> Result<Self> {
        if u.ncols() != sigma.len() || v.ncols() != sigma.len() {
            return Err(mismatch(sigma.len(), format!("{}/{}", u.ncols(), v.ncols())));
        }
        Self::from_nalgebra(spectral_lift(u, sigma, v))
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DenseMatrix{:?}", self.0)
    }
}

impl Add for &DenseMatrix {
    type Output = DenseMatrix;

    /// # Panics
    /// On shape mismatch.
    fn add(self, rhs: &DenseMatrix) -> DenseMatrix {
        DenseMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &DenseMatrix {
    type Output = DenseMatrix;

    /// # Panics
    /// On shape mismatch.
    fn sub(self, rhs: &DenseMatrix) -> DenseMatrix {
        DenseMatrix(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &DenseMatrix {
    type Output = DenseMatrix;

    fn mul(self, rhs: f64) -> DenseMatrix {
        DenseMatrix(&self.0 * rhs)
    }
}

fn fmt_shape((r, c): (usize, usize)) -> String {
    format!("{r}x{c}")
}

/// Thin singular value decomposition `X = U diag(sigma) Vᵀ` with
/// `q = min(m, n)` columns in `u` and `v`, and `sigma` non-increasing.
#[derive(Clone, Debug)]
pub struct SvdFactorization {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl SvdFactorization {
    pub fn reconstruct(&self) -> DenseMatrix {
        DenseMatrix(spectral_lift(&self.u, &self.sigma, &self.v))
    }

    /// Lifts a vector of length `q` back to matrix space with this SVD's
    /// singular vectors.
    pub fn lift(&self, values: &[f64]) -> DMatrix<f64> {
        spectral_lift(&self.u, values, &self.v)
    }
}

const SVD_EPS: [f64; 3] = [5.0 * f64::EPSILON, 1e-14, 1e-12];
const SVD_RECONSTRUCTION_TOL: f64 = 1e-11;

pub fn svd(x: &DenseMatrix) -> Result<SvdFactorization> {
    svd_of(&x.0)
}

pub(crate) fn svd_of(x: &DMatrix<f64>) -> Result<SvdFactorization> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid("svd of a matrix with non-finite entries"));
    }
    let scale = x.norm();
    let mut attempt = None;
    for eps in SVD_EPS {
        let raw = nalgebra::SVD::try_new(x.clone(), true, true, eps, 0)
            .ok_or_else(|| Error::InvalidInput("svd failed to converge".into()))?;
        // The implicit-shift iteration can return inconsistent factors on
        // rank-deficient input when eps is too tight; verify before use.
        let err = match (&raw.u, &raw.v_t) {
            (Some(u), Some(v_t)) => (x - u * DMatrix::from_diagonal(&raw.singular_values) * v_t).norm(),
            _ => f64::INFINITY,
        };
        if err <= SVD_RECONSTRUCTION_TOL * scale.max(f64::MIN_POSITIVE) {
            attempt = Some(raw);
            break;
        }
    }
    let (u, values, v) = match attempt {
        Some(raw) => match (raw.u, raw.v_t) {
            (Some(u), Some(v_t)) => (u, raw.singular_values.iter().copied().collect(), v_t.transpose()),
            _ => return Err(invalid("svd did not produce singular vectors")),
        },
        None => {
            let (u, s, v) = jacobi::thin_svd(x);
            let err = (x - spectral_lift(&u, &s, &v)).norm();
            if err > SVD_RECONSTRUCTION_TOL * scale {
                return Err(invalid("svd factors failed the reconstruction check"));
            }
            (u, s, v)
        }
    };
    let values: Vec<f64> = values;
    let q = values.len();
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));

    let sigma = order.iter().map(|&i| values[i].max(0.0)).collect();
    let u = DMatrix::from_fn(u.nrows(), q, |r, c| u[(r, order[c])]);
    let v = DMatrix::from_fn(v.nrows(), q, |r, c| v[(r, order[c])]);
    Ok(SvdFactorization { u, sigma, v })
}

/// Singular values only, sorted non-increasing.
pub(crate) fn singular_values_of(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid("svd of a matrix with non-finite entries"));
    }
    let energy = x.norm_squared();
    for eps in SVD_EPS {
        let raw = nalgebra::SVD::try_new(x.clone(), false, false, eps, 0)
            .ok_or_else(|| Error::InvalidInput("svd failed to converge".into()))?;
        // Σσ² = ‖X‖_F² catches the same inconsistent-factor failure as the
        // reconstruction check in `svd_of`.
        if (raw.singular_values.norm_squared() - energy).abs() <= 1e-10 * energy {
            let mut sigma: Vec<f64> = raw.singular_values.iter().map(|s| s.max(0.0)).collect();
            sigma.sort_by(|a, b| b.total_cmp(a));
            return Ok(sigma);
        }
    }
    let (_, mut sigma, _) = jacobi::thin_svd(x);
    sigma.sort_by(|a, b| b.total_cmp(a));
    Ok(sigma)
}

pub(crate) fn spectral_lift(u: &DMatrix<f64>, values: &[f64], v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut scaled = u.clone();
    for (j, &d) in values.iter().enumerate() {
        scaled.column_mut(j).scale_mut(d);
    }
    scaled * v.transpose()
}

/// Construction options for [`MeasurementOperator`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatorOptions {
    /// Largest accepted condition number estimate of the Gram matrix.
    pub cond_limit: f64,
}

impl Default for OperatorOptions {
    fn default() -> Self {
        Self { cond_limit: 1e12 }
    }
}

/// The linear map `X -> (⟨A_1, X⟩, ..., ⟨A_s, X⟩)` together with the
/// right-hand side `b` and a Cholesky factorization of the Gram matrix
/// `G_ij = ⟨A_i, A_j⟩`.
#[derive(Clone)]
pub struct MeasurementOperator {
    rows: usize,
    cols: usize,
    stacked: DMatrix<f64>,
    rhs: DVector<f64>,
    gram: Cholesky<f64, Dyn>,
    cond_estimate: f64,
}

impl fmt::Debug for MeasurementOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MeasurementOperator")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("measurements", &self.stacked.nrows())
            .field("cond_estimate", &self.cond_estimate)
            .finish()
    }
}

impl MeasurementOperator {
    pub fn new(sensing: Vec<DenseMatrix>, rhs: Vec<f64>) -> Result<Self> {
        Self::with_options(sensing, rhs, OperatorOptions::default())
    }

    pub fn with_options(sensing: Vec<DenseMatrix>, rhs: Vec<f64>, opts: OperatorOptions) -> Result<Self> {
        let first = sensing
            .first()
            .ok_or_else(|| invalid("at least one sensing matrix is required"))?;
        let (rows, cols) = first.shape();
        let mut stacked = DMatrix::zeros(sensing.len(), rows * cols);
        for (i, a) in sensing.iter().enumerate() {
            if a.shape() != (rows, cols) {
                return Err(mismatch(fmt_shape((rows, cols)), fmt_shape(a.shape())));
            }
            for (j, &x) in a.0.as_slice().iter().enumerate() {
                stacked[(i, j)] = x;
            }
        }
        Self::from_stacked(rows, cols, stacked, rhs, opts)
    }

    /// Builds the operator from sensing matrices already stacked as rows,
    /// each vectorized in column-major order.
    pub fn from_stacked(
        rows: usize,
        cols: usize,
        stacked: DMatrix<f64>,
        rhs: Vec<f64>,
        opts: OperatorOptions,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid("operator shape is empty"));
        }
        if stacked.nrows() == 0 {
            return Err(invalid("at least one sensing matrix is required"));
        }
        if stacked.ncols() != rows * cols {
            return Err(mismatch(rows * cols, stacked.ncols()));
        }
        if rhs.len() != stacked.nrows() {
            return Err(mismatch(stacked.nrows(), rhs.len()));
        }
        if stacked.iter().chain(rhs.iter()).any(|x| !x.is_finite()) {
            return Err(invalid("operator has non-finite entries"));
        }
        if rhs.iter().all(|&x| x == 0.0) {
            return Err(invalid("right-hand side b must be nonzero"));
        }
        let s = stacked.nrows();
        if s > rows * cols {
            return Err(Error::DegenerateOperator(format!(
                "{s} measurements exceed the dimension {} of the matrix space",
                rows * cols
            )));
        }
        let gram_matrix = &stacked * stacked.transpose();
        let gram = Cholesky::new(gram_matrix)
            .ok_or_else(|| Error::DegenerateOperator("Gram matrix is not positive definite".into()))?;
        let diag = gram.l_dirty().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d.abs()), hi.max(d.abs())));
        let cond_estimate = if lo > 0.0 { (hi / lo).powi(2) } else { f64::INFINITY };
        if !(cond_estimate <= opts.cond_limit) {
            return Err(Error::DegenerateOperator(format!(
                "Gram condition estimate {cond_estimate:e} exceeds {:e}",
                opts.cond_limit
            )));
        }
        Ok(Self {
            rows,
            cols,
            stacked,
            rhs: DVector::from_vec(rhs),
            gram,
            cond_estimate,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn num_measurements(&self) -> usize {
        self.stacked.nrows()
    }

    pub fn rhs(&self) -> &[f64] {
        self.rhs.as_slice()
    }

    pub fn cond_estimate(&self) -> f64 {
        self.cond_estimate
    }

    pub fn sensing_matrix(&self, i: usize) -> DenseMatrix {
        let row = self.stacked.row(i);
        DenseMatrix(DMatrix::from_iterator(self.rows, self.cols, row.iter().copied()))
    }

    pub fn stacked(&self) -> &DMatrix<f64> {
        &self.stacked
    }

    /// Same sensing matrices with a different right-hand side.
    pub fn with_rhs(&self, rhs: Vec<f64>) -> Result<Self> {
        if rhs.len() != self.num_measurements() {
            return Err(mismatch(self.num_measurements(), rhs.len()));
        }
        if rhs.iter().any(|x| !x.is_finite()) {
            return Err(invalid("right-hand side has non-finite entries"));
        }
        if rhs.iter().all(|&x| x == 0.0) {
            return Err(invalid("right-hand side b must be nonzero"));
        }
        Ok(Self {
            rhs: DVector::from_vec(rhs),
            ..self.clone()
        })
    }

    fn check_shape(&self, x: &DenseMatrix) -> Result<()> {
        if x.shape() != (self.rows, self.cols) {
            return Err(mismatch(fmt_shape((self.rows, self.cols)), fmt_shape(x.shape())));
        }
        Ok(())
    }

    /// `(⟨A_1, X⟩, ..., ⟨A_s, X⟩)`.
    pub fn apply(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        self.check_shape(x)?;
        Ok(self.apply_raw(&x.0).data.into())
    }

    /// `Σ y_i A_i`.
    pub fn adjoint(&self, y: &[f64]) -> Result<DenseMatrix> {
        if y.len() != self.num_measurements() {
            return Err(mismatch(self.num_measurements(), y.len()));
        }
        Ok(DenseMatrix(self.adjoint_raw(&DVector::from_column_slice(y))))
    }

    /// Frobenius-nearest point of `{X : A(X) = b}`.
    pub fn project_affine(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_shape(x)?;
        // second pass is one step of iterative refinement of the Gram solve
        let p = self.project_raw(&self.project_raw(&x.0, &self.rhs), &self.rhs);
        DenseMatrix::from_nalgebra(p)
            .map_err(|_| Error::DegenerateOperator("Gram solve produced non-finite values".into()))
    }

    /// Solves `G y = r`.
    pub fn gram_solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.num_measurements() {
            return Err(mismatch(self.num_measurements(), r.len()));
        }
        Ok(self.gram.solve(&DVector::from_column_slice(r)).data.into())
    }

    /// `G y`, reconstructed from the stored factorization.
    pub fn gram_apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.num_measurements() {
            return Err(mismatch(self.num_measurements(), y.len()));
        }
        let l = self.gram.l();
        let y = DVector::from_column_slice(y);
        Ok((&l * (l.transpose() * y)).data.into())
    }

    pub(crate) fn apply_raw(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let xv = nalgebra::DVectorView::from_slice(x.as_slice(), x.len());
        &self.stacked * xv
    }

    pub(crate) fn adjoint_raw(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let flat = self.stacked.tr_mul(y);
        DMatrix::from_vec(self.rows, self.cols, flat.data.into())
    }

    /// Least-squares coefficients `y` minimizing `‖Σ y_i A_i − x‖_F`.
    pub(crate) fn fit_multiplier(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.gram.solve(&self.apply_raw(x))
    }

    /// Projection onto `{X : A(X) = rhs}` for an arbitrary right-hand side.
    pub(crate) fn project_raw(&self, x: &DMatrix<f64>, rhs: &DVector<f64>) -> DMatrix<f64> {
        let residual = self.apply_raw(x) - rhs;
        let y = self.gram.solve(&residual);
        x - self.adjoint_raw(&y)
    }

    pub(crate) fn rhs_raw(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub(crate) fn max_violation_raw(&self, x: &DMatrix<f64>, rhs: &DVector<f64>) -> f64 {
        (self.apply_raw(x) - rhs).amax()
    }

    /// `max_i |⟨A_i, X⟩ − b_i|`.
    pub fn max_violation(&self, x: &DenseMatrix) -> Result<f64> {
        self.check_shape(x)?;
        Ok(self.max_violation_raw(&x.0, &self.rhs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(m: usize, n: usize, i: usize, j: usize) -> DenseMatrix {
        let mut data = vec![0.0; m * n];
        data[i * n + j] = 1.0;
        DenseMatrix::new(m, n, data).unwrap()
    }

    fn lcg_matrix(m: usize, n: usize, seed: u64) -> DenseMatrix {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let data = (0..m * n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        DenseMatrix::new(m, n, data).unwrap()
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(DenseMatrix::new(0, 3, vec![]).is_err());
        assert!(DenseMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(DenseMatrix::new(1, 2, vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn row_major_round_trip() {
        let x = DenseMatrix::new(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(x.get(0, 2), 3.0);
        assert_eq!(x.get(1, 0), 4.0);
        assert_eq!(x.to_row_major(), vec![1., 2., 3., 4., 5., 6.]);
    }

    #[test]
    fn svd_of_identity_and_diagonal() {
        let f = svd(&DenseMatrix::identity(2)).unwrap();
        assert_eq!(f.sigma, vec![1.0, 1.0]);

        let f = svd(&DenseMatrix::diagonal(2, 2, &[3.0, 4.0]).unwrap()).unwrap();
        assert!((f.sigma[0] - 4.0).abs() < 1e-14);
        assert!((f.sigma[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn svd_reconstructs_random_matrix() {
        for (m, n) in [(5, 4), (4, 5), (7, 7), (1, 6)] {
            let x = lcg_matrix(m, n, (m * 31 + n) as u64);
            let f = svd(&x).unwrap();
            let q = m.min(n);
            assert_eq!(f.u.shape(), (m, q));
            assert_eq!(f.v.shape(), (n, q));
            let err = (&f.reconstruct() - &x).frobenius_norm() / x.frobenius_norm();
            assert!(err <= 1e-10, "reconstruction error {err}");
            assert!(f.sigma.windows(2).all(|w| w[0] >= w[1]));
            let eye = DMatrix::<f64>::identity(q, q);
            assert!((f.u.transpose() * &f.u - &eye).amax() <= 1e-10);
            assert!((f.v.transpose() * &f.v - &eye).amax() <= 1e-10);
        }
    }

    #[test]
    fn apply_coordinate_functional_and_zero() {
        let op = MeasurementOperator::new(vec![unit(2, 3, 0, 0)], vec![1.0]).unwrap();
        let x = DenseMatrix::new(2, 3, vec![7., 1., 1., 1., 1., 1.]).unwrap();
        assert_eq!(op.apply(&x).unwrap(), vec![7.0]);
        assert_eq!(op.apply(&DenseMatrix::zeros(2, 3)).unwrap(), vec![0.0]);
    }

    #[test]
    fn adjoint_unit_and_zero() {
        let a1 = lcg_matrix(3, 2, 1);
        let a2 = lcg_matrix(3, 2, 2);
        let op = MeasurementOperator::new(vec![a1.clone(), a2], vec![1.0, 0.0]).unwrap();
        assert_eq!(op.adjoint(&[1.0, 0.0]).unwrap(), a1);
        assert!(op.adjoint(&[0.0, 0.0]).unwrap().is_zero());
        assert!(op.adjoint(&[1.0]).is_err());
    }

    #[test]
    fn adjoint_identity_double_sum() {
        let sensing: Vec<_> = (0..4).map(|i| lcg_matrix(3, 5, 10 + i)).collect();
        let op = MeasurementOperator::new(sensing.clone(), vec![1.0; 4]).unwrap();
        let x = lcg_matrix(3, 5, 99);
        let y = [0.3, -1.2, 0.7, 2.0];
        // direct double summation
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for (i, a) in sensing.iter().enumerate() {
            let mut ax = 0.0;
            for r in 0..3 {
                for c in 0..5 {
                    ax += a.get(r, c) * x.get(r, c);
                    rhs += x.get(r, c) * y[i] * a.get(r, c);
                }
            }
            lhs += ax * y[i];
        }
        let applied = op.apply(&x).unwrap();
        let via_apply: f64 = applied.iter().zip(&y).map(|(a, b)| a * b).sum();
        let via_adjoint = x.inner(&op.adjoint(&y).unwrap()).unwrap();
        assert!((via_apply - lhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        assert!((via_adjoint - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn hyperplane_projection_is_analytic() {
        let n = 3;
        let t = 2.5;
        let op = MeasurementOperator::new(vec![DenseMatrix::identity(n)], vec![t]).unwrap();
        let x = lcg_matrix(n, n, 5);
        let trace: f64 = (0..n).map(|i| x.get(i, i)).sum();
        let expected = &x - &(&DenseMatrix::identity(n) * ((trace - t) / n as f64));
        let p = op.project_affine(&x).unwrap();
        assert!((&p - &expected).frobenius_norm() <= 1e-12);
    }

    #[test]
    fn projection_fixes_feasible_points() {
        let sensing: Vec<_> = (0..5).map(|i| lcg_matrix(4, 3, 20 + i)).collect();
        let b = vec![1.0, -2.0, 0.5, 0.0, 3.0];
        let op = MeasurementOperator::new(sensing, b.clone()).unwrap();
        let p = op.project_affine(&lcg_matrix(4, 3, 77)).unwrap();
        let applied = op.apply(&p).unwrap();
        for (a, bi) in applied.iter().zip(&b) {
            assert!((a - bi).abs() <= 1e-8);
        }
        let pp = op.project_affine(&p).unwrap();
        assert!((&pp - &p).frobenius_norm() <= 1e-12 * (1.0 + p.frobenius_norm()));
    }

    #[test]
    fn constructor_errors() {
        assert!(MeasurementOperator::new(vec![], vec![]).is_err());
        let a = lcg_matrix(2, 2, 1);
        assert!(MeasurementOperator::new(vec![a.clone()], vec![0.0]).is_err());
        assert!(MeasurementOperator::new(vec![a.clone(), lcg_matrix(2, 3, 2)], vec![1.0, 1.0]).is_err());
        assert!(matches!(
            MeasurementOperator::new(vec![a.clone(), a.clone()], vec![1.0, 1.0]),
            Err(Error::DegenerateOperator(_))
        ));
        let too_many: Vec<_> = (0..5).map(|i| lcg_matrix(2, 2, i)).collect();
        assert!(matches!(
            MeasurementOperator::new(too_many, vec![1.0; 5]),
            Err(Error::DegenerateOperator(_))
        ));
    }

    #[test]
    fn gram_solver_reproduces_gram_products() {
        let sensing: Vec<_> = (0..6).map(|i| lcg_matrix(3, 4, 40 + i)).collect();
        let op = MeasurementOperator::new(sensing.clone(), vec![1.0; 6]).unwrap();
        let y = [1.0, -0.5, 0.25, 2.0, 0.0, -1.5];
        let gy = op.gram_apply(&y).unwrap();
        for i in 0..6 {
            let direct: f64 = (0..6).map(|j| sensing[i].inner(&sensing[j]).unwrap() * y[j]).sum();
            assert!((gy[i] - direct).abs() <= 1e-10 * (1.0 + direct.abs()));
        }
        let back = op.gram_solve(&gy).unwrap();
        for (a, b) in back.iter().zip(&y) {
            assert!((a - b).abs() <= 1e-10);
        }
    }
}
