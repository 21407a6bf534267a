//! One-sided (Hestenes) Jacobi SVD. Slower than bidiagonalization but
//! reliable on rank-deficient input; used when the library routine returns
//! factors that do not reconstruct the matrix.

use nalgebra::{DMatrix, DVector};

const MAX_SWEEPS: usize = 80;

/// Thin SVD `x = u diag(sigma) vᵀ` with `u: m×q`, `v: n×q`, `q = min(m, n)`.
/// Singular values are unsorted; `u` has orthonormal columns even where
/// `sigma` vanishes.
pub(crate) fn thin_svd(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    if x.nrows() < x.ncols() {
        let (u, s, v) = thin_svd(&x.transpose());
        return (v, s, u);
    }
    let (m, n) = x.shape();
    let mut a = x.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let tiny = f64::MIN_POSITIVE.sqrt();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if alpha < tiny || beta < tiny || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let sigma: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let scale = sigma.iter().cloned().fold(0.0, f64::max);
    let mut u = DMatrix::zeros(m, n);
    let mut filled = vec![false; n];
    for j in 0..n {
        if sigma[j] > 0.0 && sigma[j] > scale * 1e-13 {
            u.set_column(j, &(a.column(j) / sigma[j]));
            filled[j] = true;
        }
    }
    complete_orthonormal(&mut u, &filled);
    (u, sigma, v)
}

fn rotate(a: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for r in 0..a.nrows() {
        let ap = a[(r, p)];
        let aq = a[(r, q)];
        a[(r, p)] = c * ap - s * aq;
        a[(r, q)] = s * ap + c * aq;
    }
}

/// Fills the unset columns of `u` with unit vectors orthogonal to every
/// other column, drawing candidates from the standard basis.
fn complete_orthonormal(u: &mut DMatrix<f64>, filled: &[bool]) {
    let m = u.nrows();
    let mut done: Vec<usize> = (0..filled.len()).filter(|&j| filled[j]).collect();
    let mut candidate = 0;
    for j in 0..filled.len() {
        if filled[j] {
            continue;
        }
        while candidate < m {
            let mut w = DVector::<f64>::zeros(m);
            w[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &d in &done {
                    let proj = u.column(d).dot(&w);
                    w -= u.column(d) * proj;
                }
            }
            let norm = w.norm();
            if norm > 1e-8 {
                u.set_column(j, &(w / norm));
                done.push(j);
                break;
            }
        }
    }
}
