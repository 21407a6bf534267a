//! Ky Fan 2-k-norm, its dual, and the proximal machinery built on them.
//!
//! Both matrix norms are unitarily invariant, so every routine here works on
//! the sorted singular values and lifts the result back with the singular
//! vectors. On vectors the Ky Fan 2-k-norm is the top-k ℓ2 gauge
//! ([`topk_l2`]) and its dual is the k-support gauge ([`ksupport`]).
//!
//! The dual gauge is evaluated in closed form. Sorting the magnitudes
//! `a_1 ≥ ... ≥ a_d`, there is a unique split `h = k − r − 1` such that
//! `a_h > τ ≥ a_{h+1}` with `τ = (Σ_{i>h} a_i) / (r + 1)`, and then
//! `‖a‖*² = Σ_{i≤h} a_i² + (r + 1) τ²`. Every evaluation returns a
//! [`DualNormCertificate`]: a feasible primal witness whose pairing bounds the
//! value from below, and a decomposition into k-sparse parts whose ℓ2 norms
//! bound it from above.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::linalg::{self, DenseMatrix};

/// A k-sparse vector stored by support.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseTerm {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseTerm {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] += v;
        }
        out
    }
}

/// Value of a dual gauge together with the primal and dual evidence for it.
///
/// For vectors, `decomposition` holds k-sparse parts summing to the input.
/// For matrices it holds the parts for the singular-value vector, indexed by
/// singular value position; lifting each part with the singular vectors
/// gives rank-k matrices summing to the input.
#[derive(Clone, Debug)]
pub struct DualNormCertificate<W> {
    pub value: f64,
    /// Feasible point of the primal unit ball, `topk_l2(witness) ≤ 1`.
    pub witness: W,
    /// `⟨witness, input⟩`.
    pub pairing: f64,
    pub decomposition: Vec<SparseTerm>,
}

impl<W> DualNormCertificate<W> {
    /// Sum of the ℓ2 norms of the decomposition parts.
    pub fn upper_bound(&self) -> f64 {
        self.decomposition.iter().map(SparseTerm::norm).sum()
    }

    /// Largest of the two sandwich gaps `value − pairing` and
    /// `upper_bound − value`.
    pub fn gap(&self) -> f64 {
        (self.value - self.pairing).max(self.upper_bound() - self.value)
    }
}

fn check_k(k: usize, len: usize) -> Result<()> {
    if k == 0 || k > len {
        return Err(invalid(format!("k = {k} outside 1..={len}")));
    }
    Ok(())
}

/// Magnitudes sorted non-increasing, with `order[i]` the source index of
/// the i-th largest.
fn sorted_magnitudes(v: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    (order.iter().map(|&i| v[i].abs()).collect(), order)
}

fn topk_sorted(a: &[f64], k: usize) -> f64 {
    a[..k].iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// ℓ2 norm of the `k` largest-magnitude entries.
pub fn topk_l2(v: &[f64], k: usize) -> Result<f64> {
    check_k(k, v.len())?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid("vector has non-finite entries"));
    }
    let (a, _) = sorted_magnitudes(v);
    Ok(topk_sorted(&a, k))
}

/// Split point of the dual gauge on sorted magnitudes: `head` leading
/// entries are kept, the remaining ones are averaged to `tau` over
/// `k − head` slots.
#[derive(Clone, Copy, Debug)]
struct Split {
    head: usize,
    tau: f64,
    value: f64,
}

fn dual_split(a: &[f64], k: usize) -> Split {
    let d = a.len();
    // tail[h] = Σ_{i ≥ h} a_i for h in 0..k
    let mut tail = vec![0.0; k];
    let mut acc: f64 = a[k..].iter().sum();
    for h in (0..k).rev() {
        acc += a[h];
        tail[h] = acc;
    }
    let head_sq: Vec<f64> = a[..k]
        .iter()
        .scan(0.0, |s, x| {
            let prev = *s;
            *s += x * x;
            Some(prev)
        })
        .collect();
    debug_assert!(d >= k);

    let mut best = None;
    let mut best_violation = f64::INFINITY;
    for r in 0..k {
        let head = k - 1 - r;
        let tau = tail[head] / (r + 1) as f64;
        let above = if head == 0 { f64::INFINITY } else { a[head - 1] };
        let slack = 1e-14 * (1.0 + tau);
        let violation = (a[head] - tau).max(0.0).max((tau - above).max(0.0));
        let split = Split {
            head,
            tau,
            value: (head_sq[head] + (r + 1) as f64 * tau * tau).sqrt(),
        };
        if violation <= slack {
            return split;
        }
        if violation < best_violation {
            best_violation = violation;
            best = Some(split);
        }
    }
    best.expect("k >= 1")
}

/// Writes `z = tail/τ` (entries in `[0, 1]`, summing to `slots`) as a convex
/// combination of 0/1 vectors with exactly `slots` ones. Returns
/// `(weight, support)` pairs with supports given as positions in `z`.
fn hypersimplex_decomposition(z: &[f64], slots: usize) -> Vec<(f64, Vec<usize>)> {
    let mut z: Vec<f64> = z.iter().map(|x| x.clamp(0.0, 1.0)).collect();
    let mut remaining = 1.0f64;
    let mut parts = Vec::new();
    let mut order: Vec<usize> = (0..z.len()).collect();
    for _ in 0..(2 * z.len() + 4) {
        if remaining <= 1e-15 {
            break;
        }
        order.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
        let (chosen, rest) = order.split_at(slots.min(order.len()));
        let inside = chosen.iter().map(|&i| z[i]).fold(f64::INFINITY, f64::min);
        let outside = rest.iter().map(|&i| z[i]).fold(0.0, f64::max);
        let weight = inside.min(remaining - outside).max(0.0);
        if weight <= 0.0 {
            break;
        }
        for &i in chosen {
            z[i] -= weight;
        }
        remaining -= weight;
        parts.push((weight, chosen.to_vec()));
    }
    // Rounding leftovers go to the last part.
    if remaining > 0.0 {
        if let Some(last) = parts.last_mut() {
            last.0 += remaining;
        }
    }
    parts
}

fn ksupport_sorted(a: &[f64], k: usize) -> (Split, Vec<f64>, Vec<(f64, Vec<usize>)>) {
    let split = dual_split(a, k);
    let d = a.len();
    if split.value == 0.0 {
        return (split, vec![0.0; d], Vec::new());
    }
    let witness: Vec<f64> = (0..d)
        .map(|i| {
            if i < split.head {
                a[i] / split.value
            } else if a[i] > 0.0 {
                split.tau / split.value
            } else {
                0.0
            }
        })
        .collect();
    let parts = if split.tau > 0.0 {
        let z: Vec<f64> = a[split.head..].iter().map(|x| x / split.tau).collect();
        hypersimplex_decomposition(&z, k - split.head)
            .into_iter()
            .map(|(w, support)| (w, support.into_iter().map(|i| i + split.head).collect()))
            .collect()
    } else {
        vec![(1.0, Vec::new())]
    };
    (split, witness, parts)
}

/// Builds the k-sparse parts in original coordinates. `signed(i, mag)`
/// maps a sorted position and magnitude to the signed entry.
fn build_terms(
    a: &[f64],
    split: &Split,
    parts: &[(f64, Vec<usize>)],
    signed: impl Fn(usize, f64) -> (usize, f64),
) -> Vec<SparseTerm> {
    parts
        .iter()
        .map(|(weight, support)| {
            let mut indices = Vec::with_capacity(split.head + support.len());
            let mut values = Vec::with_capacity(split.head + support.len());
            for i in 0..split.head {
                let (idx, v) = signed(i, weight * a[i]);
                indices.push(idx);
                values.push(v);
            }
            for &i in support {
                let (idx, v) = signed(i, weight * split.tau);
                indices.push(idx);
                values.push(v);
            }
            SparseTerm { indices, values }
        })
        .collect()
}

/// Dual gauge of [`topk_l2`] (the k-support norm), with certificate.
pub fn ksupport(v: &[f64], k: usize) -> Result<DualNormCertificate<Vec<f64>>> {
    check_k(k, v.len())?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid("vector has non-finite entries"));
    }
    let (a, order) = sorted_magnitudes(v);
    let (split, witness_sorted, parts) = ksupport_sorted(&a, k);
    let sign = |i: usize| if v[i] < 0.0 { -1.0 } else { 1.0 };
    let mut witness = vec![0.0; v.len()];
    for (pos, &src) in order.iter().enumerate() {
        witness[src] = sign(src) * witness_sorted[pos];
    }
    let pairing = witness.iter().zip(v).map(|(w, x)| w * x).sum();
    let decomposition = build_terms(&a, &split, &parts, |pos, mag| {
        let src = order[pos];
        (src, sign(src) * mag)
    });
    Ok(DualNormCertificate {
        value: split.value,
        witness,
        pairing,
        decomposition,
    })
}

/// Dual gauge value on an already sorted non-negative sequence.
pub(crate) fn dual_value_sorted(sigma: &[f64], k: usize) -> f64 {
    dual_split(sigma, k).value
}

fn check_matrix_k(x: &DenseMatrix, k: usize) -> Result<()> {
    check_k(k, x.rows().min(x.cols()))
}

/// Ky Fan 2-k-norm: ℓ2 norm of the `k` largest singular values.
pub fn kyfan_2k(x: &DenseMatrix, k: usize) -> Result<f64> {
    check_matrix_k(x, k)?;
    kyfan_raw(x.as_nalgebra(), k)
}

pub(crate) fn kyfan_raw(x: &DMatrix<f64>, k: usize) -> Result<f64> {
    let sigma = linalg::singular_values_of(x)?;
    Ok(topk_sorted(&sigma, k))
}

pub(crate) fn dual_raw(x: &DMatrix<f64>, k: usize) -> Result<f64> {
    let sigma = linalg::singular_values_of(x)?;
    Ok(dual_value_sorted(&sigma, k))
}

/// Dual Ky Fan 2-k-norm with a matrix witness `U diag(x̂) Vᵀ`.
/// Singular values at or below this fraction of the largest are treated as
/// exact zeros when building certificates, so a numerically rank-k matrix
/// gets the same witness as an exactly rank-k one.
const SIGMA_NOISE: f64 = 64.0 * f64::EPSILON;

pub fn dual_kyfan_2k(x: &DenseMatrix, k: usize) -> Result<DualNormCertificate<DenseMatrix>> {
    check_matrix_k(x, k)?;
    let f = linalg::svd(x)?;
    let floor = SIGMA_NOISE * f.sigma.first().copied().unwrap_or(0.0);
    let sigma: Vec<f64> = f.sigma.iter().map(|&s| if s <= floor { 0.0 } else { s }).collect();
    let (split, witness_sigma, parts) = ksupport_sorted(&sigma, k);
    let witness = DenseMatrix::wrap(f.lift(&witness_sigma));
    let pairing = witness.inner(x)?;
    let decomposition = build_terms(&sigma, &split, &parts, |pos, mag| (pos, mag));
    Ok(DualNormCertificate {
        value: split.value,
        witness,
        pairing,
        decomposition,
    })
}

/// Prox of `(β/2)·(sum of the k largest squares)` on sorted magnitudes,
/// solved by pooling adjacent violators around position `k`. Returns the
/// top-k ℓ2 norm of the result and the pooled block `[lo, hi]` with its
/// common value.
fn scaled_topk_prox(a: &[f64], k: usize, beta: f64) -> (f64, usize, usize, f64) {
    let shrink = 1.0 + beta;
    let (mut lo, mut hi) = (k - 1, k - 1);
    let mut sum = a[k - 1];
    let mut counted = 1.0;
    let mut members = 1.0;
    let mut theta = sum / (members + beta * counted);
    loop {
        let mut grew = false;
        if hi + 1 < a.len() && a[hi + 1] > theta {
            hi += 1;
            sum += a[hi];
            members += 1.0;
            grew = true;
        }
        if lo > 0 && a[lo - 1] / shrink < theta {
            lo -= 1;
            sum += a[lo];
            members += 1.0;
            counted += 1.0;
            grew = true;
        }
        theta = sum / (members + beta * counted);
        if !grew {
            break;
        }
    }
    let head: f64 = a[..lo].iter().map(|x| (x / shrink).powi(2)).sum();
    ((head + counted * theta * theta).sqrt(), lo, hi, theta)
}

const BISECTION_MAX_ITER: usize = 200;
const BISECTION_RESIDUAL: f64 = 1e-12;

/// Euclidean projection of sorted magnitudes onto `{x : topk_l2(x) ≤ radius}`.
fn project_sorted(a: &[f64], k: usize, radius: f64) -> Vec<f64> {
    if topk_sorted(a, k) <= radius {
        return a.to_vec();
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut at_hi = scaled_topk_prox(a, k, hi);
    while at_hi.0 > radius {
        lo = hi;
        hi *= 2.0;
        at_hi = scaled_topk_prox(a, k, hi);
        if !hi.is_finite() {
            break;
        }
    }
    for _ in 0..BISECTION_MAX_ITER {
        if radius - at_hi.0 <= BISECTION_RESIDUAL * radius {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let at_mid = scaled_topk_prox(a, k, mid);
        if at_mid.0 > radius {
            lo = mid;
        } else {
            hi = mid;
            at_hi = at_mid;
        }
    }
    let (_, block_lo, block_hi, theta) = at_hi;
    let shrink = 1.0 + hi;
    a.iter()
        .enumerate()
        .map(|(i, &x)| {
            if i < block_lo {
                x / shrink
            } else if i <= block_hi {
                theta
            } else {
                x
            }
        })
        .collect()
}

/// Euclidean projection of `v` onto the ball `{x : topk_l2(x, k) ≤ radius}`.
pub fn project_topk_ball(v: &[f64], k: usize, radius: f64) -> Result<Vec<f64>> {
    check_k(k, v.len())?;
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(invalid(format!("radius must be positive, got {radius}")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid("vector has non-finite entries"));
    }
    let (a, order) = sorted_magnitudes(v);
    let projected = project_sorted(&a, k, radius);
    let mut out = vec![0.0; v.len()];
    for (pos, &src) in order.iter().enumerate() {
        out[src] = projected[pos].copysign(v[src]);
    }
    Ok(out)
}

/// Prox and its Moreau complement: returns `(Z, P)` with `Z + P = V`, `P`
/// the projection of `V` onto the Ky Fan ball of radius `lambda` and `Z` the
/// prox of `lambda·‖·‖*`.
pub(crate) fn prox_parts(v: &DMatrix<f64>, lambda: f64, k: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let f = linalg::svd_of(v)?;
    if topk_sorted(&f.sigma, k) <= lambda {
        return Ok((DMatrix::zeros(v.nrows(), v.ncols()), v.clone()));
    }
    let p = f.lift(&project_sorted(&f.sigma, k, lambda));
    Ok((v - &p, p))
}

/// `argmin_Z λ·‖Z‖* + ½‖Z − V‖_F²` for the dual Ky Fan 2-k-norm.
pub fn prox_dual_norm(v: &DenseMatrix, lambda: f64, k: usize) -> Result<DenseMatrix> {
    check_matrix_k(v, k)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("prox step must be positive, got {lambda}")));
    }
    let (z, _) = prox_parts(v.as_nalgebra(), lambda, k)?;
    Ok(DenseMatrix::wrap(z))
}

/// A member of the subdifferential of the dual norm at `x`: the primal
/// witness of its certificate. Zero at `x = 0`.
pub fn dual_subgradient(x: &DenseMatrix, k: usize) -> Result<DenseMatrix> {
    check_matrix_k(x, k)?;
    if x.is_zero() {
        return Ok(DenseMatrix::zeros(x.rows(), x.cols()));
    }
    Ok(dual_kyfan_2k(x, k)?.witness)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    fn check_vector_certificate(v: &[f64], k: usize, cert: &DualNormCertificate<Vec<f64>>) {
        assert!(topk_l2(&cert.witness, k).unwrap() <= 1.0 + 1e-12);
        let pairing: f64 = cert.witness.iter().zip(v).map(|(a, b)| a * b).sum();
        assert!(close(pairing, cert.pairing, 1e-12));
        let mut sum = vec![0.0; v.len()];
        for term in &cert.decomposition {
            assert!(term.indices.len() <= k);
            for (i, x) in term.to_dense(v.len()).into_iter().enumerate() {
                sum[i] += x;
            }
        }
        for (a, b) in sum.iter().zip(v) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "decomposition {sum:?} vs {v:?}");
        }
        assert!(cert.gap() <= 1e-10 * (1.0 + cert.value), "gap {}", cert.gap());
    }

    #[test]
    fn topk_examples() {
        assert!(close(topk_l2(&[3.0, 2.0, 1.0], 2).unwrap(), 13f64.sqrt(), 1e-15));
        assert!(close(topk_l2(&[3.0, -4.0], 2).unwrap(), 5.0, 1e-15));
        assert_eq!(topk_l2(&[1.0, -7.0, 3.0], 1).unwrap(), 7.0);
        assert!(topk_l2(&[1.0], 0).is_err());
        assert!(topk_l2(&[1.0], 2).is_err());
    }

    #[test]
    fn ksupport_examples() {
        let v = [3.0, 2.0, 1.0];
        let cert = ksupport(&v, 2).unwrap();
        assert!(close(cert.value, 3.0 * 2f64.sqrt(), 1e-14));
        check_vector_certificate(&v, 2, &cert);

        let v = [1.5, -2.0, 0.5, 4.0];
        let cert = ksupport(&v, 1).unwrap();
        assert!(close(cert.value, 8.0, 1e-14));
        check_vector_certificate(&v, 1, &cert);

        let cert = ksupport(&v, 4).unwrap();
        let l2 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(close(cert.value, l2, 1e-14));
        check_vector_certificate(&v, 4, &cert);
    }

    #[test]
    fn ksupport_ties_and_zeros() {
        for v in [vec![1.0, 1.0, 1.0], vec![0.0, 0.0, 0.0], vec![2.0, 0.0, 0.0, -2.0], vec![5.0, 1.0, 1.0, 1.0, 1.0]] {
            for k in 1..=v.len() {
                let cert = ksupport(&v, k).unwrap();
                check_vector_certificate(&v, k, &cert);
            }
        }
        let cert = ksupport(&[1.0, 1.0, 1.0], 2).unwrap();
        assert!(close(cert.value, 3.0 / 2f64.sqrt(), 1e-14));
    }

    #[test]
    fn matrix_norm_examples() {
        let d = DenseMatrix::diagonal(3, 3, &[3.0, 2.0, 1.0]).unwrap();
        assert!(close(kyfan_2k(&d, 2).unwrap(), 13f64.sqrt(), 1e-13));
        assert!(close(dual_kyfan_2k(&d, 1).unwrap().value, 6.0, 1e-13));
        assert!(close(dual_kyfan_2k(&d, 2).unwrap().value, 3.0 * 2f64.sqrt(), 1e-13));

        let x = DenseMatrix::outer(&[1.0, 2.0, 2.0], &[3.0, 4.0]).unwrap();
        for k in 1..=2 {
            assert!(close(kyfan_2k(&x, k).unwrap(), 15.0, 1e-13));
            assert!(close(dual_kyfan_2k(&x, k).unwrap().value, 15.0, 1e-13));
        }
        assert!(kyfan_2k(&x, 3).is_err());
    }

    #[test]
    fn projection_special_cases() {
        let v = [0.3, -0.4];
        assert_eq!(project_topk_ball(&v, 1, 1.0).unwrap(), v.to_vec());

        let v = [3.0, -4.0, 0.0];
        let p = project_topk_ball(&v, 3, 2.5).unwrap();
        for (a, b) in p.iter().zip([1.5, -2.0, 0.0]) {
            assert!((a - b).abs() <= 1e-10);
        }

        let v = [3.0, -0.5, -4.0, 1.0];
        let p = project_topk_ball(&v, 1, 1.0).unwrap();
        for (a, b) in p.iter().zip([1.0, -0.5, -1.0, 1.0]) {
            assert!((a - b).abs() <= 1e-10, "{p:?}");
        }
        assert!(project_topk_ball(&v, 1, 0.0).is_err());
        assert!(project_topk_ball(&v, 1, -1.0).is_err());
    }

    #[test]
    fn projection_pools_across_position_k() {
        // (5, 4.9, 4.8) with k = 1: the single kept entry cannot drop below
        // the tail, so all three pool.
        let p = project_topk_ball(&[5.0, 4.9, 4.8], 1, 2.0).unwrap();
        for x in &p {
            assert!((x - 2.0).abs() <= 1e-10, "{p:?}");
        }
        let p = project_topk_ball(&[5.0, 4.0, 1.0, 0.5], 2, 3.0).unwrap();
        assert!(topk_l2(&p, 2).unwrap() <= 3.0 * (1.0 + 1e-10));
        assert!(p.windows(2).all(|w| w[0] >= w[1] - 1e-15));
    }

    #[test]
    fn prox_collapses_and_vanishes() {
        let v = DenseMatrix::diagonal(3, 3, &[3.0, 2.0, 1.0]).unwrap();
        let big = kyfan_2k(&v, 2).unwrap();
        assert!(prox_dual_norm(&v, big, 2).unwrap().is_zero());
        let z = prox_dual_norm(&v, 1e-9, 2).unwrap();
        assert!((&z - &v).frobenius_norm() <= 1e-8);
        assert!(prox_dual_norm(&v, 0.0, 2).is_err());
    }

    #[test]
    fn subgradient_examples() {
        let x = DenseMatrix::outer(&[1.0, -1.0, 0.5], &[2.0, 0.0, 1.0, 1.0]).unwrap();
        let g = dual_subgradient(&x, 2).unwrap();
        let expected = &x * (1.0 / x.frobenius_norm());
        assert!((&g - &expected).frobenius_norm() <= 1e-12);

        let d = DenseMatrix::diagonal(3, 3, &[3.0, 2.0, 1.0]).unwrap();
        let g = dual_subgradient(&d, 1).unwrap();
        assert!((&g - &DenseMatrix::identity(3)).frobenius_norm() <= 1e-12);

        assert!(dual_subgradient(&DenseMatrix::zeros(2, 2), 1).unwrap().is_zero());
    }
}
