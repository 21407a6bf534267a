//! Convex subproblem of the DCA outer loop:
//!
//! ```text
//! minimize   ‖X‖*_{k,2} − α ⟨X_s, X⟩
//! subject to A(X) = b
//! ```
//!
//! solved by Douglas–Rachford splitting between the prox of the objective
//! (a shifted dual-norm prox, one SVD) and the projection onto the affine
//! set (one Gram solve). With the shadow point `W` and step `λ`:
//!
//! ```text
//! X⁺ = prox_{λf}(W)          = prox_{λ‖·‖*}(W + λα X_s)
//! Z  = P_affine(2X⁺ − W)
//! W ← W + Z − X⁺
//! ```
//!
//! The prox step also yields `D = (W + λαX_s − X⁺)/λ ∈ ∂‖X⁺‖*`, which seeds the
//! KKT certificate reported by [`kkt_residual`].

use log::{debug, trace};
use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, mismatch, Result};
use crate::kyfan;
use crate::linalg::{DenseMatrix, MeasurementOperator};

/// One instance of the subproblem.
#[derive(Clone, Debug)]
pub struct SubproblemSpec<'a> {
    pub op: &'a MeasurementOperator,
    /// Linearization point `X_s`; zero for the initialization problems.
    pub anchor: DenseMatrix,
    pub alpha: f64,
    pub k: usize,
}

impl<'a> SubproblemSpec<'a> {
    pub fn new(op: &'a MeasurementOperator, anchor: DenseMatrix, alpha: f64, k: usize) -> Result<Self> {
        let spec = Self { op, anchor, alpha, k };
        spec.validate()?;
        Ok(spec)
    }

    /// Pure dual-norm minimization over the affine set (zero anchor).
    pub fn dual_norm_min(op: &'a MeasurementOperator, k: usize) -> Result<Self> {
        let (m, n) = op.shape();
        Self::new(op, DenseMatrix::zeros(m, n), 0.0, k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.anchor.shape() != self.op.shape() {
            return Err(mismatch(format!("{:?}", self.op.shape()), format!("{:?}", self.anchor.shape())));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(invalid(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if self.alpha == 0.0 && !self.anchor.is_zero() {
            return Err(invalid("alpha = 0 requires a zero anchor"));
        }
        let (m, n) = self.op.shape();
        if self.k == 0 || self.k > m.min(n) {
            return Err(invalid(format!("k = {} outside 1..={}", self.k, m.min(n))));
        }
        Ok(())
    }

    fn linear_term(&self) -> DMatrix<f64> {
        self.anchor.as_nalgebra() * self.alpha
    }

    /// `‖X‖* − α⟨X_s, X⟩`.
    pub fn objective(&self, x: &DenseMatrix) -> Result<f64> {
        Ok(kyfan::dual_raw(x.as_nalgebra(), self.k)? - self.alpha * self.anchor.inner(x)?)
    }
}

/// Splitting solver settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverSettings {
    /// Tolerance on `max_i |⟨A_i, X⟩ − b_i|`.
    pub eps_primal: f64,
    /// Tolerance on the subgradient-membership residual.
    pub eps_dual: f64,
    pub max_iter: usize,
    /// Initial prox step `λ`.
    pub step: f64,
    /// Halve/double `λ` when the normalized residuals differ by more than
    /// `balance_ratio`.
    pub adaptive_step: bool,
    pub balance_ratio: f64,
    /// Iterations between KKT evaluations and step adaptations.
    pub check_every: usize,
    /// Relative fixed-point step below which the iteration stops.
    pub step_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            eps_primal: 1e-9,
            eps_dual: 1e-6,
            max_iter: 20_000,
            step: 1.0,
            adaptive_step: true,
            balance_ratio: 10.0,
            check_every: 10,
            step_tol: 1e-10,
        }
    }
}

impl SolverSettings {
    /// Same settings with both KKT tolerances divided by `factor`.
    pub fn tightened(&self, factor: f64) -> Self {
        Self {
            eps_primal: self.eps_primal / factor,
            eps_dual: self.eps_dual / factor,
            step_tol: self.step_tol / factor,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = [self.eps_primal, self.eps_dual, self.step, self.balance_ratio, self.step_tol];
        if positive.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(invalid("solver tolerances and step must be positive"));
        }
        if self.max_iter == 0 || self.check_every == 0 {
            return Err(invalid("solver iteration counts must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SubproblemSolution {
    /// Feasible minimizer estimate (output of the affine projection).
    pub x_star: DenseMatrix,
    pub objective: f64,
    pub kkt_primal: f64,
    pub kkt_dual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Dual-norm subgradient produced by the last prox step; the starting
    /// point for the multiplier fit in [`kkt_residual`].
    pub subgradient: DenseMatrix,
    /// Final prox step `λ`.
    pub step: f64,
}

/// Starting point for the splitting iteration, given as a primal estimate
/// and a dual-norm subgradient at it.
#[derive(Clone, Debug)]
pub struct WarmStart {
    pub point: DenseMatrix,
    pub subgradient: DenseMatrix,
    pub step: f64,
}

impl WarmStart {
    pub fn from_solution(sol: &SubproblemSolution) -> Self {
        Self {
            point: sol.x_star.clone(),
            subgradient: sol.subgradient.clone(),
            step: sol.step,
        }
    }

    /// Cold start: the anchor itself (or the least-norm feasible point when
    /// the anchor is zero) with its canonical subgradient.
    pub fn cold(spec: &SubproblemSpec<'_>, cfg: &SolverSettings) -> Result<Self> {
        let point = if spec.anchor.is_zero() {
            let (m, n) = spec.op.shape();
            spec.op.project_affine(&DenseMatrix::zeros(m, n))?
        } else {
            spec.anchor.clone()
        };
        let subgradient = kyfan::dual_subgradient(&point, spec.k)?;
        Ok(Self {
            point,
            subgradient,
            step: cfg.step,
        })
    }
}

pub fn solve(spec: &SubproblemSpec<'_>, cfg: &SolverSettings) -> Result<SubproblemSolution> {
    solve_from(spec, cfg, None)
}

/// Solves the subproblem, optionally starting from `warm`.
pub fn solve_from(
    spec: &SubproblemSpec<'_>,
    cfg: &SolverSettings,
    warm: Option<&WarmStart>,
) -> Result<SubproblemSolution> {
    spec.validate()?;
    cfg.validate()?;
    let cold;
    let warm = match warm {
        Some(w) => w,
        None => {
            cold = WarmStart::cold(spec, cfg)?;
            &cold
        }
    };
    let (m, n) = spec.op.shape();
    let shift = DMatrix::zeros(m, n);
    let run = douglas_rachford(spec, cfg, &shift, spec.op.rhs_raw(), warm)?;
    finish(spec, run)
}

/// Solution of the displacement form of the subproblem,
///
/// ```text
/// minimize   ‖X_s + Y‖* − α ⟨X_s, Y⟩
/// subject to A(Y) = 0
/// ```
///
/// which is the same problem translated by the anchor.
#[derive(Clone, Debug)]
pub struct DisplacementSolution {
    pub y_star: DenseMatrix,
    pub iterations: usize,
    pub converged: bool,
}

pub fn solve_displacement(spec: &SubproblemSpec<'_>, cfg: &SolverSettings) -> Result<DisplacementSolution> {
    spec.validate()?;
    cfg.validate()?;
    let violation = spec.op.max_violation(&spec.anchor)?;
    if violation > 1e-8 * (1.0 + spec.op.rhs().iter().fold(0.0_f64, |a, b| a.max(b.abs()))) {
        return Err(invalid(format!("displacement form needs a feasible anchor (violation {violation:e})")));
    }
    let warm = WarmStart::cold(spec, cfg)?;
    let shift = spec.anchor.as_nalgebra().clone();
    let zero_rhs = DVector::zeros(spec.op.num_measurements());
    let run = douglas_rachford(spec, cfg, &shift, &zero_rhs, &warm)?;
    Ok(DisplacementSolution {
        y_star: DenseMatrix::from_nalgebra(run.point)?,
        iterations: run.iterations,
        converged: run.converged,
    })
}

/// KKT residuals of `sol` for `spec`: `(kkt_primal, kkt_dual)`.
///
/// The multiplier `ŷ` is the least-squares fit of `Σ ŷ_i A_i` to
/// `G − αX_s`, where `G` is `sol.subgradient`; the membership test is then
/// applied to `u = αX_s + Σ ŷ_i A_i`.
pub fn kkt_residual(sol: &SubproblemSolution, spec: &SubproblemSpec<'_>) -> Result<(f64, f64)> {
    spec.validate()?;
    if sol.x_star.shape() != spec.op.shape() || sol.subgradient.shape() != spec.op.shape() {
        return Err(mismatch(format!("{:?}", spec.op.shape()), format!("{:?}", sol.x_star.shape())));
    }
    kkt_raw(
        spec,
        sol.x_star.as_nalgebra(),
        sol.subgradient.as_nalgebra(),
        &spec.linear_term(),
        spec.op.rhs_raw(),
    )
}

fn kkt_raw(
    spec: &SubproblemSpec<'_>,
    x: &DMatrix<f64>,
    subgradient: &DMatrix<f64>,
    lin: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> Result<(f64, f64)> {
    let op = spec.op;
    let primal = op.max_violation_raw(x, rhs);
    let y_hat = op.fit_multiplier(&(subgradient - lin));
    let u = lin + op.adjoint_raw(&y_hat);
    let ball = kyfan::kyfan_raw(&u, spec.k)? - 1.0;
    let pairing = (u.dot(x) - kyfan::dual_raw(x, spec.k)?).abs() / (1.0 + x.norm());
    Ok((primal, ball.max(pairing)))
}

struct RawRun {
    /// Final feasible point in variable space.
    point: DMatrix<f64>,
    subgradient: DMatrix<f64>,
    kkt_primal: f64,
    kkt_dual: f64,
    iterations: usize,
    converged: bool,
    step: f64,
}

fn finish(spec: &SubproblemSpec<'_>, run: RawRun) -> Result<SubproblemSolution> {
    let x_star = DenseMatrix::from_nalgebra(run.point)?;
    let objective = spec.objective(&x_star)?;
    Ok(SubproblemSolution {
        x_star,
        objective,
        kkt_primal: run.kkt_primal,
        kkt_dual: run.kkt_dual,
        iterations: run.iterations,
        converged: run.converged,
        subgradient: DenseMatrix::from_nalgebra(run.subgradient)?,
        step: run.step,
    })
}

/// Douglas–Rachford on the variable `U` with `X = shift + U`, objective
/// `‖X‖* − ⟨αX_s, U⟩` and constraint `A(U) = rhs`.
fn douglas_rachford(
    spec: &SubproblemSpec<'_>,
    cfg: &SolverSettings,
    shift: &DMatrix<f64>,
    rhs: &DVector<f64>,
    warm: &WarmStart,
) -> Result<RawRun> {
    let op = spec.op;
    let k = spec.k;
    let lin = spec.linear_term();
    let full_rhs = op.rhs_raw();
    let mut lambda = warm.step;

    // W = U + λ(D − αX_s) makes U the prox output when D ∈ ∂‖shift + U‖*.
    let start = warm.point.as_nalgebra() - shift;
    let mut w = &start + (warm.subgradient.as_nalgebra() - &lin) * lambda;
    let mut z_prev = start.clone();

    let mut best: Option<RawRun> = None;
    let mut best_merit = f64::INFINITY;
    let mut last_residual = f64::INFINITY;

    for iter in 1..=cfg.max_iter {
        let v = shift + &w + &lin * lambda;
        let (x_prox, p) = kyfan::prox_parts(&v, lambda, k)?;
        let u_prox = x_prox - shift;
        let z = op.project_raw(&(&u_prox * 2.0 - &w), rhs);
        let step_vec = &z - &u_prox;
        w += &step_vec;

        let fixed_point_step = step_vec.norm();
        let z_norm = (shift + &z).norm();
        let stalled = fixed_point_step <= cfg.step_tol * (1.0 + z_norm);
        let checkpoint = iter % cfg.check_every == 0 || stalled || iter == cfg.max_iter;

        if checkpoint {
            // refine the Gram solve before certifying
            let x = shift + op.project_raw(&z, rhs);
            let subgradient = p / lambda;
            let (kkt_primal, kkt_dual) = kkt_raw(spec, &x, &subgradient, &lin, full_rhs)?;
            let converged = kkt_primal <= cfg.eps_primal && kkt_dual <= cfg.eps_dual;
            let merit = (kkt_primal / cfg.eps_primal).max(kkt_dual / cfg.eps_dual);
            trace!(
                "dr iter {iter}: step {fixed_point_step:.3e} kkt ({kkt_primal:.3e}, {kkt_dual:.3e}) lambda {lambda:.3e}"
            );
            if fixed_point_step > 10.0 * last_residual && iter > 50 {
                debug!("dr residual rose from {last_residual:.3e} to {fixed_point_step:.3e} at iteration {iter}");
            }
            last_residual = fixed_point_step;

            let done = converged || stalled;
            if done || merit < best_merit {
                best_merit = merit;
                best = Some(RawRun {
                    point: x,
                    subgradient,
                    kkt_primal,
                    kkt_dual,
                    iterations: iter,
                    converged: converged || (stalled && kkt_primal <= cfg.eps_primal),
                    step: lambda,
                });
            }
            if done {
                break;
            }

            if cfg.adaptive_step {
                // Relative primal (feasibility of the prox point) versus dual
                // (movement of the projected point) residuals.
                let primal = fixed_point_step / (1.0 + z_norm);
                let dual = (&z - &z_prev).norm() / lambda / (1.0 + (&lin).norm().max(1.0));
                let new_lambda = if primal > cfg.balance_ratio * dual {
                    lambda * 0.5
                } else if dual > cfg.balance_ratio * primal {
                    lambda * 2.0
                } else {
                    lambda
                };
                if new_lambda != lambda {
                    // keep the implied subgradient (W − Z)/λ fixed
                    w = &z + (&w - &z) * (new_lambda / lambda);
                    lambda = new_lambda;
                }
            }
        }
        z_prev = z;
    }

    let mut run = best.expect("max_iter >= 1 guarantees a checkpoint");
    run.point -= shift;
    if !run.converged {
        debug!(
            "subproblem stopped without convergence: kkt ({:.3e}, {:.3e})",
            run.kkt_primal, run.kkt_dual
        );
    }
    Ok(run)
}
