//! Difference-of-convex outer loops for the ratio model
//! `min ‖X‖*/‖X‖_F` and the difference model `min ‖X‖* − ‖X‖_F` over the
//! affine set, where `‖·‖*` is the dual Ky Fan 2-k-norm.
//!
//! Both models share one step: linearize the Frobenius term at `X_s` and
//! solve the convex subproblem with anchor `X_s` and weight `α(X_s)`. The
//! ratio model uses `α = ‖X_s‖*/‖X_s‖²`, the difference model
//! `α = 1/‖X_s‖_F`.

use std::time::{Duration, Instant};

use log::{debug, info};

use crate::error::{invalid, Error, Result};
use crate::kyfan;
use crate::linalg::{DenseMatrix, MeasurementOperator};
use crate::subproblem::{self, SolverSettings, SubproblemSolution, SubproblemSpec, WarmStart};

/// Weight of the linearized term as a function of the anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AlphaRule {
    /// `‖X‖* / ‖X‖_F²`
    Ratio,
    /// `1 / ‖X‖_F`
    Difference,
    /// `1 / ‖X‖_{k,2}`; experimental, no convergence guarantee away from
    /// rank ≤ k iterates.
    Mid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Ratio,
    Difference,
    GeneralizedAlpha(AlphaRule),
}

impl ModelKind {
    pub fn alpha_rule(&self) -> AlphaRule {
        match self {
            ModelKind::Ratio => AlphaRule::Ratio,
            ModelKind::Difference => AlphaRule::Difference,
            ModelKind::GeneralizedAlpha(rule) => *rule,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Ratio => "ratio",
            ModelKind::Difference => "difference",
            ModelKind::GeneralizedAlpha(AlphaRule::Ratio) => "alpha-ratio",
            ModelKind::GeneralizedAlpha(AlphaRule::Difference) => "alpha-difference",
            ModelKind::GeneralizedAlpha(AlphaRule::Mid) => "alpha-mid",
        }
    }

    /// Value monitored in [`DcaResult::objective_trace`]. The generalized
    /// rules have no model objective of their own and report the ratio.
    fn objective(&self, state: &DcaState) -> f64 {
        match self {
            ModelKind::Difference => state.difference_objective,
            _ => state.ratio_objective,
        }
    }
}

pub fn alpha_value(rule: AlphaRule, x: &DenseMatrix, k: usize) -> Result<f64> {
    let fro = x.frobenius_norm();
    if fro == 0.0 {
        return Err(invalid("alpha rules are undefined at X = 0"));
    }
    Ok(match rule {
        AlphaRule::Ratio => kyfan::dual_raw(x.as_nalgebra(), k)? / (fro * fro),
        AlphaRule::Difference => 1.0 / fro,
        AlphaRule::Mid => 1.0 / kyfan::kyfan_raw(x.as_nalgebra(), k)?,
    })
}

#[derive(Clone, Debug)]
pub enum InitStrategy {
    /// Nuclear-norm minimizer (the k = 1 dual-norm problem).
    Nuclear,
    /// Dual-norm minimizer for the working `k`.
    KyFanDual,
    /// Start from zero; the first loop iteration is the dual-norm solve.
    Zero,
    /// Caller-supplied feasible starting point.
    Given(DenseMatrix),
}

/// Computes the starting point for a strategy; [`InitStrategy::Zero`]
/// returns the zero matrix.
pub fn init(strategy: &InitStrategy, op: &MeasurementOperator, k: usize, solver: &SolverSettings) -> Result<DenseMatrix> {
    let (m, n) = op.shape();
    match strategy {
        InitStrategy::Zero => Ok(DenseMatrix::zeros(m, n)),
        InitStrategy::Given(x) => {
            op.max_violation(x)?;
            Ok(x.clone())
        }
        InitStrategy::Nuclear => Ok(subproblem::solve(&SubproblemSpec::dual_norm_min(op, 1)?, solver)?.x_star),
        InitStrategy::KyFanDual => Ok(subproblem::solve(&SubproblemSpec::dual_norm_min(op, k)?, solver)?.x_star),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DcaConfig {
    /// Relative step threshold: stop when `‖X⁺ − X‖ ≤ eps_step·(1 + ‖X⁺‖)`.
    pub eps_step: f64,
    /// Relative criticality threshold: critical when
    /// `gap ≤ eps_crit·(1 + ‖X‖*)`.
    pub eps_crit: f64,
    /// Cap on loop subproblem solves.
    pub max_outer: usize,
    pub solver: SolverSettings,
    /// Tolerance factor for the confirmation solve of a criticality claim.
    pub crit_tightening: f64,
}

impl Default for DcaConfig {
    fn default() -> Self {
        Self {
            eps_step: 1e-8,
            eps_crit: 1e-8,
            max_outer: 100,
            solver: SolverSettings::default(),
            crit_tightening: 10.0,
        }
    }
}

impl DcaConfig {
    fn validate(&self) -> Result<()> {
        if !(self.eps_step > 0.0 && self.eps_crit > 0.0 && self.crit_tightening >= 1.0) {
            return Err(invalid("dca tolerances must be positive"));
        }
        if self.max_outer == 0 {
            return Err(invalid("max_outer must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DcaState {
    pub x: DenseMatrix,
    /// `1/‖X‖*`, the scaling of the lifted ratio-model variable.
    pub z: f64,
    /// `‖X‖* / ‖X‖_F`
    pub ratio_objective: f64,
    /// `‖X‖* − ‖X‖_F`
    pub difference_objective: f64,
    pub step_norm: f64,
    pub iteration: usize,
}

impl DcaState {
    fn new(x: DenseMatrix, k: usize, step_norm: f64, iteration: usize) -> Result<Self> {
        let dual = kyfan::dual_raw(x.as_nalgebra(), k)?;
        let fro = x.frobenius_norm();
        Ok(Self {
            z: 1.0 / dual,
            ratio_objective: dual / fro,
            difference_objective: dual - fro,
            x,
            step_norm,
            iteration,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Termination {
    Critical,
    SmallStep,
    MaxIterations,
    SubproblemFailure,
}

impl Termination {
    pub fn name(&self) -> &'static str {
        match self {
            Termination::Critical => "critical",
            Termination::SmallStep => "small_step",
            Termination::MaxIterations => "max_iterations",
            Termination::SubproblemFailure => "subproblem_failure",
        }
    }
}

#[derive(Clone, Debug)]
pub struct DcaResult {
    pub x_final: DenseMatrix,
    pub termination: Termination,
    /// Subproblem solves made by the loop (the first zero-anchor solve of
    /// [`InitStrategy::Zero`] included, initialization solves of the other
    /// strategies excluded).
    pub outer_iterations: usize,
    /// Splitting iterations over every solve, initialization and
    /// criticality confirmations included.
    pub inner_iterations: usize,
    /// Model objective at each accepted iterate, starting from `X⁰`.
    pub objective_trace: Vec<f64>,
    pub states: Vec<DcaState>,
    /// Last computed criticality gap.
    pub criticality_gap: f64,
    pub wall_time: Duration,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticalityReport {
    /// `f(0) − f(Y*)` with `f(Y) = ‖X_s + Y‖* − α⟨X_s, Y⟩` over `A(Y) = 0`.
    pub gap: f64,
    pub y_star_norm: f64,
}

/// Gap of the step subproblem at `X_s`, from a solve at the tightened
/// tolerance.
pub fn criticality_gap(
    x_s: &DenseMatrix,
    op: &MeasurementOperator,
    k: usize,
    rule: AlphaRule,
    cfg: &DcaConfig,
) -> Result<CriticalityReport> {
    let alpha = alpha_value(rule, x_s, k)?;
    let spec = SubproblemSpec::new(op, x_s.clone(), alpha, k)?;
    let sol = subproblem::solve(&spec, &cfg.solver.tightened(cfg.crit_tightening))?;
    if !sol.converged {
        return Err(failure(&sol));
    }
    Ok(CriticalityReport {
        gap: step_gap(x_s, alpha, k, &sol)?,
        y_star_norm: (&sol.x_star - x_s).frobenius_norm(),
    })
}

fn step_gap(x_s: &DenseMatrix, alpha: f64, k: usize, sol: &SubproblemSolution) -> Result<f64> {
    let fro = x_s.frobenius_norm();
    Ok(kyfan::dual_raw(x_s.as_nalgebra(), k)? - sol.objective - alpha * fro * fro)
}

fn failure(sol: &SubproblemSolution) -> Error {
    Error::SubproblemFailure {
        iterations: sol.iterations,
        kkt_primal: sol.kkt_primal,
        kkt_dual: sol.kkt_dual,
    }
}

pub fn run(
    model: ModelKind,
    op: &MeasurementOperator,
    k: usize,
    init: &InitStrategy,
    cfg: &DcaConfig,
) -> Result<DcaResult> {
    cfg.validate()?;
    let started = Instant::now();
    let rule = model.alpha_rule();
    let (m, n) = op.shape();
    if k == 0 || k > m.min(n) {
        return Err(invalid(format!("k = {k} outside 1..={}", m.min(n))));
    }
    let b_scale = op.rhs().iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut inner = 0;
    let mut outer = 0;
    let mut warm: Option<WarmStart> = None;

    let x0 = match init {
        InitStrategy::Given(x) => {
            op.max_violation(x)?;
            x.clone()
        }
        InitStrategy::Nuclear | InitStrategy::KyFanDual | InitStrategy::Zero => {
            let init_k = if matches!(init, InitStrategy::Nuclear) { 1 } else { k };
            let sol = subproblem::solve(&SubproblemSpec::dual_norm_min(op, init_k)?, &cfg.solver)?;
            inner += sol.iterations;
            if matches!(init, InitStrategy::Zero) {
                outer += 1;
            }
            if !sol.converged {
                let state = DcaState::new(sol.x_star.clone(), k, 0.0, outer)?;
                return Ok(DcaResult {
                    x_final: sol.x_star,
                    termination: Termination::SubproblemFailure,
                    outer_iterations: outer,
                    inner_iterations: inner,
                    objective_trace: vec![model.objective(&state)],
                    states: vec![state],
                    criticality_gap: f64::NAN,
                    wall_time: started.elapsed(),
                });
            }
            if init_k == k {
                warm = Some(WarmStart::from_solution(&sol));
            }
            sol.x_star
        }
    };

    let mut states = Vec::new();
    let mut gap = f64::NAN;
    let mut x = x0;
    let termination = loop {
        if x.frobenius_norm() <= 1e-14 * b_scale {
            return Err(Error::ZeroIterate(outer));
        }
        if states.is_empty() {
            states.push(DcaState::new(x.clone(), k, 0.0, outer)?);
        }
        if outer >= cfg.max_outer {
            break Termination::MaxIterations;
        }

        let alpha = alpha_value(rule, &x, k)?;
        let spec = SubproblemSpec::new(op, x.clone(), alpha, k)?;
        let mut sol = subproblem::solve_from(&spec, &cfg.solver, warm.as_ref())?;
        outer += 1;
        inner += sol.iterations;
        if !sol.converged {
            debug!("dca step {outer}: subproblem failed ({:.3e}, {:.3e})", sol.kkt_primal, sol.kkt_dual);
            break Termination::SubproblemFailure;
        }
        gap = step_gap(&x, alpha, k, &sol)?;
        let crit_tol = cfg.eps_crit * (1.0 + states.last().map_or(0.0, |s| 1.0 / s.z));
        if gap <= cfg.crit_tightening * crit_tol {
            let tight = cfg.solver.tightened(cfg.crit_tightening);
            let confirm = subproblem::solve_from(&spec, &tight, Some(&WarmStart::from_solution(&sol)))?;
            inner += confirm.iterations;
            if confirm.converged {
                gap = step_gap(&x, alpha, k, &confirm)?;
                sol = confirm;
            }
            if gap <= crit_tol {
                break Termination::Critical;
            }
        }

        let step_norm = (&sol.x_star - &x).frobenius_norm();
        warm = Some(WarmStart::from_solution(&sol));
        x = sol.x_star;
        let state = DcaState::new(x.clone(), k, step_norm, outer)?;
        debug!(
            "dca step {outer}: gap {gap:.3e} step {step_norm:.3e} ratio {:.12} inner {}",
            state.ratio_objective, sol.iterations
        );
        states.push(state);
        if step_norm <= cfg.eps_step * (1.0 + x.frobenius_norm()) {
            break Termination::SmallStep;
        }
    };

    info!(
        "dca {} finished: {} after {outer} outer / {inner} inner iterations",
        model.name(),
        termination.name()
    );
    Ok(DcaResult {
        x_final: x,
        termination,
        outer_iterations: outer,
        inner_iterations: inner,
        objective_trace: states.iter().map(|s| model.objective(s)).collect(),
        states,
        criticality_gap: gap,
        wall_time: started.elapsed(),
    })
}
