//! Planted-instance generation, single trials and Monte Carlo sweeps.
//!
//! # Random streams
//!
//! Every instance is drawn from a ChaCha20 stream whose 256-bit key holds
//! the 64-bit instance seed in its first eight bytes (little endian) and
//! zeros elsewhere. Uniforms take the top 53 bits of `next_u64`, scaled by
//! `2^-53`. Normals use Box–Muller on consecutive uniform pairs `(u1, u2)`:
//! `sqrt(-2 ln(1 - u1)) · cos(2π u2)` first, then the matching `sin` value.
//!
//! Draw order for an instance: the `m×r` factor `M_L` row by row, the
//! `n×r` factor `M_R` row by row, then `A_1, ..., A_s`, each row by row and
//! scaled by `1/sqrt(s)`. If the sensing family is degenerate, it is redrawn
//! from the stream seeded with `seed + attempt` (factors are kept).
//!
//! # Seed splitting
//!
//! Trial `t` of grid cell `c` uses
//! `mix(mix(mix(master) ^ c) ^ t)`, where `mix` is the SplitMix64 finalizer
//! ([`mix64`]). All methods of a trial share one instance.

use std::f64::consts::PI;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::dca::{self, AlphaRule, DcaConfig, InitStrategy, ModelKind, Termination};
use crate::error::{invalid, Error, Result};
use crate::exec::{self, Parallelism};
use crate::linalg::{singular_values_of, DenseMatrix, MeasurementOperator, OperatorOptions};
use crate::subproblem::{self, SubproblemSpec};

const SENSING_ATTEMPTS: u64 = 8;

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn trial_seed(master: u64, cell: u64, trial: u64) -> u64 {
    mix64(mix64(mix64(master) ^ cell) ^ trial)
}

/// Gaussian sampler over a ChaCha20 stream.
pub struct NormalStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        Self {
            rng: ChaCha20Rng::from_seed(key),
            spare: None,
        }
    }

    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * (1.0 - u1).ln()).sqrt();
        let (sin, cos) = (2.0 * PI * u2).sin_cos();
        self.spare = Some(radius * sin);
        radius * cos
    }

    /// `rows × cols` matrix filled row by row.
    pub fn matrix(&mut self, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                out[(i, j)] = self.normal() * scale;
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct InstanceSpec {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub s: usize,
    pub seed: u64,
}

/// Degrees of freedom `r(m + n − r)` of rank-r `m×n` matrices.
pub fn degrees_of_freedom(m: usize, n: usize, r: usize) -> usize {
    r * (m + n - r)
}

/// `ceil(percent/100 · d_r)` in exact integer arithmetic.
pub fn measurements_for(d_r: usize, percent: usize) -> usize {
    (d_r * percent).div_ceil(100)
}

impl InstanceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(invalid("matrix dimensions must be positive"));
        }
        if self.r == 0 || self.r > self.m.min(self.n) {
            return Err(invalid(format!("rank {} outside 1..={}", self.r, self.m.min(self.n))));
        }
        if self.s == 0 || self.s > self.m * self.n {
            return Err(invalid(format!("measurement count {} outside 1..={}", self.s, self.m * self.n)));
        }
        Ok(())
    }

    pub fn d_r(&self) -> usize {
        degrees_of_freedom(self.m, self.n, self.r)
    }
}

#[derive(Clone, Debug)]
pub struct PlantedInstance {
    pub truth: DenseMatrix,
    pub op: MeasurementOperator,
    pub spec: InstanceSpec,
}

pub fn plant(spec: InstanceSpec) -> Result<PlantedInstance> {
    spec.validate()?;
    let InstanceSpec { m, n, r, s, seed } = spec;
    let mut stream = NormalStream::new(seed);
    let left = stream.matrix(m, r, 1.0);
    let right = stream.matrix(n, r, 1.0);
    let truth = &left * right.transpose();

    let sigma = singular_values_of(&truth)?;
    if !(sigma[r - 1] >= 1e-10 * sigma[0]) {
        return Err(Error::DegenerateOperator(format!("planted matrix has rank below {r}")));
    }

    let scale = 1.0 / (s as f64).sqrt();
    let flat = DVector::from_column_slice(truth.as_slice());
    let mut last_err = None;
    for attempt in 0..SENSING_ATTEMPTS {
        if attempt > 0 {
            stream = NormalStream::new(seed.wrapping_add(attempt));
        }
        let mut stacked = DMatrix::zeros(s, m * n);
        for i in 0..s {
            let a = stream.matrix(m, n, scale);
            for (j, &x) in a.as_slice().iter().enumerate() {
                stacked[(i, j)] = x;
            }
        }
        let b: Vec<f64> = (&stacked * &flat).iter().copied().collect();
        match MeasurementOperator::from_stacked(m, n, stacked, b, OperatorOptions::default()) {
            Ok(op) => {
                return Ok(PlantedInstance {
                    truth: DenseMatrix::from_nalgebra(truth)?,
                    op,
                    spec,
                })
            }
            Err(err @ Error::DegenerateOperator(_)) => {
                warn!("seed {seed}: sensing attempt {attempt} degenerate ({err}); redrawing");
                last_err = Some(err);
            }
            Err(err) => return Err(err),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::DegenerateOperator("no sensing attempt succeeded".into())))
}

pub fn relative_error(x: &DenseMatrix, truth: &DenseMatrix) -> Result<f64> {
    let denom = truth.frobenius_norm();
    if denom == 0.0 {
        return Err(invalid("relative error against a zero matrix"));
    }
    if x.shape() != truth.shape() {
        return Err(crate::error::mismatch(format!("{:?}", truth.shape()), format!("{:?}", x.shape())));
    }
    Ok((x - truth).frobenius_norm() / denom)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Nuclear,
    K2FromNuclear,
    K2FromZero,
    K2Mid,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Nuclear, Method::K2FromNuclear, Method::K2FromZero, Method::K2Mid];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Nuclear => "nuclear",
            Method::K2FromNuclear => "k2-nuclear",
            Method::K2FromZero => "k2-zero",
            Method::K2Mid => "k2-mid",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == name.trim())
            .ok_or_else(|| invalid(format!("unknown method '{name}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialConfig {
    /// Recovery threshold on the relative error.
    pub eps: f64,
    /// Working `k` of the K2 methods; `None` uses the planted rank.
    pub k: Option<usize>,
    /// Model of K2FromNuclear and K2FromZero.
    pub model: ModelKind,
    pub dca: DcaConfig,
    /// When false, wall times are reported as zero so outputs are
    /// reproducible byte for byte.
    pub record_timing: bool,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            k: None,
            model: ModelKind::Difference,
            dca: DcaConfig::default(),
            record_timing: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub method: Method,
    pub spec: InstanceSpec,
    pub k: usize,
    pub model: ModelKind,
    pub recovered: bool,
    pub relative_error: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub wall_time_s: f64,
    /// Termination name, `solved` for the single-solve baseline, or `error`.
    pub termination: String,
    /// Final iterate; `None` when the run errored.
    pub x_final: Option<DenseMatrix>,
}

impl TrialRecord {
    /// Model the method actually ran.
    fn method_model(method: Method, cfg: &TrialConfig) -> ModelKind {
        match method {
            Method::K2Mid => ModelKind::GeneralizedAlpha(AlphaRule::Mid),
            _ => cfg.model,
        }
    }
}

pub fn run_trial(inst: &PlantedInstance, method: Method, cfg: &TrialConfig) -> TrialRecord {
    let started = std::time::Instant::now();
    let k = cfg.k.unwrap_or(inst.spec.r);
    let model = TrialRecord::method_model(method, cfg);
    let outcome: Result<(DenseMatrix, usize, usize, String)> = (|| match method {
        Method::Nuclear => {
            let sol = subproblem::solve(&SubproblemSpec::dual_norm_min(&inst.op, 1)?, &cfg.dca.solver)?;
            let term = if sol.converged { "solved" } else { Termination::SubproblemFailure.name() };
            Ok((sol.x_star, 1, sol.iterations, term.to_string()))
        }
        _ => {
            let init = match method {
                Method::K2FromNuclear => InitStrategy::Nuclear,
                _ => InitStrategy::Zero,
            };
            let res = dca::run(model, &inst.op, k, &init, &cfg.dca)?;
            Ok((res.x_final, res.outer_iterations, res.inner_iterations, res.termination.name().to_string()))
        }
    })();
    let wall = if cfg.record_timing { started.elapsed().as_secs_f64() } else { 0.0 };
    match outcome.and_then(|(x, outer, inner, term)| Ok((relative_error(&x, &inst.truth)?, x, outer, inner, term))) {
        Ok((err, x, outer, inner, termination)) => TrialRecord {
            method,
            spec: inst.spec,
            k,
            model,
            recovered: err <= cfg.eps,
            relative_error: err,
            outer_iterations: outer,
            inner_iterations: inner,
            wall_time_s: wall,
            termination,
            x_final: Some(x),
        },
        Err(e) => {
            warn!("trial {:?} with {} failed: {e}", inst.spec, method.name());
            TrialRecord {
                method,
                spec: inst.spec,
                k,
                model,
                recovered: false,
                relative_error: 1.0,
                outer_iterations: 0,
                inner_iterations: 0,
                wall_time_s: wall,
                termination: "error".to_string(),
                x_final: None,
            }
        }
    }
}

/// Grid of `(r, s)` cells over fixed `m, n`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPlan {
    pub m: usize,
    pub n: usize,
    pub cells: Vec<(usize, usize)>,
    /// Trials per cell.
    pub trials: usize,
    pub methods: Vec<Method>,
    pub master_seed: u64,
}

impl SweepPlan {
    /// Cells `(r, s)` for each `s` in `s_values`.
    pub fn over_s(m: usize, n: usize, r: usize, s_values: &[usize], trials: usize, methods: Vec<Method>, master_seed: u64) -> Self {
        Self {
            m,
            n,
            cells: s_values.iter().map(|&s| (r, s)).collect(),
            trials,
            methods,
            master_seed,
        }
    }

    /// Cells `(r, ceil(percent/100 · d_r))` for each rank.
    pub fn over_rank(m: usize, n: usize, ranks: &[usize], percent: usize, trials: usize, methods: Vec<Method>, master_seed: u64) -> Self {
        Self {
            m,
            n,
            cells: ranks.iter().map(|&r| (r, measurements_for(degrees_of_freedom(m, n, r), percent))).collect(),
            trials,
            methods,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trial count K must be at least 1"));
        }
        if self.cells.is_empty() || self.methods.is_empty() {
            return Err(invalid("sweep needs at least one cell and one method"));
        }
        for &(r, s) in &self.cells {
            InstanceSpec { m: self.m, n: self.n, r, s, seed: 0 }.validate()?;
        }
        Ok(())
    }

    pub fn instance(&self, cell: usize, trial: usize) -> InstanceSpec {
        let (r, s) = self.cells[cell];
        InstanceSpec {
            m: self.m,
            n: self.n,
            r,
            s,
            seed: trial_seed(self.master_seed, cell as u64, trial as u64),
        }
    }
}

/// Aggregate of one method on one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub method: Method,
    pub model: ModelKind,
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub k: usize,
    pub s: usize,
    pub d_r: usize,
    pub trials: usize,
    pub recovered_count: usize,
    pub recovery_prob: f64,
    pub mean_rel_err: f64,
    pub mean_outer_iters_all: f64,
    /// NaN when no trial recovered.
    pub mean_outer_iters_recovered: f64,
    pub mean_inner_iters: f64,
    pub mean_wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub plan: SweepPlan,
    /// Method-major, then cell order.
    pub cells: Vec<CellSummary>,
    /// Cell-major, then trial, then method order.
    pub trials: Vec<TrialRecord>,
}

impl SweepReport {
    pub fn summaries_for(&self, method: Method) -> impl Iterator<Item = &CellSummary> {
        self.cells.iter().filter(move |c| c.method == method)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

fn summarize(plan: &SweepPlan, cell: usize, method: Method, records: &[&TrialRecord], cfg: &TrialConfig) -> CellSummary {
    let (r, s) = plan.cells[cell];
    let recovered: Vec<_> = records.iter().filter(|t| t.recovered).collect();
    CellSummary {
        method,
        model: TrialRecord::method_model(method, cfg),
        m: plan.m,
        n: plan.n,
        r,
        k: cfg.k.unwrap_or(r),
        s,
        d_r: degrees_of_freedom(plan.m, plan.n, r),
        trials: records.len(),
        recovered_count: recovered.len(),
        recovery_prob: recovered.len() as f64 / records.len() as f64,
        mean_rel_err: mean(records.iter().map(|t| t.relative_error)),
        mean_outer_iters_all: mean(records.iter().map(|t| t.outer_iterations as f64)),
        mean_outer_iters_recovered: mean(recovered.iter().map(|t| t.outer_iterations as f64)),
        mean_inner_iters: mean(records.iter().map(|t| t.inner_iterations as f64)),
        mean_wall_time_s: mean(records.iter().map(|t| t.wall_time_s)),
    }
}

/// Runs every method on `plan.trials` instances per cell. The report does
/// not depend on `parallelism`.
pub fn run_sweep(plan: &SweepPlan, cfg: &TrialConfig, parallelism: Parallelism) -> Result<SweepReport> {
    plan.validate()?;
    let tasks = plan.cells.len() * plan.trials;
    let per_task: Vec<Vec<TrialRecord>> = exec::map_indexed(tasks, parallelism, |task| {
        let (cell, trial) = (task / plan.trials, task % plan.trials);
        let spec = plan.instance(cell, trial);
        match plant(spec) {
            Ok(inst) => plan.methods.iter().map(|&method| run_trial(&inst, method, cfg)).collect(),
            Err(e) => {
                warn!("instance {spec:?} could not be generated: {e}");
                plan.methods
                    .iter()
                    .map(|&method| TrialRecord {
                        method,
                        spec,
                        k: cfg.k.unwrap_or(spec.r),
                        model: TrialRecord::method_model(method, cfg),
                        recovered: false,
                        relative_error: 1.0,
                        outer_iterations: 0,
                        inner_iterations: 0,
                        wall_time_s: 0.0,
                        termination: "error".to_string(),
                        x_final: None,
                    })
                    .collect()
            }
        }
    });
    let trials: Vec<TrialRecord> = per_task.into_iter().flatten().collect();

    let mut cells = Vec::with_capacity(plan.methods.len() * plan.cells.len());
    for &method in &plan.methods {
        for cell in 0..plan.cells.len() {
            let records: Vec<&TrialRecord> = trials[cell * plan.trials * plan.methods.len()..]
                .iter()
                .take(plan.trials * plan.methods.len())
                .filter(|t| t.method == method)
                .collect();
            cells.push(summarize(plan, cell, method, &records, cfg));
        }
    }
    Ok(SweepReport {
        plan: plan.clone(),
        cells,
        trials,
    })
}
