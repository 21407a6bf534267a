//! Self-certification: randomized property suites over every module, each
//! reporting its worst residual against a fixed tolerance.

use nalgebra::DMatrix;

use crate::dca::{self, alpha_value, AlphaRule, DcaConfig, InitStrategy, ModelKind};
use crate::error::{invalid, Result};
use crate::kyfan;
use crate::lab::{self, InstanceSpec, NormalStream};
use crate::linalg::{DenseMatrix, MeasurementOperator};
use crate::subproblem::{self, SolverSettings, SubproblemSpec};

/// Deliberate defects for checking that the suites catch them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Flip the sign of the ball projection inside the dual-norm prox.
    ProxSign,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertifyConfig {
    /// Base sample count; expensive suites use a fraction of it.
    pub samples: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            seed: 1,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub cases: usize,
    /// Largest residual divided by its tolerance; the suite passes when
    /// this is at most 1.
    pub worst_ratio: f64,
    pub worst_residual: f64,
    pub passed: bool,
}

struct Tracker {
    name: &'static str,
    cases: usize,
    worst_ratio: f64,
    worst_residual: f64,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            cases: 0,
            worst_ratio: 0.0,
            worst_residual: 0.0,
        }
    }

    fn case(&mut self) {
        self.cases += 1;
    }

    /// Records `residual ≤ tol`; NaN counts as failure.
    fn check(&mut self, residual: f64, tol: f64) {
        let ratio = if residual.is_nan() { f64::INFINITY } else { residual.max(0.0) / tol };
        if ratio >= self.worst_ratio {
            self.worst_ratio = ratio;
            self.worst_residual = residual;
        }
    }

    fn finish(self) -> SuiteOutcome {
        SuiteOutcome {
            name: self.name,
            cases: self.cases,
            worst_ratio: self.worst_ratio,
            worst_residual: self.worst_residual,
            passed: self.cases > 0 && self.worst_ratio <= 1.0,
        }
    }
}

fn dims(stream: &mut NormalStream, max: usize) -> (usize, usize) {
    let pick = |s: &mut NormalStream| 1 + (s.uniform() * max as f64) as usize;
    (pick(stream), pick(stream))
}

fn low_rank(stream: &mut NormalStream, m: usize, n: usize, rank: usize) -> DMatrix<f64> {
    stream.matrix(m, rank, 1.0) * stream.matrix(n, rank, 1.0).transpose()
}

fn norm_sandwich(cfg: &CertifyConfig, t: &mut Tracker) -> Result<()> {
    let mut stream = NormalStream::new(lab::mix64(cfg.seed ^ 1));
    for _ in 0..cfg.samples {
        let (m, n) = dims(&mut stream, 12);
        let x = stream.matrix(m, n, 1.0);
        let fro = x.norm();
        for k in 1..=m.min(n) {
            t.case();
            let primal = kyfan::kyfan_raw(&x, k)?;
            let dual = kyfan::dual_raw(&x, k)?;
            t.check(primal - fro, 1e-10 * (1.0 + fro));
            t.check(fro - dual, 1e-10 * (1.0 + fro));
        }
        let k = 1 + (stream.uniform() * m.min(n) as f64) as usize;
        let rank = 1 + (stream.uniform() * k as f64) as usize;
        let y = low_rank(&mut stream, m, n, rank);
        let fro = y.norm();
        t.case();
        t.check((kyfan::kyfan_raw(&y, k)? - fro).abs(), 1e-8 * fro);
        t.check((kyfan::dual_raw(&y, k)? - fro).abs(), 1e-8 * fro);
    }
    Ok(())
}

fn dual_certificates(cfg: &CertifyConfig, t: &mut Tracker) -> Result<()> {
    let mut stream = NormalStream::new(lab::mix64(cfg.seed ^ 2));
    for _ in 0..cfg.samples {
        let (m, n) = dims(&mut stream, 10);
        let k = 1 + (stream.uniform() * m.min(n) as f64) as usize;
        let v: Vec<f64> = (0..m * n).map(|_| stream.normal()).collect();
        let vc = kyfan::ksupport(&v, k.min(v.len()))?;
        t.case();
        t.check(vc.gap(), 1e-8 * (1.0 + vc.value));
        t.check(kyfan::topk_l2(&vc.witness, k)? - 1.0, 1e-10);

        let x = DenseMatrix::from_nalgebra(stream.matrix(m, n, 1.0))?;
        let mc = kyfan::dual_kyfan_2k(&x, k)?;
        t.case();
        t.check(mc.gap(), 1e-8 * (1.0 + mc.value));
        t.check(kyfan::kyfan_2k(&mc.witness, k)? - 1.0, 1e-10);
    }
    Ok(())
}

fn prox(cfg: &CertifyConfig, t: &mut Tracker) -> Result<()> {
    let mut stream = NormalStream::new(lab::mix64(cfg.seed ^ 3));
    for _ in 0..cfg.samples {
        let (m, n) = dims(&mut stream, 10);
        let k = 1 + (stream.uniform() * m.min(n) as f64) as usize;
        let lambda = 0.05 + 3.0 * stream.uniform();
        let v = DenseMatrix::from_nalgebra(stream.matrix(m, n, 1.0))?;
        let z = kyfan::prox_dual_norm(&v, lambda, k)?;
        let mut p = &v - &z;
        let z = match cfg.fault {
            Some(Fault::ProxSign) => {
                p = &p * -1.0;
                &v - &p
            }
            None => z,
        };
        t.case();
        let scale = 1.0 + v.frobenius_norm();
        // P = V − Z lies in the λ-ball of the primal norm ...
        t.check(kyfan::kyfan_2k(&p, k)? - lambda, 1e-8 * scale);
        // ... and is aligned with Z: ⟨P, Z⟩ = λ‖Z‖*.
        let dual = kyfan::dual_kyfan_2k(&z, k)?.value;
        t.check((p.inner(&z)? - lambda * dual).abs(), 1e-8 * scale * scale);
        // Moreau: Z + P reproduces V.
        t.check((&(&z + &p) - &v).frobenius_norm(), 1e-12 * scale);
    }
    Ok(())
}

fn random_operator(stream: &mut NormalStream, m: usize, n: usize, s: usize) -> Result<MeasurementOperator> {
    let sensing = (0..s)
        .map(|_| DenseMatrix::from_nalgebra(stream.matrix(m, n, 1.0)))
        .collect::<Result<Vec<_>>>()?;
    let b = (0..s).map(|_| stream.normal()).collect();
    MeasurementOperator::new(sensing, b)
}

fn subproblem_kkt(cfg: &CertifyConfig, t: &mut Tracker) -> Result<()> {
    let mut stream = NormalStream::new(lab::mix64(cfg.seed ^ 4));
    let settings = SolverSettings::default();
    for _ in 0..cfg.samples.div_ceil(20) {
        let (m, n) = (2 + (stream.uniform() * 6.0) as usize, 2 + (stream.uniform() * 6.0) as usize);
        let s = 1 + (stream.uniform() * (m * n - 1) as f64) as usize;
        let k = 1 + (stream.uniform() * m.min(n) as f64) as usize;
        let op = random_operator(&mut stream, m, n, s)?;
        let anchor = op.project_affine(&DenseMatrix::from_nalgebra(stream.matrix(m, n, 1.0))?)?;
        let alpha = alpha_value(AlphaRule::Difference, &anchor, k)?;
        let spec = SubproblemSpec::new(&op, anchor, alpha, k)?;
        let sol = subproblem::solve(&spec, &settings)?;
        let (primal, dual) = subproblem::kkt_residual(&sol, &spec)?;
        t.case();
        t.check(primal, settings.eps_primal);
        t.check(dual, settings.eps_dual);
        for _ in 0..10 {
            let z = op.project_affine(&DenseMatrix::from_nalgebra(stream.matrix(m, n, 1.0))?)?;
            let value = spec.objective(&z)?;
            t.check(sol.objective - value, 1e-6 * (1.0 + value.abs()));
        }
    }
    Ok(())
}

fn dca_structure(cfg: &CertifyConfig, t: &mut Tracker) -> Result<()> {
    let dca_cfg = DcaConfig::default();
    for i in 0..cfg.samples.div_ceil(40) as u64 {
        let seed = lab::trial_seed(cfg.seed, 5, i);
        let s = 10 + (seed % 15) as usize;
        let inst = lab::plant(InstanceSpec { m: 6, n: 5, r: 1, s, seed })?;
        for model in [ModelKind::Ratio, ModelKind::Difference] {
            let res = dca::run(model, &inst.op, 1, &InitStrategy::Zero, &dca_cfg)?;
            t.case();
            for pair in res.objective_trace.windows(2) {
                t.check(pair[1] - pair[0], 1e-8);
            }
            for state in &res.states {
                t.check(1.0 - state.ratio_objective, 1e-10);
                t.check(-state.difference_objective, 1e-10);
            }
        }
        let fixed = dca::run(ModelKind::Difference, &inst.op, 1, &InitStrategy::Given(inst.truth.clone()), &dca_cfg)?;
        t.case();
        t.check((&fixed.x_final - &inst.truth).frobenius_norm(), 1e-12);
    }
    Ok(())
}

fn alpha_sandwich(cfg: &CertifyConfig, t: &mut Tracker) -> Result<()> {
    let mut stream = NormalStream::new(lab::mix64(cfg.seed ^ 6));
    for _ in 0..cfg.samples {
        let (m, n) = dims(&mut stream, 10);
        let k = 1 + (stream.uniform() * m.min(n) as f64) as usize;
        let x = DenseMatrix::from_nalgebra(stream.matrix(m, n, 1.0))?;
        let d = alpha_value(AlphaRule::Difference, &x, k)?;
        let mid = alpha_value(AlphaRule::Mid, &x, k)?;
        let r = alpha_value(AlphaRule::Ratio, &x, k)?;
        t.case();
        t.check(d - mid, 1e-12 * (1.0 + d));
        t.check(mid - r, 1e-12 * (1.0 + mid));
    }
    Ok(())
}

fn lab_determinism(cfg: &CertifyConfig, t: &mut Tracker) -> Result<()> {
    for i in 0..cfg.samples.div_ceil(20) as u64 {
        let spec = InstanceSpec {
            m: 6,
            n: 4,
            r: 2,
            s: 12,
            seed: lab::trial_seed(cfg.seed, 7, i),
        };
        let a = lab::plant(spec)?;
        let b = lab::plant(spec)?;
        t.case();
        t.check(if a.truth == b.truth && a.op.rhs() == b.op.rhs() { 0.0 } else { 1.0 }, 0.5);
        t.check(a.op.max_violation(&a.truth)?, f64::MIN_POSITIVE);
    }
    Ok(())
}

/// Runs every suite. Errors only on an invalid configuration.
pub fn run_suites(cfg: &CertifyConfig) -> Result<Vec<SuiteOutcome>> {
    if cfg.samples == 0 {
        return Err(invalid("certify needs at least one sample"));
    }
    type Suite = fn(&CertifyConfig, &mut Tracker) -> Result<()>;
    let suites: [(&'static str, Suite); 7] = [
        ("norm-sandwich", norm_sandwich),
        ("dual-certificate", dual_certificates),
        ("prox", prox),
        ("subproblem-kkt", subproblem_kkt),
        ("dca-structure", dca_structure),
        ("alpha-sandwich", alpha_sandwich),
        ("lab-determinism", lab_determinism),
    ];
    Ok(suites
        .iter()
        .map(|(name, suite)| {
            let mut tracker = Tracker::new(name);
            if let Err(err) = suite(cfg, &mut tracker) {
                log::error!("suite {name} aborted: {err}");
                tracker.worst_ratio = f64::INFINITY;
                tracker.worst_residual = f64::NAN;
            }
            tracker.finish()
        })
        .collect())
}
