//! Flat `key = value` run configuration. Later sources override earlier
//! ones: built-in defaults, then the config file, then command-line flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use kyfan_core::certify::Fault;
use kyfan_core::dca::{DcaConfig, ModelKind};
use kyfan_core::lab::{Method, TrialConfig};
use kyfan_core::subproblem::SolverSettings;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    /// Measurement count for `recover`.
    pub s: usize,
    /// Grid for `sweep`.
    pub s_values: Vec<usize>,
    /// Trials per sweep cell.
    pub trials: usize,
    pub methods: Vec<Method>,
    pub model: ModelKind,
    /// Working k of the K2 methods; `None` means the planted rank.
    pub k: Option<usize>,
    pub eps: f64,
    pub eps_step: f64,
    pub eps_crit: f64,
    pub max_outer: usize,
    pub eps_primal: f64,
    pub eps_dual: f64,
    pub max_inner: usize,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub record_timing: bool,
    /// Operator file for `recover`, replacing the planted instance.
    pub operator: Option<PathBuf>,
    pub samples: usize,
    pub fault: Option<Fault>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            m: 20,
            n: 16,
            r: 2,
            s: 135,
            s_values: vec![75, 95, 115, 135, 320],
            trials: 25,
            methods: vec![Method::Nuclear, Method::K2FromNuclear, Method::K2FromZero],
            model: ModelKind::Difference,
            k: None,
            eps: 1e-6,
            eps_step: 1e-8,
            eps_crit: 1e-8,
            max_outer: 100,
            eps_primal: 1e-9,
            eps_dual: 1e-6,
            max_inner: 20_000,
            seed: 2024,
            workers: 0,
            out: PathBuf::from("out"),
            record_timing: true,
            operator: None,
            samples: 200,
            fault: None,
        }
    }
}

fn parse_list<T>(value: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let items = value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(item)
        .collect::<Result<Vec<_>>>()?;
    if items.is_empty() {
        bail!("empty list");
    }
    Ok(items)
}

fn parse_num<T: std::str::FromStr>(value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| anyhow!("{e}"))
}

pub fn parse_model(value: &str) -> Result<ModelKind> {
    match value.trim() {
        "ratio" => Ok(ModelKind::Ratio),
        "difference" => Ok(ModelKind::Difference),
        other => bail!("unknown model '{other}' (expected ratio or difference)"),
    }
}

pub fn parse_methods(value: &str) -> Result<Vec<Method>> {
    parse_list(value, |v| Method::parse(v).map_err(|e| anyhow!("{e}")))
}

fn parse_fault(value: &str) -> Result<Option<Fault>> {
    match value.trim() {
        "none" | "" => Ok(None),
        "prox-sign" => Ok(Some(Fault::ProxSign)),
        other => bail!("unknown fault '{other}'"),
    }
}

fn parse_bool(value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => bail!("expected a boolean, got '{other}'"),
    }
}

fn fmt_list<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let ctx = || format!("invalid value '{value}' for '{key}'");
        match key {
            "m" => self.m = parse_num(value).with_context(ctx)?,
            "n" => self.n = parse_num(value).with_context(ctx)?,
            "r" => self.r = parse_num(value).with_context(ctx)?,
            "s" => self.s = parse_num(value).with_context(ctx)?,
            "s_values" => self.s_values = parse_list(value, parse_num).with_context(ctx)?,
            "trials" => self.trials = parse_num(value).with_context(ctx)?,
            "methods" => self.methods = parse_methods(value).with_context(ctx)?,
            "model" => self.model = parse_model(value)?,
            "k" => {
                self.k = match value.trim() {
                    "auto" => None,
                    v => Some(parse_num(v).with_context(ctx)?),
                }
            }
            "eps" => self.eps = parse_num(value).with_context(ctx)?,
            "eps_step" => self.eps_step = parse_num(value).with_context(ctx)?,
            "eps_crit" => self.eps_crit = parse_num(value).with_context(ctx)?,
            "max_outer" => self.max_outer = parse_num(value).with_context(ctx)?,
            "eps_primal" => self.eps_primal = parse_num(value).with_context(ctx)?,
            "eps_dual" => self.eps_dual = parse_num(value).with_context(ctx)?,
            "max_inner" => self.max_inner = parse_num(value).with_context(ctx)?,
            "seed" => self.seed = parse_num(value).with_context(ctx)?,
            "workers" => self.workers = parse_num(value).with_context(ctx)?,
            "out" => self.out = PathBuf::from(value.trim()),
            "record_timing" => self.record_timing = parse_bool(value).with_context(ctx)?,
            "operator" => {
                self.operator = match value.trim() {
                    "" | "none" => None,
                    v => Some(PathBuf::from(v)),
                }
            }
            "samples" => self.samples = parse_num(value).with_context(ctx)?,
            "fault" => self.fault = parse_fault(value)?,
            other => bail!("unknown config key '{other}'"),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected key = value", lineno + 1))?;
            self.set(key.trim(), value)
                .with_context(|| format!("{origin}:{}", lineno + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eps", self.eps),
            ("eps_step", self.eps_step),
            ("eps_crit", self.eps_crit),
            ("eps_primal", self.eps_primal),
            ("eps_dual", self.eps_dual),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                bail!("{name} must be positive, got {v}");
            }
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            bail!("iteration caps must be positive");
        }
        if self.m == 0 || self.n == 0 || self.r == 0 || self.r > self.m.min(self.n) {
            bail!("need 1 <= r <= min(m, n), got m={} n={} r={}", self.m, self.n, self.r);
        }
        if let Some(k) = self.k {
            if k == 0 || k > self.m.min(self.n) {
                bail!("k must be in 1..={}", self.m.min(self.n));
            }
        }
        if self.methods.is_empty() {
            bail!("no methods selected");
        }
        Ok(())
    }

    pub fn trial_config(&self) -> TrialConfig {
        TrialConfig {
            eps: self.eps,
            k: self.k,
            model: self.model,
            dca: DcaConfig {
                eps_step: self.eps_step,
                eps_crit: self.eps_crit,
                max_outer: self.max_outer,
                solver: SolverSettings {
                    eps_primal: self.eps_primal,
                    eps_dual: self.eps_dual,
                    max_iter: self.max_inner,
                    ..SolverSettings::default()
                },
                ..DcaConfig::default()
            },
            record_timing: self.record_timing,
        }
    }

    /// Every key with its effective value, in the config file format.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line("m", self.m.to_string());
        line("n", self.n.to_string());
        line("r", self.r.to_string());
        line("s", self.s.to_string());
        line("s_values", fmt_list(&self.s_values, |s| s.to_string()));
        line("trials", self.trials.to_string());
        line("methods", fmt_list(&self.methods, |m| m.name().to_string()));
        line("model", self.model.name().to_string());
        line("k", self.k.map_or("auto".to_string(), |k| k.to_string()));
        line("eps", format!("{:e}", self.eps));
        line("eps_step", format!("{:e}", self.eps_step));
        line("eps_crit", format!("{:e}", self.eps_crit));
        line("max_outer", self.max_outer.to_string());
        line("eps_primal", format!("{:e}", self.eps_primal));
        line("eps_dual", format!("{:e}", self.eps_dual));
        line("max_inner", self.max_inner.to_string());
        line("seed", self.seed.to_string());
        line("workers", self.workers.to_string());
        line("out", self.out.display().to_string());
        line("record_timing", self.record_timing.to_string());
        line(
            "operator",
            self.operator.as_ref().map_or("none".to_string(), |p| p.display().to_string()),
        );
        line("samples", self.samples.to_string());
        line(
            "fault",
            match self.fault {
                None => "none".to_string(),
                Some(Fault::ProxSign) => "prox-sign".to_string(),
            },
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("methods", "nuclear,k2-mid").unwrap();
        cfg.set("k", "3").unwrap();
        cfg.set("fault", "prox-sign").unwrap();
        cfg.set("model", "ratio").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.dump(), "dump").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_malformed_lines() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_text("m 20", "x").is_err());
        assert!(cfg.apply_text("bogus = 1", "x").is_err());
        assert!(cfg.apply_text("m = twenty", "x").is_err());
        assert!(cfg.apply_text("model = both", "x").is_err());
        cfg.apply_text("# comment\n\nm = 12 # trailing\n", "x").unwrap();
        assert_eq!(cfg.m, 12);
    }

    #[test]
    fn validation() {
        let mut cfg = RunConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.eps = 0.0;
        assert!(cfg.validate().is_err());
        let cfg = RunConfig { r: 17, ..RunConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
