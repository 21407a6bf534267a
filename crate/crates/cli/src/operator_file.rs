//! Plain-text measurement problems for `kyfan recover --operator`.
//!
//! ```text
//! # comments and blank lines are ignored
//! m n s
//! <A_1: m·n numbers, row by row>
//! ...
//! <A_s>
//! <b: s numbers>
//! <ground truth M: m·n numbers, row by row>
//! ```
//!
//! Numbers may be split across lines freely; only their order matters.

use std::path::Path;

use anyhow::{bail, Context, Result};
use kyfan_core::lab::{InstanceSpec, PlantedInstance};
use kyfan_core::{DenseMatrix, MeasurementOperator};

pub fn parse(text: &str, rank: usize) -> Result<PlantedInstance> {
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    let mut header = [0usize; 3];
    for slot in header.iter_mut() {
        let tok = tokens.next().context("operator file: missing 'm n s' header")?;
        *slot = tok.parse().with_context(|| format!("operator file: bad header value '{tok}'"))?;
    }
    let [m, n, s] = header;
    if m == 0 || n == 0 || s == 0 {
        bail!("operator file: dimensions must be positive");
    }
    let values = tokens
        .map(|t| t.parse::<f64>().with_context(|| format!("operator file: bad number '{t}'")))
        .collect::<Result<Vec<f64>>>()?;
    let expected = s * m * n + s + m * n;
    if values.len() != expected {
        bail!("operator file: expected {expected} numbers after the header, found {}", values.len());
    }
    let (sensing_vals, rest) = values.split_at(s * m * n);
    let (b, truth) = rest.split_at(s);
    let sensing = sensing_vals
        .chunks(m * n)
        .map(|c| DenseMatrix::new(m, n, c.to_vec()))
        .collect::<kyfan_core::Result<Vec<_>>>()?;
    let op = MeasurementOperator::new(sensing, b.to_vec())?;
    let truth = DenseMatrix::new(m, n, truth.to_vec())?;
    if rank == 0 || rank > m.min(n) {
        bail!("rank r = {rank} is invalid for a {m}x{n} operator");
    }
    Ok(PlantedInstance {
        truth,
        op,
        spec: InstanceSpec { m, n, r: rank, s, seed: 0 },
    })
}

pub fn load(path: &Path, rank: usize) -> Result<PlantedInstance> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text, rank).with_context(|| format!("parsing {}", path.display()))
}
