//! AU co-occurrence prior and class-balance weights from binary label statistics.
//!
//! For AUs `i` and `j` the relationship coefficient is
//!
//! ```text
//! P_ij = ( P(a_i = 1 | a_j = 1) + P(a_i = 0 | a_j = 0) ) / 2
//! A_ij = | (P_ij - 0.5) * 2 |
//! ```
//!
//! so `P_ij = 0.5` (AU `j` tells nothing about AU `i`) gives no edge, and
//! perfect agreement or perfect disagreement gives a full-strength edge.
//! Conditionals are estimated by counting with additive smoothing `s`:
//! `P(a_i = 1 | a_j = 1) = (n11 + s) / (n_j1 + 2s)`.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_SMOOTHING: f64 = 1.0;

/// Conditional co-occurrence coefficients and the initial adjacency derived from them.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorMatrix {
    n: usize,
    p_cond: Tensor,
    a_init: Tensor,
    occurrence: Vec<f64>,
}

/// Maps a coefficient to an edge strength, `|(p - 0.5) * 2|`.
pub fn edge_strength(p: f64) -> f64 {
    ((p - 0.5) * 2.0).abs()
}

fn validate(labels: &[Vec<u8>], smoothing: f64) -> Result<usize> {
    let first = labels
        .first()
        .ok_or_else(|| Error::Input("empty label set".into()))?;
    let n = first.len();
    if n == 0 {
        return Err(Error::Input("label rows have no AU columns".into()));
    }
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::Input(format!("smoothing must be >= 0, got {smoothing}")));
    }
    for (r, row) in labels.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Input(format!("row {r} has {} labels, expected {n}", row.len())));
        }
        if let Some(v) = row.iter().find(|&&v| v > 1) {
            return Err(Error::Input(format!("row {r} has non-binary label {v}")));
        }
    }
    Ok(n)
}

/// Positive counts per AU and co-positive counts per pair.
fn counts(labels: &[Vec<u8>], n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut pos = vec![0usize; n];
    let mut both = vec![0usize; n * n];
    for row in labels {
        let active: Vec<usize> = (0..n).filter(|&i| row[i] == 1).collect();
        for &i in &active {
            pos[i] += 1;
            for &j in &active {
                both[i * n + j] += 1;
            }
        }
    }
    (pos, both)
}

fn smoothed_occurrence(pos: &[usize], total: usize, smoothing: f64) -> Result<Vec<f64>> {
    pos.iter()
        .enumerate()
        .map(|(i, &p)| {
            if smoothing == 0.0 && p == 0 {
                return Err(Error::DegenerateConditional { au: i, kind: "positive" });
            }
            Ok((p as f64 + smoothing) / (total as f64 + 2.0 * smoothing))
        })
        .collect()
}

impl PriorMatrix {
    /// Estimates the prior from an `N x n` binary label matrix.
    pub fn from_labels(labels: &[Vec<u8>], smoothing: f64) -> Result<Self> {
        let n = validate(labels, smoothing)?;
        let total = labels.len();
        let (pos, both) = counts(labels, n);
        for (j, &p) in pos.iter().enumerate() {
            if smoothing == 0.0 && p == 0 {
                return Err(Error::DegenerateConditional { au: j, kind: "positive" });
            }
            if smoothing == 0.0 && p == total {
                return Err(Error::DegenerateConditional { au: j, kind: "negative" });
            }
        }
        let s = smoothing;
        let mut p_cond = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                p_cond[i * n + j] = if i == j {
                    1.0
                } else {
                    let n11 = both[i * n + j];
                    let n00 = total + n11 - pos[i] - pos[j];
                    let neg_j = total - pos[j];
                    let on = (n11 as f64 + s) / (pos[j] as f64 + 2.0 * s);
                    let off = (n00 as f64 + s) / (neg_j as f64 + 2.0 * s);
                    0.5 * (on + off)
                };
            }
        }
        let a_init = p_cond.iter().map(|&p| edge_strength(p)).collect();
        Ok(PriorMatrix {
            n,
            p_cond: Tensor::new(vec![n, n], p_cond)?,
            a_init: Tensor::new(vec![n, n], a_init)?,
            occurrence: smoothed_occurrence(&pos, total, s)?,
        })
    }

    /// Builds a prior directly from coefficients (used for planted structures).
    pub fn from_coefficients(p_cond: Tensor, occurrence: Vec<f64>) -> Result<Self> {
        let s = p_cond.shape();
        if s.len() != 2 || s[0] != s[1] || occurrence.len() != s[0] {
            return Err(Error::dim(format!("coefficient matrix {s:?} with {} rates", occurrence.len())));
        }
        if p_cond.data().iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Input("coefficients must lie in [0, 1]".into()));
        }
        let a_init = Tensor::new(s.to_vec(), p_cond.data().iter().map(|&p| edge_strength(p)).collect())?;
        Ok(PriorMatrix {
            n: s[0],
            p_cond,
            a_init,
            occurrence,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p_cond(&self) -> &Tensor {
        &self.p_cond
    }

    pub fn a_init(&self) -> &Tensor {
        &self.a_init
    }

    pub fn occurrence(&self) -> &[f64] {
        &self.occurrence
    }

    /// `n` rows of `n` comma-separated `A_ij` values with 9 decimals; row `i` is the target AU.
    pub fn to_csv(&self) -> String {
        adjacency_csv(&self.a_init)
    }

    /// SHA-256 of [`PriorMatrix::to_csv`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv().as_bytes()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Formats a square matrix as headerless CSV with 9 decimals.
pub fn adjacency_csv(m: &Tensor) -> String {
    let n = m.shape()[1];
    let mut out = String::new();
    for row in m.data().chunks(n) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

/// Parses a headerless square numeric CSV.
pub fn read_adjacency_csv(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        rows.push(row);
    }
    if rows.iter().any(|r| r.len() != rows.len()) {
        return Err(Error::Input(format!("{} is not a square matrix", path.display())));
    }
    Tensor::from_rows(&rows)
}

/// Per-AU loss weights inversely proportional to occurrence, summing to `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct BalanceWeights {
    w: Vec<f64>,
}

impl BalanceWeights {
    pub fn from_occurrence(occurrence: &[f64]) -> Result<Self> {
        if occurrence.is_empty() || occurrence.iter().any(|&o| !(o > 0.0 && o <= 1.0)) {
            return Err(Error::Input(format!(
                "occurrence rates must lie in (0, 1], got {occurrence:?}"
            )));
        }
        let inv: Vec<f64> = occurrence.iter().map(|o| 1.0 / o).collect();
        let total: f64 = inv.iter().sum();
        let n = occurrence.len() as f64;
        Ok(BalanceWeights {
            w: inv.into_iter().map(|v| v * n / total).collect(),
        })
    }

    pub fn from_labels(labels: &[Vec<u8>], smoothing: f64) -> Result<Self> {
        let n = validate(labels, smoothing)?;
        let (pos, _) = counts(labels, n);
        Self::from_occurrence(&smoothed_occurrence(&pos, labels.len(), smoothing)?)
    }

    /// Stored weights, e.g. from a checkpoint; they must be positive and sum to their count.
    pub fn from_weights(w: Vec<f64>) -> Result<Self> {
        let n = w.len() as f64;
        if w.is_empty() || w.iter().any(|&v| !(v > 0.0 && v.is_finite())) || (w.iter().sum::<f64>() - n).abs() > 1e-9 {
            return Err(Error::Input(format!("invalid balance weights {w:?}")));
        }
        Ok(BalanceWeights { w })
    }

    /// All-ones weights.
    pub fn uniform(n: usize) -> Self {
        BalanceWeights { w: vec![1.0; n] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

pub fn compute_prior(labels: &[Vec<u8>], smoothing: f64) -> Result<PriorMatrix> {
    PriorMatrix::from_labels(labels, smoothing)
}

pub fn compute_balance_weights(labels: &[Vec<u8>], smoothing: f64) -> Result<BalanceWeights> {
    BalanceWeights::from_labels(labels, smoothing)
}
