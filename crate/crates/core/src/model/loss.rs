//! The joint objective: weighted multi-label cross entropy on the local and
//! integration heads plus the normalized landmark regression loss.

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::prior::BalanceWeights;

/// Probability clamp used before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// `-(1/n) sum_i w_i [p_i ln q_i + (1 - p_i) ln(1 - q_i)]` with `q` clamped
/// to `[eps, 1 - eps]`.
pub fn loss_au(tape: &Tape, p_hat: Var, labels: &[u8], weights: &BalanceWeights) -> Result<Var> {
    let n = labels.len();
    if tape.shape(p_hat) != [n] || weights.len() != n {
        return Err(Error::dim(format!(
            "probabilities {:?}, {n} labels, {} weights",
            tape.shape(p_hat),
            weights.len()
        )));
    }
    let q = tape.clamp(p_hat, PROB_EPS, 1.0 - PROB_EPS)?;
    let wp = Tensor::from_fn(&[n], |i| weights.as_slice()[i] * f64::from(labels[i]));
    let wn = Tensor::from_fn(&[n], |i| weights.as_slice()[i] * (1.0 - f64::from(labels[i])));
    let pos = tape.mul(tape.ln(q)?, tape.constant(wp))?;
    let neg = tape.mul(tape.ln(tape.affine(q, -1.0, 1.0)?)?, tape.constant(wn))?;
    tape.scale(tape.sum(tape.add(pos, neg)?)?, -1.0 / n as f64)
}

/// `1 / (2 d_o^2) * sum_i [(x_i - x^_i)^2 + (y_i - y^_i)^2]`; `pred` is the
/// `[1, 2m]` head output.
pub fn loss_align(tape: &Tape, pred: Var, truth: &[(f64, f64)], inter_ocular: f64) -> Result<Var> {
    if !(inter_ocular > 0.0) {
        return Err(Error::Input(format!("inter-ocular distance must be positive, got {inter_ocular}")));
    }
    let flat: Vec<f64> = truth.iter().flat_map(|&(x, y)| [x, y]).collect();
    let t = Tensor::new(vec![1, flat.len()], flat)?;
    if tape.shape(pred) != t.shape() {
        return Err(Error::dim(format!("landmarks {:?} vs truth {:?}", tape.shape(pred), t.shape())));
    }
    let diff = tape.sub(pred, tape.constant(t))?;
    let sq = tape.sum(tape.mul(diff, diff)?)?;
    tape.scale(sq, 1.0 / (2.0 * inter_ocular * inter_ocular))
}

/// The three loss terms recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub au: Var,
    pub int: Var,
    pub align: Var,
    pub total: Var,
}

/// `(L_au + L_int) + lambda * L_align`.
pub fn loss_joint(tape: &Tape, au: Var, int: Var, align: Var, lambda: f64) -> Result<Var> {
    tape.add(tape.add(au, int)?, tape.scale(align, lambda)?)
}

/// Plain values of the loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub au: f64,
    pub int: f64,
    pub align: f64,
    pub total: f64,
}

impl LossParts {
    pub fn read(tape: &Tape, v: &LossVars) -> Result<Self> {
        Ok(LossParts {
            au: tape.value(v.au).item()?,
            int: tape.value(v.int).item()?,
            align: tape.value(v.align).item()?,
            total: tape.value(v.total).item()?,
        })
    }

    pub fn accumulate(&mut self, o: &LossParts) {
        self.au += o.au;
        self.int += o.int;
        self.align += o.align;
        self.total += o.total;
    }

    pub fn scaled(self, s: f64) -> Self {
        LossParts {
            au: self.au * s,
            int: self.int * s,
            align: self.align * s,
            total: self.total * s,
        }
    }
}
