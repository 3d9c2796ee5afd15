//! Central finite-difference gradient oracle.
//!
//! The oracle only ever evaluates the forward computation, so it stays
//! independent of the reverse-mode rules it is used to check.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Step used by the central differences.
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Norm-wise relative error `|a - n| / max(|a|, |n|, scale_floor)` per input.
    pub rel_err: Vec<f64>,
    /// Analytic gradient norm per input (over the checked coordinates).
    pub analytic_norm: Vec<f64>,
}

impl GradCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.rel_err.iter().copied().fold(0.0, f64::max)
    }
}

/// Options for [`check_with`].
#[derive(Clone, Copy, Debug)]
pub struct Options {
    pub eps: f64,
    /// Check at most this many evenly strided coordinates per input.
    pub max_coords: Option<usize>,
    /// Lower bound on the error denominator, so that inputs whose gradient is
    /// at the roundoff level of the differences are judged absolutely.
    pub scale_floor: f64,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            eps: DEFAULT_EPS,
            max_coords: None,
            scale_floor: 0.0,
        }
    }
}

pub fn check<F>(inputs: &[Tensor], f: F) -> Result<GradCheck>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    check_with(inputs, f, Options::default())
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` with central
/// differences for every input tensor.
pub fn check_with<F>(inputs: &[Tensor], f: F, opts: Options) -> Result<GradCheck>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("param has grad"))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.constant(x.clone())).collect();
        let out = f(&t, &vs)?;
        t.value(out).item()
    };

    let mut rel_err = Vec::with_capacity(inputs.len());
    let mut analytic_norm = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (idx, input) in inputs.iter().enumerate() {
        let n = input.len();
        let stride = opts.max_coords.map_or(1, |m| n.div_ceil(m.max(1)));
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for coord in (0..n).step_by(stride) {
            let orig = input.data()[coord];
            work[idx].data_mut()[coord] = orig + opts.eps;
            let plus = eval(&work)?;
            work[idx].data_mut()[coord] = orig - opts.eps;
            let minus = eval(&work)?;
            work[idx].data_mut()[coord] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic[idx].data()[coord];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let scale = a2.sqrt().max(n2.sqrt()).max(opts.scale_floor);
        rel_err.push(if scale == 0.0 { 0.0 } else { diff2.sqrt() / scale });
        analytic_norm.push(a2.sqrt());
    }
    Ok(GradCheck {
        rel_err,
        analytic_norm,
    })
}
