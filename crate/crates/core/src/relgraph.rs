//! Region-level AU graph with a learnable adjacency per reasoning layer.
//!
//! For AU features `v_1..v_n` (rows of an `[n, F]` matrix) one layer computes
//!
//! ```text
//! vbar_i = W_i v_i + sum_{j != i} A_ij W_j v_j
//! ```
//!
//! with a separate `F x F` map `W_i` per AU and a raw (unnormalized)
//! adjacency `A`. The self term is carried by `W_i` alone, so the diagonal
//! of `A` is masked out of the sum.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::params::{Bound, ParamId, ParamStore};
use crate::prior::PriorMatrix;

/// `K` copies of the prior adjacency with the diagonal zeroed.
pub fn init_adjacency(prior: &PriorMatrix, layers: usize) -> Vec<Tensor> {
    let n = prior.n();
    let mut a = prior.a_init().clone();
    for i in 0..n {
        a.data_mut()[i * n + i] = 0.0;
    }
    vec![a; layers]
}

/// Parameters of one relational layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationalLayer {
    pub n: usize,
    pub width: usize,
    /// Per-AU `[F, F]` maps.
    pub node_maps: Vec<ParamId>,
    /// `[n, n]` adjacency; `None` when the dynamic graph is disabled.
    pub adjacency: Option<ParamId>,
}

impl RelationalLayer {
    /// Registers layer parameters. Adjacency is excluded from weight decay.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        adjacency: Option<Tensor>,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let node_maps = (0..n)
            .map(|i| store.add_uniform(format!("{prefix}.map{i}"), &[width, width], width, rng))
            .collect::<Result<Vec<_>>>()?;
        let adjacency = match adjacency {
            Some(a) => {
                if a.shape() != [n, n] {
                    return Err(Error::dim(format!("adjacency {:?} for {n} AUs", a.shape())));
                }
                Some(store.add(format!("{prefix}.adjacency"), a, false)?)
            }
            None => None,
        };
        Ok(RelationalLayer {
            n,
            width,
            node_maps,
            adjacency,
        })
    }
}

/// Off-diagonal ones.
fn off_diagonal_mask(n: usize) -> Tensor {
    Tensor::from_fn(&[n, n], |k| if k / n == k % n { 0.0 } else { 1.0 })
}

/// One relational update of `[n, F]` AU features.
pub fn relational_update(tape: &Tape, bound: &Bound, features: Var, layer: &RelationalLayer) -> Result<Var> {
    let s = tape.shape(features);
    if s != [layer.n, layer.width] {
        return Err(Error::dim(format!(
            "AU features {s:?} for a layer expecting [{}, {}]",
            layer.n, layer.width
        )));
    }
    let mapped = (0..layer.n)
        .map(|i| {
            let row = tape.narrow(features, 0, i, 1)?;
            tape.matmul(row, bound.var(layer.node_maps[i]))
        })
        .collect::<Result<Vec<_>>>()?;
    let mapped = tape.concat(&mapped, 0)?;
    match layer.adjacency {
        None => Ok(mapped),
        Some(a) => {
            let mask = tape.constant(off_diagonal_mask(layer.n));
            let off = tape.mul(bound.var(a), mask)?;
            let messages = tape.matmul(off, mapped)?;
            tape.add(mapped, messages)
        }
    }
}
