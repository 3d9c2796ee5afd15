//! Multi-head graph attention over channel-level and pixel-level nodes.
//!
//! A node set is a `[count, width]` matrix. For head `l` with per-head width
//! `d = D / L` the layer computes
//!
//! ```text
//! q = X Uq_l,  k = X Uk_l,  v = X Uv_l                 (each [count, d])
//! alpha_l = softmax_rows(q k^T / sqrt(d))  over each node's neighborhood
//! out = ReLU( concat_l(alpha_l v) Uc )                  ([count, width])
//! ```
//!
//! The channel branch treats each channel of a `[c, h, w]` map as a node of
//! width `h * w`; the pixel branch downsamples with a 3x3 stride-2
//! convolution, treats each spatial position as a node of width `c`, and
//! restores the input extent with a transposed convolution.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::params::{Bound, ParamId, ParamStore};

/// Which nodes each node attends to.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Neighborhood {
    #[default]
    Full,
    /// `lists[i]` holds the neighbors of node `i`; it must contain `i`.
    Explicit(Vec<Vec<usize>>),
}

impl Neighborhood {
    fn validate(&self, count: usize) -> Result<()> {
        if let Neighborhood::Explicit(lists) = self {
            if lists.len() != count {
                return Err(Error::dim(format!("{} neighborhoods for {count} nodes", lists.len())));
            }
            for (i, l) in lists.iter().enumerate() {
                if !l.contains(&i) {
                    return Err(Error::Input(format!("neighborhood of node {i} must contain itself")));
                }
                if l.iter().any(|&j| j >= count) {
                    return Err(Error::dim(format!("neighbor index out of range for node {i}")));
                }
            }
        }
        Ok(())
    }

    /// Additive score mask: 0 inside the neighborhood, a large negative value outside.
    fn mask(&self, count: usize) -> Option<Tensor> {
        match self {
            Neighborhood::Full => None,
            Neighborhood::Explicit(lists) => {
                let mut m = Tensor::full(&[count, count], -1e30);
                for (i, l) in lists.iter().enumerate() {
                    for &j in l {
                        m.data_mut()[i * count + j] = 0.0;
                    }
                }
                Some(m)
            }
        }
    }
}

/// Graph nodes recorded on a tape.
#[derive(Clone, Debug)]
pub struct NodeSet {
    pub features: Var,
    pub count: usize,
    pub width: usize,
    pub neighborhood: Neighborhood,
}

impl NodeSet {
    pub fn new(tape: &Tape, features: Var) -> Result<Self> {
        let s = tape.shape(features);
        if s.len() != 2 {
            return Err(Error::dim(format!("node features must be [count, width], got {s:?}")));
        }
        Ok(NodeSet {
            features,
            count: s[0],
            width: s[1],
            neighborhood: Neighborhood::Full,
        })
    }

    pub fn with_neighborhood(mut self, neighborhood: Neighborhood) -> Result<Self> {
        neighborhood.validate(self.count)?;
        self.neighborhood = neighborhood;
        Ok(self)
    }
}

/// Projections of one multi-head attention layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GatParams {
    pub width: usize,
    pub dim: usize,
    pub heads: usize,
    pub query: Vec<ParamId>,
    pub key: Vec<ParamId>,
    pub value: Vec<ParamId>,
    /// `[dim, width]` output map applied to the concatenated heads.
    pub out: ParamId,
}

impl GatParams {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        dim: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "attention width {dim} must be divisible by head count {heads}"
            )));
        }
        let d = dim / heads;
        let mut per_head = |role: &str, store: &mut ParamStore| -> Result<Vec<ParamId>> {
            (0..heads)
                .map(|l| store.add_uniform(format!("{prefix}.head{l}.{role}"), &[width, d], width, rng))
                .collect()
        };
        let query = per_head("query", store)?;
        let key = per_head("key", store)?;
        let value = per_head("value", store)?;
        let out = store.add_uniform(format!("{prefix}.out"), &[dim, width], dim, rng)?;
        Ok(GatParams {
            width,
            dim,
            heads,
            query,
            key,
            value,
            out,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    fn check(&self, nodes: &NodeSet) -> Result<()> {
        if nodes.width != self.width {
            return Err(Error::dim(format!(
                "node width {} does not match attention width {}",
                nodes.width, self.width
            )));
        }
        Ok(())
    }
}

/// Attention matrix `[count, count]` of one head; rows sum to one.
pub fn attention_coefficients(
    tape: &Tape,
    bound: &Bound,
    nodes: &NodeSet,
    params: &GatParams,
    head: usize,
) -> Result<Var> {
    params.check(nodes)?;
    if head >= params.heads {
        return Err(Error::Input(format!("head {head} of {}", params.heads)));
    }
    let q = tape.matmul(nodes.features, bound.var(params.query[head]))?;
    let k = tape.matmul(nodes.features, bound.var(params.key[head]))?;
    let kt = tape.transpose(k)?;
    let mut scores = tape.scale(tape.matmul(q, kt)?, 1.0 / (params.head_dim() as f64).sqrt())?;
    if let Some(mask) = nodes.neighborhood.mask(nodes.count) {
        scores = tape.add(scores, tape.constant(mask))?;
    }
    let alpha = tape.softmax_rows(scores)?;
    debug_assert!(rows_are_stochastic(&tape.value(alpha), 1e-12));
    Ok(alpha)
}

pub(crate) fn rows_are_stochastic(m: &Tensor, tol: f64) -> bool {
    let c = m.shape()[1];
    m.data()
        .chunks(c)
        .all(|r| (r.iter().sum::<f64>() - 1.0).abs() <= tol && r.iter().all(|&a| a >= 0.0))
}

/// Per-head outputs before concatenation, `[count, d]` each, plus the attention matrices.
pub fn attend_heads(
    tape: &Tape,
    bound: &Bound,
    nodes: &NodeSet,
    params: &GatParams,
) -> Result<(Vec<Var>, Vec<Var>)> {
    let mut outs = Vec::with_capacity(params.heads);
    let mut alphas = Vec::with_capacity(params.heads);
    for l in 0..params.heads {
        let alpha = attention_coefficients(tape, bound, nodes, params, l)?;
        let v = tape.matmul(nodes.features, bound.var(params.value[l]))?;
        outs.push(tape.matmul(alpha, v)?);
        alphas.push(alpha);
    }
    Ok((outs, alphas))
}

/// One multi-head attention layer; output has the input's shape.
pub fn mh_gat_layer(tape: &Tape, bound: &Bound, nodes: &NodeSet, params: &GatParams) -> Result<Var> {
    let (heads, _) = attend_heads(tape, bound, nodes, params)?;
    let joined = tape.concat(&heads, 1)?;
    let projected = tape.matmul(joined, bound.var(params.out))?;
    tape.relu(projected)
}

fn map_extents(tape: &Tape, map: Var) -> Result<[usize; 3]> {
    match tape.shape(map).as_slice() {
        &[c, h, w] => Ok([c, h, w]),
        s => Err(Error::dim(format!("expected a [c, h, w] map, got {s:?}"))),
    }
}

/// Channel-level attention: `[c, h, w] -> [c, h, w]`.
pub fn channel_branch(tape: &Tape, bound: &Bound, o_g: Var, params: &GatParams) -> Result<Var> {
    let [c, h, w] = map_extents(tape, o_g)?;
    let nodes = NodeSet::new(tape, tape.reshape(o_g, &[c, h * w])?)?;
    let out = mh_gat_layer(tape, bound, &nodes, params)?;
    tape.reshape(out, &[c, h, w])
}

/// Parameters of the pixel branch: down/up-sampling kernels plus attention.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelParams {
    /// `[c, c, 3, 3]` stride-2 convolution.
    pub down: ParamId,
    /// `[c, c, 3, 3]` stride-2 transposed convolution.
    pub up: ParamId,
    pub gat: GatParams,
}

impl PixelParams {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        dim: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let down = store.add_uniform(format!("{prefix}.down"), &[channels, channels, 3, 3], channels * 9, rng)?;
        let gat = GatParams::new(store, &format!("{prefix}.gat"), channels, dim, heads, rng)?;
        let up = store.add_uniform(format!("{prefix}.up"), &[channels, channels, 3, 3], channels * 9, rng)?;
        Ok(PixelParams { down, up, gat })
    }
}

/// Pixel-level attention: `[c, h, w] -> [c, h, w]` through a half-resolution node grid.
pub fn pixel_branch(tape: &Tape, bound: &Bound, o_g: Var, params: &PixelParams) -> Result<Var> {
    let [c, h, w] = map_extents(tape, o_g)?;
    let down = tape.conv2d(o_g, bound.var(params.down), 2, 1)?;
    let [_, hd, wd] = map_extents(tape, down)?;
    let flat = tape.reshape(down, &[c, hd * wd])?;
    let nodes = NodeSet::new(tape, tape.transpose(flat)?)?;
    let attended = mh_gat_layer(tape, bound, &nodes, &params.gat)?;
    let back = tape.reshape(tape.transpose(attended)?, &[c, hd, wd])?;
    // (hd - 1) * 2 - 2 + 3 = 2 * hd - 1, so odd extents need no extra row.
    let pad_h = h + 1 - 2 * hd;
    let pad_w = w + 1 - 2 * wd;
    if pad_h != pad_w {
        return Err(Error::dim(format!("pixel branch needs matching parity, got {h}x{w}")));
    }
    tape.deconv2d(back, bound.var(params.up), 2, 1, pad_h)
}
