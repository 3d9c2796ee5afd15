//! Gated fusion cells and the hierarchical local/global fusion chain.
//!
//! A gated fusion cell blends two `[r, F]` operands:
//!
//! ```text
//! beta = sigmoid(a Wa' + b Wb')
//! out  = beta * l2norm(a Wa) + (1 - beta) * l2norm(b Wb)
//! ```
//!
//! with the l2 normalization taken per row (per fused vector). An operand
//! that is structurally absent (an ablated branch) behaves exactly like a
//! zero operand: it contributes nothing to the gate and its normalized
//! branch is zero, so its maps are never instantiated.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};
use crate::params::{Bound, ParamId, ParamStore};

/// Content and gate maps of one side of a cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SideMaps {
    pub content: ParamId,
    pub gate: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GfcParams {
    pub width: usize,
    pub a: Option<SideMaps>,
    pub b: Option<SideMaps>,
}

impl GfcParams {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        has_a: bool,
        has_b: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut side = |tag: &str, present: bool, store: &mut ParamStore| -> Result<Option<SideMaps>> {
            if !present {
                return Ok(None);
            }
            Ok(Some(SideMaps {
                content: store.add_uniform(format!("{prefix}.{tag}.content"), &[width, width], width, rng)?,
                gate: store.add_uniform(format!("{prefix}.{tag}.gate"), &[width, width], width, rng)?,
            }))
        };
        let a = side("a", has_a, store)?;
        let b = side("b", has_b, store)?;
        Ok(GfcParams { width, a, b })
    }
}

/// Result of one cell: fused rows and the gate `beta`.
#[derive(Clone, Copy, Debug)]
pub struct GfcOutput {
    pub fused: Var,
    pub gate: Var,
}

fn check_operand(tape: &Tape, x: Var, width: usize) -> Result<Vec<usize>> {
    let s = tape.shape(x);
    if s.len() != 2 || s[1] != width {
        return Err(Error::dim(format!("fusion operand {s:?} for width {width}")));
    }
    Ok(s)
}

/// Gated fusion of two optional operands. Returns `None` when both are absent.
pub fn gfc(
    tape: &Tape,
    bound: &Bound,
    a: Option<Var>,
    b: Option<Var>,
    params: &GfcParams,
) -> Result<Option<GfcOutput>> {
    let side = |x: Option<Var>, maps: Option<SideMaps>| -> Result<Option<(Var, Var)>> {
        match (x, maps) {
            (Some(x), Some(m)) => {
                check_operand(tape, x, params.width)?;
                let content = tape.l2_normalize(tape.matmul(x, bound.var(m.content))?, 1)?;
                let gate = tape.matmul(x, bound.var(m.gate))?;
                Ok(Some((content, gate)))
            }
            (None, _) => Ok(None),
            (Some(_), None) => Err(Error::Contract("operand supplied to a cell built without it".into())),
        }
    };
    let sa = side(a, params.a)?;
    let sb = side(b, params.b)?;
    if let (Some(x), Some(y)) = (a, b) {
        if tape.shape(x) != tape.shape(y) {
            return Err(Error::dim(format!(
                "fusion operands {:?} and {:?}",
                tape.shape(x),
                tape.shape(y)
            )));
        }
    }
    let out = match (sa, sb) {
        (None, None) => None,
        (Some((ca, ga)), None) => {
            let beta = tape.sigmoid(ga)?;
            Some(GfcOutput {
                fused: tape.mul(beta, ca)?,
                gate: beta,
            })
        }
        (None, Some((cb, gb))) => {
            let beta = tape.sigmoid(gb)?;
            Some(GfcOutput {
                fused: tape.mul(tape.affine(beta, -1.0, 1.0)?, cb)?,
                gate: beta,
            })
        }
        (Some((ca, ga)), Some((cb, gb))) => {
            let beta = tape.sigmoid(tape.add(ga, gb)?)?;
            let left = tape.mul(beta, ca)?;
            let right = tape.mul(tape.affine(beta, -1.0, 1.0)?, cb)?;
            Some(GfcOutput {
                fused: tape.add(left, right)?,
                gate: beta,
            })
        }
    };
    Ok(out)
}

/// The three cells of one layer's fusion chain.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    /// Fuses the channel- and pixel-attention summaries.
    pub global_pair: GfcParams,
    /// Fuses the original global summary with the pair result.
    pub global: GfcParams,
    /// Fuses each AU feature with the global result.
    pub local: GfcParams,
}

impl FusionParams {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        use_og: bool,
        use_cg: bool,
        use_pg: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let global_pair = GfcParams::new(store, &format!("{prefix}.cp"), width, use_cg, use_pg, rng)?;
        let pair_present = use_cg || use_pg;
        let global = GfcParams::new(store, &format!("{prefix}.og"), width, use_og, pair_present, rng)?;
        let global_present = use_og || pair_present;
        let local = GfcParams::new(store, &format!("{prefix}.au"), width, true, global_present, rng)?;
        Ok(FusionParams {
            global_pair,
            global,
            local,
        })
    }
}

/// Fused AU features plus the gate of each cell that ran (innermost first).
#[derive(Clone, Debug)]
pub struct FusionOutput {
    pub features: Var,
    pub gates: [Option<Var>; 3],
}

/// `vbar_next_i = GFC(vbar_i, GFC(o, GFC(c, p)))` for every row of `[n, F]`
/// AU features; `o`, `c`, `p` are `[1, F]` global summaries.
pub fn hierarchical_fuse(
    tape: &Tape,
    bound: &Bound,
    au_features: Var,
    o: Option<Var>,
    c: Option<Var>,
    p: Option<Var>,
    params: &FusionParams,
) -> Result<FusionOutput> {
    let n = check_operand(tape, au_features, params.local.width)?[0];
    for g in [o, c, p].into_iter().flatten() {
        if tape.shape(g) != [1, params.local.width] {
            return Err(Error::dim(format!("global summary {:?}", tape.shape(g))));
        }
    }
    let pair = gfc(tape, bound, c, p, &params.global_pair)?;
    let global = gfc(tape, bound, o, pair.map(|g| g.fused), &params.global)?;
    let broadcast = global.map(|g| tape.repeat_rows(g.fused, n)).transpose()?;
    let local = gfc(tape, bound, Some(au_features), broadcast, &params.local)?
        .expect("local operand is always present");
    Ok(FusionOutput {
        features: local.fused,
        gates: [pair.map(|g| g.gate), global.map(|g| g.gate), Some(local.gate)],
    })
}
