use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::SampleRecord;
use crate::attention::{channel_branch, pixel_branch, GatParams, PixelParams};
use crate::error::{Error, Result};
use crate::fusion::{hierarchical_fuse, FusionParams};
use crate::numerics::{Tape, Tensor, Var, Window};
use crate::params::{Bound, ParamId, ParamStore};
use crate::prior::PriorMatrix;
use crate::relgraph::{init_adjacency, relational_update, RelationalLayer};

#[derive(Clone, Debug, PartialEq)]
struct Linear {
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Linear {
    fn new(store: &mut ParamStore, prefix: &str, fan_in: usize, out: usize, bias: bool, rng: &mut ChaCha8Rng) -> Result<Self> {
        let weight = store.add_uniform(format!("{prefix}.weight"), &[fan_in, out], fan_in, rng)?;
        let bias = if bias {
            Some(store.add_uniform(format!("{prefix}.bias"), &[out], fan_in, rng)?)
        } else {
            None
        };
        Ok(Linear { weight, bias })
    }

    /// `[r, fan_in] -> [r, out]`.
    fn apply(&self, tape: &Tape, bound: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, bound.var(self.weight))?;
        match self.bias {
            Some(b) => tape.add_bias(y, bound.var(b), 1),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct StemBlock {
    kernel: ParamId,
    bias: ParamId,
    stride: usize,
}

/// Parameters of one reasoning layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ReasoningLayer {
    pub channel: Option<GatParams>,
    pub pixel: Option<PixelParams>,
    adapt_o: Option<Linear>,
    adapt_c: Option<Linear>,
    adapt_p: Option<Linear>,
    pub relational: RelationalLayer,
    pub fusion: FusionParams,
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    /// `[c, w, h]` global map from the stem.
    pub o_g: Var,
    /// `[n, F]` AU features after the last layer.
    pub au_features: Var,
    /// `[n]` per-AU head probabilities.
    pub p_local: Var,
    /// `[n]` integration head probabilities.
    pub p_int: Var,
    /// `[n]` average of the two.
    pub p_final: Var,
    /// `[1, 2m]` landmark coordinates `x_1, y_1, ..`.
    pub landmarks: Var,
    /// Gates of the three fusion cells, per layer.
    pub gates: Vec<[Option<Var>; 3]>,
}

/// Plain-value prediction for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub p_local: Vec<f64>,
    pub p_int: Vec<f64>,
    pub p_final: Vec<f64>,
    pub landmark_pred: Vec<(f64, f64)>,
}

/// The complete network: stem, patch features, `K` reasoning layers and the
/// three heads.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: ModelConfig,
    store: ParamStore,
    stem: Vec<StemBlock>,
    patch: Linear,
    layers: Vec<ReasoningLayer>,
    local_weight: ParamId,
    local_bias: ParamId,
    integration: Linear,
    align_hidden: Linear,
    align_out: Linear,
}

impl Network {
    /// Builds a freshly initialized network. `prior` is required when the
    /// dynamic graph is enabled.
    pub fn new(config: &ModelConfig, prior: Option<&PriorMatrix>, seed: u64) -> Result<Self> {
        let adjacency = if config.enable_dg {
            let prior = prior.ok_or_else(|| Error::Config("the dynamic graph needs a prior".into()))?;
            if prior.n() != config.n {
                return Err(Error::Config(format!("prior over {} AUs for a model of {}", prior.n(), config.n)));
            }
            Some(init_adjacency(prior, config.k_layers))
        } else {
            None
        };
        Self::build(config, adjacency, seed)
    }

    fn build(config: &ModelConfig, adjacency: Option<Vec<Tensor>>, seed: u64) -> Result<Self> {
        config.validate()?;
        let cfg = config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (c, f, n) = (cfg.channels, cfg.feat, cfg.n);

        let mut stem = Vec::new();
        for (i, stride) in cfg.stem_strides()?.into_iter().enumerate() {
            let cin = if i == 0 { cfg.image_channels } else { c };
            stem.push(StemBlock {
                kernel: store.add_he(format!("stem{i}.kernel"), &[c, cin, 3, 3], cin * 9, &mut rng)?,
                bias: store.add_uniform(format!("stem{i}.bias"), &[c], cin * 9, &mut rng)?,
                stride,
            });
        }
        let patch = Linear::new(&mut store, "patch", c, f, true, &mut rng)?;

        let mut layers = Vec::new();
        for k in 0..cfg.k_layers {
            let p = format!("layer{k}");
            let width = cfg.map_size * cfg.map_size;
            let channel = cfg
                .enable_cg
                .then(|| GatParams::new(&mut store, &format!("{p}.channel"), width, cfg.dim, cfg.heads, &mut rng))
                .transpose()?;
            let pixel = cfg
                .enable_pg
                .then(|| PixelParams::new(&mut store, &format!("{p}.pixel"), c, cfg.dim, cfg.heads, &mut rng))
                .transpose()?;
            let mut adapter = |on: bool, tag: &str, store: &mut ParamStore| {
                on.then(|| Linear::new(store, &format!("{p}.adapt_{tag}"), c, f, false, &mut rng))
                    .transpose()
            };
            let adapt_o = adapter(cfg.enable_og, "o", &mut store)?;
            let adapt_c = adapter(cfg.enable_cg, "c", &mut store)?;
            let adapt_p = adapter(cfg.enable_pg, "p", &mut store)?;
            let a = adjacency.as_ref().map(|a| a[k].clone());
            let relational = RelationalLayer::new(&mut store, &format!("{p}.rel"), f, a, n, &mut rng)?;
            let fusion = FusionParams::new(
                &mut store,
                &format!("{p}.fuse"),
                f,
                cfg.enable_og,
                cfg.enable_cg,
                cfg.enable_pg,
                &mut rng,
            )?;
            layers.push(ReasoningLayer {
                channel,
                pixel,
                adapt_o,
                adapt_c,
                adapt_p,
                relational,
                fusion,
            });
        }

        let local_weight = store.add_uniform("local.weight", &[n, f], f, &mut rng)?;
        let local_bias = store.add_uniform("local.bias", &[n], f, &mut rng)?;
        let integration = Linear::new(&mut store, "integration", n * f + c, n, true, &mut rng)?;
        let align_hidden = Linear::new(&mut store, "align.hidden", c, cfg.align_hidden, true, &mut rng)?;
        let align_out = Linear::new(&mut store, "align.out", cfg.align_hidden, 2 * cfg.m, true, &mut rng)?;

        Ok(Network {
            config: cfg.clone(),
            store,
            stem,
            patch,
            layers,
            local_weight,
            local_bias,
            integration,
            align_hidden,
            align_out,
        })
    }

    /// A network with the right parameter layout for `config`, to be filled
    /// from a checkpoint.
    pub(crate) fn skeleton(config: &ModelConfig) -> Result<Self> {
        let adjacency = config
            .enable_dg
            .then(|| vec![Tensor::zeros(&[config.n, config.n]); config.k_layers]);
        Self::build(config, adjacency, 0)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn layers(&self) -> &[ReasoningLayer] {
        &self.layers
    }

    /// Current adjacency of every layer (empty when the dynamic graph is off).
    pub fn adjacency(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .filter_map(|l| l.relational.adjacency.map(|a| self.store.get(a).clone().with_requires_grad(false)))
            .collect()
    }

    /// Starts the landmark head at `mean_shape`: zero output weights and the
    /// mean coordinates as bias.
    pub fn init_landmark_mean(&mut self, mean_shape: &[(f64, f64)]) -> Result<()> {
        let cfg = &self.config;
        if mean_shape.len() != cfg.m {
            return Err(Error::dim(format!("{} mean landmarks for m = {}", mean_shape.len(), cfg.m)));
        }
        let bias = self.align_out.bias.expect("landmark head has a bias");
        self.store.get_mut(self.align_out.weight).data_mut().fill(0.0);
        let t = self.store.get_mut(bias);
        for (k, &(x, y)) in mean_shape.iter().enumerate() {
            t.data_mut()[2 * k] = x;
            t.data_mut()[2 * k + 1] = y;
        }
        Ok(())
    }

    /// Stem surrogate: three conv3x3 + bias + ReLU blocks, `[ci, s, s] -> [c, w, w]`.
    pub fn stem_forward(&self, tape: &Tape, bound: &Bound, image: Var) -> Result<Var> {
        let cfg = &self.config;
        let want = [cfg.image_channels, cfg.image_size, cfg.image_size];
        if tape.shape(image) != want {
            return Err(Error::dim(format!("image {:?}, expected {want:?}", tape.shape(image))));
        }
        let mut x = image;
        for b in &self.stem {
            x = tape.conv2d(x, bound.var(b.kernel), b.stride, 1)?;
            x = tape.relu(tape.add_bias(x, bound.var(b.bias), 0)?)?;
        }
        Ok(x)
    }

    /// AU windows on the global map for the given landmarks.
    pub fn patch_windows(&self, landmarks: &[(f64, f64)]) -> Result<Vec<Window>> {
        let cfg = &self.config;
        if landmarks.len() != cfg.m {
            return Err(Error::dim(format!("{} landmarks, expected {}", landmarks.len(), cfg.m)));
        }
        let scale = cfg.map_size as f64 / cfg.image_size as f64;
        let r = cfg.patch_radius;
        (0..cfg.n)
            .map(|i| {
                let anchor = cfg.anchor(i);
                let k = anchor.len() as f64;
                let x = anchor.iter().map(|&l| landmarks[l].0).sum::<f64>() / k * scale;
                let y = anchor.iter().map(|&l| landmarks[l].1).sum::<f64>() / k * scale;
                let inside = |v: f64| v.is_finite() && v >= 0.0 && v < cfg.map_size as f64;
                if !inside(x) || !inside(y) {
                    return Err(Error::Input(format!("anchor of AU {i} at ({x:.2}, {y:.2}) lies outside the map")));
                }
                let (col, row) = (x as usize, y as usize);
                Ok(Window {
                    row0: row.saturating_sub(r),
                    row1: (row + r + 1).min(cfg.map_size),
                    col0: col.saturating_sub(r),
                    col1: (col + r + 1).min(cfg.map_size),
                })
            })
            .collect()
    }

    /// Region features `[n, F]`: window means of `o_g` mapped to width `F`.
    pub fn extract_patches(&self, tape: &Tape, bound: &Bound, o_g: Var, landmarks: &[(f64, f64)]) -> Result<Var> {
        let c = self.config.channels;
        let rows = self
            .patch_windows(landmarks)?
            .into_iter()
            .map(|w| tape.reshape(tape.window_mean(o_g, w)?, &[1, c]))
            .collect::<Result<Vec<_>>>()?;
        let pooled = tape.concat(&rows, 0)?;
        self.patch.apply(tape, bound, pooled)
    }

    fn pooled(&self, tape: &Tape, map: Var) -> Result<Var> {
        tape.reshape(tape.global_avg_pool(map)?, &[1, self.config.channels])
    }

    pub fn forward(&self, tape: &Tape, bound: &Bound, sample: &SampleRecord) -> Result<ForwardVars> {
        let cfg = &self.config;
        let image = tape.constant(sample.image.clone());
        let o_g = self.stem_forward(tape, bound, image)?;
        let o_pooled = self.pooled(tape, o_g)?;
        let mut v = self.extract_patches(tape, bound, o_g, &sample.landmarks)?;

        let mut gates = Vec::new();
        for layer in &self.layers {
            let o = layer.adapt_o.as_ref().map(|a| a.apply(tape, bound, o_pooled)).transpose()?;
            let c = match (&layer.channel, &layer.adapt_c) {
                (Some(p), Some(a)) => {
                    let c_g = channel_branch(tape, bound, o_g, p)?;
                    Some(a.apply(tape, bound, self.pooled(tape, c_g)?)?)
                }
                _ => None,
            };
            let p = match (&layer.pixel, &layer.adapt_p) {
                (Some(pp), Some(a)) => {
                    let p_g = pixel_branch(tape, bound, o_g, pp)?;
                    Some(a.apply(tape, bound, self.pooled(tape, p_g)?)?)
                }
                _ => None,
            };
            let vbar = relational_update(tape, bound, v, &layer.relational)?;
            let fused = hierarchical_fuse(tape, bound, vbar, o, c, p, &layer.fusion)?;
            gates.push(fused.gates);
            v = fused.features;
        }

        let local_logits = tape.sum_rows(tape.mul(v, bound.var(self.local_weight))?)?;
        let p_local = tape.sigmoid(tape.add(local_logits, bound.var(self.local_bias))?)?;

        let flat = tape.reshape(v, &[1, cfg.n * cfg.feat])?;
        let joined = tape.concat(&[flat, o_pooled], 1)?;
        let int_logits = self.integration.apply(tape, bound, joined)?;
        let p_int = tape.sigmoid(tape.reshape(int_logits, &[cfg.n])?)?;
        let p_final = tape.scale(tape.add(p_local, p_int)?, 0.5)?;

        let hidden = tape.relu(self.align_hidden.apply(tape, bound, o_pooled)?)?;
        let landmarks = self.align_out.apply(tape, bound, hidden)?;

        Ok(ForwardVars {
            o_g,
            au_features: v,
            p_local,
            p_int,
            p_final,
            landmarks,
            gates,
        })
    }

    /// Inference without gradient tracking.
    pub fn predict(&self, sample: &SampleRecord) -> Result<Prediction> {
        let tape = Tape::new();
        let bound = self.store.bind_frozen(&tape);
        let out = self.forward(&tape, &bound, sample)?;
        Ok(Prediction::from_vars(&tape, &out))
    }
}

impl Prediction {
    pub fn from_vars(tape: &Tape, out: &ForwardVars) -> Self {
        let lm = tape.value(out.landmarks).into_data();
        Prediction {
            p_local: tape.value(out.p_local).into_data(),
            p_int: tape.value(out.p_int).into_data(),
            p_final: tape.value(out.p_final).into_data(),
            landmark_pred: lm.chunks(2).map(|p| (p[0], p[1])).collect(),
        }
    }
}
