//! Flat `key = value` run configuration covering the model, the synthetic
//! data, the optimizer and the pipeline.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{Link, SynthSpec};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TrainConfig};
use crate::prior::DEFAULT_SMOOTHING;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub synth: SynthSpec,
    pub train: TrainConfig,
    /// Additive smoothing for the prior and balance weights.
    pub smoothing: f64,
    pub test_fraction: f64,
    /// Samples used by `inspect` for gate statistics.
    pub probe_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let synth = SynthSpec {
            n: model.n,
            m: model.m,
            image_size: model.image_size,
            image_channels: model.image_channels,
            marginals: vec![0.3; model.n],
            ..SynthSpec::default()
        };
        RunConfig {
            model,
            synth,
            train: TrainConfig::default(),
            smoothing: DEFAULT_SMOOTHING,
            test_fraction: 0.2,
            probe_count: 32,
        }
    }
}

fn list<T: std::str::FromStr>(v: &str) -> Option<Vec<T>> {
    v.split([',', ' '])
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse().ok())
        .collect()
}

fn join<T: ToString>(xs: &[T], sep: &str) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
}

impl RunConfig {
    /// The planted desk-scale benchmark: 8 AUs in four parent/child pairs,
    /// parents drawn strongly and children faintly, 2500 samples.
    pub fn benchmark() -> Self {
        let model = ModelConfig {
            n: 8,
            m: 10,
            k_layers: 2,
            heads: 2,
            dim: 16,
            feat: 16,
            channels: 8,
            map_size: 8,
            patch_radius: 1,
            image_size: 32,
            align_hidden: 16,
            ..ModelConfig::default()
        };
        let synth = SynthSpec {
            n: 8,
            m: 10,
            image_size: 32,
            image_channels: 1,
            marginals: vec![0.3; 8],
            links: vec![
                Link { child: 1, parent: 0, cond: 0.95 },
                Link { child: 3, parent: 2, cond: 0.85 },
                Link { child: 5, parent: 4, cond: 0.75 },
                Link { child: 7, parent: 6, cond: 0.65 },
            ],
            blob_amplitude: 1.0,
            blob_amplitudes: vec![1.0, 0.2, 1.0, 0.2, 1.0, 0.2, 1.0, 0.2],
            noise_level: 0.6,
            sample_count: 2500,
            ..SynthSpec::default()
        };
        RunConfig {
            model,
            synth,
            train: TrainConfig {
                epochs: 12,
                lr: 0.03,
                decay_every: 4,
                ..TrainConfig::default()
            },
            ..RunConfig::default()
        }
    }

    /// A very small run for smoke tests: 3 AUs, 64 samples, 2 epochs.
    pub fn smoke() -> Self {
        let model = ModelConfig {
            n: 3,
            m: 4,
            ..ModelConfig::tiny()
        };
        let synth = SynthSpec {
            n: 3,
            m: 4,
            image_size: 16,
            image_channels: 1,
            marginals: vec![0.4, 0.3, 0.5],
            links: vec![Link { child: 1, parent: 0, cond: 0.6 }],
            sample_count: 64,
            ..SynthSpec::default()
        };
        RunConfig {
            model,
            synth,
            train: TrainConfig {
                epochs: 2,
                lr: 0.02,
                ..TrainConfig::default()
            },
            probe_count: 8,
            ..RunConfig::default()
        }
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let bad = || Error::Config(format!("invalid value {v:?} for {key}"));
        macro_rules! parse {
            () => {
                v.parse().map_err(|_| bad())?
            };
        }
        let (m, s, t) = (&mut self.model, &mut self.synth, &mut self.train);
        match key.trim() {
            "n" => {
                m.n = parse!();
                s.n = m.n;
            }
            "m" => {
                m.m = parse!();
                s.m = m.m;
            }
            "image_size" => {
                m.image_size = parse!();
                s.image_size = m.image_size;
            }
            "image_channels" => {
                m.image_channels = parse!();
                s.image_channels = m.image_channels;
            }
            "anchors" => {
                let a = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(';')
                        .map(|g| g.split('+').map(|x| x.trim().parse().ok()).collect::<Option<Vec<usize>>>())
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(bad)?
                };
                m.anchors = a.clone();
                s.anchors = a;
            }
            "k_layers" => m.k_layers = parse!(),
            "heads" => m.heads = parse!(),
            "dim" => m.dim = parse!(),
            "feat" => m.feat = parse!(),
            "channels" => m.channels = parse!(),
            "map_size" => m.map_size = parse!(),
            "patch_radius" => m.patch_radius = parse!(),
            "lambda_align" => m.lambda_align = parse!(),
            "align_hidden" => m.align_hidden = parse!(),
            "enable_dg" => m.enable_dg = parse!(),
            "enable_og" => m.enable_og = parse!(),
            "enable_cg" => m.enable_cg = parse!(),
            "enable_pg" => m.enable_pg = parse!(),
            "marginals" => s.marginals = list(v).ok_or_else(bad)?,
            "links" => {
                s.links = v
                    .split([',', ' '])
                    .filter(|x| !x.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()
                    .map_err(|_| bad())?
            }
            "template" => {
                let xs: Vec<f64> = list(v).ok_or_else(bad)?;
                if !xs.len().is_multiple_of(2) {
                    return Err(bad());
                }
                s.template = xs.chunks(2).map(|p| (p[0], p[1])).collect();
            }
            "jitter" => s.jitter = parse!(),
            "blob_amplitude" => s.blob_amplitude = parse!(),
            "blob_amplitudes" => s.blob_amplitudes = list(v).ok_or_else(bad)?,
            "blob_sigma" => s.blob_sigma = parse!(),
            "landmark_amplitude" => s.landmark_amplitude = parse!(),
            "noise_level" => s.noise_level = parse!(),
            "eyes" => {
                let e: Vec<usize> = list(v).ok_or_else(bad)?;
                if e.len() != 2 {
                    return Err(bad());
                }
                s.eyes = (e[0], e[1]);
            }
            "sample_count" => s.sample_count = parse!(),
            "data_seed" => s.seed = parse!(),
            "epochs" => t.epochs = parse!(),
            "batch_size" => t.batch_size = parse!(),
            "lr" => t.lr = parse!(),
            "momentum" => t.momentum = parse!(),
            "weight_decay" => t.weight_decay = parse!(),
            "lr_decay" => t.lr_decay = parse!(),
            "decay_every" => t.decay_every = parse!(),
            "seed" => t.seed = parse!(),
            "smoothing" => self.smoothing = parse!(),
            "test_fraction" => self.test_fraction = parse!(),
            "probe_count" => self.probe_count = parse!(),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides such as those given with `--set`.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {:?} is not key=value", o.as_ref())))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults. Blank lines and
    /// `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, e.to_string().trim_start_matches("invalid configuration: "))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(Error::Config(format!("smoothing must be non-negative, got {}", self.smoothing)));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!("test_fraction {} outside [0, 1)", self.test_fraction)));
        }
        Ok(())
    }

    /// Complete textual form; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let (m, s, t) = (&self.model, &self.synth, &self.train);
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        kv("n", m.n.to_string());
        kv("m", m.m.to_string());
        kv("image_size", m.image_size.to_string());
        kv("image_channels", m.image_channels.to_string());
        kv("anchors", m.anchors.iter().map(|a| join(a, "+")).collect::<Vec<_>>().join(";"));
        kv("k_layers", m.k_layers.to_string());
        kv("heads", m.heads.to_string());
        kv("dim", m.dim.to_string());
        kv("feat", m.feat.to_string());
        kv("channels", m.channels.to_string());
        kv("map_size", m.map_size.to_string());
        kv("patch_radius", m.patch_radius.to_string());
        kv("lambda_align", m.lambda_align.to_string());
        kv("align_hidden", m.align_hidden.to_string());
        kv("enable_dg", m.enable_dg.to_string());
        kv("enable_og", m.enable_og.to_string());
        kv("enable_cg", m.enable_cg.to_string());
        kv("enable_pg", m.enable_pg.to_string());
        kv("marginals", join(&s.marginals, ","));
        kv(
            "links",
            s.links
                .iter()
                .map(|l| format!("{}:{}:{}", l.child, l.parent, l.cond))
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("template", s.template.iter().map(|(x, y)| format!("{x},{y}")).collect::<Vec<_>>().join(","));
        kv("jitter", s.jitter.to_string());
        kv("blob_amplitude", s.blob_amplitude.to_string());
        kv("blob_amplitudes", join(&s.blob_amplitudes, ","));
        kv("blob_sigma", s.blob_sigma.to_string());
        kv("landmark_amplitude", s.landmark_amplitude.to_string());
        kv("noise_level", s.noise_level.to_string());
        kv("eyes", format!("{},{}", s.eyes.0, s.eyes.1));
        kv("sample_count", s.sample_count.to_string());
        kv("data_seed", s.seed.to_string());
        kv("epochs", t.epochs.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("lr", t.lr.to_string());
        kv("momentum", t.momentum.to_string());
        kv("weight_decay", t.weight_decay.to_string());
        kv("lr_decay", t.lr_decay.to_string());
        kv("decay_every", t.decay_every.to_string());
        kv("seed", t.seed.to_string());
        kv("smoothing", self.smoothing.to_string());
        kv("test_fraction", self.test_fraction.to_string());
        kv("probe_count", self.probe_count.to_string());
        o
    }
}
