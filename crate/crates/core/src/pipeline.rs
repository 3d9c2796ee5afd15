//! End-to-end runs: dataset generation, prior computation, training with
//! checkpoints, evaluation, ablation sweeps and model inspection.
//!
//! A run directory holds:
//!
//! | file | content |
//! |---|---|
//! | `config.conf` | the complete run configuration |
//! | `prior.csv` | prior adjacency from the training split |
//! | `metrics.csv` | one row per epoch |
//! | `checkpoint/` | latest checkpoint |
//! | `report.csv` | final metrics on the held-out split |

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::data::{self, DatasetManifest, SampleRecord};
use crate::error::{Error, Result};
use crate::eval::{ablation_report, spearman, AblationTable, MetricReport};
use crate::model::{
    evaluate, load_checkpoint, save_checkpoint, CheckpointManifest, EpochLog, Network, Trainer,
};
use crate::numerics::{Tape, Tensor};
use crate::prior::{adjacency_csv, compute_balance_weights, compute_prior, read_adjacency_csv, PriorMatrix};

pub const CONFIG_SNAPSHOT: &str = "config.conf";
pub const PRIOR_FILE: &str = "prior.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const GATES_FILE: &str = "gates.csv";
pub const STRUCTURE_FILE: &str = "structure.csv";

/// Creates `dir`, refusing a non-empty one unless `force`.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() && !force {
        return Err(Error::OutputExists(dir.to_path_buf()));
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Generates the configured synthetic dataset into `out`.
pub fn cmd_generate(cfg: &RunConfig, out: &Path, force: bool) -> Result<DatasetManifest> {
    cfg.synth.validate()?;
    prepare_output_dir(out, force)?;
    let samples = data::generate(&cfg.synth)?;
    data::write_dataset(out, &samples, Some(&cfg.synth))?;
    fs::write(out.join(CONFIG_SNAPSHOT), cfg.to_text())?;
    let (manifest, _) = read_manifest(out)?;
    Ok(manifest)
}

fn read_manifest(dir: &Path) -> Result<(DatasetManifest, PathBuf)> {
    let path = dir.join(data::MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::Manifest(format!("cannot read {}: {e}", path.display())))?;
    Ok((serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?, path))
}

/// Computes the prior from a label CSV and writes it to `out`.
pub fn cmd_prior(labels_path: &Path, out: &Path, smoothing: f64) -> Result<PriorMatrix> {
    let table = data::load_labels(labels_path)?;
    let prior = compute_prior(&table.labels, smoothing)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    prior.write_csv(out)?;
    Ok(prior)
}

/// A seeded train/test partition of a dataset.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
}

impl Split {
    pub fn new(samples: &[SampleRecord], test_fraction: f64, seed: u64) -> Result<Self> {
        let (tr, te) = data::split_indices(samples.len(), test_fraction, seed)?;
        if tr.is_empty() {
            return Err(Error::Input("training split is empty".into()));
        }
        Ok(Split {
            train: tr.iter().map(|&i| samples[i].clone()).collect(),
            test: te.iter().map(|&i| samples[i].clone()).collect(),
        })
    }

    /// The split a run configuration prescribes for `samples`.
    pub fn for_config(cfg: &RunConfig, samples: &[SampleRecord]) -> Result<Self> {
        Self::new(samples, cfg.test_fraction, cfg.synth.seed)
    }

    /// Evaluation set: the test split, or the training split when no samples are held out.
    pub fn eval_set(&self) -> &[SampleRecord] {
        if self.test.is_empty() {
            &self.train
        } else {
            &self.test
        }
    }

    pub fn train_labels(&self) -> Vec<Vec<u8>> {
        self.train.iter().map(|s| s.labels.clone()).collect()
    }
}

/// Mean landmark position over `samples`.
pub fn mean_shape(samples: &[SampleRecord]) -> Vec<(f64, f64)> {
    let m = samples.first().map_or(0, |s| s.landmarks.len());
    let n = samples.len() as f64;
    (0..m)
        .map(|k| {
            let (x, y) = samples
                .iter()
                .fold((0.0, 0.0), |(x, y), s| (x + s.landmarks[k].0, y + s.landmarks[k].1));
            (x / n, y / n)
        })
        .collect()
}

/// Fresh trainer for `cfg` on `split`: prior and balance weights from the
/// training labels, landmark head started at the mean shape.
pub fn new_trainer(cfg: &RunConfig, split: &Split) -> Result<(Trainer, PriorMatrix)> {
    cfg.validate()?;
    check_compatible(cfg, &split.train[0])?;
    let labels = split.train_labels();
    let prior = compute_prior(&labels, cfg.smoothing)?;
    let weights = compute_balance_weights(&labels, cfg.smoothing)?;
    let mut net = Network::new(&cfg.model, Some(&prior), cfg.train.seed)?;
    net.init_landmark_mean(&mean_shape(&split.train))?;
    let mut trainer = Trainer::new(net, cfg.train.clone(), weights)?;
    trainer.prior_hash = Some(prior.hash());
    Ok((trainer, prior))
}

fn check_compatible(cfg: &RunConfig, sample: &SampleRecord) -> Result<()> {
    let m = &cfg.model;
    let shape = [m.image_channels, m.image_size, m.image_size];
    if sample.labels.len() != m.n || sample.landmarks.len() != m.m || sample.image.shape() != shape {
        return Err(Error::Manifest(format!(
            "dataset has {} AUs, {} landmarks and images {:?}; the model expects {}, {} and {:?}",
            sample.labels.len(),
            sample.landmarks.len(),
            sample.image.shape(),
            m.n,
            m.m,
            shape
        )));
    }
    Ok(())
}

/// Result of a completed training run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub trainer: Trainer,
    pub logs: Vec<EpochLog>,
    pub report: MetricReport,
}

/// Trains `cfg` on `split` in memory.
pub fn fit_run(cfg: &RunConfig, split: &Split) -> Result<RunOutcome> {
    let (mut trainer, _) = new_trainer(cfg, split)?;
    let logs = trainer.fit(&split.train, split.eval_set(), |_, _| Ok(()))?;
    let (report, _) = evaluate(&trainer.net, split.eval_set())?;
    Ok(RunOutcome { trainer, logs, report })
}

/// Trains on the dataset in `data_dir`, writing the run directory. With
/// `resume`, continues from `run_dir/checkpoint` at its stored epoch.
pub fn cmd_train(cfg: &RunConfig, data_dir: &Path, run_dir: &Path, force: bool, resume: bool) -> Result<RunOutcome> {
    cfg.validate()?;
    let (_, samples) = data::load_dataset(data_dir)?;
    let split = Split::for_config(cfg, &samples)?;
    let ckpt = run_dir.join(CHECKPOINT_DIR);
    let metrics = run_dir.join(METRICS_FILE);

    let mut trainer = if resume {
        let (_, prior) = new_trainer(cfg, &split)?;
        let mut t = load_checkpoint(&ckpt)?;
        if t.net.config() != &cfg.model {
            return Err(Error::Manifest("checkpoint model differs from the configuration".into()));
        }
        if t.prior_hash.as_deref() != Some(prior.hash().as_str()) {
            return Err(Error::Manifest("checkpoint was trained with a different prior".into()));
        }
        t.config.epochs = cfg.train.epochs;
        t
    } else {
        prepare_output_dir(run_dir, force)?;
        let (t, prior) = new_trainer(cfg, &split)?;
        prior.write_csv(run_dir.join(PRIOR_FILE))?;
        fs::write(&metrics, format!("{}\n", EpochLog::HEADER))?;
        t
    };
    fs::write(run_dir.join(CONFIG_SNAPSHOT), cfg.to_text())?;

    let logs = trainer.fit(&split.train, split.eval_set(), |log, t| {
        use std::io::Write;
        let mut f = fs::OpenOptions::new().append(true).open(&metrics)?;
        writeln!(f, "{}", log.csv_row())?;
        save_checkpoint(&ckpt, t)
    })?;
    if logs.is_empty() && !ckpt.exists() {
        save_checkpoint(&ckpt, &trainer)?;
    }
    let (report, _) = evaluate(&trainer.net, split.eval_set())?;
    fs::write(run_dir.join(REPORT_FILE), report.to_csv())?;
    Ok(RunOutcome { trainer, logs, report })
}

/// Evaluates a checkpoint on every sample of a dataset directory.
pub fn cmd_eval(checkpoint: &Path, data_dir: &Path) -> Result<MetricReport> {
    let trainer = load_checkpoint(checkpoint)?;
    let (manifest, samples) = data::load_dataset(data_dir)?;
    let m = trainer.net.config();
    if manifest.n != m.n || manifest.m != m.m {
        return Err(Error::Manifest(format!(
            "checkpoint expects {} AUs and {} landmarks, dataset has {} and {}",
            m.n, m.m, manifest.n, manifest.m
        )));
    }
    let shape = [m.image_channels, m.image_size, m.image_size];
    if manifest.image_shape != shape {
        return Err(Error::Manifest(format!(
            "checkpoint expects images {shape:?}, dataset has {:?}",
            manifest.image_shape
        )));
    }
    Ok(evaluate(&trainer.net, &samples)?.0)
}

/// One of the seven ablation settings, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    Dg,
    DgOg,
    DgCgPg,
    DgOgCg,
    DgOgPg,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Baseline,
        Variant::Dg,
        Variant::DgOg,
        Variant::DgCgPg,
        Variant::DgOgCg,
        Variant::DgOgPg,
        Variant::Full,
    ];

    /// `(dg, og, cg, pg)`.
    pub fn toggles(self) -> (bool, bool, bool, bool) {
        match self {
            Variant::Baseline => (false, false, false, false),
            Variant::Dg => (true, false, false, false),
            Variant::DgOg => (true, true, false, false),
            Variant::DgCgPg => (true, false, true, true),
            Variant::DgOgCg => (true, true, true, false),
            Variant::DgOgPg => (true, true, false, true),
            Variant::Full => (true, true, true, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Dg => "dg",
            Variant::DgOg => "dg+og",
            Variant::DgCgPg => "dg+cg+pg",
            Variant::DgOgCg => "dg+og+cg",
            Variant::DgOgPg => "dg+og+pg",
            Variant::Full => "full",
        }
    }

    pub fn apply(self, cfg: &RunConfig) -> RunConfig {
        let mut c = cfg.clone();
        let (dg, og, cg, pg) = self.toggles();
        c.model.enable_dg = dg;
        c.model.enable_og = og;
        c.model.enable_cg = cg;
        c.model.enable_pg = pg;
        c
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.trim())
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// What an ablation sweep varies.
#[derive(Clone, Debug, PartialEq)]
pub enum Sweep {
    Variants(Vec<Variant>),
    Layers(Vec<usize>),
}

impl Sweep {
    pub fn runs(&self, cfg: &RunConfig) -> Vec<(String, RunConfig)> {
        match self {
            Sweep::Variants(vs) => vs.iter().map(|v| (v.name().to_string(), v.apply(cfg))).collect(),
            Sweep::Layers(ks) => ks
                .iter()
                .map(|&k| {
                    let mut c = cfg.clone();
                    c.model.k_layers = k;
                    (format!("K={k}"), c)
                })
                .collect(),
        }
    }
}

/// Trains every run of `sweep` on the same split and seed and tabulates
/// the held-out reports. Each run is independent of the others.
pub fn ablate(cfg: &RunConfig, split: &Split, sweep: &Sweep) -> Result<(AblationTable, Vec<(String, RunOutcome)>)> {
    let mut outcomes = Vec::new();
    for (name, c) in sweep.runs(cfg) {
        outcomes.push((name, fit_run(&c, split)?));
    }
    let reports: Vec<(String, MetricReport)> = outcomes.iter().map(|(n, o)| (n.clone(), o.report.clone())).collect();
    Ok((ablation_report(&reports)?, outcomes))
}

/// Runs a sweep on the dataset in `data_dir`; each run writes a
/// subdirectory of `run_dir`, and the table goes to `ablation.csv`.
pub fn cmd_ablate(cfg: &RunConfig, data_dir: &Path, run_dir: &Path, sweep: &Sweep, force: bool) -> Result<AblationTable> {
    cfg.validate()?;
    prepare_output_dir(run_dir, force)?;
    fs::write(run_dir.join(CONFIG_SNAPSHOT), cfg.to_text())?;
    let mut reports = Vec::new();
    for (name, c) in sweep.runs(cfg) {
        let dir = run_dir.join(name.replace('+', "-").replace('=', ""));
        let outcome = cmd_train(&c, data_dir, &dir, true, false)?;
        reports.push((name, outcome.report));
    }
    let table = ablation_report(&reports)?;
    fs::write(run_dir.join(ABLATION_FILE), table.to_csv())?;
    Ok(table)
}

/// Summary statistics of one fusion cell's gate over a probe batch.
#[derive(Clone, Debug, PartialEq)]
pub struct GateStats {
    pub layer: usize,
    pub cell: &'static str,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl GateStats {
    fn from_values(layer: usize, cell: &'static str, v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        GateStats {
            layer,
            cell,
            mean,
            std: var.sqrt(),
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            count: v.len(),
        }
    }
}

pub const FUSION_CELLS: [&str; 3] = ["cp", "og", "au"];

/// Gate activations of every fusion cell of every layer, pooled over `probe`.
pub fn gate_statistics(net: &Network, probe: &[SampleRecord]) -> Result<Vec<GateStats>> {
    let k = net.config().k_layers;
    let mut pooled = vec![[Vec::new(), Vec::new(), Vec::new()]; k];
    for s in probe {
        let tape = Tape::new();
        let bound = net.store().bind_frozen(&tape);
        let out = net.forward(&tape, &bound, s)?;
        for (layer, gates) in out.gates.iter().enumerate() {
            for (cell, g) in gates.iter().enumerate() {
                if let Some(g) = g {
                    pooled[layer][cell].extend_from_slice(tape.value(*g).data());
                }
            }
        }
    }
    let mut stats = Vec::new();
    for (layer, cells) in pooled.iter().enumerate() {
        for (cell, v) in cells.iter().enumerate() {
            if !v.is_empty() {
                stats.push(GateStats::from_values(layer, FUSION_CELLS[cell], v));
            }
        }
    }
    Ok(stats)
}

pub fn gate_stats_csv(stats: &[GateStats]) -> String {
    let mut out = String::from("layer,cell,mean,std,min,max,count\n");
    for g in stats {
        out += &format!(
            "{},{},{:.9},{:.9},{:.9},{:.9},{}\n",
            g.layer + 1,
            g.cell,
            g.mean,
            g.std,
            g.min,
            g.max,
            g.count
        );
    }
    out
}

/// Off-diagonal entries of a square matrix, row-major.
pub fn off_diagonal(m: &Tensor) -> Vec<f64> {
    let n = m.shape()[0];
    let d = m.data();
    (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| d[i * n + j]))
        .collect()
}

/// Spearman correlation between the off-diagonal entries of two matrices.
pub fn structure_recovery(learned: &Tensor, planted: &Tensor) -> Result<f64> {
    if learned.shape() != planted.shape() {
        return Err(Error::dim(format!("{:?} vs {:?}", learned.shape(), planted.shape())));
    }
    spearman(&off_diagonal(learned), &off_diagonal(planted))
}

/// What `inspect` found.
#[derive(Clone, Debug)]
pub struct Inspection {
    pub adjacency: Vec<Tensor>,
    pub gates: Vec<GateStats>,
    /// Spearman of the learned `A^1` against the planted structure, per layer.
    pub structure: Option<Vec<f64>>,
}

/// File name of the layer-`k` adjacency dump (1-based).
pub fn adjacency_file(k: usize) -> String {
    format!("adjacency_layer{k}.csv")
}

/// Dumps the adjacency of every layer and gate statistics on the first
/// `probe_count` samples of `data_dir`. When the dataset carries a planted
/// prior, also reports structure recovery.
pub fn cmd_inspect(checkpoint: &Path, data_dir: Option<&Path>, out: &Path, probe_count: usize) -> Result<Inspection> {
    let trainer = load_checkpoint(checkpoint)?;
    let net = &trainer.net;
    fs::create_dir_all(out)?;
    let adjacency = net.adjacency();
    for (k, a) in adjacency.iter().enumerate() {
        fs::write(out.join(adjacency_file(k + 1)), adjacency_csv(a))?;
    }
    let mut gates = Vec::new();
    let mut structure = None;
    if let Some(dir) = data_dir {
        let (_, samples) = data::load_dataset(dir)?;
        let probe = &samples[..probe_count.min(samples.len())];
        gates = gate_statistics(net, probe)?;
        fs::write(out.join(GATES_FILE), gate_stats_csv(&gates))?;
        let planted = dir.join(data::PLANTED_PRIOR_FILE);
        if planted.exists() && !adjacency.is_empty() {
            let p = read_adjacency_csv(&planted)?;
            let rho = adjacency.iter().map(|a| structure_recovery(a, &p)).collect::<Result<Vec<_>>>()?;
            let mut csv = String::from("layer,spearman\n");
            for (k, r) in rho.iter().enumerate() {
                csv += &format!("{},{r:.9}\n", k + 1);
            }
            fs::write(out.join(STRUCTURE_FILE), csv)?;
            structure = Some(rho);
        }
    }
    Ok(Inspection {
        adjacency,
        gates,
        structure,
    })
}

/// The model section of a checkpoint manifest, for quick checks.
pub fn checkpoint_params(checkpoint: &Path) -> Result<Vec<String>> {
    Ok(CheckpointManifest::read(checkpoint)?.params.into_iter().map(|p| p.name).collect())
}
