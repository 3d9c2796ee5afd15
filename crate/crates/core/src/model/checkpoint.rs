//! Checkpoint directories: `manifest.json`, `params/<name>.mgt` and
//! `optimizer/<name>.mgt` (momentum buffers).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::net::Network;
use super::train::{Optimizer, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::numerics::io::{read_tensor, write_tensor};
use crate::prior::BalanceWeights;

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub decay: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Next epoch to run.
    pub epoch: usize,
    pub step: usize,
    pub prior_hash: Option<String>,
    pub balance_weights: Vec<f64>,
    pub params: Vec<ParamEntry>,
}

impl CheckpointManifest {
    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join("manifest.json");
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Manifest(format!("cannot read {}: {e}", path.display())))?;
        let m: CheckpointManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        if m.format != CHECKPOINT_FORMAT {
            return Err(Error::Manifest(format!("unsupported checkpoint format {}", m.format)));
        }
        Ok(m)
    }
}

pub fn save_checkpoint(dir: impl AsRef<Path>, trainer: &Trainer) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("params"))?;
    fs::create_dir_all(dir.join("optimizer"))?;
    let store = trainer.net.store();
    for (p, v) in store.params().iter().zip(&trainer.optimizer.velocity) {
        write_tensor(dir.join("params").join(format!("{}.mgt", p.name)), &p.tensor)?;
        write_tensor(dir.join("optimizer").join(format!("{}.mgt", p.name)), v)?;
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT,
        model: trainer.net.config().clone(),
        train: trainer.config.clone(),
        epoch: trainer.epoch,
        step: trainer.step,
        prior_hash: trainer.prior_hash.clone(),
        balance_weights: trainer.weights.as_slice().to_vec(),
        params: store
            .params()
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                decay: p.decay,
            })
            .collect(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Trainer> {
    let dir = dir.as_ref();
    let m = CheckpointManifest::read(dir)?;
    let mut net = Network::skeleton(&m.model).map_err(|e| Error::Manifest(e.to_string()))?;
    let expected: Vec<ParamEntry> = net
        .store()
        .params()
        .iter()
        .map(|p| ParamEntry {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            decay: p.decay,
        })
        .collect();
    if expected != m.params {
        return Err(Error::Manifest(
            "parameter list does not match the configured architecture".into(),
        ));
    }
    let mut optimizer = Optimizer::new(net.store());
    for ((p, v), e) in net.store_mut().params_mut().iter_mut().zip(&mut optimizer.velocity).zip(&m.params) {
        let load = |sub: &str| -> Result<_> {
            let t = read_tensor(dir.join(sub).join(format!("{}.mgt", e.name)))?;
            if t.shape() != e.shape.as_slice() {
                return Err(Error::Manifest(format!("{sub}/{} has shape {:?}", e.name, t.shape())));
            }
            Ok(t)
        };
        p.tensor = load("params")?.with_requires_grad(true);
        *v = load("optimizer")?;
    }
    let weights = BalanceWeights::from_weights(m.balance_weights)?;
    let mut trainer = Trainer::new(net, m.train, weights)?;
    trainer.optimizer = optimizer;
    trainer.epoch = m.epoch;
    trainer.step = m.step;
    trainer.prior_hash = m.prior_hash;
    Ok(trainer)
}
