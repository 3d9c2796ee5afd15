use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{loss_align, loss_au, loss_joint, LossParts, LossVars};
use super::net::{ForwardVars, Network, Prediction};
use super::SampleRecord;
use crate::error::{Error, Result};
use crate::eval::MetricReport;
use crate::numerics::{Tape, Tensor};
use crate::params::ParamStore;
use crate::prior::BalanceWeights;

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Multiplicative decay applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    /// Seeds parameter initialization and batch order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            batch_size: 8,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            lr_decay: 0.5,
            decay_every: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// `lr * lr_decay ^ floor(epoch / decay_every)` for 0-based `epoch`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let steps = epoch / self.decay_every.max(1);
        self.lr * self.lr_decay.powi(steps as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.decay_every == 0 {
            return Err(Error::Config("decay_every must be positive".into()));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("lr_decay", self.lr_decay),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// SGD with Nesterov momentum:
///
/// ```text
/// g = grad + wd * p      (wd only on decayed parameters)
/// v = mu * v + g
/// p = p - lr * (g + mu * v)
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub velocity: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(store: &ParamStore) -> Self {
        Optimizer {
            velocity: store.params().iter().map(|p| Tensor::zeros(p.tensor.shape())).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>], lr: f64, momentum: f64, weight_decay: f64) {
        for ((param, vel), grad) in store.params_mut().iter_mut().zip(&mut self.velocity).zip(grads) {
            let wd = if param.decay { weight_decay } else { 0.0 };
            let p = param.tensor.data_mut();
            for (i, (pv, v)) in p.iter_mut().zip(vel.data_mut()).enumerate() {
                let g = grad.get(i).copied().unwrap_or(0.0) + wd * *pv;
                *v = momentum * *v + g;
                *pv -= lr * (g + momentum * *v);
            }
        }
    }
}

/// Records the joint loss of one sample on `tape`.
pub fn sample_loss(
    net: &Network,
    tape: &Tape,
    out: &ForwardVars,
    sample: &SampleRecord,
    weights: &BalanceWeights,
) -> Result<LossVars> {
    let au = loss_au(tape, out.p_local, &sample.labels, weights)?;
    let int = loss_au(tape, out.p_int, &sample.labels, weights)?;
    let align = loss_align(tape, out.landmarks, &sample.landmarks, sample.inter_ocular)?;
    let total = loss_joint(tape, au, int, align, net.config().lambda_align)?;
    Ok(LossVars { au, int, align, total })
}

/// Loss terms and parameter gradients of one sample, in store order.
pub fn sample_gradients(
    net: &Network,
    sample: &SampleRecord,
    weights: &BalanceWeights,
) -> Result<(LossParts, Vec<Vec<f64>>)> {
    let tape = Tape::new();
    let bound = net.store().bind(&tape);
    let out = net.forward(&tape, &bound, sample)?;
    let loss = sample_loss(net, &tape, &out, sample, weights)?;
    tape.backward(loss.total)?;
    Ok((LossParts::read(&tape, &loss)?, bound.grads(&tape)))
}

/// Mean loss and gradient over a batch. Samples run in parallel and are
/// reduced in batch order, so the result does not depend on thread count.
pub fn batch_gradients(
    net: &Network,
    batch: &[&SampleRecord],
    weights: &BalanceWeights,
) -> Result<(LossParts, Vec<Vec<f64>>)> {
    let per_sample = batch
        .par_iter()
        .map(|s| sample_gradients(net, s, weights))
        .collect::<Vec<_>>();
    let mut parts = LossParts::default();
    let mut sum: Vec<Vec<f64>> = net.store().params().iter().map(|p| vec![0.0; p.tensor.len()]).collect();
    for r in per_sample {
        let (l, g) = r?;
        parts.accumulate(&l);
        for (acc, g) in sum.iter_mut().zip(g) {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += x;
            }
        }
    }
    let k = 1.0 / batch.len() as f64;
    sum.iter_mut().flatten().for_each(|x| *x *= k);
    Ok((parts.scaled(k), sum))
}

/// Predictions and metrics for `samples`.
pub fn evaluate(net: &Network, samples: &[SampleRecord]) -> Result<(MetricReport, Vec<Prediction>)> {
    let preds = samples
        .par_iter()
        .map(|s| net.predict(s))
        .collect::<Result<Vec<_>>>()?;
    Ok((MetricReport::from_predictions(&preds, samples)?, preds))
}

/// One row of the per-epoch metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss_au: f64,
    pub loss_int: f64,
    pub loss_align: f64,
    pub avg_f1: f64,
    pub avg_acc: f64,
    pub avg_auc: Option<f64>,
    pub mean_landmark_err: f64,
}

impl EpochLog {
    pub const HEADER: &'static str =
        "epoch,lr,loss_au,loss_int,loss_align,avg_f1,avg_acc,avg_auc,mean_landmark_err";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.9},{:.9},{:.9},{:.6},{:.6},{},{:.6}",
            self.epoch,
            self.lr,
            self.loss_au,
            self.loss_int,
            self.loss_align,
            self.avg_f1,
            self.avg_acc,
            self.avg_auc.map_or(String::new(), |v| format!("{v:.6}")),
            self.mean_landmark_err
        )
    }
}

/// Training state: network, optimizer, schedule position.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub net: Network,
    pub optimizer: Optimizer,
    pub config: TrainConfig,
    pub weights: BalanceWeights,
    /// Next epoch to run (0-based).
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    pub prior_hash: Option<String>,
}

impl Trainer {
    pub fn new(net: Network, config: TrainConfig, weights: BalanceWeights) -> Result<Self> {
        config.validate()?;
        if weights.len() != net.config().n {
            return Err(Error::Config(format!(
                "{} balance weights for {} AUs",
                weights.len(),
                net.config().n
            )));
        }
        Ok(Trainer {
            optimizer: Optimizer::new(net.store()),
            net,
            config,
            weights,
            epoch: 0,
            step: 0,
            prior_hash: None,
        })
    }

    fn divergence(&self, detail: String) -> Error {
        Error::Divergence {
            epoch: self.epoch,
            step: self.step,
            detail,
        }
    }

    /// One optimizer step on `batch` at learning rate `lr`.
    pub fn step_on(&mut self, batch: &[&SampleRecord], lr: f64) -> Result<LossParts> {
        let (parts, grads) = match batch_gradients(&self.net, batch, &self.weights) {
            Ok(r) => r,
            Err(Error::Contract(m)) => return Err(self.divergence(m)),
            Err(e) => return Err(e),
        };
        if !parts.total.is_finite() {
            return Err(self.divergence(format!("loss {}", parts.total)));
        }
        if let Some(name) = grads
            .iter()
            .zip(self.net.store().names())
            .find(|(g, _)| g.iter().any(|x| !x.is_finite()))
            .map(|(_, n)| n.to_string())
        {
            return Err(self.divergence(format!("non-finite gradient for {name}")));
        }
        let c = &self.config;
        let (momentum, wd) = (c.momentum, c.weight_decay);
        self.optimizer.step(self.net.store_mut(), &grads, lr, momentum, wd);
        self.step += 1;
        Ok(parts)
    }

    /// Deterministic batch order for `epoch`.
    pub fn batch_order(&self, epoch: usize, len: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut idx: Vec<usize> = (0..len).collect();
        idx.shuffle(&mut rng);
        idx
    }

    /// Runs the next epoch; returns mean training losses.
    pub fn train_epoch(&mut self, data: &[SampleRecord]) -> Result<LossParts> {
        if data.is_empty() {
            return Err(Error::Input("empty training set".into()));
        }
        let lr = self.config.learning_rate(self.epoch);
        let order = self.batch_order(self.epoch, data.len());
        let mut total = LossParts::default();
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&SampleRecord> = chunk.iter().map(|&i| &data[i]).collect();
            let parts = self.step_on(&batch, lr)?;
            total.accumulate(&parts.scaled(batch.len() as f64));
        }
        self.epoch += 1;
        Ok(total.scaled(1.0 / data.len() as f64))
    }

    /// Trains until `config.epochs`, evaluating on `eval` after each epoch.
    /// `on_epoch` sees every log row and the trainer state after that epoch.
    pub fn fit(
        &mut self,
        train: &[SampleRecord],
        eval: &[SampleRecord],
        mut on_epoch: impl FnMut(&EpochLog, &Trainer) -> Result<()>,
    ) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while self.epoch < self.config.epochs {
            let epoch = self.epoch;
            let lr = self.config.learning_rate(epoch);
            let losses = self.train_epoch(train)?;
            let (report, _) = evaluate(&self.net, eval)?;
            let log = EpochLog {
                epoch,
                lr,
                loss_au: losses.au,
                loss_int: losses.int,
                loss_align: losses.align,
                avg_f1: report.avg_f1,
                avg_acc: report.avg_acc,
                avg_auc: report.avg_auc,
                mean_landmark_err: report.mean_landmark_error_pct.unwrap_or(f64::NAN),
            };
            on_epoch(&log, self)?;
            logs.push(log);
        }
        Ok(logs)
    }
}
