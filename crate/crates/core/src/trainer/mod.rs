//! Model assembly, fine-tuning, toy pre-training and gradient checking.

mod gradcheck;
mod model;
mod optim;
mod pretraining;

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{TaggedSentence, Vocab};
use crate::error::{Error, Result};
use crate::rng;

pub use gradcheck::{grad_check, relative_error, GradCheck, GradSample, REL_ERR_FLOOR};
pub use model::{assemble_tagger, predict_tags, ParamGroup, TaggerGrads, TaggerModel};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use pretraining::{
    build_mlm_examples, build_nsp_examples, PretrainExample, PretrainHeads, PretrainLosses, Pretrainer,
};

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    FinetuneNer,
    Mlm,
    MlmNsp,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finetune_ner" => Ok(Objective::FinetuneNer),
            "mlm" => Ok(Objective::Mlm),
            "mlm_nsp" => Ok(Objective::MlmNsp),
            _ => Err(Error::Config(format!("unknown objective {s:?} (finetune_ner, mlm, mlm_nsp)"))),
        }
    }
}

/// Optimization settings. Defaults: 2 epochs, learning rate 5e-5, batch
/// size 16, Adam (0.9, 0.999, 1e-8), gradient clipping at global norm 1.0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub max_len: usize,
    pub objective: Objective,
    pub adam: AdamConfig,
    pub clip_norm: Option<f64>,
    pub freeze_encoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            learning_rate: 5e-5,
            batch_size: 16,
            seed: 0,
            max_len: 128,
            objective: Objective::FinetuneNer,
            adam: AdamConfig::default(),
            clip_norm: Some(1.0),
            freeze_encoder: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Loss trace of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean loss of each optimizer step's batch.
    pub step_losses: Vec<f64>,
    /// Mean per-sentence loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

/// One optimizer step, reported to the caller's log sink.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

impl std::fmt::Display for StepLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "step={} epoch={} loss={:.6}", self.step, self.epoch, self.loss)
    }
}

/// Fine-tune on tagged sentences: mini-batch Adam on the mean CRF
/// negative log-likelihood with full backpropagation (unless
/// `freeze_encoder`). The sentence order is reshuffled every epoch from the
/// `(seed, epoch)` stream. `on_step` sees every optimizer step.
pub fn finetune(
    model: &mut TaggerModel,
    vocab: &Vocab,
    data: &[TaggedSentence],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if cfg.objective != Objective::FinetuneNer {
        return Err(Error::Config(format!("finetune needs objective finetune_ner, got {:?}", cfg.objective)));
    }
    if data.is_empty() {
        return Err(Error::CorpusTooSmall("no training sentences".into()));
    }
    let max_len = cfg.max_len.min(model.config().max_position);
    let mut encoded = Vec::with_capacity(data.len());
    for (i, s) in data.iter().enumerate() {
        if s.len() + 2 > max_len {
            return Err(Error::Alignment {
                index: i,
                msg: Error::Truncation { len: s.len(), max_len }.to_string(),
            });
        }
        if s.is_empty() {
            return Err(Error::Alignment {
                index: i,
                msg: "empty sentence".into(),
            });
        }
        let enc = model.encode_input(vocab, &s.tokens)?;
        let tags = model.tagset.indices(&s.tags).map_err(|e| Error::Alignment {
            index: i,
            msg: e.to_string(),
        })?;
        encoded.push((enc, tags));
    }

    let mut adam = Adam::new(cfg.learning_rate, cfg.adam);
    let mut history = TrainHistory::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::named_keyed(cfg.seed, "shuffle", epoch as u64));
        let mut epoch_total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = TaggerGrads::zeros(model);
            let mut dropout = rng::named_keyed(cfg.seed, "dropout", step as u64);
            let mut total = 0.0;
            for &i in batch {
                let (enc, tags) = &encoded[i];
                total += model.loss_and_grad(enc, tags, &mut grads, !cfg.freeze_encoder, Some(&mut dropout))?;
            }
            let loss = total / batch.len() as f64;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            grads.scale(1.0 / batch.len() as f64);
            if let Some(max) = cfg.clip_norm {
                clip_global_norm(grads.slices_mut(), max);
            }
            let n_enc = model.encoder.tensors().len();
            let mut params = model.slices_mut();
            let mut gs: Vec<&[f64]> = grads.slices_mut().into_iter().map(|g| &*g).collect();
            if cfg.freeze_encoder {
                params.drain(..n_enc);
                gs.drain(..n_enc);
            }
            adam.step(params, gs);
            let log = StepLog { step, epoch, loss };
            on_step(&log);
            history.step_losses.push(loss);
            epoch_total += total;
            step += 1;
        }
        history.epoch_losses.push(epoch_total / data.len() as f64);
        history.epoch_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok(history)
}
