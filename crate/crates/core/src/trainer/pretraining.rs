//! Masked-language-model and next-sentence-prediction heads and steps.

use ndarray::{Array1, Array2, Axis};

use crate::corpus::{encode_pair, encode_tokens, Encoded, Vocab, CLS, PAD, SEP};
use crate::crf::log_sum_exp;
use crate::encoder::{self, flat, flat_mut, EncoderParams, Input, TensorRef};
use crate::error::{Error, Result};
use crate::pretrain::{
    plan_dynamic_mask, plan_span_mask, plan_static_mask, sequence_seed, MaskPlan, MaskingParams, SentencePairExample, SpanLexicon,
    Strategy,
};
use crate::rng;

use super::{clip_global_norm, Adam, Objective, TrainConfig};

/// Output heads for pre-training: a vocabulary projection applied at masked
/// positions and a binary classifier on the `[CLS]` position.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainHeads {
    pub mlm_w: Array2<f64>,
    pub mlm_b: Array1<f64>,
    pub nsp_w: Array2<f64>,
    pub nsp_b: Array1<f64>,
}

impl PretrainHeads {
    pub fn zeros(hidden: usize, vocab: usize) -> Self {
        Self {
            mlm_w: Array2::zeros((hidden, vocab)),
            mlm_b: Array1::zeros(vocab),
            nsp_w: Array2::zeros((hidden, 2)),
            nsp_b: Array1::zeros(2),
        }
    }

    pub fn init(hidden: usize, vocab: usize, seed: u64) -> Self {
        let mut rng = rng::named(seed, "init.heads");
        let mut h = Self::zeros(hidden, vocab);
        for x in flat_mut(&mut h.mlm_w).iter_mut().chain(flat_mut(&mut h.nsp_w).iter_mut()) {
            *x = rng::truncated_normal(&mut rng, 0.02);
        }
        h
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            ("mlm.weight".into(), self.mlm_w.shape().to_vec(), flat(&self.mlm_w)),
            ("mlm.bias".into(), self.mlm_b.shape().to_vec(), flat(&self.mlm_b)),
            ("nsp.weight".into(), self.nsp_w.shape().to_vec(), flat(&self.nsp_w)),
            ("nsp.bias".into(), self.nsp_b.shape().to_vec(), flat(&self.nsp_b)),
        ]
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            flat_mut(&mut self.mlm_w),
            flat_mut(&mut self.mlm_b),
            flat_mut(&mut self.nsp_w),
            flat_mut(&mut self.nsp_b),
        ]
    }
}

/// A masked input with its prediction targets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PretrainExample {
    pub ids: Vec<usize>,
    pub segments: Vec<usize>,
    pub mask: Vec<bool>,
    /// (position, original id) for every masked position.
    pub labels: Vec<(usize, usize)>,
    /// Present for sentence-pair inputs.
    pub is_next: Option<bool>,
}

impl PretrainExample {
    fn from_plan(enc: &Encoded, plan: &MaskPlan, is_next: Option<bool>) -> Self {
        Self {
            ids: plan.apply(&enc.ids),
            segments: enc.segments.clone(),
            mask: enc.attention_mask.clone(),
            labels: plan.labels.clone(),
            is_next,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainLosses {
    pub mlm: f64,
    pub nsp: Option<f64>,
}

fn surfaces(enc: &Encoded, vocab: &Vocab, tokens: &[&str]) -> Vec<String> {
    let mut it = tokens.iter();
    enc.ids
        .iter()
        .zip(&enc.specials)
        .map(|(&id, &special)| {
            if special {
                match id {
                    0 => PAD.to_string(),
                    2 => CLS.to_string(),
                    _ => SEP.to_string(),
                }
            } else {
                it.next().map(|s| s.to_string()).unwrap_or_else(|| vocab.token(id).unwrap_or("").to_string())
            }
        })
        .collect()
}

/// Plan masks for one encoded input. `tokens` are the real tokens in order
/// (needed by span masking).
#[allow(clippy::too_many_arguments)]
fn plan_for(
    enc: &Encoded,
    vocab: &Vocab,
    tokens: &[&str],
    strategy: Strategy,
    lexicon: Option<&SpanLexicon>,
    params: &MaskingParams,
    seed: u64,
    epoch: u64,
) -> Result<MaskPlan> {
    match strategy {
        Strategy::Static => plan_static_mask(&enc.ids, &enc.specials, params, seed),
        Strategy::Dynamic => plan_dynamic_mask(&enc.ids, &enc.specials, params, seed, epoch),
        Strategy::Span => {
            let empty = SpanLexicon::new();
            let surf = surfaces(enc, vocab, tokens);
            plan_span_mask(&enc.ids, &enc.specials, &surf, lexicon.unwrap_or(&empty), params, seed)
        }
    }
}

/// Single-sentence MLM examples. Static and span plans ignore `epoch`.
pub fn build_mlm_examples(
    vocab: &Vocab,
    sentences: &[Vec<String>],
    strategy: Strategy,
    lexicon: Option<&SpanLexicon>,
    rate: f64,
    seed: u64,
    epoch: u64,
) -> Result<Vec<PretrainExample>> {
    let params = MaskingParams::new(rate, vocab.len());
    sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let enc = encode_tokens(vocab, s, s.len() + 2)?;
            let toks: Vec<&str> = s.iter().map(String::as_str).collect();
            let plan = plan_for(&enc, vocab, &toks, strategy, lexicon, &params, sequence_seed(seed, i), epoch)?;
            Ok(PretrainExample::from_plan(&enc, &plan, None))
        })
        .collect()
}

/// Sentence-pair examples carrying NSP labels.
pub fn build_nsp_examples(
    vocab: &Vocab,
    pairs: &[SentencePairExample],
    strategy: Strategy,
    lexicon: Option<&SpanLexicon>,
    rate: f64,
    seed: u64,
    epoch: u64,
) -> Result<Vec<PretrainExample>> {
    let params = MaskingParams::new(rate, vocab.len());
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let len = p.segment_a.len() + p.segment_b.len() + 3;
            let enc = encode_pair(vocab, &p.segment_a, &p.segment_b, len)?;
            let toks: Vec<&str> = p.segment_a.iter().chain(&p.segment_b).map(String::as_str).collect();
            let plan = plan_for(&enc, vocab, &toks, strategy, lexicon, &params, sequence_seed(seed, i), epoch)?;
            Ok(PretrainExample::from_plan(&enc, &plan, Some(p.is_next)))
        })
        .collect()
}

/// Cross-entropy of `target` under `logits`; writes `softmax - onehot`
/// scaled by `scale` into `d_logits` when given.
fn cross_entropy(logits: &[f64], target: usize, d_logits: Option<&mut [f64]>, scale: f64) -> f64 {
    let lse = log_sum_exp(logits.iter().copied());
    if let Some(d) = d_logits {
        for (di, &l) in d.iter_mut().zip(logits) {
            *di = (l - lse).exp() * scale;
        }
        d[target] -= scale;
    }
    lse - logits[target]
}

/// Encoder plus heads with their optimizer.
#[derive(Clone, Debug)]
pub struct Pretrainer {
    pub encoder: EncoderParams,
    pub heads: PretrainHeads,
    optimizer: Adam,
    clip_norm: Option<f64>,
    seed: u64,
    steps: usize,
}

struct Grads {
    encoder: EncoderParams,
    heads: PretrainHeads,
}

impl Pretrainer {
    pub fn new(encoder: EncoderParams, heads: PretrainHeads, cfg: &TrainConfig) -> Self {
        Self {
            encoder,
            heads,
            optimizer: Adam::new(cfg.learning_rate, cfg.adam),
            clip_norm: cfg.clip_norm,
            seed: cfg.seed,
            steps: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Losses on `batch` without updating anything (inference mode).
    pub fn losses(&self, batch: &[PretrainExample], objective: Objective) -> Result<PretrainLosses> {
        self.compute(batch, objective, None)
    }

    /// One optimizer step on `batch`; returns the losses before the update.
    /// The MLM loss is the mean cross-entropy over all masked positions of
    /// the batch; the NSP loss (objective `mlm_nsp` only) the mean over
    /// examples. The optimized quantity is their sum.
    pub fn step(&mut self, batch: &[PretrainExample], objective: Objective) -> Result<PretrainLosses> {
        let cfg = &self.encoder.config;
        let mut grads = Grads {
            encoder: EncoderParams::zeros(cfg),
            heads: PretrainHeads::zeros(cfg.hidden_size, cfg.vocab_size),
        };
        let losses = self.compute(batch, objective, Some(&mut grads))?;
        if !losses.mlm.is_finite() || losses.nsp.is_some_and(|l| !l.is_finite()) {
            return Err(Error::NonFiniteLoss { step: self.steps });
        }
        let mut gs = grads.encoder.tensors_mut();
        gs.extend(grads.heads.slices_mut());
        if let Some(max) = self.clip_norm {
            let norm = clip_global_norm(gs, max);
            log::debug!("pretrain step {} grad norm {norm:.6}", self.steps);
            gs = grads.encoder.tensors_mut();
            gs.extend(grads.heads.slices_mut());
        }
        let mut params = self.encoder.tensors_mut();
        params.extend(self.heads.slices_mut());
        self.optimizer.step(params, gs.into_iter().map(|g| &*g).collect());
        self.steps += 1;
        Ok(losses)
    }

    fn compute(&self, batch: &[PretrainExample], objective: Objective, mut grads: Option<&mut Grads>) -> Result<PretrainLosses> {
        if objective == Objective::FinetuneNer {
            return Err(Error::Config("pre-training needs objective mlm or mlm_nsp".into()));
        }
        let want_nsp = objective == Objective::MlmNsp;
        if let Some(i) = batch.iter().position(|e| e.is_next.is_some() != want_nsp) {
            return Err(Error::Alignment {
                index: i,
                msg: format!("NSP label presence does not match objective {objective:?}"),
            });
        }
        let total_labels: usize = batch.iter().map(|e| e.labels.len()).sum();
        if total_labels == 0 {
            return Err(Error::EmptyBatch);
        }
        let mlm_scale = 1.0 / total_labels as f64;
        let nsp_scale = 1.0 / batch.len() as f64;
        let mut mlm = 0.0;
        let mut nsp = 0.0;
        let mut dropout = rng::named_keyed(self.seed, "pretrain.dropout", self.steps as u64);
        for ex in batch {
            let input = Input::new(&ex.ids, &ex.segments, &ex.mask);
            let train = grads.is_some();
            let (h, cache) = encoder::forward(&self.encoder, input, train.then_some(&mut dropout))?;
            let mut d_h = Array2::zeros(h.raw_dim());
            for &(pos, target) in &ex.labels {
                let row = h.row(pos);
                let logits = row.dot(&self.heads.mlm_w) + &self.heads.mlm_b;
                let logits = logits.as_slice().expect("contiguous");
                match grads.as_deref_mut() {
                    Some(g) => {
                        let mut d = vec![0.0; logits.len()];
                        mlm += cross_entropy(logits, target, Some(&mut d), mlm_scale);
                        let d = Array1::from(d);
                        let mut gw = g.heads.mlm_w.view_mut();
                        for (mut col_row, &x) in gw.axis_iter_mut(Axis(0)).zip(row.iter()) {
                            col_row.scaled_add(x, &d);
                        }
                        g.heads.mlm_b += &d;
                        d_h.row_mut(pos).scaled_add(1.0, &self.heads.mlm_w.dot(&d));
                    }
                    None => mlm += cross_entropy(logits, target, None, 1.0),
                }
            }
            if let Some(is_next) = ex.is_next {
                let cls = h.row(0);
                let logits = cls.dot(&self.heads.nsp_w) + &self.heads.nsp_b;
                let logits = logits.as_slice().expect("contiguous");
                let target = usize::from(is_next);
                match grads.as_deref_mut() {
                    Some(g) => {
                        let mut d = [0.0; 2];
                        nsp += cross_entropy(logits, target, Some(&mut d), nsp_scale);
                        let d = Array1::from(d.to_vec());
                        for (mut r, &x) in g.heads.nsp_w.axis_iter_mut(Axis(0)).zip(cls.iter()) {
                            r.scaled_add(x, &d);
                        }
                        g.heads.nsp_b += &d;
                        d_h.row_mut(0).scaled_add(1.0, &self.heads.nsp_w.dot(&d));
                    }
                    None => nsp += cross_entropy(logits, target, None, 1.0),
                }
            }
            if let Some(g) = grads.as_deref_mut() {
                encoder::backward(&self.encoder, &cache, &d_h, &mut g.encoder);
            }
        }
        Ok(PretrainLosses {
            mlm: mlm / total_labels as f64,
            nsp: want_nsp.then_some(nsp / batch.len() as f64),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::chars;
    use crate::encoder::{init_params, EncoderConfig};
    use crate::pretrain::make_nsp_pairs;

    fn setup() -> (Vocab, Vec<Vec<String>>, Pretrainer) {
        let sents: Vec<Vec<String>> = ["我爱北京", "天安门上", "太阳升起"].iter().map(|s| chars(s)).collect();
        let vocab = Vocab::build(sents.iter().flatten().map(String::as_str), 1);
        let cfg = EncoderConfig::preset("toy").unwrap().with_vocab_size(vocab.len());
        let enc = init_params(&cfg, 0).unwrap();
        let heads = PretrainHeads::init(cfg.hidden_size, cfg.vocab_size, 0);
        let tc = TrainConfig {
            learning_rate: 1e-3,
            objective: Objective::Mlm,
            ..TrainConfig::default()
        };
        (vocab, sents, Pretrainer::new(enc, heads, &tc))
    }

    #[test]
    fn mlm_objective_has_no_nsp_loss() {
        let (vocab, sents, mut p) = setup();
        let batch = build_mlm_examples(&vocab, &sents, Strategy::Dynamic, None, 0.15, 1, 0).unwrap();
        let l = p.step(&batch, Objective::Mlm).unwrap();
        assert!(l.nsp.is_none());
        assert!(l.mlm > 0.0);
        assert!(p.step(&batch, Objective::MlmNsp).is_err());
    }

    #[test]
    fn nsp_objective_reports_both_losses() {
        let (vocab, sents, mut p) = setup();
        let docs = vec![sents[..2].to_vec(), sents[2..].to_vec()];
        let pairs = make_nsp_pairs(&docs, 4, 0).unwrap();
        let batch = build_nsp_examples(&vocab, &pairs, Strategy::Static, None, 0.15, 1, 0).unwrap();
        let l = p.step(&batch, Objective::MlmNsp).unwrap();
        assert!((l.nsp.unwrap() - 2f64.ln()).abs() < 0.5);
        assert!(p.step(&batch, Objective::Mlm).is_err());
    }

    #[test]
    fn empty_labels_rejected() {
        let (vocab, sents, p) = setup();
        let mut batch = build_mlm_examples(&vocab, &sents, Strategy::Static, None, 0.15, 1, 0).unwrap();
        for b in &mut batch {
            b.labels.clear();
        }
        assert!(matches!(p.losses(&batch, Objective::Mlm), Err(Error::EmptyBatch)));
    }

    #[test]
    fn cross_entropy_gradient() {
        let logits = [0.3, -1.0, 2.0];
        let mut d = [0.0; 3];
        let l = cross_entropy(&logits, 1, Some(&mut d), 1.0);
        for k in 0..3 {
            let mut lp = logits;
            lp[k] += 1e-6;
            let mut lm = logits;
            lm[k] -= 1e-6;
            let fd = (cross_entropy(&lp, 1, None, 1.0) - cross_entropy(&lm, 1, None, 1.0)) / 2e-6;
            assert!((fd - d[k]).abs() < 1e-8);
        }
        assert!(l > 0.0);
    }
}
