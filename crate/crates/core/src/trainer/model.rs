//! Encoder + fully-connected projection + CRF tagger.

use ndarray::{s, Array1, Array2};

use crate::corpus::{encode_tokens, Encoded, TagSet, Vocab};
use crate::crf::{self, bio_constraint_mask, CrfParams};
use crate::encoder::{self, flat, flat_mut, init_params, EncoderConfig, EncoderParams, Input, TensorRef};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// The tagging stack: encoder hidden states of the real tokens are mapped
/// to per-tag emission scores by one affine layer, then scored by a CRF.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggerModel {
    pub encoder: EncoderParams,
    pub projection_w: Array2<f64>,
    pub projection_b: Array1<f64>,
    pub crf: CrfParams,
    pub tagset: TagSet,
}

/// Gradient buffers shaped like a [`TaggerModel`].
#[derive(Clone, Debug)]
pub struct TaggerGrads {
    pub encoder: EncoderParams,
    pub projection_w: Array2<f64>,
    pub projection_b: Array1<f64>,
    pub crf: CrfParams,
}

impl TaggerGrads {
    pub fn zeros(model: &TaggerModel) -> Self {
        Self {
            encoder: EncoderParams::zeros(&model.encoder.config),
            projection_w: Array2::zeros(model.projection_w.raw_dim()),
            projection_b: Array1::zeros(model.projection_b.len()),
            crf: CrfParams::zeros(model.crf.num_tags()),
        }
    }

    /// Mutable views in [`TaggerModel::tensors`] order.
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.encoder.tensors_mut();
        v.push(flat_mut(&mut self.projection_w));
        v.push(flat_mut(&mut self.projection_b));
        v.push(flat_mut(&mut self.crf.transitions));
        v.push(flat_mut(&mut self.crf.start));
        v.push(flat_mut(&mut self.crf.end));
        v
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

/// Encoder from `init_params`, projection drawn truncated-normal (std 0.02)
/// with zero bias, CRF scores all zero.
pub fn assemble_tagger(config: &EncoderConfig, tagset: &TagSet, seed: u64) -> Result<TaggerModel> {
    let encoder = init_params(config, seed)?;
    let k = tagset.num_tags();
    let mut rng = rng::named(seed, "init.projection");
    let projection_w = Array2::from_shape_simple_fn((config.hidden_size, k), || rng::truncated_normal(&mut rng, 0.02));
    Ok(TaggerModel {
        encoder,
        projection_w,
        projection_b: Array1::zeros(k),
        crf: CrfParams::zeros(k),
        tagset: tagset.clone(),
    })
}

/// Which parameters a gradient check samples from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Projection,
    Crf,
}

impl TaggerModel {
    pub fn config(&self) -> &EncoderConfig {
        &self.encoder.config
    }

    pub fn num_tags(&self) -> usize {
        self.tagset.num_tags()
    }

    /// Named tensors in checkpoint order: encoder tensors prefixed
    /// `encoder.`, then projection and CRF.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut v: Vec<TensorRef<'_>> = self
            .encoder
            .tensors()
            .into_iter()
            .map(|(n, s, d)| (format!("encoder.{n}"), s, d))
            .collect();
        v.push(("projection.weight".into(), self.projection_w.shape().to_vec(), flat(&self.projection_w)));
        v.push(("projection.bias".into(), self.projection_b.shape().to_vec(), flat(&self.projection_b)));
        v.push(("crf.transitions".into(), self.crf.transitions.shape().to_vec(), flat(&self.crf.transitions)));
        v.push(("crf.start".into(), self.crf.start.shape().to_vec(), flat(&self.crf.start)));
        v.push(("crf.end".into(), self.crf.end.shape().to_vec(), flat(&self.crf.end)));
        v
    }

    /// Mutable views in [`TaggerModel::tensors`] order.
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.encoder.tensors_mut();
        v.push(flat_mut(&mut self.projection_w));
        v.push(flat_mut(&mut self.projection_b));
        v.push(flat_mut(&mut self.crf.transitions));
        v.push(flat_mut(&mut self.crf.start));
        v.push(flat_mut(&mut self.crf.end));
        v
    }

    /// Group of each tensor, in [`TaggerModel::tensors`] order.
    pub fn tensor_groups(&self) -> Vec<ParamGroup> {
        let n_enc = self.encoder.tensors().len();
        let mut g = vec![ParamGroup::Encoder; n_enc];
        g.extend([ParamGroup::Projection; 2]);
        g.extend([ParamGroup::Crf; 3]);
        g
    }

    /// Emission scores (n x K) for the `n` real tokens of an encoded
    /// `[CLS] tokens [SEP]` input.
    pub fn emissions(&self, enc: &Encoded) -> Result<Array2<f64>> {
        let n = real_len(enc);
        let h = encoder::encode(&self.encoder, &enc.ids, &enc.segments, &enc.attention_mask)?;
        Ok(h.slice(s![1..n + 1, ..]).dot(&self.projection_w) + &self.projection_b)
    }

    /// CRF negative log-likelihood of `tags` (tag indices) in inference mode.
    pub fn loss(&self, enc: &Encoded, tags: &[usize]) -> Result<f64> {
        let e = self.emissions(enc)?;
        crf::nll(e.view(), &self.crf, tags)
    }

    /// Loss of one sentence; adds its gradient into `grads`. The encoder
    /// backward pass is skipped when `train_encoder` is false.
    pub fn loss_and_grad(
        &self,
        enc: &Encoded,
        tags: &[usize],
        grads: &mut TaggerGrads,
        train_encoder: bool,
        dropout: Option<&mut Rng>,
    ) -> Result<f64> {
        let n = real_len(enc);
        let input = Input::new(&enc.ids, &enc.segments, &enc.attention_mask);
        let (h, cache) = encoder::forward(&self.encoder, input, dropout)?;
        let hs = h.slice(s![1..n + 1, ..]);
        let e = hs.dot(&self.projection_w) + &self.projection_b;
        let loss = crf::nll(e.view(), &self.crf, tags)?;
        let (_, g) = crf::marginals_and_grad(e.view(), &self.crf, tags)?;
        grads.crf.transitions += &g.params.transitions;
        grads.crf.start += &g.params.start;
        grads.crf.end += &g.params.end;
        grads.projection_w += &hs.t().dot(&g.emissions);
        grads.projection_b += &g.emissions.sum_axis(ndarray::Axis(0));
        if train_encoder {
            let mut d_h = Array2::zeros(h.raw_dim());
            d_h.slice_mut(s![1..n + 1, ..]).assign(&g.emissions.dot(&self.projection_w.t()));
            encoder::backward(&self.encoder, &cache, &d_h, &mut grads.encoder);
        }
        Ok(loss)
    }

    /// Encode a token sequence without padding, as used for training and
    /// prediction.
    pub fn encode_input<S: AsRef<str>>(&self, vocab: &Vocab, tokens: &[S]) -> Result<Encoded> {
        let max = self.config().max_position;
        if tokens.len() + 2 > max {
            return Err(Error::LengthOverflow {
                len: tokens.len() + 2,
                max,
            });
        }
        encode_tokens(vocab, tokens, tokens.len() + 2)
    }
}

fn real_len(enc: &Encoded) -> usize {
    enc.active_len().saturating_sub(2)
}

/// Tag a token sequence: encode, project the real positions, and run
/// Viterbi under the BIO constraint mask.
pub fn predict_tags<S: AsRef<str>>(model: &TaggerModel, tokens: &[S], vocab: &Vocab) -> Result<Vec<String>> {
    if tokens.is_empty() {
        return Ok(Vec::new());
    }
    let enc = model.encode_input(vocab, tokens)?;
    let e = model.emissions(&enc)?;
    let mask = bio_constraint_mask(&model.tagset);
    let (path, _) = crf::viterbi(e.view(), &model.crf, Some(&mask))?;
    Ok(path.into_iter().map(|i| model.tagset.tag(i).to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::check_transitions;

    fn model() -> (TaggerModel, Vocab) {
        let vocab = Vocab::from_tokens(["a", "b", "c"].map(String::from));
        let cfg = EncoderConfig::preset("toy").unwrap().with_vocab_size(vocab.len());
        (assemble_tagger(&cfg, &TagSet::new(&["PER"]).unwrap(), 1).unwrap(), vocab)
    }

    #[test]
    fn assembly() {
        let (m, _) = model();
        assert_eq!(m.projection_w.dim(), (32, 3));
        assert!(m.crf.transitions.iter().all(|&x| x == 0.0));
        assert_eq!(m, model().0);
        assert_eq!(m.tensors().len(), m.tensor_groups().len());
    }

    #[test]
    fn predict_shapes_and_constraints() {
        let (m, v) = model();
        assert_eq!(predict_tags(&m, &["a"], &v).unwrap().len(), 1);
        let out = predict_tags(&m, &["a", "b", "c", "a"], &v).unwrap();
        assert_eq!(out.len(), 4);
        assert!(check_transitions(&out).is_empty());
        assert!(predict_tags::<&str>(&m, &[], &v).unwrap().is_empty());
        let long = vec!["a"; 200];
        assert!(matches!(predict_tags(&m, &long, &v), Err(Error::LengthOverflow { .. })));
    }

    #[test]
    fn loss_and_grad_agrees_with_loss() {
        let (m, v) = model();
        let enc = m.encode_input(&v, &["a", "b"]).unwrap();
        let mut g = TaggerGrads::zeros(&m);
        let l1 = m.loss_and_grad(&enc, &[1, 2], &mut g, true, None).unwrap();
        assert_eq!(l1, m.loss(&enc, &[1, 2]).unwrap());
        assert!(g.projection_w.iter().any(|&x| x != 0.0));
    }
}
