//! Finite-difference check of the fine-tuning gradient.

use rand::Rng as _;

use crate::corpus::{TaggedSentence, Vocab};
use crate::error::{Error, Result};
use crate::rng;

use super::model::{ParamGroup, TaggerGrads, TaggerModel};

/// Gradients smaller than this are compared on an absolute scale: the
/// relative error denominator never drops below it. Central differences at
/// `eps = 1e-5` on a loss of magnitude ~20 carry roundoff noise of about
/// 1e-9, so relative error is meaningless for gradients much below 1e-5.
pub const REL_ERR_FLOOR: f64 = 1e-4;

/// One sampled scalar parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct GradSample {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_err: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub samples: Vec<GradSample>,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compare the analytic gradient of the sentence loss with central
/// differences `(L(w + eps) - L(w - eps)) / 2 eps` at `num_samples` scalar
/// parameters. Samples are split evenly across `groups` and drawn uniformly
/// within each group.
pub fn grad_check(
    model: &TaggerModel,
    vocab: &Vocab,
    example: &TaggedSentence,
    epsilon: f64,
    groups: &[ParamGroup],
    num_samples: usize,
    seed: u64,
) -> Result<GradCheck> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Config("epsilon must be > 0".into()));
    }
    if groups.is_empty() {
        return Err(Error::Config("no parameter group selected".into()));
    }
    let enc = model.encode_input(vocab, &example.tokens)?;
    let tags = model.tagset.indices(&example.tags)?;
    let mut grads = TaggerGrads::zeros(model);
    model.loss_and_grad(&enc, &tags, &mut grads, true, None)?;
    let analytic: Vec<Vec<f64>> = grads.slices_mut().into_iter().map(|g| g.to_vec()).collect();

    let meta: Vec<(String, usize)> = model.tensors().into_iter().map(|(n, _, d)| (n, d.len())).collect();
    let tensor_groups = model.tensor_groups();
    let mut rng = rng::named(seed, "gradcheck");
    let mut probe = model.clone();
    let mut samples = Vec::with_capacity(num_samples);
    for (gi, group) in groups.iter().enumerate() {
        let members: Vec<usize> = (0..meta.len()).filter(|&t| tensor_groups[t] == *group).collect();
        let sizes: Vec<usize> = members.iter().map(|&t| meta[t].1).collect();
        let total: usize = sizes.iter().sum();
        let share = num_samples / groups.len() + usize::from(gi < num_samples % groups.len());
        for _ in 0..share {
            let mut r = rng.random_range(0..total);
            let mut k = 0;
            while r >= sizes[k] {
                r -= sizes[k];
                k += 1;
            }
            let t = members[k];
            let orig = probe.slices_mut()[t][r];
            probe.slices_mut()[t][r] = orig + epsilon;
            let plus = probe.loss(&enc, &tags)?;
            probe.slices_mut()[t][r] = orig - epsilon;
            let minus = probe.loss(&enc, &tags)?;
            probe.slices_mut()[t][r] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[t][r];
            samples.push(GradSample {
                tensor: meta[t].0.clone(),
                index: r,
                analytic: a,
                numeric,
                abs_err: (a - numeric).abs(),
                rel_err: relative_error(a, numeric),
            });
        }
    }
    let max_rel_err = samples.iter().map(|s| s.rel_err).fold(0.0, f64::max);
    let max_abs_err = samples.iter().map(|s| s.abs_err).fold(0.0, f64::max);
    Ok(GradCheck {
        samples,
        max_rel_err,
        max_abs_err,
    })
}
