//! Pre-training example construction.
//!
//! Masking strategies:
//!
//! * static: one plan per sequence, drawn once and reused every epoch;
//! * dynamic: a fresh plan per epoch, keyed by `(seed, epoch)`;
//! * span: whole lexicon matches (entities, phrases) are masked as units,
//!   the rest of the budget is filled with single characters.
//!
//! All strategies mask `max(1, round(rate * n))` of the `n` non-special
//! positions. Each selected unit is replaced by `[MASK]` with probability
//! 0.8, by a random ordinary token with probability 0.1, and left unchanged
//! with probability 0.1. The model predicts the originals at every selected
//! position.
//!
//! Also here: sentence-pair sampling for next-sentence prediction (half true
//! continuations, half cross-document negatives) and real/fake dialogue
//! sampling.

use std::collections::{BTreeMap, HashSet};

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{MASK_ID, NUM_SPECIALS};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const MASK_PROB: f64 = 0.8;
pub const RANDOM_PROB: f64 = 0.1;

/// Replacement applied at a selected position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Mask,
    Random(usize),
    Keep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Static,
    Dynamic,
    Span,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Strategy::Static),
            "dynamic" => Ok(Strategy::Dynamic),
            "span" => Ok(Strategy::Span),
            _ => Err(Error::Config(format!("unknown masking strategy {s:?} (static, dynamic, span)"))),
        }
    }
}

/// Masked positions of one sequence, their replacements, and the original
/// ids the model must recover.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "PlanRecord", try_from = "PlanRecord")]
pub struct MaskPlan {
    pub seq_id: usize,
    pub epoch: u64,
    pub strategy: Strategy,
    pub actions: Vec<(usize, Action)>,
    pub labels: Vec<(usize, usize)>,
}

impl MaskPlan {
    pub fn with_seq_id(mut self, seq_id: usize) -> Self {
        self.seq_id = seq_id;
        self
    }

    /// Input ids with the plan's replacements applied.
    pub fn apply(&self, ids: &[usize]) -> Vec<usize> {
        let mut out = ids.to_vec();
        for &(pos, action) in &self.actions {
            match action {
                Action::Mask => out[pos] = MASK_ID,
                Action::Random(id) => out[pos] = id,
                Action::Keep => {}
            }
        }
        out
    }

    /// Undo [`MaskPlan::apply`] using the stored originals.
    pub fn revert(&self, masked: &[usize]) -> Vec<usize> {
        let mut out = masked.to_vec();
        for &(pos, orig) in &self.labels {
            out[pos] = orig;
        }
        out
    }

    pub fn positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.actions.iter().map(|&(p, _)| p)
    }
}

#[derive(Serialize, Deserialize)]
struct ActionRecord {
    pos: usize,
    action: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    replacement_id: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct LabelRecord {
    pos: usize,
    original_id: usize,
}

/// JSON Lines form of a plan.
#[derive(Serialize, Deserialize)]
struct PlanRecord {
    seq_id: usize,
    epoch: u64,
    strategy: Strategy,
    actions: Vec<ActionRecord>,
    labels: Vec<LabelRecord>,
}

impl From<MaskPlan> for PlanRecord {
    fn from(p: MaskPlan) -> Self {
        let actions = p
            .actions
            .iter()
            .map(|&(pos, a)| {
                let (action, replacement_id) = match a {
                    Action::Mask => ("replace_with_mask", None),
                    Action::Random(id) => ("replace_with_random_token", Some(id)),
                    Action::Keep => ("keep_original", None),
                };
                ActionRecord {
                    pos,
                    action: action.to_string(),
                    replacement_id,
                }
            })
            .collect();
        let labels = p
            .labels
            .iter()
            .map(|&(pos, original_id)| LabelRecord { pos, original_id })
            .collect();
        PlanRecord {
            seq_id: p.seq_id,
            epoch: p.epoch,
            strategy: p.strategy,
            actions,
            labels,
        }
    }
}

impl TryFrom<PlanRecord> for MaskPlan {
    type Error = String;

    fn try_from(r: PlanRecord) -> std::result::Result<Self, String> {
        let actions = r
            .actions
            .into_iter()
            .map(|a| {
                let act = match (a.action.as_str(), a.replacement_id) {
                    ("replace_with_mask", None) => Action::Mask,
                    ("replace_with_random_token", Some(id)) => Action::Random(id),
                    ("keep_original", None) => Action::Keep,
                    (other, _) => return Err(format!("bad action {other:?} at position {}", a.pos)),
                };
                Ok((a.pos, act))
            })
            .collect::<std::result::Result<_, _>>()?;
        Ok(MaskPlan {
            seq_id: r.seq_id,
            epoch: r.epoch,
            strategy: r.strategy,
            actions,
            labels: r.labels.into_iter().map(|l| (l.pos, l.original_id)).collect(),
        })
    }
}

/// Mask rate and the vocabulary size random replacements are drawn from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskingParams {
    pub rate: f64,
    pub vocab_size: usize,
}

impl MaskingParams {
    pub fn new(rate: f64, vocab_size: usize) -> Self {
        Self { rate, vocab_size }
    }

    fn check(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate < 1.0) {
            return Err(Error::Config(format!("mask rate {} outside (0, 1)", self.rate)));
        }
        if self.vocab_size <= NUM_SPECIALS {
            return Err(Error::Config("vocabulary has no ordinary tokens".into()));
        }
        Ok(())
    }

    /// Tokens to mask out of `n` maskable positions.
    pub fn budget(&self, n: usize) -> usize {
        ((self.rate * n as f64).round() as usize).clamp(1, n)
    }
}

fn draw_action(rng: &mut Rng) -> Action {
    let u: f64 = rng.random();
    if u < MASK_PROB {
        Action::Mask
    } else if u < MASK_PROB + RANDOM_PROB {
        Action::Random(0)
    } else {
        Action::Keep
    }
}

/// Per-position actions and `(position, original id)` labels.
type PlanParts = (Vec<(usize, Action)>, Vec<(usize, usize)>);

/// Assign actions unit by unit; `units` must be sorted and disjoint.
fn assign_actions(ids: &[usize], units: &[Vec<usize>], params: &MaskingParams, rng: &mut Rng) -> PlanParts {
    let mut actions = Vec::new();
    for unit in units {
        let kind = draw_action(rng);
        for &pos in unit {
            let a = match kind {
                Action::Random(_) => Action::Random(rng.random_range(NUM_SPECIALS..params.vocab_size)),
                other => other,
            };
            actions.push((pos, a));
        }
    }
    actions.sort_by_key(|&(p, _)| p);
    let labels = actions.iter().map(|&(p, _)| (p, ids[p])).collect();
    (actions, labels)
}

fn maskable(ids: &[usize], specials: &[bool]) -> Result<Vec<usize>> {
    if ids.len() != specials.len() {
        return Err(Error::ShapeMismatch(format!("{} ids, {} special flags", ids.len(), specials.len())));
    }
    let c: Vec<usize> = (0..ids.len()).filter(|&i| !specials[i]).collect();
    if c.is_empty() {
        return Err(Error::NothingToMask);
    }
    Ok(c)
}

fn basic_plan(ids: &[usize], specials: &[bool], params: &MaskingParams, rng: &mut Rng) -> Result<PlanParts> {
    params.check()?;
    let cand = maskable(ids, specials)?;
    let n = params.budget(cand.len());
    let mut chosen: Vec<usize> = index::sample(rng, cand.len(), n).into_iter().map(|i| cand[i]).collect();
    chosen.sort_unstable();
    let units: Vec<Vec<usize>> = chosen.into_iter().map(|p| vec![p]).collect();
    Ok(assign_actions(ids, &units, params, rng))
}

/// One plan per `seed`, reused every epoch (the epoch field stays 0).
pub fn plan_static_mask(ids: &[usize], specials: &[bool], params: &MaskingParams, seed: u64) -> Result<MaskPlan> {
    let mut rng = rng::stream(seed, 0);
    let (actions, labels) = basic_plan(ids, specials, params, &mut rng)?;
    Ok(MaskPlan {
        seq_id: 0,
        epoch: 0,
        strategy: Strategy::Static,
        actions,
        labels,
    })
}

/// Same law as the static plan with the random stream keyed by `(seed, epoch)`.
pub fn plan_dynamic_mask(ids: &[usize], specials: &[bool], params: &MaskingParams, seed: u64, epoch: u64) -> Result<MaskPlan> {
    let mut rng = rng::stream(seed, epoch);
    let (actions, labels) = basic_plan(ids, specials, params, &mut rng)?;
    Ok(MaskPlan {
        seq_id: 0,
        epoch,
        strategy: Strategy::Dynamic,
        actions,
        labels,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    Entity,
    Phrase,
}

/// Multi-character surface strings masked as whole units.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SpanLexicon {
    entries: BTreeMap<String, SpanKind>,
    max_chars: usize,
}

impl SpanLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add an entry of at least two characters.
    pub fn insert(&mut self, surface: &str, kind: SpanKind) -> Result<()> {
        let n = surface.chars().count();
        if n < 2 {
            return Err(Error::Config(format!("lexicon entry {surface:?} shorter than two characters")));
        }
        self.max_chars = self.max_chars.max(n);
        self.entries.insert(surface.to_string(), kind);
        Ok(())
    }

    /// One entry per line, optionally followed by `<TAB>entity` or
    /// `<TAB>phrase` (default phrase). Blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() {
                continue;
            }
            let (surface, kind) = match line.split_once('\t') {
                Some((s, "entity")) => (s, SpanKind::Entity),
                Some((s, "phrase")) => (s, SpanKind::Phrase),
                Some((_, k)) => return Err(Error::Config(format!("lexicon line {}: unknown kind {k:?}", i + 1))),
                None => (line, SpanKind::Phrase),
            };
            lex.insert(surface, kind)
                .map_err(|e| Error::Config(format!("lexicon line {}: {e}", i + 1)))?;
        }
        Ok(lex)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.entries.contains_key(surface)
    }

    pub fn kind(&self, surface: &str) -> Option<SpanKind> {
        self.entries.get(surface).copied()
    }

    /// Greedy left-to-right longest match over runs of non-special
    /// positions. Returns non-overlapping half-open ranges.
    pub fn find_spans<S: AsRef<str>>(&self, tokens: &[S], specials: &[bool]) -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        if self.is_empty() {
            return spans;
        }
        let mut i = 0;
        while i < tokens.len() {
            if specials[i] {
                i += 1;
                continue;
            }
            let mut run_end = i;
            while run_end < tokens.len() && !specials[run_end] {
                run_end += 1;
            }
            let mut best = None;
            let mut surface = String::new();
            for j in i..run_end {
                surface.push_str(tokens[j].as_ref());
                if surface.chars().count() > self.max_chars {
                    break;
                }
                if j > i && self.contains(&surface) {
                    best = Some(j + 1);
                }
            }
            match best {
                Some(end) => {
                    spans.push((i, end));
                    i = end;
                }
                None => i += 1,
            }
        }
        spans
    }
}

/// Lexicon-driven span masking.
///
/// Matched spans are visited in random order and taken whole while they fit
/// the budget; the remaining budget is filled with single positions outside
/// every matched span. If single positions run out, one more span may be
/// taken, overshooting the budget by at most that span. One action is drawn
/// per unit. With an empty lexicon this reproduces [`plan_static_mask`].
pub fn plan_span_mask<S: AsRef<str>>(
    ids: &[usize],
    specials: &[bool],
    tokens: &[S],
    lexicon: &SpanLexicon,
    params: &MaskingParams,
    seed: u64,
) -> Result<MaskPlan> {
    params.check()?;
    if tokens.len() != ids.len() {
        return Err(Error::ShapeMismatch(format!("{} tokens, {} ids", tokens.len(), ids.len())));
    }
    let cand = maskable(ids, specials)?;
    let budget = params.budget(cand.len());
    let mut rng = rng::stream(seed, 0);

    let mut spans = lexicon.find_spans(tokens, specials);
    let in_span: HashSet<usize> = spans.iter().flat_map(|&(a, b)| a..b).collect();
    let mut units: Vec<Vec<usize>> = Vec::new();
    let mut used = 0;
    let mut leftover = Vec::new();
    if !spans.is_empty() {
        spans.shuffle(&mut rng);
        for &(a, b) in &spans {
            if used + (b - a) <= budget {
                units.push((a..b).collect());
                used += b - a;
            } else {
                leftover.push((a, b));
            }
        }
    }
    let singles: Vec<usize> = cand.into_iter().filter(|p| !in_span.contains(p)).collect();
    let need = budget - used;
    let take = need.min(singles.len());
    units.extend(
        index::sample(&mut rng, singles.len(), take)
            .into_iter()
            .map(|i| vec![singles[i]]),
    );
    used += take;
    if used < budget {
        if let Some(&(a, b)) = leftover.first() {
            units.push((a..b).collect());
        }
    }
    units.sort_unstable_by_key(|u| u[0]);
    let (actions, labels) = assign_actions(ids, &units, params, &mut rng);
    Ok(MaskPlan {
        seq_id: 0,
        epoch: 0,
        strategy: Strategy::Span,
        actions,
        labels,
    })
}

/// Mask seed of the `index`-th sequence of a corpus, derived from the run
/// seed.
pub fn sequence_seed(seed: u64, index: usize) -> u64 {
    rng::derive_seed(seed, &format!("mask.{index}"))
}

/// Two segments and whether the second truly follows the first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePairExample {
    pub segment_a: Vec<String>,
    pub segment_b: Vec<String>,
    pub is_next: bool,
}

/// Sample `n` sentence pairs. An anchor sentence with a successor is drawn
/// uniformly; with probability 0.5 the successor is the second segment,
/// otherwise a uniform sentence from a different document. Empty sentences
/// are ignored.
pub fn make_nsp_pairs(documents: &[Vec<Vec<String>>], n: usize, seed: u64) -> Result<Vec<SentencePairExample>> {
    let docs: Vec<Vec<&Vec<String>>> = documents
        .iter()
        .map(|d| d.iter().filter(|s| !s.is_empty()).collect::<Vec<_>>())
        .filter(|d| !d.is_empty())
        .collect();
    let anchors: Vec<(usize, usize)> = docs
        .iter()
        .enumerate()
        .flat_map(|(d, s)| (0..s.len().saturating_sub(1)).map(move |i| (d, i)))
        .collect();
    if anchors.is_empty() {
        return Err(Error::CorpusTooSmall("no document has two sentences".into()));
    }
    if docs.len() < 2 {
        return Err(Error::CorpusTooSmall("negatives need at least two documents".into()));
    }
    let mut rng = rng::named(seed, "nsp");
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (d, i) = anchors[rng.random_range(0..anchors.len())];
        let is_next = rng.random_bool(0.5);
        let segment_b = if is_next {
            docs[d][i + 1].clone()
        } else {
            let mut other = rng.random_range(0..docs.len() - 1);
            if other >= d {
                other += 1;
            }
            docs[other][rng.random_range(0..docs[other].len())].clone()
        };
        out.push(SentencePairExample {
            segment_a: docs[d][i].clone(),
            segment_b,
            is_next,
        });
    }
    Ok(out)
}

/// A multi-turn conversation, possibly with one turn swapped in from
/// another conversation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueExample {
    pub turns: Vec<Vec<String>>,
    pub is_real: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub replaced_turn: Option<usize>,
}

/// One sample per input dialogue, in order. With probability 0.5 the
/// dialogue is kept; otherwise one uniformly chosen turn is replaced by a
/// uniformly chosen, differing turn of another dialogue.
pub fn make_dlm_samples(dialogues: &[Vec<Vec<String>>], seed: u64) -> Result<Vec<DialogueExample>> {
    if dialogues.len() < 2 {
        return Err(Error::CorpusTooSmall("need at least two dialogues".into()));
    }
    if let Some(i) = dialogues.iter().position(|d| d.len() < 2) {
        return Err(Error::CorpusTooSmall(format!("dialogue {i} has fewer than two turns")));
    }
    let mut rng = rng::named(seed, "dlm");
    let n = dialogues.len();
    let mut out = Vec::with_capacity(n);
    for (i, dialogue) in dialogues.iter().enumerate() {
        if rng.random_bool(0.5) {
            out.push(DialogueExample {
                turns: dialogue.clone(),
                is_real: true,
                replaced_turn: None,
            });
            continue;
        }
        let slot = rng.random_range(0..dialogue.len());
        let original = &dialogue[slot];
        let mut replacement = None;
        for _ in 0..32 {
            let mut other = rng.random_range(0..n - 1);
            if other >= i {
                other += 1;
            }
            let turn = &dialogues[other][rng.random_range(0..dialogues[other].len())];
            if turn != original {
                replacement = Some(turn.clone());
                break;
            }
        }
        let replacement = match replacement {
            Some(r) => r,
            None => dialogues
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .flat_map(|(_, d)| d.iter())
                .find(|t| *t != original)
                .cloned()
                .ok_or_else(|| Error::CorpusTooSmall(format!("no distinct turn to replace turn {slot} of dialogue {i}")))?,
        };
        let mut turns = dialogue.clone();
        turns[slot] = replacement;
        out.push(DialogueExample {
            turns,
            is_real: false,
            replaced_turn: Some(slot),
        });
    }
    Ok(out)
}
