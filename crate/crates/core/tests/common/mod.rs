//! Shared fixtures: a synthetic two-type character corpus.

#![allow(dead_code)]

use nerkit::corpus::TaggedSentence;
use nerkit::rng;
use rand::Rng;

pub const FILLER: &str = "的了是在有和就不人都一上也很到说要去你会着没看好自这那些们来";
pub const SURNAMES: &str = "王李张刘陈";
pub const GIVEN: &str = "伟芳娜敏静";
pub const PLACES: &str = "京沪津渝粤苏浙鲁豫川";

fn pick(rng: &mut rng::Rng, set: &str) -> String {
    let chars: Vec<char> = set.chars().collect();
    chars[rng.random_range(0..chars.len())].to_string()
}

/// `n` sentences of filler text with PER (surname + one or two given-name
/// characters) and LOC (two or three place characters) mentions. The three
/// character sets are disjoint; entities are always separated by filler.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<TaggedSentence> {
    let mut rng = rng::named(seed, "synthetic");
    (0..n)
        .map(|_| {
            let mut tokens = Vec::new();
            let mut tags = Vec::new();
            let mentions = rng.random_range(1..=3);
            for _ in 0..mentions {
                for _ in 0..rng.random_range(1..=3) {
                    tokens.push(pick(&mut rng, FILLER));
                    tags.push("O".to_string());
                }
                if rng.random_bool(0.5) {
                    tokens.push(pick(&mut rng, SURNAMES));
                    tags.push("B-PER".into());
                    for _ in 0..rng.random_range(1..=2) {
                        tokens.push(pick(&mut rng, GIVEN));
                        tags.push("I-PER".into());
                    }
                } else {
                    let len = rng.random_range(2..=3);
                    for k in 0..len {
                        tokens.push(pick(&mut rng, PLACES));
                        tags.push(if k == 0 { "B-LOC" } else { "I-LOC" }.into());
                    }
                }
            }
            for _ in 0..rng.random_range(1..=3) {
                tokens.push(pick(&mut rng, FILLER));
                tags.push("O".to_string());
            }
            TaggedSentence::new(tokens, tags).unwrap()
        })
        .collect()
}

/// Plain sentences (no tags) for pre-training experiments.
pub fn synthetic_text(n: usize, seed: u64) -> Vec<Vec<String>> {
    synthetic_corpus(n, seed).into_iter().map(|s| s.tokens).collect()
}

/// Twenty short sentences built from five templates with small slot
/// vocabularies, so the masked-token distribution is learnable.
pub fn template_text() -> Vec<Vec<String>> {
    let people = ["王伟", "李娜", "张敏", "刘静"];
    let places = ["北京", "上海", "南京", "天津"];
    let mut out = Vec::new();
    for i in 0..20 {
        let p = people[i % 4];
        let q = places[(i / 4) % 4];
        let s = match i % 5 {
            0 => format!("{p}在{q}工作。"),
            1 => format!("{p}明天去{q}。"),
            2 => format!("我们在{q}见到了{p}。"),
            3 => format!("{p}住在{q}市。"),
            _ => format!("{q}的天气很好。"),
        };
        out.push(s.chars().map(|c| c.to_string()).collect());
    }
    out
}

use ndarray::{Array1, Array2};
use nerkit::crf::{ConstraintMask, CrfParams};

/// All tag sequences of length `t` over `k` tags, in lexicographic order.
pub fn all_paths(t: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..t {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |j| {
                    let mut q = p.clone();
                    q.push(j);
                    q
                })
            })
            .collect();
    }
    out
}

/// Path score written out directly from the definition.
pub fn path_score(e: &Array2<f64>, p: &CrfParams, path: &[usize]) -> f64 {
    let mut s = p.start[path[0]] + p.end[path[path.len() - 1]];
    for (i, &y) in path.iter().enumerate() {
        s += e[[i, y]];
        if i > 0 {
            s += p.transitions[[path[i - 1], y]];
        }
    }
    s
}

/// Log-partition by enumeration, accumulated with a max shift.
pub fn brute_log_partition(e: &Array2<f64>, p: &CrfParams) -> f64 {
    let scores: Vec<f64> = all_paths(e.nrows(), e.ncols()).iter().map(|q| path_score(e, p, q)).collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
}

/// Highest-scoring admissible path; the first one in lexicographic order
/// wins ties.
pub fn brute_argmax(e: &Array2<f64>, p: &CrfParams, mask: Option<&ConstraintMask>) -> Option<(Vec<usize>, f64)> {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for q in all_paths(e.nrows(), e.ncols()) {
        if mask.is_some_and(|m| !m.admits(&q)) {
            continue;
        }
        let s = path_score(e, p, &q);
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((q, s));
        }
    }
    best
}

/// Random CRF instance with entries drawn by `draw`.
pub fn random_instance(t: usize, k: usize, mut draw: impl FnMut() -> f64) -> (Array2<f64>, CrfParams) {
    let e = Array2::from_shape_simple_fn((t, k), &mut draw);
    let p = CrfParams {
        transitions: Array2::from_shape_simple_fn((k, k), &mut draw),
        start: Array1::from_shape_simple_fn(k, &mut draw),
        end: Array1::from_shape_simple_fn(k, &mut draw),
    };
    (e, p)
}
