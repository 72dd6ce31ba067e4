//! Masking plans and sentence-level sample builders.

use std::collections::BTreeSet;

use proptest::prelude::*;

use nerkit::corpus::{encode_tokens, Vocab, PAD_ID};
use nerkit::pretrain::{
    make_dlm_samples, make_nsp_pairs, plan_dynamic_mask, plan_span_mask, plan_static_mask, Action, MaskPlan,
    MaskingParams, SpanKind, SpanLexicon,
};

const LETTERS: &str = "abcdefgh";

fn lexicon() -> SpanLexicon {
    let mut lex = SpanLexicon::new();
    lex.insert("abc", SpanKind::Entity).unwrap();
    lex.insert("de", SpanKind::Phrase).unwrap();
    lex.insert("ha", SpanKind::Entity).unwrap();
    lex
}

/// A `[CLS] tokens [SEP] [PAD]...` input over a small alphabet.
fn input() -> impl Strategy<Value = (Vec<String>, usize)> {
    (prop::collection::vec(0usize..LETTERS.len(), 1..60), 0usize..5)
        .prop_map(|(v, pad)| (v.into_iter().map(|i| LETTERS[i..i + 1].to_string()).collect(), pad))
}

fn plans(tokens: &[String], pad: usize, seed: u64) -> (Vec<usize>, Vec<bool>, Vec<MaskPlan>) {
    let vocab = Vocab::from_tokens(LETTERS.chars().map(String::from));
    let enc = encode_tokens(&vocab, tokens, tokens.len() + 2 + pad).unwrap();
    let params = MaskingParams::new(0.15, 30);
    let mut surf = vec!["[CLS]".to_string()];
    surf.extend(tokens.iter().cloned());
    surf.push("[SEP]".into());
    surf.extend(std::iter::repeat_n("[PAD]".to_string(), pad));
    let ps = vec![
        plan_static_mask(&enc.ids, &enc.specials, &params, seed).unwrap(),
        plan_dynamic_mask(&enc.ids, &enc.specials, &params, seed, 3).unwrap(),
        plan_span_mask(&enc.ids, &enc.specials, &surf, &lexicon(), &params, seed).unwrap(),
    ];
    (enc.ids, enc.specials, ps)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn plans_respect_specials_and_revert((tokens, pad) in input(), seed in any::<u64>()) {
        let (ids, specials, ps) = plans(&tokens, pad, seed);
        for p in &ps {
            let acted: Vec<usize> = p.positions().collect();
            prop_assert!(acted.iter().all(|&i| !specials[i]));
            prop_assert_eq!(p.labels.iter().map(|&(i, _)| i).collect::<Vec<_>>(), acted);
            prop_assert!(p.labels.iter().all(|&(i, orig)| ids[i] == orig));
            prop_assert_eq!(p.revert(&p.apply(&ids)), ids.clone());
            for &(_, a) in &p.actions {
                if let Action::Random(r) = a {
                    prop_assert!((5..30).contains(&r));
                }
            }
        }
    }

    #[test]
    fn basic_plans_hit_the_budget((tokens, pad) in input(), seed in any::<u64>()) {
        let (_, _, ps) = plans(&tokens, pad, seed);
        let budget = MaskingParams::new(0.15, 30).budget(tokens.len());
        prop_assert_eq!(ps[0].actions.len(), budget);
        prop_assert_eq!(ps[1].actions.len(), budget);
    }

    #[test]
    fn span_plans_never_split_a_span((tokens, pad) in input(), seed in any::<u64>()) {
        let (_, specials, ps) = plans(&tokens, pad, seed);
        let mut surf = vec!["[CLS]".to_string()];
        surf.extend(tokens.iter().cloned());
        surf.push("[SEP]".into());
        surf.extend(std::iter::repeat_n("[PAD]".to_string(), pad));
        let acted: BTreeSet<usize> = ps[2].positions().collect();
        for (s, e) in lexicon().find_spans(&surf, &specials) {
            let inside = (s..e).filter(|i| acted.contains(i)).count();
            prop_assert!(inside == 0 || inside == e - s, "span {s}..{e} split");
        }
    }

    #[test]
    fn dynamic_epochs_keep_the_count((tokens, _pad) in input(), seed in any::<u64>(), epoch in 0u64..50) {
        let vocab = Vocab::from_tokens(LETTERS.chars().map(String::from));
        let enc = encode_tokens(&vocab, &tokens, tokens.len() + 2).unwrap();
        let params = MaskingParams::new(0.15, 30);
        let a = plan_dynamic_mask(&enc.ids, &enc.specials, &params, seed, epoch).unwrap();
        let b = plan_dynamic_mask(&enc.ids, &enc.specials, &params, seed, epoch + 1).unwrap();
        prop_assert_eq!(a.actions.len(), b.actions.len());
        prop_assert_eq!(&a, &plan_dynamic_mask(&enc.ids, &enc.specials, &params, seed, epoch).unwrap());
    }
}

#[test]
fn specials_never_selected_over_many_seeds() {
    let vocab = Vocab::from_tokens(LETTERS.chars().map(String::from));
    let tokens: Vec<String> = LETTERS.chars().map(String::from).collect();
    let enc = encode_tokens(&vocab, &tokens, 14).unwrap();
    let params = MaskingParams::new(0.5, 30);
    for seed in 0..1000 {
        for p in [
            plan_static_mask(&enc.ids, &enc.specials, &params, seed).unwrap(),
            plan_dynamic_mask(&enc.ids, &enc.specials, &params, seed, seed % 7).unwrap(),
        ] {
            for pos in p.positions() {
                assert!(!enc.specials[pos]);
                assert_ne!(enc.ids[pos], PAD_ID);
            }
        }
    }
}

#[test]
fn plan_jsonl_round_trip() {
    let (_, _, ps) = plans(&LETTERS.chars().map(String::from).collect::<Vec<_>>(), 2, 11);
    for p in ps {
        let line = serde_json::to_string(&p).unwrap();
        assert!(!line.contains('\n'));
        let back: MaskPlan = serde_json::from_str(&line).unwrap();
        assert_eq!(back, p);
    }
}

fn sentence(tag: &str) -> Vec<String> {
    vec![tag.to_string()]
}

#[test]
fn nsp_pairs_are_reproducible_and_adjacent_when_positive() {
    let docs = vec![vec![sentence("a0"), sentence("a1")], vec![sentence("b0")]];
    let x = make_nsp_pairs(&docs, 200, 3).unwrap();
    assert_eq!(x, make_nsp_pairs(&docs, 200, 3).unwrap());
    for p in &x {
        assert_eq!(p.segment_a, sentence("a0"));
        if p.is_next {
            assert_eq!(p.segment_b, sentence("a1"));
        } else {
            assert_eq!(p.segment_b, sentence("b0"));
        }
    }
    assert!(x.iter().any(|p| p.is_next) && x.iter().any(|p| !p.is_next));
}

#[test]
fn dlm_fakes_differ_in_exactly_one_turn() {
    let dialogues: Vec<Vec<Vec<String>>> = (0..500)
        .map(|d| (0..4).map(|t| sentence(&format!("d{d}t{t}"))).collect())
        .collect();
    let samples = make_dlm_samples(&dialogues, 5).unwrap();
    assert_eq!(samples.len(), dialogues.len());
    for (s, d) in samples.iter().zip(&dialogues) {
        let differing: Vec<usize> = (0..d.len()).filter(|&i| s.turns[i] != d[i]).collect();
        if s.is_real {
            assert!(differing.is_empty());
            assert_eq!(s.replaced_turn, None);
        } else {
            assert_eq!(differing.len(), 1);
            assert_eq!(s.replaced_turn, Some(differing[0]));
        }
    }
}
