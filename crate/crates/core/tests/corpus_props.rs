//! Round-trip and consistency properties of the corpus layer.

use proptest::prelude::*;

use nerkit::corpus::{
    check_transitions, encode_sentence, extract_spans, parse_column_file, spans_to_tags, to_column_text, EntitySpan,
    TagSet, TaggedSentence, Vocab,
};

const TAGS: [&str; 5] = ["O", "B-PER", "I-PER", "B-LOC", "I-LOC"];

/// Non-overlapping spans over a sequence of length `len`, from a list of
/// (gap, width, type) triples.
fn spans_strategy() -> impl Strategy<Value = (Vec<EntitySpan>, usize)> {
    prop::collection::vec((0usize..3, 1usize..4, prop::bool::ANY), 0..6).prop_flat_map(|parts| {
        let mut spans = Vec::new();
        let mut pos = 0;
        for (gap, width, per) in parts {
            pos += gap;
            spans.push(EntitySpan::new(pos, pos + width - 1, if per { "PER" } else { "LOC" }));
            pos += width;
        }
        (Just(spans), pos..pos + 3)
    })
}

fn sentence_strategy() -> impl Strategy<Value = TaggedSentence> {
    prop::collection::vec(("[a-z北京上海南]", 0usize..5), 1..12).prop_map(|v| {
        let (tokens, tags): (Vec<String>, Vec<String>) = v.into_iter().map(|(t, i)| (t, TAGS[i].to_string())).unzip();
        TaggedSentence::new(tokens, tags).unwrap()
    })
}

proptest! {
    #[test]
    fn spans_survive_rendering((spans, len) in spans_strategy()) {
        let tags = spans_to_tags(&spans, len);
        prop_assert_eq!(extract_spans(&tags), spans);
        prop_assert!(check_transitions(&tags).is_empty());
    }

    #[test]
    fn violations_exactly_when_repair_applies(idx in prop::collection::vec(0usize..5, 0..12)) {
        let tags: Vec<&str> = idx.iter().map(|&i| TAGS[i]).collect();
        let rerendered = spans_to_tags(&extract_spans(&tags), tags.len());
        prop_assert_eq!(check_transitions(&tags).is_empty(), rerendered == tags);
    }

    #[test]
    fn column_text_round_trips(sents in prop::collection::vec(sentence_strategy(), 0..5)) {
        let tagset = TagSet::new(&["PER", "LOC"]).unwrap();
        let text = to_column_text(&sents);
        prop_assert_eq!(parse_column_file(&text, &tagset).unwrap(), sents.clone());
        let padded: String = text.lines().map(|l| if l.is_empty() { "\n".to_string() } else { format!("{l}  \n") }).collect();
        prop_assert_eq!(parse_column_file(&padded, &tagset).unwrap(), sents);
    }

    #[test]
    fn encoded_length_is_max_len(s in sentence_strategy(), extra in 0usize..6) {
        let vocab = Vocab::from_tokens(["北", "京", "a"].map(String::from));
        let max_len = s.len() + 2 + extra;
        let enc = encode_sentence(&vocab, &s, max_len).unwrap();
        prop_assert_eq!(enc.ids.len(), max_len);
        prop_assert_eq!(enc.attention_mask.len(), max_len);
        prop_assert_eq!(enc.segments.len(), max_len);
        prop_assert_eq!(enc.active_len(), s.len() + 2);
        prop_assert!(encode_sentence(&vocab, &s, s.len() + 1).is_err());
    }
}

#[test]
fn vocabulary_is_deterministic() {
    let text = ["北京", "上海", "北京人", "南京"];
    let toks = || text.iter().flat_map(|s| s.chars()).map(|c| c.to_string()).collect::<Vec<_>>();
    let a = Vocab::build(toks().iter().map(String::as_str), 1);
    let b = Vocab::build(toks().iter().map(String::as_str), 1);
    assert_eq!(a, b);
    assert_eq!(a.token(5), Some("京"));
    assert_eq!(a.id("北"), 6);
}
