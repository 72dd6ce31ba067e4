//! Corpus ingestion, character vocabulary, and BIO tag logic.
//!
//! The column format is UTF-8 with one `token<TAB>tag` pair per line and a
//! blank line between sentences. Tags follow the BIO scheme: `O`, `B-<TYPE>`
//! and `I-<TYPE>`.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;
pub const MASK_ID: usize = 4;

/// Number of reserved ids; ordinary tokens start here.
pub const NUM_SPECIALS: usize = 5;

const SPECIALS: [&str; NUM_SPECIALS] = [PAD, UNK, CLS, SEP, MASK];

/// A parsed BIO tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

impl<'a> Tag<'a> {
    /// Parse `O`, `B-X` or `I-X` (X non-empty). Anything else is `None`.
    pub fn parse(s: &'a str) -> Option<Self> {
        if s == "O" {
            return Some(Tag::Outside);
        }
        if let Some(t) = s.strip_prefix("B-") {
            return (!t.is_empty()).then_some(Tag::Begin(t));
        }
        if let Some(t) = s.strip_prefix("I-") {
            return (!t.is_empty()).then_some(Tag::Inside(t));
        }
        None
    }

    pub fn entity_type(&self) -> Option<&'a str> {
        match *self {
            Tag::Outside => None,
            Tag::Begin(t) | Tag::Inside(t) => Some(t),
        }
    }
}

/// A character-token sequence with aligned BIO tags.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
}

impl TaggedSentence {
    pub fn new(tokens: Vec<String>, tags: Vec<String>) -> Result<Self> {
        if tokens.len() != tags.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} tokens but {} tags",
                tokens.len(),
                tags.len()
            )));
        }
        if let Some(bad) = tags.iter().find(|t| Tag::parse(t).is_none()) {
            return Err(Error::InvalidTag(bad.clone()));
        }
        Ok(Self { tokens, tags })
    }

    /// Untagged sentence: one token per character, every tag `O`.
    pub fn from_text(text: &str) -> Self {
        let tokens = chars(text);
        let tags = vec!["O".to_string(); tokens.len()];
        Self { tokens, tags }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Split text into one token per unicode scalar value.
pub fn chars(text: &str) -> Vec<String> {
    text.chars().map(String::from).collect()
}

/// Entity types plus the derived tag inventory `O, B-t1, I-t1, B-t2, ...`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagSet {
    entity_types: Vec<String>,
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

impl TagSet {
    pub fn new<S: AsRef<str>>(entity_types: &[S]) -> Result<Self> {
        let mut types: Vec<String> = Vec::with_capacity(entity_types.len());
        for t in entity_types {
            let t = t.as_ref();
            if t.is_empty() || t.chars().any(|c| c.is_whitespace() || c == ',') {
                return Err(Error::InvalidTagSet(format!("bad entity type {t:?}")));
            }
            if types.iter().any(|x| x == t) {
                return Err(Error::InvalidTagSet(format!("duplicate entity type {t:?}")));
            }
            types.push(t.to_string());
        }
        let mut tags = vec!["O".to_string()];
        for t in &types {
            tags.push(format!("B-{t}"));
            tags.push(format!("I-{t}"));
        }
        let index = tags
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Self {
            entity_types: types,
            tags,
            index,
        })
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn tag(&self, index: usize) -> &str {
        &self.tags[index]
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.index.contains_key(tag)
    }

    /// Map a tag sequence to indices; fails on the first tag outside the inventory.
    pub fn indices<S: AsRef<str>>(&self, tags: &[S]) -> Result<Vec<usize>> {
        tags.iter()
            .map(|t| {
                self.index_of(t.as_ref())
                    .ok_or_else(|| Error::InvalidTag(t.as_ref().to_string()))
            })
            .collect()
    }
}

/// Parse a column-format corpus. Tags are validated against `tagset`.
pub fn parse_column_file(text: &str, tagset: &TagSet) -> Result<Vec<TaggedSentence>> {
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    for (i, raw) in text.split('\n').enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            if !tokens.is_empty() {
                out.push(TaggedSentence {
                    tokens: std::mem::take(&mut tokens),
                    tags: std::mem::take(&mut tags),
                });
            }
            continue;
        }
        let mut fields = line.split('\t');
        let (token, tag) = match (fields.next(), fields.next(), fields.next()) {
            (Some(tok), Some(tag), None) if !tok.is_empty() && !tag.trim().is_empty() => {
                (tok, tag.trim_end())
            }
            _ => {
                return Err(Error::MalformedLine {
                    line: line_no,
                    content: line.to_string(),
                })
            }
        };
        if !tagset.contains(tag) {
            return Err(Error::UnknownTag {
                line: line_no,
                tag: tag.to_string(),
            });
        }
        tokens.push(token.to_string());
        tags.push(tag.to_string());
    }
    if !tokens.is_empty() {
        out.push(TaggedSentence { tokens, tags });
    }
    Ok(out)
}

/// Render sentences in the column format read by [`parse_column_file`].
pub fn to_column_text(sentences: &[TaggedSentence]) -> String {
    let mut s = String::new();
    for (k, sent) in sentences.iter().enumerate() {
        if k > 0 {
            s.push('\n');
        }
        for (tok, tag) in sent.tokens.iter().zip(&sent.tags) {
            s.push_str(tok);
            s.push('\t');
            s.push_str(tag);
            s.push('\n');
        }
    }
    s
}

/// An entity mention covering tokens `start..=end`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub etype: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, etype: impl Into<String>) -> Self {
        Self {
            start,
            end,
            etype: etype.into(),
        }
    }
}

/// Decode BIO tags into entity spans.
///
/// A run starts at `B-X` and extends over following `I-X`. An `I-X` that
/// does not continue an `X` run is read as `B-X`. Tags that do not parse are
/// read as `O`, so the function is total.
pub fn extract_spans<S: AsRef<str>>(tags: &[S]) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, t) in tags.iter().enumerate() {
        match Tag::parse(t.as_ref()).unwrap_or(Tag::Outside) {
            Tag::Outside => {
                if let Some((s, ty)) = open.take() {
                    spans.push(EntitySpan::new(s, i - 1, ty));
                }
            }
            Tag::Begin(ty) => {
                if let Some((s, prev)) = open.replace((i, ty)) {
                    spans.push(EntitySpan::new(s, i - 1, prev));
                }
            }
            Tag::Inside(ty) => match open {
                Some((_, cur)) if cur == ty => {}
                _ => {
                    if let Some((s, prev)) = open.replace((i, ty)) {
                        spans.push(EntitySpan::new(s, i - 1, prev));
                    }
                }
            },
        }
    }
    if let Some((s, ty)) = open {
        spans.push(EntitySpan::new(s, tags.len() - 1, ty));
    }
    spans
}

/// Render non-overlapping spans as a BIO tag sequence of length `len`.
pub fn spans_to_tags(spans: &[EntitySpan], len: usize) -> Vec<String> {
    let mut tags = vec!["O".to_string(); len];
    for sp in spans {
        tags[sp.start] = format!("B-{}", sp.etype);
        for t in &mut tags[sp.start + 1..=sp.end] {
            *t = format!("I-{}", sp.etype);
        }
    }
    tags
}

/// An illegal adjacent pair: `next` is `I-X` but `prev` is neither `B-X`
/// nor `I-X`. `prev` is `None` for a sequence-initial `I-X`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub position: usize,
    pub prev: Option<String>,
    pub next: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.prev {
            Some(p) => write!(f, "position {}: {} -> {}", self.position, p, self.next),
            None => write!(f, "position {}: sequence starts with {}", self.position, self.next),
        }
    }
}

/// List every BIO ordering violation in `tags`.
pub fn check_transitions<S: AsRef<str>>(tags: &[S]) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, t) in tags.iter().enumerate() {
        let Some(Tag::Inside(ty)) = Tag::parse(t.as_ref()) else {
            continue;
        };
        let ok = i > 0
            && matches!(
                Tag::parse(tags[i - 1].as_ref()),
                Some(Tag::Begin(p)) | Some(Tag::Inside(p)) if p == ty
            );
        if !ok {
            out.push(Violation {
                position: i,
                prev: (i > 0).then(|| tags[i - 1].as_ref().to_string()),
                next: t.as_ref().to_string(),
            });
        }
    }
    out
}

/// Token vocabulary with the five reserved specials at ids 0..=4.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_freq: usize,
}

impl Vocab {
    /// Build from token occurrences. Tokens seen at least `min_freq` times get
    /// ids by descending frequency, ties by codepoint order.
    pub fn build<'a, I>(tokens: I, min_freq: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            if !SPECIALS.contains(&t) {
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_freq)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut vocab = Self::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()));
        vocab.min_freq = min_freq;
        vocab
    }

    /// Specials followed by `tokens` in the given order (duplicates and
    /// special spellings skipped).
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut list: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> =
            list.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        for t in tokens {
            if !index.contains_key(&t) {
                index.insert(t.clone(), list.len());
                list.push(t);
            }
        }
        Self {
            tokens: list,
            index,
            min_freq: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    /// Id of `token`, or the `[UNK]` id.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// All tokens in id order, specials included.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Build a vocabulary from the tokens of a tagged corpus.
pub fn build_vocab(corpus: &[TaggedSentence], min_freq: usize) -> Vocab {
    Vocab::build(
        corpus.iter().flat_map(|s| s.tokens.iter().map(String::as_str)),
        min_freq,
    )
}

/// Model input: token ids, attention mask, segment ids, and which positions
/// hold structural specials (`[CLS]`, `[SEP]`, `[PAD]`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoded {
    pub ids: Vec<usize>,
    pub attention_mask: Vec<bool>,
    pub segments: Vec<usize>,
    pub specials: Vec<bool>,
}

impl Encoded {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of leading positions with mask 1.
    pub fn active_len(&self) -> usize {
        self.attention_mask.iter().take_while(|&&m| m).count()
    }

    /// Drop trailing padding.
    pub fn trimmed(mut self) -> Self {
        let n = self.active_len();
        self.ids.truncate(n);
        self.attention_mask.truncate(n);
        self.segments.truncate(n);
        self.specials.truncate(n);
        self
    }
}

/// `[CLS] tokens [SEP]` padded with `[PAD]` to `max_len`, segment 0 throughout.
pub fn encode_tokens<S: AsRef<str>>(vocab: &Vocab, tokens: &[S], max_len: usize) -> Result<Encoded> {
    if tokens.len() + 2 > max_len {
        return Err(Error::Truncation {
            len: tokens.len(),
            max_len,
        });
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    ids.extend(tokens.iter().map(|t| vocab.id(t.as_ref())));
    ids.push(SEP_ID);
    let real = ids.len();
    ids.resize(max_len, PAD_ID);
    let attention_mask = (0..max_len).map(|i| i < real).collect();
    let specials = (0..max_len)
        .map(|i| i == 0 || i + 1 >= real)
        .collect();
    Ok(Encoded {
        ids,
        attention_mask,
        segments: vec![0; max_len],
        specials,
    })
}

pub fn encode_sentence(vocab: &Vocab, sentence: &TaggedSentence, max_len: usize) -> Result<Encoded> {
    encode_tokens(vocab, &sentence.tokens, max_len)
}

/// `[CLS] a [SEP] b [SEP]` padded to `max_len`; segment 0 up to the first
/// separator, 1 after it.
pub fn encode_pair<S: AsRef<str>>(
    vocab: &Vocab,
    a: &[S],
    b: &[S],
    max_len: usize,
) -> Result<Encoded> {
    let len = a.len() + b.len();
    if len + 3 > max_len {
        return Err(Error::Truncation {
            len,
            max_len: max_len.saturating_sub(1),
        });
    }
    let mut ids = vec![CLS_ID];
    ids.extend(a.iter().map(|t| vocab.id(t.as_ref())));
    ids.push(SEP_ID);
    let first_sep = ids.len() - 1;
    ids.extend(b.iter().map(|t| vocab.id(t.as_ref())));
    ids.push(SEP_ID);
    let real = ids.len();
    ids.resize(max_len, PAD_ID);
    Ok(Encoded {
        ids,
        attention_mask: (0..max_len).map(|i| i < real).collect(),
        segments: (0..max_len)
            .map(|i| usize::from(i > first_sep && i < real))
            .collect(),
        specials: (0..max_len)
            .map(|i| i == 0 || i == first_sep || i + 1 >= real)
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn per_loc() -> TagSet {
        TagSet::new(&["PER", "LOC"]).unwrap()
    }

    #[test]
    fn tagset_inventory() {
        let ts = per_loc();
        assert_eq!(ts.tags(), &["O", "B-PER", "I-PER", "B-LOC", "I-LOC"]);
        for (i, t) in ts.tags().iter().enumerate() {
            assert_eq!(ts.index_of(t), Some(i));
        }
        assert!(TagSet::new(&["PER", "PER"]).is_err());
        assert!(TagSet::new(&[""]).is_err());
        assert_eq!(TagSet::new::<&str>(&[]).unwrap().tags(), &["O"]);
    }

    #[test]
    fn parse_two_sentences() {
        let text = "北\tB-LOC\n京\tI-LOC\n\n我\tO\n";
        let s = parse_column_file(text, &per_loc()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].tokens, ["北", "京"]);
        assert_eq!(s[1].tags, ["O"]);
    }

    #[test]
    fn parse_empty_input() {
        assert!(parse_column_file("", &per_loc()).unwrap().is_empty());
    }

    #[test]
    fn parse_missing_tag_column() {
        let err = parse_column_file("我\tO\n北\n", &per_loc()).unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line: 2, .. }), "{err}");
    }

    #[test]
    fn parse_unknown_tag() {
        let err = parse_column_file("我\tO\n北\tB-ORG\n", &per_loc()).unwrap_err();
        match err {
            Error::UnknownTag { line, tag } => {
                assert_eq!(line, 2);
                assert_eq!(tag, "B-ORG");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn parse_tolerates_crlf_and_trailing_space() {
        let s = parse_column_file("我\tO \r\n你\tB-PER\r\n", &per_loc()).unwrap();
        assert_eq!(s[0].tags, ["O", "B-PER"]);
    }

    #[test]
    fn spans_basic() {
        let s = extract_spans(&tags(&["B-PER", "I-PER", "O", "B-LOC"]));
        assert_eq!(s, vec![EntitySpan::new(0, 1, "PER"), EntitySpan::new(3, 3, "LOC")]);
        assert!(extract_spans(&tags(&["O", "O", "O"])).is_empty());
    }

    #[test]
    fn spans_repair_dangling_inside() {
        assert_eq!(extract_spans(&tags(&["O", "I-PER"])), vec![EntitySpan::new(1, 1, "PER")]);
        assert_eq!(
            extract_spans(&tags(&["B-PER", "I-LOC", "I-LOC"])),
            vec![EntitySpan::new(0, 0, "PER"), EntitySpan::new(1, 2, "LOC")]
        );
        assert_eq!(
            extract_spans(&tags(&["B-PER", "B-PER"])),
            vec![EntitySpan::new(0, 0, "PER"), EntitySpan::new(1, 1, "PER")]
        );
    }

    #[test]
    fn transitions() {
        assert!(check_transitions(&tags(&["B-PER", "I-PER"])).is_empty());
        let v = check_transitions(&tags(&["O", "I-PER"]));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].position, 1);
        let v = check_transitions(&tags(&["B-PER", "I-LOC"]));
        assert_eq!(v[0].position, 1);
        assert_eq!(v[0].prev.as_deref(), Some("B-PER"));
        let v = check_transitions(&tags(&["I-PER"]));
        assert_eq!(v[0].position, 0);
        assert_eq!(v[0].prev, None);
    }

    #[test]
    fn vocab_specials_and_threshold() {
        let corpus = vec![TaggedSentence::from_text("北京北京上")];
        let v = build_vocab(&corpus, 2);
        assert_eq!(v.id(PAD), 0);
        assert_eq!(v.id(MASK), 4);
        assert_eq!(&v.tokens()[..5], &[PAD, UNK, CLS, SEP, MASK]);
        assert_eq!(v.id("上"), UNK_ID);
        // tie on frequency 2: codepoint order 京 (U+4EAC) < 北 (U+5317)
        assert_eq!(v.id("京"), 5);
        assert_eq!(v.id("北"), 6);
        assert_eq!(v, build_vocab(&corpus, 2));
    }

    #[test]
    fn encode_pads_and_masks() {
        let corpus = vec![TaggedSentence::from_text("北京")];
        let v = build_vocab(&corpus, 1);
        let e = encode_sentence(&v, &corpus[0], 6).unwrap();
        assert_eq!(e.ids, vec![CLS_ID, v.id("北"), v.id("京"), SEP_ID, PAD_ID, PAD_ID]);
        assert_eq!(e.attention_mask, vec![true, true, true, true, false, false]);
        assert_eq!(e.segments, vec![0; 6]);
        assert_eq!(e.specials, vec![true, false, false, true, true, true]);

        let exact = encode_sentence(&v, &corpus[0], 4).unwrap();
        assert!(exact.attention_mask.iter().all(|&m| m));
        assert!(matches!(
            encode_sentence(&v, &corpus[0], 3),
            Err(Error::Truncation { .. })
        ));

        let oov = encode_sentence(&v, &TaggedSentence::from_text("南"), 4).unwrap();
        assert_eq!(oov.ids[1], UNK_ID);
    }

    #[test]
    fn encode_pair_segments() {
        let v = Vocab::from_tokens(["a", "b", "c"].map(String::from));
        let e = encode_pair(&v, &["a"], &["b", "c"], 8).unwrap();
        assert_eq!(e.ids[..6], [CLS_ID, 5, SEP_ID, 6, 7, SEP_ID]);
        assert_eq!(e.segments, vec![0, 0, 0, 1, 1, 1, 0, 0]);
        assert_eq!(e.specials, vec![true, false, true, false, false, true, true, true]);
    }
}
