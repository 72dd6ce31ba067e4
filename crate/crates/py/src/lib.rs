//! Python bindings: tag sets, CRF scoring and decoding, span extraction,
//! entity scoring, masking plans and the encoder + CRF tagger.

use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use nerkit::corpus::{self, TagSet, TaggedSentence, Vocab};
use nerkit::crf::{self, bio_constraint_mask, CrfParams};
use nerkit::encoder::EncoderConfig;
use nerkit::evaluator::{self, ReportRow};
use nerkit::pretrain::{self, Action, MaskingParams, SpanKind, SpanLexicon};
use nerkit::trainer::{self, TaggerModel, TrainConfig};
use nerkit::{checkpoint, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>, what: &str) -> PyResult<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!("{what} rows differ in length")));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect()).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Emissions `(T, K)` plus CRF parameters, with shapes checked.
fn crf_inputs(
    emissions: Vec<Vec<f64>>,
    transitions: Vec<Vec<f64>>,
    start: Vec<f64>,
    end: Vec<f64>,
) -> PyResult<(Array2<f64>, CrfParams)> {
    let e = matrix(emissions, "emissions")?;
    let t = matrix(transitions, "transitions")?;
    let k = t.nrows();
    if e.nrows() == 0 || e.ncols() != k || t.ncols() != k || start.len() != k || end.len() != k {
        return Err(PyValueError::new_err(format!(
            "expected emissions (T>=1, K), transitions (K, K), start (K), end (K); got {:?}, {:?}, {}, {}",
            e.dim(),
            t.dim(),
            start.len(),
            end.len()
        )));
    }
    Ok((
        e,
        CrfParams {
            transitions: t,
            start: Array1::from(start),
            end: Array1::from(end),
        },
    ))
}

/// BIO tag inventory: `O`, then `B-X`, `I-X` for each entity type in order.
#[pyclass(name = "TagSet", module = "nerkit_py", frozen)]
struct PyTagSet {
    inner: TagSet,
}

#[pymethods]
impl PyTagSet {
    #[new]
    fn new(entity_types: Vec<String>) -> PyResult<Self> {
        Ok(Self {
            inner: TagSet::new(&entity_types).map_err(py_err)?,
        })
    }

    #[getter]
    fn tags(&self) -> Vec<String> {
        self.inner.tags().to_vec()
    }

    #[getter]
    fn entity_types(&self) -> Vec<String> {
        self.inner.entity_types().to_vec()
    }

    fn index(&self, tag: &str) -> PyResult<usize> {
        self.inner
            .index_of(tag)
            .ok_or_else(|| PyValueError::new_err(format!("unknown tag {tag:?}")))
    }

    fn __len__(&self) -> usize {
        self.inner.num_tags()
    }

    fn __repr__(&self) -> String {
        format!("TagSet({:?})", self.inner.entity_types())
    }
}

/// Entity spans of a BIO sequence as `(start, end_inclusive, type)`.
#[pyfunction]
fn extract_spans(tags: Vec<String>) -> Vec<(usize, usize, String)> {
    corpus::extract_spans(&tags).into_iter().map(|s| (s.start, s.end, s.etype)).collect()
}

/// Positions where an `I-X` does not continue an `X` entity, as
/// `(position, previous_tag_or_None, tag)`.
#[pyfunction]
fn check_transitions(tags: Vec<String>) -> Vec<(usize, Option<String>, String)> {
    corpus::check_transitions(&tags).into_iter().map(|v| (v.position, v.prev, v.next)).collect()
}

#[pyfunction]
fn crf_log_partition(emissions: Vec<Vec<f64>>, transitions: Vec<Vec<f64>>, start: Vec<f64>, end: Vec<f64>) -> PyResult<f64> {
    let (e, p) = crf_inputs(emissions, transitions, start, end)?;
    Ok(crf::log_partition(e.view(), &p))
}

#[pyfunction]
fn crf_nll(
    emissions: Vec<Vec<f64>>,
    transitions: Vec<Vec<f64>>,
    start: Vec<f64>,
    end: Vec<f64>,
    tags: Vec<usize>,
) -> PyResult<f64> {
    let (e, p) = crf_inputs(emissions, transitions, start, end)?;
    crf::nll(e.view(), &p, &tags).map_err(py_err)
}

/// Best path and its score. With `tagset`, transitions that break BIO are
/// forbidden (tag indices follow the tag set's order).
#[pyfunction]
#[pyo3(signature = (emissions, transitions, start, end, tagset=None))]
fn crf_viterbi(
    emissions: Vec<Vec<f64>>,
    transitions: Vec<Vec<f64>>,
    start: Vec<f64>,
    end: Vec<f64>,
    tagset: Option<PyRef<'_, PyTagSet>>,
) -> PyResult<(Vec<usize>, f64)> {
    let (e, p) = crf_inputs(emissions, transitions, start, end)?;
    let mask = tagset.map(|t| bio_constraint_mask(&t.inner));
    if let Some(m) = &mask {
        if m.num_tags() != p.start.len() {
            return Err(PyValueError::new_err("tag set size does not match K"));
        }
    }
    crf::viterbi(e.view(), &p, mask.as_ref()).map_err(py_err)
}

/// Micro-averaged entity precision, recall and F1 (percent) of predicted
/// tag sequences against gold ones.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, gold: Vec<Vec<String>>, pred: Vec<Vec<String>>) -> PyResult<Bound<'py, PyDict>> {
    let gold: Vec<TaggedSentence> = gold
        .into_iter()
        .map(|tags| TaggedSentence::new(vec![String::new(); tags.len()], tags))
        .collect::<nerkit::Result<_>>()
        .map_err(py_err)?;
    let row = evaluator::evaluate(&gold, &pred).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("precision", row.precision)?;
    d.set_item("recall", row.recall)?;
    d.set_item("f1", row.f1)?;
    if let Some(c) = row.counts {
        d.set_item("num_gold", c.num_gold)?;
        d.set_item("num_pred", c.num_pred)?;
        d.set_item("num_correct", c.num_correct)?;
    }
    Ok(d)
}

/// Fixed-width comparison table from `(model, precision, recall, f1)` rows.
#[pyfunction]
fn format_report(rows: Vec<(String, f64, f64, f64)>) -> String {
    let rows: Vec<ReportRow> = rows.into_iter().map(|(m, p, r, f)| ReportRow::new(m, p, r, f)).collect();
    evaluator::format_report(&rows)
}

/// Plan MLM masking for one id sequence. `strategy` is `static`, `dynamic`
/// or `span`; span masking needs `tokens` and uses `lexicon`
/// (surface -> "entity" | "phrase"). Returns `{"actions": [(pos, kind,
/// random_id_or_None)], "labels": [(pos, original_id)]}`.
#[pyfunction]
#[pyo3(signature = (ids, specials, vocab_size, strategy="static", rate=0.15, seed=0, epoch=0, tokens=None, lexicon=None))]
#[allow(clippy::too_many_arguments)]
fn plan_mask<'py>(
    py: Python<'py>,
    ids: Vec<usize>,
    specials: Vec<bool>,
    vocab_size: usize,
    strategy: &str,
    rate: f64,
    seed: u64,
    epoch: u64,
    tokens: Option<Vec<String>>,
    lexicon: Option<Vec<(String, String)>>,
) -> PyResult<Bound<'py, PyDict>> {
    let params = MaskingParams::new(rate, vocab_size);
    let plan = match strategy {
        "static" => pretrain::plan_static_mask(&ids, &specials, &params, seed),
        "dynamic" => pretrain::plan_dynamic_mask(&ids, &specials, &params, seed, epoch),
        "span" => {
            let tokens = tokens.ok_or_else(|| PyValueError::new_err("span masking needs tokens"))?;
            let mut lex = SpanLexicon::new();
            for (surface, kind) in lexicon.unwrap_or_default() {
                let kind = match kind.as_str() {
                    "entity" => SpanKind::Entity,
                    "phrase" => SpanKind::Phrase,
                    _ => return Err(PyValueError::new_err(format!("unknown span kind {kind:?}"))),
                };
                lex.insert(&surface, kind).map_err(py_err)?;
            }
            pretrain::plan_span_mask(&ids, &specials, &tokens, &lex, &params, seed)
        }
        _ => return Err(PyValueError::new_err(format!("unknown strategy {strategy:?}"))),
    }
    .map_err(py_err)?;
    let actions: Vec<(usize, &str, Option<usize>)> = plan
        .actions
        .iter()
        .map(|&(pos, a)| match a {
            Action::Mask => (pos, "mask", None),
            Action::Random(id) => (pos, "random", Some(id)),
            Action::Keep => (pos, "keep", None),
        })
        .collect();
    let d = PyDict::new(py);
    d.set_item("actions", actions)?;
    d.set_item("labels", plan.labels)?;
    Ok(d)
}

/// Encoder + projection + CRF tagger with its vocabulary.
#[pyclass(name = "Tagger", module = "nerkit_py")]
struct PyTagger {
    model: TaggerModel,
    vocab: Vocab,
}

fn sentences(data: Vec<(Vec<String>, Vec<String>)>) -> PyResult<Vec<TaggedSentence>> {
    data.into_iter()
        .map(|(tokens, tags)| TaggedSentence::new(tokens, tags))
        .collect::<nerkit::Result<_>>()
        .map_err(py_err)
}

#[pymethods]
impl PyTagger {
    /// Fresh tagger whose vocabulary is built from `corpus` (a list of
    /// `(tokens, tags)` pairs).
    #[new]
    #[pyo3(signature = (entity_types, corpus, preset="toy", seed=0, min_freq=1))]
    fn new(
        entity_types: Vec<String>,
        corpus: Vec<(Vec<String>, Vec<String>)>,
        preset: &str,
        seed: u64,
        min_freq: usize,
    ) -> PyResult<Self> {
        let data = sentences(corpus)?;
        let vocab = corpus::build_vocab(&data, min_freq);
        let tagset = TagSet::new(&entity_types).map_err(py_err)?;
        let cfg = EncoderConfig::preset(preset).map_err(py_err)?.with_vocab_size(vocab.len());
        let model = trainer::assemble_tagger(&cfg, &tagset, seed).map_err(py_err)?;
        Ok(Self { model, vocab })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (model, vocab) = checkpoint::load_tagger(path).map_err(py_err)?;
        Ok(Self { model, vocab })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::save_tagger(path, &self.model, &self.vocab).map_err(py_err)
    }

    /// Fine-tune in place; returns the mean loss of each epoch.
    #[pyo3(signature = (data, epochs=2, learning_rate=5e-5, batch_size=16, seed=0))]
    fn finetune(
        &mut self,
        py: Python<'_>,
        data: Vec<(Vec<String>, Vec<String>)>,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let data = sentences(data)?;
        let cfg = TrainConfig {
            epochs,
            learning_rate,
            batch_size,
            seed,
            ..TrainConfig::default()
        };
        let (model, vocab) = (&mut self.model, &self.vocab);
        let history = py
            .detach(|| trainer::finetune(model, vocab, &data, &cfg, |_| {}))
            .map_err(py_err)?;
        Ok(history.epoch_losses)
    }

    fn predict(&self, tokens: Vec<String>) -> PyResult<Vec<String>> {
        trainer::predict_tags(&self.model, &tokens, &self.vocab).map_err(py_err)
    }

    #[getter]
    fn tags(&self) -> Vec<String> {
        self.model.tagset.tags().to_vec()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.model.tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }
}

#[pymodule]
fn nerkit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTagSet>()?;
    m.add_class::<PyTagger>()?;
    m.add_function(wrap_pyfunction!(extract_spans, m)?)?;
    m.add_function(wrap_pyfunction!(check_transitions, m)?)?;
    m.add_function(wrap_pyfunction!(crf_log_partition, m)?)?;
    m.add_function(wrap_pyfunction!(crf_nll, m)?)?;
    m.add_function(wrap_pyfunction!(crf_viterbi, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(format_report, m)?)?;
    m.add_function(wrap_pyfunction!(plan_mask, m)?)?;
    Ok(())
}
