//! Command-line front end.
//!
//! `run` parses arguments, dispatches one of six subcommands and returns the
//! process exit code: 0 on success, 1 on a runtime failure (diagnostic on
//! stderr), 2 on a usage error (usage on stderr).
//!
//! Run configuration is a TOML file:
//!
//! ```toml
//! seed = 0
//!
//! [paths]                  # relative paths resolve against the file's directory
//! train = "train.txt"      # column corpus
//! dev = "dev.txt"          # optional
//! test = "test.txt"        # optional
//! lexicon = "lexicon.txt"  # optional, span masking
//! pretrain_corpus = "raw.txt"   # optional, raw text
//! init_checkpoint = "out/pretrain.ckpt"  # optional
//! checkpoint_dir = "out"
//!
//! [tags]
//! entity_types = ["PER", "LOC", "ORG"]
//!
//! [encoder]
//! preset = "toy"           # any field of EncoderConfig may be overridden
//!
//! [train]                  # TrainConfig fields plus min_freq
//! epochs = 2
//! learning_rate = 5e-5
//! batch_size = 16
//!
//! [pretrain]
//! strategy = "dynamic"     # static | dynamic | span
//! objective = "mlm"        # mlm | mlm_nsp
//! steps = 50
//! ```
//!
//! Command-line flags override file values, which override defaults.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::checkpoint::{self, Checkpoint, Kind};
use crate::corpus::{
    build_vocab, chars, encode_tokens, parse_column_file, to_column_text, Tag, TagSet, TaggedSentence, Vocab,
};
use crate::encoder::{attention_probs, init_params, EncoderConfig};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, format_report, EvalReport, ReportRow};
use crate::pretrain::{
    make_dlm_samples, make_nsp_pairs, plan_dynamic_mask, plan_span_mask, plan_static_mask, sequence_seed,
    MaskingParams, SpanLexicon, Strategy,
};
use crate::rng;
use crate::trainer::{
    self, assemble_tagger, build_mlm_examples, build_nsp_examples, finetune, predict_tags, Objective, PretrainHeads,
    Pretrainer, TrainConfig,
};

#[derive(Parser, Debug)]
#[command(name = "nerkit", version, about = "Character-level NER: pre-training, fine-tuning, evaluation")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Emit masking plans, NSP pairs or DLM samples as JSON lines.
    Preprocess(PreprocessArgs),
    /// Toy MLM or MLM+NSP pre-training; writes pretrain.ckpt.
    Pretrain(PretrainArgs),
    /// Fine-tune the NER tagger; writes model.ckpt, train.log and reports.
    Train(TrainArgs),
    /// Score predictions (or a checkpoint) against a gold column file.
    Eval(EvalArgs),
    /// Tag raw sentences, one per line, and print column output.
    Predict(PredictArgs),
    /// Print an encoder configuration or attention probabilities.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Task {
    Mask,
    Nsp,
    Dlm,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long, value_enum)]
    task: Task,
    /// Raw text: one sentence (or dialogue turn) per line, blank lines
    /// between documents (or dialogues).
    #[arg(long)]
    input: PathBuf,
    /// Output JSONL file (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_strategy, default_value = "static")]
    strategy: Strategy,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 0.15)]
    mask_rate: f64,
    /// Number of epochs of masking plans to emit.
    #[arg(long, default_value_t = 1)]
    epochs: u64,
    /// Number of NSP pairs (defaults to the number of sentences).
    #[arg(long)]
    num_pairs: Option<usize>,
    /// Vocabulary file, one token per line in id order. Built from the input
    /// when omitted.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Write the vocabulary used to this file.
    #[arg(long)]
    vocab_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    #[arg(long, value_parser = parse_objective)]
    objective: Option<Objective>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Gold column file.
    #[arg(long)]
    gold: PathBuf,
    /// Predicted column file (same tokens as gold).
    #[arg(long, conflicts_with = "checkpoint")]
    pred: Option<PathBuf>,
    /// Tagger checkpoint to predict with instead of --pred.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Entity types, comma separated (inferred from the files when omitted).
    #[arg(long, value_delimiter = ',')]
    types: Option<Vec<String>>,
    /// Row label.
    #[arg(long, default_value = "model")]
    name: String,
    #[arg(long)]
    json: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    /// Print the named preset's configuration.
    #[arg(long, conflicts_with_all = ["config", "checkpoint"])]
    preset: Option<String>,
    /// Print the resolved run configuration.
    #[arg(long, conflicts_with = "checkpoint")]
    config: Option<PathBuf>,
    /// Checkpoint to inspect; with --text prints attention probabilities.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    text: Option<String>,
    #[arg(long, default_value_t = 0)]
    layer: usize,
    #[arg(long, default_value_t = 0)]
    head: usize,
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_objective(s: &str) -> std::result::Result<Objective, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parse `argv` (program name first) and run the selected subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Preprocess(a) => preprocess(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: u64,
    paths: PathsSection,
    tags: TagsSection,
    encoder: EncoderSection,
    train: TrainSection,
    pretrain: PretrainSection,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub pretrain_corpus: Option<PathBuf>,
    pub init_checkpoint: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TagsSection {
    entity_types: Vec<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EncoderSection {
    preset: Option<String>,
    num_layers: Option<usize>,
    hidden_size: Option<usize>,
    num_heads: Option<usize>,
    ffn_size: Option<usize>,
    max_position: Option<usize>,
    num_segments: Option<usize>,
    dropout_rate: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainSection {
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    max_len: Option<usize>,
    clip_norm: Option<f64>,
    freeze_encoder: Option<bool>,
    adam: Option<trainer::AdamConfig>,
    min_freq: Option<usize>,
}

/// Pre-training settings.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSettings {
    pub strategy: Strategy,
    pub objective: Objective,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mask_rate: f64,
}

type PretrainSection = PretrainSettings;

impl Default for PretrainSettings {
    fn default() -> Self {
        Self {
            strategy: Strategy::Dynamic,
            objective: Objective::Mlm,
            steps: 50,
            batch_size: 16,
            learning_rate: 1e-3,
            mask_rate: 0.15,
        }
    }
}

/// A fully resolved run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsSection,
    pub tagset: Option<TagSet>,
    /// Encoder shape; `vocab_size` is replaced by the vocabulary's size.
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub min_freq: usize,
    pub pretrain: PretrainSettings,
}

impl RunConfig {
    /// Read and validate a TOML run configuration. Relative paths resolve
    /// against the file's directory; every referenced input must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let file: FileConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut paths = file.paths;
        for p in [
            &mut paths.train,
            &mut paths.dev,
            &mut paths.test,
            &mut paths.lexicon,
            &mut paths.pretrain_corpus,
            &mut paths.init_checkpoint,
            &mut paths.checkpoint_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        for (key, p) in [
            ("train", &paths.train),
            ("dev", &paths.dev),
            ("test", &paths.test),
            ("lexicon", &paths.lexicon),
            ("pretrain_corpus", &paths.pretrain_corpus),
            ("init_checkpoint", &paths.init_checkpoint),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::Config(format!("paths.{key}: {} does not exist", p.display())));
                }
            }
        }
        let tagset = if file.tags.entity_types.is_empty() {
            None
        } else {
            Some(TagSet::new(&file.tags.entity_types)?)
        };

        let e = file.encoder;
        let mut encoder = EncoderConfig::preset(e.preset.as_deref().unwrap_or("toy"))?;
        if let Some(v) = e.num_layers {
            encoder.num_layers = v;
        }
        if let Some(v) = e.hidden_size {
            encoder.hidden_size = v;
            if e.ffn_size.is_none() {
                encoder.ffn_size = 4 * v;
            }
        }
        if let Some(v) = e.num_heads {
            encoder.num_heads = v;
        }
        if let Some(v) = e.ffn_size {
            encoder.ffn_size = v;
        }
        if let Some(v) = e.max_position {
            encoder.max_position = v;
        }
        if let Some(v) = e.num_segments {
            encoder.num_segments = v;
        }
        if let Some(v) = e.dropout_rate {
            encoder.dropout_rate = v;
        }
        encoder.validate()?;

        let t = &file.train;
        let d = TrainConfig::default();
        let train = TrainConfig {
            epochs: t.epochs.unwrap_or(d.epochs),
            learning_rate: t.learning_rate.unwrap_or(d.learning_rate),
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            seed: file.seed,
            max_len: t.max_len.unwrap_or(d.max_len),
            objective: Objective::FinetuneNer,
            adam: t.adam.unwrap_or(d.adam),
            clip_norm: t.clip_norm.or(d.clip_norm),
            freeze_encoder: t.freeze_encoder.unwrap_or(d.freeze_encoder),
        };
        train.validate()?;
        if file.pretrain.objective == Objective::FinetuneNer {
            return Err(Error::Config("pretrain.objective must be mlm or mlm_nsp".into()));
        }
        Ok(Self {
            seed: file.seed,
            paths,
            tagset,
            encoder,
            train,
            min_freq: file.train.min_freq.unwrap_or(1).max(1),
            pretrain: file.pretrain,
        })
    }

    fn checkpoint_dir(&self) -> Result<PathBuf> {
        let dir = self
            .paths
            .checkpoint_dir
            .clone()
            .ok_or_else(|| Error::Config("paths.checkpoint_dir is required".into()))?;
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn tagset(&self) -> Result<&TagSet> {
        self.tagset
            .as_ref()
            .ok_or_else(|| Error::Config("tags.entity_types is required".into()))
    }

    fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "paths = {:?}", self.paths);
        if let Some(t) = &self.tagset {
            let _ = writeln!(s, "tags = {}", t.tags().join(" "));
        }
        let _ = writeln!(s, "encoder = {}", serde_json::to_string(&self.encoder).unwrap_or_default());
        let _ = writeln!(s, "train = {}", serde_json::to_string(&self.train).unwrap_or_default());
        let _ = writeln!(s, "min_freq = {}", self.min_freq);
        let _ = writeln!(s, "pretrain = {:?}", self.pretrain);
        s
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Sentences (character tokens) grouped into blocks separated by blank
/// lines.
fn raw_blocks(text: &str) -> Vec<Vec<Vec<String>>> {
    let mut blocks = vec![Vec::new()];
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            if !blocks.last().is_some_and(Vec::is_empty) {
                blocks.push(Vec::new());
            }
        } else {
            blocks.last_mut().unwrap().push(chars(line));
        }
    }
    blocks.retain(|b| !b.is_empty());
    blocks
}

fn load_vocab_file(path: &Path) -> Result<Vocab> {
    Ok(Vocab::from_tokens(read(path)?.lines().filter(|l| !l.is_empty()).map(str::to_string)))
}

fn vocab_text(vocab: &Vocab) -> String {
    vocab.tokens().iter().map(|t| format!("{t}\n")).collect()
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it)?);
        out.push('\n');
    }
    Ok(out)
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let blocks = raw_blocks(&read(&a.input)?);
    let text = match a.task {
        Task::Mask => {
            let sentences: Vec<&Vec<String>> = blocks.iter().flatten().collect();
            let vocab = match &a.vocab {
                Some(p) => load_vocab_file(p)?,
                None => Vocab::build(sentences.iter().flat_map(|s| s.iter().map(String::as_str)), 1),
            };
            if let Some(p) = &a.vocab_out {
                fs::write(p, vocab_text(&vocab))?;
            }
            let lexicon = match &a.lexicon {
                Some(p) => SpanLexicon::parse(&read(p)?)?,
                None => SpanLexicon::new(),
            };
            let params = MaskingParams::new(a.mask_rate, vocab.len());
            let mut plans = Vec::new();
            for epoch in 0..a.epochs {
                for (i, s) in sentences.iter().enumerate() {
                    let enc = encode_tokens(&vocab, s, s.len() + 2)?;
                    let seed = sequence_seed(a.seed, i);
                    let plan = match a.strategy {
                        Strategy::Static => plan_static_mask(&enc.ids, &enc.specials, &params, seed),
                        Strategy::Dynamic => plan_dynamic_mask(&enc.ids, &enc.specials, &params, seed, epoch),
                        Strategy::Span => {
                            let mut surf = vec![crate::corpus::CLS.to_string()];
                            surf.extend(s.iter().cloned());
                            surf.push(crate::corpus::SEP.to_string());
                            plan_span_mask(&enc.ids, &enc.specials, &surf, &lexicon, &params, seed)
                        }
                    }
                    .map_err(|e| Error::Alignment {
                        index: i,
                        msg: e.to_string(),
                    })?;
                    let mut plan = plan.with_seq_id(i);
                    plan.epoch = epoch;
                    plans.push(plan);
                }
            }
            jsonl(&plans)?
        }
        Task::Nsp => {
            let n = a.num_pairs.unwrap_or_else(|| blocks.iter().map(Vec::len).sum());
            jsonl(&make_nsp_pairs(&blocks, n, a.seed)?)?
        }
        Task::Dlm => jsonl(&make_dlm_samples(&blocks, a.seed)?)?,
    };
    emit(a.output.as_deref(), &text)
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let mut rc = RunConfig::load(&a.config)?;
    if let Some(v) = a.seed {
        rc.seed = v;
    }
    if let Some(v) = a.steps {
        rc.pretrain.steps = v;
    }
    if let Some(v) = a.strategy {
        rc.pretrain.strategy = v;
    }
    if let Some(v) = a.objective {
        rc.pretrain.objective = v;
    }
    if let Some(v) = a.learning_rate {
        rc.pretrain.learning_rate = v;
    }
    if let Some(v) = a.checkpoint_dir {
        rc.paths.checkpoint_dir = Some(v);
    }
    if rc.pretrain.objective == Objective::FinetuneNer {
        return Err(Error::Config("pretrain objective must be mlm or mlm_nsp".into()));
    }
    let settings = rc.pretrain.clone();
    let corpus_path = rc
        .paths
        .pretrain_corpus
        .clone()
        .ok_or_else(|| Error::Config("paths.pretrain_corpus is required for pretrain".into()))?;
    let docs = raw_blocks(&read(&corpus_path)?);
    let sentences: Vec<Vec<String>> = docs.iter().flatten().cloned().collect();
    if sentences.is_empty() {
        return Err(Error::CorpusTooSmall("pre-training corpus is empty".into()));
    }
    // Fine-tuning tokens join the vocabulary so a later `train` run can
    // reuse this encoder without mapping its characters to [UNK].
    let train_sents = match &rc.paths.train {
        Some(p) => parse_column_file(&read(p)?, rc.tagset()?)?,
        None => Vec::new(),
    };
    let vocab = Vocab::build(
        sentences
            .iter()
            .flatten()
            .chain(train_sents.iter().flat_map(|s| &s.tokens))
            .map(String::as_str),
        rc.min_freq,
    );
    let lexicon = match &rc.paths.lexicon {
        Some(p) => Some(SpanLexicon::parse(&read(p)?)?),
        None => None,
    };
    let enc_cfg = rc.encoder.clone().with_vocab_size(vocab.len());
    let longest = sentences.iter().map(Vec::len).max().unwrap_or(0);
    let needed = if settings.objective == Objective::MlmNsp { 2 * longest + 3 } else { longest + 2 };
    if needed > enc_cfg.max_position {
        return Err(Error::LengthOverflow {
            len: needed,
            max: enc_cfg.max_position,
        });
    }
    let encoder = init_params(&enc_cfg, rc.seed)?;
    let heads = PretrainHeads::init(enc_cfg.hidden_size, vocab.len(), rc.seed);
    let tc = TrainConfig {
        learning_rate: settings.learning_rate,
        objective: settings.objective,
        seed: rc.seed,
        ..rc.train.clone()
    };
    let mut trainer = Pretrainer::new(encoder, heads, &tc);
    let dir = rc.checkpoint_dir()?;
    let mut log = String::new();
    let batch = settings.batch_size.max(1);
    let mut pool = Vec::new();
    let mut epoch = 0u64;
    let mut cursor = 0;
    for step in 0..settings.steps {
        if cursor >= pool.len() {
            pool = match settings.objective {
                Objective::MlmNsp => {
                    let pairs = make_nsp_pairs(&docs, sentences.len(), rng::derive_seed(rc.seed, &format!("nsp.{epoch}")))?;
                    build_nsp_examples(&vocab, &pairs, settings.strategy, lexicon.as_ref(), settings.mask_rate, rc.seed, epoch)?
                }
                _ => build_mlm_examples(&vocab, &sentences, settings.strategy, lexicon.as_ref(), settings.mask_rate, rc.seed, epoch)?,
            };
            use rand::seq::SliceRandom;
            pool.shuffle(&mut rng::named_keyed(rc.seed, "pretrain.shuffle", epoch));
            epoch += 1;
            cursor = 0;
        }
        let end = (cursor + batch).min(pool.len());
        let losses = trainer.step(&pool[cursor..end], settings.objective)?;
        cursor = end;
        match losses.nsp {
            Some(nsp) => writeln!(log, "step={step} epoch={} mlm_loss={:.6} nsp_loss={nsp:.6}", epoch - 1, losses.mlm),
            None => writeln!(log, "step={step} epoch={} mlm_loss={:.6}", epoch - 1, losses.mlm),
        }
        .ok();
        log::info!("pretrain step {step} mlm {:.6}", losses.mlm);
    }
    fs::write(dir.join("pretrain.log"), log)?;
    Checkpoint::from_pretrained(&trainer.encoder, &trainer.heads, &vocab).save(dir.join("pretrain.ckpt"))?;
    println!("wrote {}", dir.join("pretrain.ckpt").display());
    Ok(())
}

fn load_corpus(path: &Path, tagset: &TagSet) -> Result<Vec<TaggedSentence>> {
    parse_column_file(&read(path)?, tagset).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn predict_all(model: &trainer::TaggerModel, vocab: &Vocab, data: &[TaggedSentence]) -> Result<Vec<Vec<String>>> {
    data.iter().map(|s| predict_tags(model, &s.tokens, vocab)).collect()
}

fn train(a: TrainArgs) -> Result<()> {
    let mut rc = RunConfig::load(&a.config)?;
    if let Some(v) = a.seed {
        rc.seed = v;
        rc.train.seed = v;
    }
    if let Some(v) = a.epochs {
        rc.train.epochs = v;
    }
    if let Some(v) = a.learning_rate {
        rc.train.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        rc.train.batch_size = v;
    }
    if let Some(v) = a.checkpoint_dir {
        rc.paths.checkpoint_dir = Some(v);
    }
    rc.train.validate()?;
    let tagset = rc.tagset()?.clone();
    let train_path = rc
        .paths
        .train
        .clone()
        .ok_or_else(|| Error::Config("paths.train is required for train".into()))?;
    let data = load_corpus(&train_path, &tagset)?;
    let (mut model, vocab) = match &rc.paths.init_checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            let encoder = ck.encoder_params()?;
            let mut model = assemble_tagger(&encoder.config, &tagset, rc.seed)?;
            model.encoder = encoder;
            (model, ck.vocab())
        }
        None => {
            let vocab = build_vocab(&data, rc.min_freq);
            let cfg = rc.encoder.clone().with_vocab_size(vocab.len());
            (assemble_tagger(&cfg, &tagset, rc.seed)?, vocab)
        }
    };
    let dir = rc.checkpoint_dir()?;
    let mut log = String::new();
    finetune(&mut model, &vocab, &data, &rc.train, |s| {
        let _ = writeln!(log, "{s}");
        log::info!("{s}");
    })?;
    fs::write(dir.join("train.log"), log)?;
    checkpoint::save_tagger(dir.join("model.ckpt"), &model, &vocab)?;

    let mut rows = Vec::new();
    for (name, path) in [("dev", &rc.paths.dev), ("test", &rc.paths.test)] {
        if let Some(p) = path {
            let gold = load_corpus(p, &tagset)?;
            rows.push(evaluate(&gold, &predict_all(&model, &vocab, &gold)?)?.named(name));
        }
    }
    if rows.is_empty() {
        rows.push(evaluate(&data, &predict_all(&model, &vocab, &data)?)?.named("train"));
    }
    let table = format_report(&rows);
    fs::write(dir.join("report.txt"), &table)?;
    fs::write(dir.join("report.json"), EvalReport::new(rows).to_json() + "\n")?;
    print!("{table}");
    Ok(())
}

/// Entity types named by B-/I- tags in the second column of a column file.
fn types_in(text: &str, into: &mut BTreeSet<String>) {
    for line in text.lines() {
        if let Some((_, tag)) = line.trim_end().split_once('\t') {
            if let Some(t) = Tag::parse(tag.trim()).and_then(|t| t.entity_type()) {
                into.insert(t.to_string());
            }
        }
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let gold_text = read(&a.gold)?;
    let row: ReportRow = match (&a.pred, &a.checkpoint) {
        (Some(pred), _) => {
            let pred_text = read(pred)?;
            let tagset = match &a.types {
                Some(t) => TagSet::new(t)?,
                None => {
                    let mut types = BTreeSet::new();
                    types_in(&gold_text, &mut types);
                    types_in(&pred_text, &mut types);
                    TagSet::new(&types.into_iter().collect::<Vec<_>>())?
                }
            };
            let gold = parse_column_file(&gold_text, &tagset)?;
            let pred = parse_column_file(&pred_text, &tagset)?;
            if gold.len() != pred.len() {
                return Err(Error::Alignment {
                    index: gold.len().min(pred.len()),
                    msg: format!("{} gold sentences but {} predicted", gold.len(), pred.len()),
                });
            }
            for (i, (g, p)) in gold.iter().zip(&pred).enumerate() {
                if g.tokens != p.tokens {
                    return Err(Error::Alignment {
                        index: i,
                        msg: "gold and predicted tokens differ".into(),
                    });
                }
            }
            let tags: Vec<Vec<String>> = pred.into_iter().map(|s| s.tags).collect();
            evaluate(&gold, &tags)?
        }
        (None, Some(ck)) => {
            let (model, vocab) = checkpoint::load_tagger(ck)?;
            let gold = parse_column_file(&gold_text, &model.tagset)?;
            evaluate(&gold, &predict_all(&model, &vocab, &gold)?)?
        }
        (None, None) => return Err(Error::Config("eval needs --pred or --checkpoint".into())),
    };
    let rows = vec![row.named(a.name)];
    let text = if a.json {
        EvalReport::new(rows).to_json() + "\n"
    } else {
        format_report(&rows)
    };
    emit(a.output.as_deref(), &text)
}

fn predict(a: PredictArgs) -> Result<()> {
    let (model, vocab) = checkpoint::load_tagger(&a.checkpoint)?;
    let text = read(&a.input)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tokens = chars(line.trim());
        if tokens.is_empty() {
            continue;
        }
        let tags = predict_tags(&model, &tokens, &vocab).map_err(|e| Error::Alignment {
            index: i,
            msg: e.to_string(),
        })?;
        out.push(TaggedSentence::new(tokens, tags)?);
    }
    emit(a.output.as_deref(), &to_column_text(&out))
}

fn describe_encoder(cfg: &EncoderConfig) -> Result<String> {
    let n = cfg.num_parameters();
    Ok(format!(
        "{}\nparameters = {n}\nf64 weights = {:.1} MiB\n",
        serde_json::to_string_pretty(cfg)?,
        (n * 8) as f64 / (1024.0 * 1024.0)
    ))
}

fn inspect(a: InspectArgs) -> Result<()> {
    let text = if let Some(name) = &a.preset {
        describe_encoder(&EncoderConfig::preset(name)?)?
    } else if let Some(path) = &a.config {
        RunConfig::load(path)?.describe()
    } else if let Some(path) = &a.checkpoint {
        let ck = Checkpoint::load(path)?;
        match &a.text {
            None => {
                let mut s = format!("kind = {:?}\nvocab = {}\n", ck.kind, ck.vocab.len());
                if ck.kind == Kind::Tagger {
                    let _ = writeln!(s, "entity_types = {}", ck.entity_types.join(","));
                }
                s + &describe_encoder(&ck.encoder)?
            }
            Some(t) => {
                let params = ck.encoder_params()?;
                let vocab = ck.vocab();
                let toks = chars(t);
                let enc = encode_tokens(&vocab, &toks, toks.len() + 2)?;
                let p = attention_probs(&params, &enc.ids, &enc.segments, &enc.attention_mask, a.layer, a.head)?;
                let mut labels = vec![crate::corpus::CLS.to_string()];
                labels.extend(toks);
                labels.push(crate::corpus::SEP.to_string());
                let mut s = format!("\t{}\n", labels.join("\t"));
                for (i, row) in p.rows().into_iter().enumerate() {
                    let cells: Vec<String> = row.iter().map(|x| format!("{x:.6}")).collect();
                    let _ = writeln!(s, "{}\t{}", labels[i], cells.join("\t"));
                }
                s
            }
        }
    } else {
        return Err(Error::Config("inspect needs --preset, --config or --checkpoint".into()));
    };
    print!("{text}");
    Ok(())
}
