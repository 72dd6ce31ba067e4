//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "NERKCKPT"
//! version    u32      1
//! header     u64 length + UTF-8 JSON {"kind", "encoder", "entity_types"}
//! vocab      u64 count, then per token: u32 byte length + UTF-8 bytes
//! tensors    u32 count, then per tensor:
//!            u32 name length + UTF-8 name, u32 ndim, ndim x u64 dims,
//!            prod(dims) x f64
//! ```
//!
//! Tensors are written in the model's fixed `tensors()` order, so equal
//! models give byte-identical files.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{TagSet, Vocab};
use crate::crf::CrfParams;
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::trainer::{PretrainHeads, TaggerModel};

pub const MAGIC: &[u8; 8] = b"NERKCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Tagger,
    Pretrain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: Kind,
    encoder: EncoderConfig,
    #[serde(default)]
    entity_types: Vec<String>,
}

/// A named tensor as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: Kind,
    pub encoder: EncoderConfig,
    pub entity_types: Vec<String>,
    pub vocab: Vec<String>,
    pub tensors: Vec<StoredTensor>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let header = serde_json::to_vec(&Header {
            kind: self.kind,
            encoder: self.encoder.clone(),
            entity_types: self.entity_types.clone(),
        })?;
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.vocab.len() as u64).to_le_bytes());
        for t in &self.vocab {
            out.extend_from_slice(&(t.len() as u32).to_le_bytes());
            out.extend_from_slice(t.as_bytes());
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version} (expected {VERSION})")));
        }
        let len = r.len64()?;
        let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| bad(format!("header: {e}")))?;
        let n_vocab = r.len64()?;
        let mut vocab = Vec::with_capacity(n_vocab.min(1 << 20));
        for _ in 0..n_vocab {
            let len = r.u32()? as usize;
            vocab.push(r.string(len)?);
        }
        let n_tensors = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let len = r.u32()? as usize;
            let name = r.string(len)?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.len64()).collect::<Result<Vec<_>>>()?;
            let count = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| bad(format!("tensor {name}: shape overflow")))?;
            let raw = r.take(count.checked_mul(8).ok_or_else(|| bad("tensor too large"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(StoredTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            kind: header.kind,
            encoder: header.encoder,
            entity_types: header.entity_types,
            vocab,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::from_tokens(self.vocab.iter().cloned())
    }

    /// Copy stored tensors into `targets` (name, shape, destination), in
    /// order. Names and shapes must match exactly.
    fn fill(&self, prefix: usize, targets: Vec<(String, Vec<usize>, &mut [f64])>) -> Result<()> {
        let stored = self
            .tensors
            .get(prefix..prefix + targets.len())
            .ok_or_else(|| bad(format!("expected at least {} tensors, found {}", prefix + targets.len(), self.tensors.len())))?;
        for (s, (name, shape, dst)) in stored.iter().zip(targets) {
            if s.name != name {
                return Err(bad(format!("expected tensor {name}, found {}", s.name)));
            }
            if s.shape != shape {
                return Err(bad(format!("tensor {name}: shape {:?}, expected {shape:?}", s.shape)));
            }
            dst.copy_from_slice(&s.data);
        }
        Ok(())
    }

    fn check_vocab(&self) -> Result<()> {
        if self.vocab.len() != self.encoder.vocab_size {
            return Err(bad(format!(
                "vocabulary has {} tokens but the encoder expects {}",
                self.vocab.len(),
                self.encoder.vocab_size
            )));
        }
        Ok(())
    }

    /// Encoder weights, from either kind of checkpoint.
    pub fn encoder_params(&self) -> Result<EncoderParams> {
        self.encoder.validate()?;
        self.check_vocab()?;
        let mut enc = EncoderParams::zeros(&self.encoder);
        let names: Vec<(String, Vec<usize>)> = enc.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        let prefix = match self.kind {
            Kind::Tagger => "encoder.",
            Kind::Pretrain => "",
        };
        let targets = names
            .into_iter()
            .zip(enc.tensors_mut())
            .map(|((n, s), d)| (format!("{prefix}{n}"), s, d))
            .collect();
        self.fill(0, targets)?;
        Ok(enc)
    }

    fn expect_kind(&self, kind: Kind) -> Result<()> {
        if self.kind != kind {
            return Err(bad(format!("expected a {kind:?} checkpoint, found {:?}", self.kind)));
        }
        Ok(())
    }

    fn expect_count(&self, n: usize) -> Result<()> {
        if self.tensors.len() != n {
            return Err(bad(format!("expected {n} tensors, found {}", self.tensors.len())));
        }
        Ok(())
    }

    pub fn tagger(&self) -> Result<(TaggerModel, Vocab)> {
        self.expect_kind(Kind::Tagger)?;
        let encoder = self.encoder_params()?;
        let tagset = TagSet::new(&self.entity_types)?;
        let k = tagset.num_tags();
        let h = self.encoder.hidden_size;
        let mut model = TaggerModel {
            encoder,
            projection_w: ndarray::Array2::zeros((h, k)),
            projection_b: ndarray::Array1::zeros(k),
            crf: CrfParams::zeros(k),
            tagset,
        };
        let n_enc = model.encoder.tensors().len();
        let meta: Vec<(String, Vec<usize>)> = model.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        self.expect_count(meta.len())?;
        let targets = meta
            .into_iter()
            .zip(model.slices_mut())
            .skip(n_enc)
            .map(|((n, s), d)| (n, s, d))
            .collect();
        self.fill(n_enc, targets)?;
        Ok((model, self.vocab()))
    }

    pub fn pretrained(&self) -> Result<(EncoderParams, PretrainHeads, Vocab)> {
        self.expect_kind(Kind::Pretrain)?;
        let encoder = self.encoder_params()?;
        let n_enc = encoder.tensors().len();
        let mut heads = PretrainHeads::zeros(self.encoder.hidden_size, self.encoder.vocab_size);
        let meta: Vec<(String, Vec<usize>)> = heads.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        self.expect_count(n_enc + meta.len())?;
        let targets = meta.into_iter().zip(heads.slices_mut()).map(|((n, s), d)| (n, s, d)).collect();
        self.fill(n_enc, targets)?;
        Ok((encoder, heads, self.vocab()))
    }
}

fn stored(tensors: Vec<crate::encoder::TensorRef<'_>>) -> Vec<StoredTensor> {
    tensors
        .into_iter()
        .map(|(name, shape, data)| StoredTensor {
            name,
            shape,
            data: data.to_vec(),
        })
        .collect()
}

impl Checkpoint {
    pub fn from_tagger(model: &TaggerModel, vocab: &Vocab) -> Self {
        Self {
            kind: Kind::Tagger,
            encoder: model.config().clone(),
            entity_types: model.tagset.entity_types().to_vec(),
            vocab: vocab.tokens().to_vec(),
            tensors: stored(model.tensors()),
        }
    }

    pub fn from_pretrained(encoder: &EncoderParams, heads: &PretrainHeads, vocab: &Vocab) -> Self {
        let mut tensors = stored(encoder.tensors());
        tensors.extend(stored(heads.tensors()));
        Self {
            kind: Kind::Pretrain,
            encoder: encoder.config.clone(),
            entity_types: Vec::new(),
            vocab: vocab.tokens().to_vec(),
            tensors,
        }
    }
}

pub fn save_tagger(path: impl AsRef<Path>, model: &TaggerModel, vocab: &Vocab) -> Result<()> {
    Checkpoint::from_tagger(model, vocab).save(path)
}

pub fn load_tagger(path: impl AsRef<Path>) -> Result<(TaggerModel, Vocab)> {
    Checkpoint::load(path)?.tagger()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn len64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| bad("length does not fit in memory"))
    }

    fn string(&mut self, len: usize) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| bad("invalid UTF-8"))
    }
}
