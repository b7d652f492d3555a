//! Versioned, CRC-protected binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "COSEMCKP"
//! version    u32
//! length     u64       payload byte count
//! payload    sections, each: tag [u8; 4], length u64, body
//! crc        u32       CRC-32 (IEEE) of the payload
//! ```
//!
//! Sections appear in the order `META VOCA VOCS HIST PARM`. `META` is UTF-8
//! JSON; the others are binary and every float is stored as its raw
//! IEEE-754 bits, so a save/load round trip is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochRecord, TrainConfig};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelParams};
use crate::numerics::ParamSet;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"COSEMCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Parameters of the best validation epoch.
    pub model: Model,
    pub train_config: TrainConfig,
    pub app_vocab: Vocabulary,
    pub semantic_vocab: Vocabulary,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Free-form effective configuration of the run that produced this file.
    pub provenance: String,
}

impl Checkpoint {
    pub fn best_val_mrr(&self) -> Option<f64> {
        self.history
            .iter()
            .find(|r| r.epoch == self.best_epoch)
            .map(|r| r.val_mrr)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();

        let meta = Meta {
            model_config: self.model.config,
            train_config: self.train_config,
            best_epoch: self.best_epoch,
            provenance: self.provenance.clone(),
        };
        section(&mut payload, b"META", &serde_json::to_vec(&meta)?);
        section(&mut payload, b"VOCA", &encode_vocab(&self.app_vocab));
        section(&mut payload, b"VOCS", &encode_vocab(&self.semantic_vocab));

        let mut hist = Vec::with_capacity(4 + self.history.len() * 20);
        put_u32(&mut hist, self.history.len());
        for r in &self.history {
            put_u32(&mut hist, r.epoch);
            hist.extend_from_slice(&r.train_loss.to_le_bytes());
            hist.extend_from_slice(&r.val_mrr.to_le_bytes());
        }
        section(&mut payload, b"HIST", &hist);

        let mut body = Vec::with_capacity(8 * self.model.params.num_values() + 256);
        let names = self.model.params.param_names();
        let params = self.model.params.params();
        put_u32(&mut body, params.len());
        for (name, p) in names.iter().zip(params) {
            put_u32(&mut body, name.len());
            body.extend_from_slice(name.as_bytes());
            put_u32(&mut body, p.value.rows());
            put_u32(&mut body, p.value.cols());
            for v in p.value.as_slice() {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        section(&mut payload, b"PARM", &body);

        let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(corrupt("file shorter than header"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        if bytes.len() != HEADER_LEN + len + 4 {
            return Err(corrupt(format!(
                "expected {} bytes, found {}",
                HEADER_LEN.saturating_add(len).saturating_add(4),
                bytes.len()
            )));
        }
        let payload = &bytes[HEADER_LEN..HEADER_LEN + len];
        let stored = u32::from_le_bytes(bytes[HEADER_LEN + len..].try_into().expect("4 bytes"));
        if crc32fast::hash(payload) != stored {
            return Err(corrupt("checksum mismatch"));
        }

        let mut r = Reader::new(payload);
        let meta: Meta = serde_json::from_slice(r.section(b"META")?).map_err(|e| corrupt(format!("meta: {e}")))?;
        let app_vocab = decode_vocab(r.section(b"VOCA")?)?;
        let semantic_vocab = decode_vocab(r.section(b"VOCS")?)?;

        let mut h = Reader::new(r.section(b"HIST")?);
        let n = h.u32()?;
        let mut history = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            history.push(EpochRecord {
                epoch: h.u32()?,
                train_loss: h.f64()?,
                val_mrr: h.f64()?,
            });
        }
        h.finish()?;

        let cfg = meta.model_config;
        cfg.validate().map_err(|e| corrupt(e.to_string()))?;
        let mut params = ModelParams::init(&cfg)?;
        let names = params.param_names();
        let mut p = Reader::new(r.section(b"PARM")?);
        if p.u32()? != names.len() {
            return Err(corrupt("parameter count disagrees with model config"));
        }
        for (name, param) in names.iter().zip(params.params_mut()) {
            let stored_name = p.bytes_prefixed()?;
            if stored_name != name.as_bytes() {
                return Err(corrupt(format!("expected parameter {name}")));
            }
            let (rows, cols) = (p.u32()?, p.u32()?);
            if (rows, cols) != param.value.shape() {
                return Err(corrupt(format!("{name}: shape {rows}x{cols} disagrees with config")));
            }
            for v in param.value.as_mut_slice() {
                *v = p.f64()?;
            }
        }
        p.finish()?;
        r.finish()?;

        Ok(Checkpoint {
            format_version: version,
            model: Model::from_parts(cfg, params)?,
            train_config: meta.train_config,
            app_vocab,
            semantic_vocab,
            history,
            best_epoch: meta.best_epoch,
            provenance: meta.provenance,
        })
    }
}

pub fn save(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, checkpoint.to_bytes()?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    Checkpoint::from_bytes(&fs::read(path)?)
}

#[derive(Serialize, Deserialize)]
struct Meta {
    model_config: ModelConfig,
    train_config: TrainConfig,
    best_epoch: usize,
    provenance: String,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], body: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(body);
}

fn encode_vocab(v: &Vocabulary) -> Vec<u8> {
    let mut out = vec![u8::from(v.has_oov_sentinel())];
    put_u32(&mut out, v.len());
    for t in v.tokens() {
        put_u32(&mut out, t.len());
        out.extend_from_slice(t.as_bytes());
    }
    out
}

fn decode_vocab(body: &[u8]) -> Result<Vocabulary> {
    let mut r = Reader::new(body);
    let sentinel = match r.take(1)?[0] {
        0 => false,
        1 => true,
        b => return Err(corrupt(format!("bad sentinel flag {b}"))),
    };
    let n = r.u32()?;
    let mut tokens = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let raw = r.bytes_prefixed()?;
        tokens.push(String::from_utf8(raw.to_vec()).map_err(|_| corrupt("token is not UTF-8"))?);
    }
    r.finish()?;
    Vocabulary::from_tokens(tokens, sentinel).map_err(|e| corrupt(e.to_string()))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt("unexpected end of data"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
            .map_err(|_| corrupt("length overflow"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bytes_prefixed(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()?;
        self.take(n)
    }

    fn section(&mut self, tag: &[u8; 4]) -> Result<&'a [u8]> {
        let found = self.take(4)?;
        if found != tag {
            return Err(corrupt(format!(
                "expected section {}, found {}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(found)
            )));
        }
        let n = self.u64()?;
        self.take(n)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(())
    }
}
