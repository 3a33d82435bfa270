//! Binary checkpoint format (little-endian throughout):
//!
//! ```text
//! "BCSE"  u32 version
//! str     model config as key=value lines
//! u32     tensor count, then per tensor: str name, u32 rank, u32 extents[rank], f32 payload
//! u8      optimizer flag; when 1: str kind, u64 step, u32 count, tensors as above
//! u32     CRC-32 of every preceding byte
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8 bytes.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{build_model, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::Layer;
use crate::tensor::Element;

const MAGIC: &[u8; 4] = b"BCSE";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Optimizer buffers stored alongside the model.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub kind: String,
    pub step: u64,
    pub tensors: Vec<NamedTensor>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn tensor(&mut self, t: &NamedTensor) {
        self.str(&t.name);
        self.u32(t.shape.len() as u32);
        for &e in &t.shape {
            self.u32(e as u32);
        }
        for &v in &t.data {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn tensors(&mut self, ts: &[NamedTensor]) {
        self.u32(ts.len() as u32);
        for t in ts {
            self.tensor(t);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CorruptCheckpoint(format!(
                "unexpected end of data at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::CorruptCheckpoint("string is not UTF-8".into()))
    }

    fn tensor(&mut self) -> Result<NamedTensor> {
        let name = self.str()?;
        let rank = self.u32()? as usize;
        let shape = (0..rank)
            .map(|_| self.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("{name}: extents overflow")))?,
        )?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(NamedTensor { name, shape, data })
    }

    fn tensors(&mut self) -> Result<Vec<NamedTensor>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.tensor()).collect()
    }
}

pub(super) fn model_tensors<E: Element>(model: &Model<E>) -> Vec<NamedTensor> {
    let to_f32 = |v: &[E]| v.iter().map(|x| x.as_f64() as f32).collect::<Vec<f32>>();
    let mut out: Vec<NamedTensor> = model
        .params()
        .iter()
        .map(|p| NamedTensor {
            name: p.name().to_string(),
            shape: p.shape().to_vec(),
            data: to_f32(p.value().data()),
        })
        .collect();
    for s in model.norm_states() {
        for (suffix, v) in [("running_mean", s.running_mean()), ("running_var", s.running_var())] {
            out.push(NamedTensor {
                name: format!("{}.{suffix}", s.name()),
                shape: vec![v.len()],
                data: to_f32(&v),
            });
        }
    }
    out
}

pub fn encode_checkpoint<E: Element>(model: &Model<E>, optim: Option<&OptimState>) -> Vec<u8> {
    encode_parts(&model.config().to_text(), &model_tensors(model), optim)
}

pub(super) fn encode_parts(config: &str, tensors: &[NamedTensor], optim: Option<&OptimState>) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.str(config);
    w.tensors(tensors);
    match optim {
        None => w.0.push(0),
        Some(o) => {
            w.0.push(1);
            w.str(&o.kind);
            w.0.extend_from_slice(&o.step.to_le_bytes());
            w.tensors(&o.tensors);
        }
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

pub fn decode_checkpoint<E: Element>(bytes: &[u8]) -> Result<(Model<E>, Option<OptimState>)> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..4] != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::CorruptCheckpoint(format!(
            "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CorruptCheckpoint(format!("unsupported version {version}")));
    }
    let config = ModelConfig::from_text(&r.str()?).map_err(|e| Error::CorruptCheckpoint(format!("config: {e}")))?;
    let mut stored: HashMap<String, NamedTensor> = r.tensors()?.into_iter().map(|t| (t.name.clone(), t)).collect();
    let optim = match r.u8()? {
        0 => None,
        1 => {
            let kind = r.str()?;
            let step = r.u64()?;
            Some(OptimState {
                kind,
                step,
                tensors: r.tensors()?,
            })
        }
        f => return Err(Error::CorruptCheckpoint(format!("optimizer flag {f}"))),
    };
    if r.pos != body.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            body.len() - r.pos
        )));
    }

    let mut model = build_model::<E>(&config)?;
    let mut take = |name: &str, shape: &[usize]| -> Result<Vec<E>> {
        let t = stored
            .remove(name)
            .ok_or_else(|| Error::IncompleteCheckpoint(name.to_string()))?;
        if t.shape != shape {
            return Err(Error::CorruptCheckpoint(format!(
                "{name}: stored shape {:?}, model expects {shape:?}",
                t.shape
            )));
        }
        Ok(t.data.into_iter().map(|v| E::of(v as f64)).collect())
    };
    for p in model.params_mut() {
        let shape = p.shape().to_vec();
        let data = take(p.name(), &shape)?;
        p.set(data)?;
    }
    for s in model.norm_states() {
        let c = [s.channels()];
        let mean = take(&format!("{}.running_mean", s.name()), &c)?;
        let var = take(&format!("{}.running_var", s.name()), &c)?;
        s.set_running(mean, var)
            .map_err(|e| Error::CorruptCheckpoint(format!("{}: {e}", s.name())))?;
    }
    if let Some(extra) = stored.keys().min() {
        return Err(Error::CorruptCheckpoint(format!("unexpected tensor {extra}")));
    }
    Ok((model, optim))
}

/// Writes the checkpoint through a temporary file so a crash never leaves a torn file.
pub fn save_checkpoint<E: Element>(model: &Model<E>, optim: Option<&OptimState>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model, optim);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<E: Element>(path: &Path) -> Result<(Model<E>, Option<OptimState>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
