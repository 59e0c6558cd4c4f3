//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "LDEPCKPT" | version u32 | config text (u32 length + UTF-8)
//! epoch u32 | best epoch u32 | best dev f64 | lr f64 | schedule best f64 | stale u32
//! parameter tensors | adam step u64 | first moments | second moments
//! crc32 of everything before it
//! ```
//!
//! A tensor block is a u32 count followed by, per tensor: name (u32 length +
//! UTF-8), dtype code u8, rank u32, dims as u64, then the raw elements.
//! Missing optional scores are stored as NaN.

use std::fs;
use std::path::Path;

use super::config::RunConfig;
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"LDEPCKPT";
pub const VERSION: u32 = 1;

/// Progress counters saved alongside the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingState {
    pub epoch: usize,
    pub best_epoch: usize,
    pub best_dev: Option<f64>,
    pub lr: f64,
    pub schedule_best: Option<f64>,
    pub stale: usize,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<F> {
    pub config: RunConfig,
    pub state: TrainingState,
    pub params: ParamStore<F>,
    pub adam_step: u64,
    pub first: Vec<Tensor<F>>,
    pub second: Vec<Tensor<F>>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn tensors<'a, F: Scalar>(&mut self, items: impl ExactSizeIterator<Item = (&'a str, &'a Tensor<F>)>) {
        self.u32(items.len() as u32);
        for (name, t) in items {
            self.str(name);
            self.0.push(F::DTYPE.code());
            self.u32(t.shape().len() as u32);
            for &d in t.shape() {
                self.u64(d as u64);
            }
            for &x in t.data() {
                match F::DTYPE {
                    DType::F32 => self.0.extend_from_slice(&(x.as_f64() as f32).to_le_bytes()),
                    DType::F64 => self.f64(x.as_f64()),
                }
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn truncated() -> Error {
    Error::Format("checkpoint is truncated".into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
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

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }

    fn tensors<F: Scalar>(&mut self) -> Result<Vec<(String, Tensor<F>)>> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = self.str()?;
            let dtype = DType::from_code(self.u8()?).ok_or_else(|| Error::Format(format!("unknown dtype for {name}")))?;
            let rank = self.u32()? as usize;
            let shape = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let data = match dtype {
                DType::F32 => self
                    .take(len.checked_mul(4).ok_or_else(truncated)?)?
                    .chunks_exact(4)
                    .map(|c| F::from_f64_lossy(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                    .collect(),
                DType::F64 => self
                    .take(len.checked_mul(8).ok_or_else(truncated)?)?
                    .chunks_exact(8)
                    .map(|c| F::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                    .collect(),
            };
            out.push((name, Tensor::new(shape, data)?));
        }
        Ok(out)
    }
}

fn opt(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

fn unopt(v: f64) -> Option<f64> {
    (!v.is_nan()).then_some(v)
}

impl<F: Scalar> Checkpoint<F> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.str(&self.config.to_text());
        let s = &self.state;
        w.u32(s.epoch as u32);
        w.u32(s.best_epoch as u32);
        w.f64(opt(s.best_dev));
        w.f64(s.lr);
        w.f64(opt(s.schedule_best));
        w.u32(s.stale as u32);
        let params: Vec<(&str, &Tensor<F>)> = self.params.iter().map(|(_, n, t)| (n, t)).collect();
        w.tensors(params.into_iter());
        w.u64(self.adam_step);
        let names: Vec<&str> = self.params.iter().map(|(_, n, _)| n).collect();
        w.tensors(names.iter().copied().zip(&self.first));
        w.tensors(names.iter().copied().zip(&self.second));
        let crc = crc32fast::hash(&w.0);
        w.u32(crc);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = Reader { buf: body, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version(version));
        }
        let config = RunConfig::from_text(&r.str()?)?;
        let state = TrainingState {
            epoch: r.u32()? as usize,
            best_epoch: r.u32()? as usize,
            best_dev: unopt(r.f64()?),
            lr: r.f64()?,
            schedule_best: unopt(r.f64()?),
            stale: r.u32()? as usize,
        };
        let mut params = ParamStore::new();
        for (name, t) in r.tensors::<F>()? {
            params.add(name, t);
        }
        let adam_step = r.u64()?;
        let first: Vec<Tensor<F>> = r.tensors::<F>()?.into_iter().map(|(_, t)| t).collect();
        let second: Vec<Tensor<F>> = r.tensors::<F>()?.into_iter().map(|(_, t)| t).collect();
        if r.pos != body.len() {
            return Err(Error::Format(format!("{} trailing bytes in checkpoint", body.len() - r.pos)));
        }
        Ok(Checkpoint { config, state, params, adam_step, first, second })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
