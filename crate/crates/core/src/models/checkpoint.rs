//! Binary checkpoint container.
//!
//! All integers and floats are little-endian; tensors are stored as f32.
//!
//! ```text
//! magic      8 bytes  "MCMCKPT\0"
//! version    u32
//! header     u64 length + UTF-8 JSON {model, run, epoch, metric, optimizer, adam, step}
//! vocabulary u64 count, then per token: u32 length + UTF-8 bytes
//! tensors    u64 count, then per tensor:
//!              u32 name length + name, u32 ndim, u64 dims..., f32 data...
//! moments    per tensor, in the same order: u8 present flag, then
//!              first and second moment data (f32, tensor's shape)
//! ```
//!
//! Loading rebuilds the model from the JSON config and then requires every
//! stored tensor to match the rebuilt parameter of the same name in shape.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::embeddings::Vocabulary;
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, Optimizer, OptimizerKind};
use crate::rng::{Rng, Stream};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MCMCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    run: serde_json::Value,
    epoch: usize,
    metric: f64,
    optimizer: OptimizerKind,
    adam: AdamConfig,
    step: u64,
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub vocab: Vocabulary,
    pub optimizer: Optimizer<f32>,
    pub epoch: usize,
    pub metric: f64,
    /// Echo of the run configuration that produced the checkpoint.
    pub run_config: serde_json::Value,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_f32s(out: &mut Vec<u8>, data: &[f32]) {
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let n = self.u64()?;
        // Guard against absurd counts in corrupt files.
        if n > self.bytes.len() as u64 {
            return Err(Error::Checkpoint(format!("{what} count {n} exceeds file size")));
        }
        Ok(n as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

impl Checkpoint {
    pub fn encode(
        model: &Model<f32>,
        vocab: &Vocabulary,
        optimizer: &Optimizer<f32>,
        epoch: usize,
        metric: f64,
        run_config: &serde_json::Value,
    ) -> Result<Vec<u8>> {
        let header = Header {
            model: model.config().clone(),
            run: run_config.clone(),
            epoch,
            metric,
            optimizer: optimizer.kind,
            adam: optimizer.config,
            step: optimizer.steps_taken(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_u64(&mut out, json.len() as u64);
        out.extend_from_slice(&json);
        put_u64(&mut out, vocab.len() as u64);
        for t in vocab.tokens() {
            put_str(&mut out, t);
        }
        put_u64(&mut out, model.params.len() as u64);
        for (_, p) in model.params.iter() {
            put_str(&mut out, &p.name);
            put_u32(&mut out, p.value().ndim() as u32);
            for &d in p.value().shape() {
                put_u64(&mut out, d as u64);
            }
            put_f32s(&mut out, p.value().data());
        }
        for (id, _) in model.params.iter() {
            match optimizer.moments(id.index()) {
                Some((m, v)) => {
                    out.push(1);
                    put_f32s(&mut out, m.data());
                    put_f32s(&mut out, v.data());
                }
                None => out.push(0),
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let n = r.len("header")?;
        let header: Header =
            serde_json::from_slice(r.take(n)?).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;

        let n = r.len("vocabulary")?;
        let tokens = (0..n).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let vocab = Vocabulary::from_tokens(tokens, 1).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if vocab.len() != header.model.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} entries, config says {}",
                vocab.len(),
                header.model.vocab_size
            )));
        }

        // Initialization is overwritten below, so any stream will do.
        let mut model = Model::<f32>::new(header.model.clone(), &mut Rng::new(0, Stream::Init))
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let n = r.len("tensor")?;
        if n != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "{n} tensors stored, model has {}",
                model.params.len()
            )));
        }
        let mut order = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let id = model
                .params
                .find(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor `{name}`")))?;
            let expect = model.params.get(id).shape().to_vec();
            if shape != expect {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {shape:?}, model expects {expect:?}"
                )));
            }
            let data = r.f32s(shape.iter().product())?;
            model.params.set(id, Tensor::new(&shape, data)?)?;
            order.push((id, shape));
        }
        let mut moments = vec![None; model.params.len()];
        for (id, shape) in &order {
            if r.u8()? == 1 {
                let len = shape.iter().product();
                let m = Tensor::new(shape, r.f32s(len)?)?;
                let v = Tensor::new(shape, r.f32s(len)?)?;
                moments[id.index()] = Some((m, v));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let mut optimizer = Optimizer::new(header.optimizer, header.adam);
        optimizer.restore(header.step, moments);
        Ok(Self {
            model,
            vocab,
            optimizer,
            epoch: header.epoch,
            metric: header.metric,
            run_config: header.run,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Self::encode(&self.model, &self.vocab, &self.optimizer, self.epoch, self.metric, &self.run_config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
