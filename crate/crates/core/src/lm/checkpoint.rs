//! Binary checkpoint format.
//!
//! Little-endian throughout:
//!
//! ```text
//! "LMCK1"
//! config   u32 vocab_size, context_length, n_layers, n_heads, d_model, mlp_ratio; f32 dropout
//! tensors  u32 count, then per tensor: u32 name_len, name, u8 dtype (0 = f32),
//!          u32 ndim, u32 dims[ndim], f32 data[prod(dims)]
//! adam     u8 present; if 1: u64 t, tensor table of first moments, tensor table of second moments
//! u64 step
//! u64 vocab fingerprint
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::optim::AdamState;
use super::params::{Layout, Parameters};
use super::LmError;

pub const MAGIC: &[u8; 5] = b"LMCK1";
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Parameters<f32>,
    pub optimizer: Option<AdamState>,
    pub step: u64,
    pub vocab_fingerprint: u64,
}

impl Checkpoint {
    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_table<W: Write>(w: &mut W, layout: &Layout, data: &[f32]) -> io::Result<()> {
    write_u32(w, layout.specs().len() as u32)?;
    for spec in layout.specs() {
        write_u32(w, spec.name.len() as u32)?;
        w.write_all(spec.name.as_bytes())?;
        w.write_all(&[DTYPE_F32])?;
        write_u32(w, spec.shape.len() as u32)?;
        for &dim in &spec.shape {
            write_u32(w, dim as u32)?;
        }
        let mut bytes = Vec::with_capacity(spec.range.len() * 4);
        for v in &data[spec.range.clone()] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(mut w: W, ck: &Checkpoint) -> io::Result<()> {
    let c = ck.config();
    w.write_all(MAGIC)?;
    for v in [c.vocab_size, c.context_length, c.n_layers, c.n_heads, c.d_model, c.mlp_ratio] {
        write_u32(&mut w, v as u32)?;
    }
    w.write_all(&c.dropout.to_le_bytes())?;
    write_table(&mut w, &ck.params.layout, &ck.params.data)?;
    match &ck.optimizer {
        None => w.write_all(&[0])?,
        Some(adam) => {
            w.write_all(&[1])?;
            w.write_all(&adam.t.to_le_bytes())?;
            write_table(&mut w, &ck.params.layout, &adam.m)?;
            write_table(&mut w, &ck.params.layout, &adam.v)?;
        }
    }
    w.write_all(&ck.step.to_le_bytes())?;
    w.write_all(&ck.vocab_fingerprint.to_le_bytes())?;
    w.flush()
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), LmError> {
    let file = File::create(path)?;
    write_checkpoint(BufWriter::new(file), ck)?;
    Ok(())
}

struct Input<R> {
    inner: R,
}

impl<R: Read> Input<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>, LmError> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => LmError::Corrupt(format!("truncated while reading {what}")),
            _ => LmError::Io(e),
        })?;
        Ok(buf)
    }

    fn u8(&mut self, what: &str) -> Result<u8, LmError> {
        Ok(self.bytes(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32, LmError> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, LmError> {
        Ok(u64::from_le_bytes(self.bytes(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32, LmError> {
        Ok(f32::from_le_bytes(self.bytes(4, what)?.try_into().unwrap()))
    }

    /// Reads a tensor table and places each tensor where `layout` expects it.
    fn table(&mut self, layout: &Layout) -> Result<Vec<f32>, LmError> {
        let count = self.u32("tensor count")? as usize;
        if count != layout.specs().len() {
            return Err(LmError::ShapeMismatch(format!(
                "checkpoint has {count} tensors, config implies {}",
                layout.specs().len()
            )));
        }
        let mut data = vec![0.0f32; layout.total()];
        let mut seen: HashMap<String, ()> = HashMap::new();
        for _ in 0..count {
            let name_len = self.u32("tensor name length")? as usize;
            if name_len > 4096 {
                return Err(LmError::Corrupt(format!("implausible tensor name length {name_len}")));
            }
            let name = String::from_utf8(self.bytes(name_len, "tensor name")?)
                .map_err(|_| LmError::Corrupt("tensor name is not UTF-8".into()))?;
            let dtype = self.u8("dtype")?;
            if dtype != DTYPE_F32 {
                return Err(LmError::Corrupt(format!("tensor {name}: unsupported dtype {dtype}")));
            }
            let ndim = self.u32("rank")? as usize;
            if ndim > 8 {
                return Err(LmError::Corrupt(format!("tensor {name}: implausible rank {ndim}")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(self.u32("dimension")? as usize);
            }
            let spec = layout
                .find(&name)
                .ok_or_else(|| LmError::ShapeMismatch(format!("unexpected tensor {name}")))?;
            if spec.shape != shape {
                return Err(LmError::ShapeMismatch(format!(
                    "tensor {name}: shape {shape:?}, config implies {:?}",
                    spec.shape
                )));
            }
            if seen.insert(name.clone(), ()).is_some() {
                return Err(LmError::Corrupt(format!("tensor {name} appears twice")));
            }
            let raw = self.bytes(spec.range.len() * 4, &name)?;
            for (dst, chunk) in data[spec.range.clone()].iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        Ok(data)
    }
}

pub fn read_checkpoint<R: Read>(reader: R) -> Result<Checkpoint, LmError> {
    let mut input = Input { inner: reader };
    if input.bytes(MAGIC.len(), "magic")? != MAGIC {
        return Err(LmError::Corrupt("not a checkpoint (bad magic)".into()));
    }
    let mut dims = [0usize; 6];
    for d in dims.iter_mut() {
        *d = input.u32("config")? as usize;
    }
    let config = ModelConfig {
        vocab_size: dims[0],
        context_length: dims[1],
        n_layers: dims[2],
        n_heads: dims[3],
        d_model: dims[4],
        mlp_ratio: dims[5],
        dropout: input.f32("config")?,
    };
    config.validate()?;
    let layout = Layout::new(&config);
    let data = input.table(&layout)?;
    let optimizer = match input.u8("optimizer flag")? {
        0 => None,
        1 => {
            let t = input.u64("optimizer step")?;
            let m = input.table(&layout)?;
            let v = input.table(&layout)?;
            Some(AdamState { m, v, t })
        }
        other => return Err(LmError::Corrupt(format!("bad optimizer flag {other}"))),
    };
    let step = input.u64("step counter")?;
    let vocab_fingerprint = input.u64("vocab fingerprint")?;
    let mut rest = [0u8; 1];
    if input.inner.read(&mut rest)? != 0 {
        return Err(LmError::Corrupt("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint { params: Parameters { config, layout, data }, optimizer, step, vocab_fingerprint })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, LmError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

/// Loads a checkpoint and requires its shape to equal `expected` (dropout aside).
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<Checkpoint, LmError> {
    let ck = load_checkpoint(path)?;
    check_shape(ck.config(), expected)?;
    Ok(ck)
}

pub fn check_shape(found: &ModelConfig, expected: &ModelConfig) -> Result<(), LmError> {
    let shape = |c: &ModelConfig| (c.vocab_size, c.context_length, c.n_layers, c.n_heads, c.d_model, c.mlp_ratio);
    if shape(found) != shape(expected) {
        return Err(LmError::ShapeMismatch(format!(
            "checkpoint shape {:?} differs from expected {:?}",
            shape(found),
            shape(expected)
        )));
    }
    Ok(())
}
