//! Binary checkpoint format.
//!
//! Layout: the 9-byte magic `UNIQCKPT1`, a little-endian `u64` header length, a JSON
//! header, then every tensor as contiguous little-endian `f32` values. Tensor offsets
//! in the header count `f32` elements from the start of the payload.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::{build_model, ArchSpec, PrecisionPlan};
use super::model::Model;
use crate::error::{Error, Result};
use crate::real::Real;

pub const MAGIC: &[u8; 9] = b"UNIQCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: u32,
    pub arch: ArchSpec,
    pub plan: PrecisionPlan,
    /// Step sizes keyed by quantizer name.
    pub steps: BTreeMap<String, Vec<f64>>,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub payload: Vec<f32>,
}

impl Checkpoint {
    pub fn from_model<T: Real>(model: &Model<T>, meta: serde_json::Value) -> Self {
        let mut tensors = Vec::new();
        let mut payload = Vec::new();
        for (name, shape, data) in model.named_tensors() {
            tensors.push(TensorEntry {
                name,
                shape,
                offset: payload.len(),
            });
            payload.extend(data.iter().map(|v| v.as_f64() as f32));
        }
        let header = CheckpointHeader {
            format: FORMAT_VERSION,
            arch: model.arch.clone(),
            plan: model.plan.clone(),
            steps: model.step_sizes(),
            tensors,
            meta,
        };
        Self { header, payload }
    }

    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f32])> {
        let entry = self.header.tensors.iter().find(|t| t.name == name)?;
        let len: usize = entry.shape.iter().product();
        Some((
            &entry.shape,
            self.payload.get(entry.offset..entry.offset + len)?,
        ))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for v in &self.payload {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 9];
        r.read_exact(&mut magic)
            .map_err(|_| bad("file too short"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)
            .map_err(|_| bad("truncated header length"))?;
        let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| bad("header too large"))?;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)
            .map_err(|_| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&header)?;
        if header.format != FORMAT_VERSION {
            return Err(bad(&format!(
                "unsupported format version {}",
                header.format
            )));
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() % 4 != 0 {
            return Err(bad("payload is not a whole number of f32 values"));
        }
        let payload: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        for t in &header.tensors {
            let end = t.offset + t.shape.iter().product::<usize>();
            if end > payload.len() {
                return Err(bad(&format!("tensor '{}' runs past the payload", t.name)));
            }
        }
        Ok(Self { header, payload })
    }

    /// Copies all tensors into `model`, and its step sizes too when `inherit_steps` is set.
    ///
    /// Step sizes are inherited only for quantizers present in both with the same
    /// number of groups; the names of those quantizers are returned.
    pub fn apply_to<T: Real>(
        &self,
        model: &mut Model<T>,
        inherit_steps: bool,
    ) -> Result<Vec<String>> {
        if self.header.arch != model.arch {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: checkpoint has '{}', model is '{}'",
                self.header.arch.name, model.arch.name
            )));
        }
        for (name, shape, _) in model.named_tensors() {
            let (s, data) = self
                .tensor(&name)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks tensor '{name}'")))?;
            if s != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor '{name}': checkpoint shape {s:?}, model {shape:?}"
                )));
            }
            let data: Vec<T> = data.iter().map(|&v| T::lit(v as f64)).collect();
            model.load_tensor(&name, &shape, &data)?;
        }
        let mut inherited = Vec::new();
        if inherit_steps {
            for (name, current) in model.step_sizes() {
                if let Some(saved) = self
                    .header
                    .steps
                    .get(&name)
                    .filter(|s| s.len() == current.len())
                {
                    model.set_step_size(&name, saved)?;
                    inherited.push(name);
                }
            }
        }
        Ok(inherited)
    }

    /// Rebuilds the saved model, step sizes included.
    pub fn to_model<T: Real>(&self) -> Result<Model<T>> {
        let mut model = build_model(&self.header.arch, &self.header.plan, 0)?;
        self.apply_to(&mut model, true)?;
        Ok(model)
    }
}
