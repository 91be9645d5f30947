//! Binary model checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "CBRSUBG\0" | version u32 | num_layers u32 | dims u32 × (L+1)
//! num_relations u32 | use_distance u8 | temperature f64 | seed u64
//! num_params u64 | params f64 × num_params
//! [ "TRNE" | rows u32 | cols u32 | f64 × rows·cols ]   optional relation table
//! ```
//!
//! Parameters are written in model order: per layer, every relation matrix
//! then the self matrix, each `in × out` row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gnn::matrix::Matrix;
use crate::gnn::model::{GnnConfig, GnnModel};

const MAGIC: &[u8; 8] = b"CBRSUBG\0";
const VERSION: u32 = 1;
const RELATION_TABLE_TAG: &[u8; 4] = b"TRNE";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: GnnModel,
    /// Per-pattern-type translation vectors of the TransE-style baseline.
    pub relation_table: Option<Matrix>,
}

fn encode(model: &GnnModel, relation_table: Option<&Matrix>) -> Vec<u8> {
    let c = model.config();
    let mut buf = Vec::with_capacity(64 + 8 * model.num_params());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(c.num_layers as u32).to_le_bytes());
    for d in c.layer_dims() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(c.num_relations as u32).to_le_bytes());
    buf.push(c.use_distance as u8);
    buf.extend_from_slice(&c.temperature.to_le_bytes());
    buf.extend_from_slice(&c.seed.to_le_bytes());
    buf.extend_from_slice(&(model.num_params() as u64).to_le_bytes());
    for p in model.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    if let Some(t) = relation_table {
        buf.extend_from_slice(RELATION_TABLE_TAG);
        buf.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

pub fn save_checkpoint(path: &Path, model: &GnnModel, relation_table: Option<&Matrix>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::file(path, e))?);
    w.write_all(&encode(model, relation_table)).map_err(|e| Error::file(path, e))?;
    w.flush().map_err(|e| Error::file(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn decode(buf: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let num_layers = c.u32()? as usize;
    let dims = (0..=num_layers).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let num_relations = c.u32()? as usize;
    let use_distance = match c.take(1)?[0] {
        0 => false,
        1 => true,
        b => return Err(Error::Checkpoint(format!("bad distance flag {b}"))),
    };
    let temperature = c.f64()?;
    let seed = c.u64()?;
    let config = GnnConfig {
        num_layers,
        hidden_dim: dims.last().copied().unwrap_or(0),
        num_relations,
        use_distance,
        temperature,
        seed,
    };
    if config.layer_dims() != dims {
        return Err(Error::Checkpoint(format!("layer dims {dims:?} inconsistent with header")));
    }
    let n = c.u64()? as usize;
    let params = c.f64s(n)?;
    let model = GnnModel::from_params(config, params).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let relation_table = if c.pos == buf.len() {
        None
    } else {
        if c.take(4)? != RELATION_TABLE_TAG {
            return Err(Error::Checkpoint("unknown trailing section".into()));
        }
        let rows = c.u32()? as usize;
        let cols = c.u32()? as usize;
        Some(Matrix::from_vec(rows, cols, c.f64s(rows * cols)?))
    };
    if c.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint { model, relation_table })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::file(path, e))?)
        .read_to_end(&mut buf)
        .map_err(|e| Error::file(path, e))?;
    decode(&buf)
}

/// `model.bin` → `model.json`.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

pub fn write_sidecar(checkpoint: &Path, value: &serde_json::Value) -> Result<()> {
    let path = sidecar_path(checkpoint);
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::file(&path, e))
}
