//! Embedding datasets and their on-disk formats.
//!
//! Binary layout (all little-endian):
//!
//! | offset | size            | content                    |
//! |--------|-----------------|----------------------------|
//! | 0      | 4               | magic `EMB1`               |
//! | 4      | 4               | `dim` as `u32`             |
//! | 8      | 8               | `count` as `u64`           |
//! | 16     | `count·dim·4`   | row-major `f32` payload    |
//!
//! A headered CSV of reals (one row per sample) is accepted as a fallback when
//! the path ends in `.csv`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";
const HEADER_LEN: usize = 16;

/// A `count × dim` matrix of samples stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    values: Vec<f32>,
}

impl Dataset {
    pub fn new(dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("dimension must be at least 1".into()));
        }
        if values.len() % dim != 0 {
            return Err(Error::Format(format!(
                "{} values do not form rows of width {dim}",
                values.len()
            )));
        }
        Ok(Self { dim, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::Format(format!(
                    "row {i} has {} values, expected {dim}",
                    r.len()
                )));
            }
            values.extend(r.iter().map(|&v| v as f32));
        }
        Self::new(dim, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }

    pub fn rows_f64(&self) -> Vec<Vec<f64>> {
        (0..self.count()).map(|i| self.row_f64(i)).collect()
    }
}

pub fn encode(data: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + data.values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(data.dim as u32).to_le_bytes());
    out.extend_from_slice(&(data.count() as u64).to_le_bytes());
    for v in &data.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "truncated header: {} of {HEADER_LEN} bytes",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            &bytes[..4],
            MAGIC
        )));
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let expected = (count as u128) * (dim as u128) * 4;
    let payload = &bytes[HEADER_LEN..];
    if (payload.len() as u128) < expected {
        return Err(Error::Format(format!(
            "truncated payload: {} of {expected} bytes",
            payload.len()
        )));
    }
    if (payload.len() as u128) > expected {
        return Err(Error::Format(format!(
            "payload has {} trailing bytes",
            payload.len() as u128 - expected
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Dataset::new(dim, values)
}

pub fn write_embeddings(path: &Path, data: &Dataset) -> Result<()> {
    if is_csv(path) {
        return write_csv(path, data);
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&encode(data))?;
    w.flush()?;
    Ok(())
}

/// Loads a dataset, choosing the CSV reader for `.csv` paths and the binary
/// reader otherwise.
pub fn load_embeddings(path: &Path) -> Result<Dataset> {
    if is_csv(path) {
        read_csv(path)
    } else {
        decode(&fs::read(path)?)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false)
}

fn read_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Format(e.to_string()))?;
    let dim = reader
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .len();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(e.to_string()))?;
        if record.len() != dim {
            return Err(Error::Format(format!(
                "ragged CSV: data row {} has {} fields, header has {dim}",
                i + 1,
                record.len()
            )));
        }
        for field in record.iter() {
            let v: f32 = field.trim().parse().map_err(|_| {
                Error::Format(format!("data row {}: `{field}` is not a number", i + 1))
            })?;
            values.push(v);
        }
    }
    Dataset::new(dim, values)
}

fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for i in 0..data.count() {
        let row: Vec<String> = data.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}
