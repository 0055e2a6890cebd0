//! Binary container for named weight arrays.
//!
//! Layout, all integers little-endian u32:
//!
//! ```text
//! magic "NGW1" | record count |
//!   per record: name length | name (utf-8) | rank | extents... | f32 data
//! ```
//!
//! Values are stored exactly as f32 bits, so a write/read cycle is
//! byte-preserving and checkpoints are portable across platforms.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};

pub const MAGIC: &[u8; 4] = b"NGW1";

/// Sanity cap against corrupt headers: no record may claim more elements
/// than this (1 GiB of f32s).
const MAX_NUMEL: usize = 1 << 28;
const MAX_NAME: usize = 1 << 12;
const MAX_RANK: usize = 8;

/// One named array in a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Record {
    pub fn new(name: &str, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Record {
            name: name.to_string(),
            shape,
            data,
        }
    }

    /// Packs raw bytes as one f32 per byte, for embedding small metadata
    /// blobs (every u8 value is exactly representable).
    pub fn from_bytes(name: &str, bytes: &[u8]) -> Self {
        Record {
            name: name.to_string(),
            shape: vec![bytes.len()],
            data: bytes.iter().map(|&b| b as f32).collect(),
        }
    }

    /// Reverses [`Record::from_bytes`].
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.data
            .iter()
            .map(|&v| {
                if (0.0..=255.0).contains(&v) && v.fract() == 0.0 {
                    Ok(v as u8)
                } else {
                    Err(CoreError::Format(format!(
                        "record {} does not hold byte values",
                        self.name
                    )))
                }
            })
            .collect()
    }
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Writes records in order. Every value must be finite.
pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    for rec in records {
        let numel: usize = rec.shape.iter().product();
        if numel != rec.data.len() {
            return Err(CoreError::Format(format!(
                "record {}: shape {:?} does not match {} values",
                rec.name,
                rec.shape,
                rec.data.len()
            )));
        }
        if !rec.data.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite {
                context: format!("checkpoint record {}", rec.name),
            });
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, records.len() as u32)?;
    for rec in records {
        write_u32(&mut w, rec.name.len() as u32)?;
        w.write_all(rec.name.as_bytes())?;
        write_u32(&mut w, rec.shape.len() as u32)?;
        for &d in &rec.shape {
            write_u32(&mut w, d as u32)?;
        }
        for &v in &rec.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a whole checkpoint, validating the magic, lengths, and that all
/// values are finite.
pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| CoreError::Format("file too short for header".into()))?;
    if &magic != MAGIC {
        return Err(CoreError::Format(format!(
            "bad magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut records = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > MAX_NAME {
            return Err(CoreError::Format(format!(
                "record name length {name_len} exceeds limit"
            )));
        }
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| CoreError::Format("record name is not utf-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > MAX_RANK {
            return Err(CoreError::Format(format!(
                "record {name}: rank {rank} exceeds limit"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        if numel > MAX_NUMEL {
            return Err(CoreError::Format(format!(
                "record {name}: element count {numel} exceeds limit"
            )));
        }
        let mut bytes = vec![0u8; numel * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| CoreError::Format(format!("record {name}: truncated data")))?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if !data.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite {
                context: format!("checkpoint record {name}"),
            });
        }
        records.push(Record { name, shape, data });
    }
    Ok(records)
}
