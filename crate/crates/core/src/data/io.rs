//! Flat binary raster sequences with a JSON sidecar.
//!
//! A `.rdr` file holds one radar sequence: an 16-byte header (magic,
//! version, frame count, width, height) followed by frame-major,
//! row-major little-endian `f32` samples. Physical context that does not
//! affect the pixel grid — timestep, pixel size, units, normalization
//! bounds — travels in a small JSON file next to the raster, at the same
//! path with `.json` appended.
//!
//! Writing and re-reading a sequence reproduces the original bytes
//! exactly; readers validate the header and reject truncated or
//! non-finite payloads.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

use super::RadarSequence;

/// File signature of the raster format.
pub const RASTER_MAGIC: &[u8; 4] = b"RDR1";
/// Current raster format version.
pub const RASTER_VERSION: u32 = 1;

/// Largest accepted frame payload (frames × width × height), a guard
/// against corrupt headers demanding absurd allocations.
const MAX_SAMPLES: u64 = 1 << 31;

/// Physical and provenance metadata carried alongside a raster file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdrMeta {
    /// Minutes between consecutive frames.
    pub timestep_minutes: f64,
    /// Edge length of one pixel in meters.
    pub pixel_meters: f64,
    /// Unit of the stored samples, e.g. "dBZ".
    pub units: String,
    /// Lower normalization bound, if the sequence has been normalized.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm_min: Option<f64>,
    /// Upper normalization bound, if the sequence has been normalized.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm_max: Option<f64>,
    /// Seed the sequence was synthesized from, when synthetic.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Free-form description of where the sequence came from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

impl Default for RdrMeta {
    fn default() -> Self {
        RdrMeta {
            timestep_minutes: 5.0,
            pixel_meters: 500.0,
            units: "dBZ".to_string(),
            norm_min: None,
            norm_max: None,
            seed: None,
            provenance: None,
        }
    }
}

/// Path of the JSON sidecar for a raster at `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

/// Writes `seq` to `path` and its metadata to the JSON sidecar.
pub fn write_sequence(path: &Path, seq: &RadarSequence) -> Result<(), CoreError> {
    let expect = seq.n_frames * seq.width * seq.height;
    if seq.frames.len() != expect {
        return Err(CoreError::Format(format!(
            "sequence holds {} samples but dimensions {}x{}x{} require {}",
            seq.frames.len(),
            seq.n_frames,
            seq.width,
            seq.height,
            expect
        )));
    }
    if let Some(bad) = seq.frames.iter().position(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite {
            context: format!("raster sample {bad} while writing {}", path.display()),
        });
    }
    let mut buf = Vec::with_capacity(20 + seq.frames.len() * 4);
    buf.extend_from_slice(RASTER_MAGIC);
    buf.extend_from_slice(&RASTER_VERSION.to_le_bytes());
    buf.extend_from_slice(&(seq.n_frames as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.width as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.height as u32).to_le_bytes());
    for v in &seq.frames {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    f.sync_all()?;
    let json = serde_json::to_string_pretty(&seq.meta)
        .map_err(|e| CoreError::Format(format!("metadata serialization failed: {e}")))?;
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

/// Reads a raster sequence and its sidecar from `path`.
///
/// A missing sidecar is tolerated (defaults are assumed) so rasters can
/// be inspected in isolation; a present but malformed sidecar is an
/// error.
pub fn read_sequence(path: &Path) -> Result<RadarSequence, CoreError> {
    let mut f = fs::File::open(path)?;
    let mut header = [0u8; 20];
    f.read_exact(&mut header).map_err(|_| {
        CoreError::Format(format!("{}: too short for a raster header", path.display()))
    })?;
    if &header[0..4] != RASTER_MAGIC {
        return Err(CoreError::Format(format!(
            "{}: not a raster file (bad magic)",
            path.display()
        )));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != RASTER_VERSION {
        return Err(CoreError::Format(format!(
            "{}: unsupported raster version {version}",
            path.display()
        )));
    }
    let n_frames = word(8) as usize;
    let width = word(12) as usize;
    let height = word(16) as usize;
    if n_frames == 0 || width == 0 || height == 0 {
        return Err(CoreError::Format(format!(
            "{}: degenerate dimensions {n_frames}x{width}x{height}",
            path.display()
        )));
    }
    let total = n_frames as u64 * width as u64 * height as u64;
    if total > MAX_SAMPLES {
        return Err(CoreError::Format(format!(
            "{}: header demands {total} samples, over the {MAX_SAMPLES} cap",
            path.display()
        )));
    }
    let mut payload = vec![0u8; total as usize * 4];
    f.read_exact(&mut payload)
        .map_err(|_| CoreError::Format(format!("{}: truncated frame payload", path.display())))?;
    let mut tail = [0u8; 1];
    if f.read(&mut tail)? != 0 {
        return Err(CoreError::Format(format!(
            "{}: trailing bytes after frame payload",
            path.display()
        )));
    }
    let mut frames = Vec::with_capacity(total as usize);
    for chunk in payload.chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(CoreError::NonFinite {
                context: format!("raster sample {} in {}", frames.len(), path.display()),
            });
        }
        frames.push(v);
    }
    let sidecar = sidecar_path(path);
    let meta = if sidecar.exists() {
        let text = fs::read_to_string(&sidecar)?;
        serde_json::from_str(&text).map_err(|e| {
            CoreError::Format(format!("{}: malformed metadata: {e}", sidecar.display()))
        })?
    } else {
        RdrMeta::default()
    };
    Ok(RadarSequence {
        width,
        height,
        n_frames,
        frames,
        meta,
    })
}
