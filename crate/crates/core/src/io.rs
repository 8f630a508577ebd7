//! Flat little-endian binary arrays with JSON sidecars.
//!
//! Every array artifact is a pair: `name.bin` holding raw values and
//! `name.json` describing shape and physical metadata. Float data is stored
//! as 32-bit IEEE little-endian in C row-major order: x fastest, z slowest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{QpatError, Result};

pub const DTYPE_F32: &str = "float32";
pub const DTYPE_U8: &str = "uint8";
pub const ORDER_C: &str = "C";

/// Sidecar for 3D volumes and 2D images (stored with `dims[2] == 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeSidecar {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub dtype: String,
    pub order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fov_mm: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_pitch_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantity: Option<String>,
}

/// Attaches the path to an I/O error, keeping its kind.
pub fn with_path(path: &Path) -> impl FnOnce(std::io::Error) -> QpatError + '_ {
    move |e| QpatError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(with_path(path))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(with_path(path))
}

/// `phi.bin` -> `phi.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_f32_le(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    for &v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_f32_le(path: &Path) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    BufReader::new(open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 {
        return Err(QpatError::Parse(format!(
            "{}: length {} is not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn write_u8(path: &Path, values: &[u8]) -> Result<()> {
    std::fs::write(path, values).map_err(with_path(path))?;
    Ok(())
}

pub fn read_u8(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(with_path(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Checks that a payload length matches the sidecar shape.
pub(crate) fn check_len(path: &Path, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(QpatError::Parse(format!(
            "{}: sidecar declares {expected} values, payload holds {actual}",
            path.display()
        )));
    }
    Ok(())
}

/// Writes a binary PGM preview, linearly scaled to the value range.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut w = BufWriter::new(create(path)?);
    write!(w, "P5\n{width} {height}\n255\n")?;
    // PGM rows run top to bottom; image rows are stored with y increasing.
    for row in (0..height).rev() {
        let line: Vec<u8> = values[row * width..(row + 1) * width]
            .iter()
            .map(|&v| {
                if v.is_finite() {
                    (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                }
            })
            .collect();
        w.write_all(&line)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_payload_is_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        write_f32_le(&p, &[1.0, -2.5]).unwrap();
        let raw = std::fs::read(&p).unwrap();
        assert_eq!(&raw[..4], &1.0f32.to_le_bytes());
        assert_eq!(read_f32_le(&p).unwrap(), vec![1.0, -2.5]);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        std::fs::write(&p, [0u8; 5]).unwrap();
        assert!(matches!(read_f32_le(&p), Err(QpatError::Parse(_))));
    }

    #[test]
    fn sidecar_rejects_unknown_keys() {
        let text = r#"{"dims":[1,1,1],"spacing_mm":[1,1,1],"origin_mm":[0,0,0],
                       "dtype":"float32","order":"C","bogus":1}"#;
        assert!(serde_json::from_str::<VolumeSidecar>(text).is_err());
    }
}
