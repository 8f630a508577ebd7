//! Content hashing, persisted stage records and small raster helpers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{QpatError, Result};
use crate::grid::{Field2D, PlaneGrid, Volume, VoxelGrid};
use crate::io;

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(crate::io::with_path(path))?))
}

/// Hash of the canonical JSON form of `value`.
pub fn hash_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(value)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageRecord {
    stage: String,
    key: String,
    files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub subject: String,
    pub seconds: f64,
    pub skipped: bool,
}

/// Runs stages whose outputs live in per-subject directories. A stage is
/// skipped when its record holds the same key and every listed file still
/// has the recorded hash. Downstream stages always read the persisted files,
/// so a resumed run sees exactly what a fresh one would.
pub struct StageStore {
    pub root: PathBuf,
    pub timings: Vec<StageTiming>,
    /// Relative path -> sha256 of every file written or verified.
    pub artifacts: BTreeMap<String, String>,
}

impl StageStore {
    pub fn new(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), timings: Vec::new(), artifacts: BTreeMap::new() })
    }

    fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).to_string_lossy().replace('\\', "/")
    }

    fn cached(&self, record_path: &Path, key: &str, dir: &Path) -> Option<StageRecord> {
        let rec: StageRecord = io::read_json(record_path).ok()?;
        if rec.key != key {
            return None;
        }
        for (name, sha) in &rec.files {
            if file_sha256(&dir.join(name)).ok()? != *sha {
                return None;
            }
        }
        Some(rec)
    }

    /// `save` writes the product into the directory and returns the file
    /// names it created; `load` reads it back.
    pub fn stage<T>(
        &mut self,
        stage: &str,
        subject: &str,
        dir: &Path,
        key: &str,
        produce: impl FnOnce() -> Result<T>,
        save: impl FnOnce(&T, &Path) -> Result<Vec<String>>,
        load: impl FnOnce(&Path) -> Result<T>,
    ) -> Result<T> {
        let started = Instant::now();
        let label = format!("{stage} ({subject})");
        let record_path = dir.join(format!("{stage}.stage.json"));
        let (rec, skipped) = match self.cached(&record_path, key, dir) {
            Some(rec) => (rec, true),
            None => {
                let run = || -> Result<StageRecord> {
                    std::fs::create_dir_all(dir)?;
                    let product = produce()?;
                    let names = save(&product, dir)?;
                    let mut files = BTreeMap::new();
                    for n in names {
                        let sha = file_sha256(&dir.join(&n))?;
                        files.insert(n, sha);
                    }
                    let rec = StageRecord { stage: stage.into(), key: key.into(), files };
                    io::write_json(&record_path, &rec)?;
                    Ok(rec)
                };
                (run().map_err(|e| e.in_stage(&label))?, false)
            }
        };
        let value = load(dir).map_err(|e| e.in_stage(&label))?;
        for (name, sha) in rec.files {
            self.artifacts.insert(self.relative(&dir.join(name)), sha);
        }
        self.timings.push(StageTiming {
            stage: stage.into(),
            subject: subject.into(),
            seconds: started.elapsed().as_secs_f64(),
            skipped,
        });
        Ok(value)
    }

    /// Records a file written outside any stage (reports, manifests).
    pub fn register(&mut self, path: &Path) -> Result<()> {
        let sha = file_sha256(path)?;
        self.artifacts.insert(self.relative(path), sha);
        Ok(())
    }
}

/// A plane field as a one-slice volume.
pub fn field_volume(field: &Field2D) -> Volume {
    let g = field.grid;
    Volume {
        grid: VoxelGrid {
            dims: [g.nx, g.ny, 1],
            spacing: [g.spacing[0], g.spacing[1], g.spacing[0]],
            origin: [g.origin[0], g.origin[1], 0.0],
        },
        data: field.data.clone(),
    }
}

pub fn write_field(path: &Path, field: &Field2D, quantity: &str) -> Result<()> {
    field_volume(field).write(path, quantity)
}

pub fn read_field(path: &Path) -> Result<Field2D> {
    let v = Volume::read(path)?;
    if v.grid.dims[2] != 1 {
        return Err(QpatError::Parse(format!("{}: expected a single slice", path.display())));
    }
    Ok(v.slice_z(0))
}

/// Binary mask raster (0/1 bytes) with a volume sidecar.
pub fn write_mask(path: &Path, grid: PlaneGrid, mask: &[bool]) -> Result<()> {
    let bytes: Vec<u8> = mask.iter().map(|&m| m as u8).collect();
    io::write_u8(path, &bytes)?;
    let mut side = field_volume(&Field2D::zeros(grid)).sidecar("mask");
    side.dtype = io::DTYPE_U8.into();
    io::write_json(&io::sidecar_path(path), &side)
}

pub fn read_mask(path: &Path) -> Result<(PlaneGrid, Vec<bool>)> {
    let meta: io::VolumeSidecar = io::read_json(&io::sidecar_path(path))?;
    if meta.dtype != io::DTYPE_U8 || meta.dims[2] != 1 {
        return Err(QpatError::Parse(format!("{}: expected a uint8 single-slice mask", path.display())));
    }
    let grid = PlaneGrid {
        nx: meta.dims[0],
        ny: meta.dims[1],
        spacing: [meta.spacing_mm[0], meta.spacing_mm[1]],
        origin: [meta.origin_mm[0], meta.origin_mm[1]],
    };
    let bytes = io::read_u8(path)?;
    io::check_len(path, grid.len(), bytes.len())?;
    Ok((grid, bytes.into_iter().map(|b| b != 0).collect()))
}

/// Nearest-voxel lookup of a plane-indexed slice at each target pixel
/// center; `fill` outside the source extent.
pub fn nearest_resample<T: Copy>(src: &[T], src_grid: PlaneGrid, target: PlaneGrid, fill: T) -> Vec<T> {
    let mut out = Vec::with_capacity(target.len());
    for j in 0..target.ny {
        for i in 0..target.nx {
            let [x, y] = target.center(i, j);
            let fx = ((x - src_grid.origin[0]) / src_grid.spacing[0]).floor();
            let fy = ((y - src_grid.origin[1]) / src_grid.spacing[1]).floor();
            let inside = fx >= 0.0 && fy >= 0.0 && (fx as usize) < src_grid.nx && (fy as usize) < src_grid.ny;
            out.push(if inside { src[fy as usize * src_grid.nx + fx as usize] } else { fill });
        }
    }
    out
}
