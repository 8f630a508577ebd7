//! Digital phantom twins: materials, shapes, voxelization and per-wavelength
//! property volumes.

mod material;
mod sampler;
mod shape;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QpatError, Result};
pub use crate::grid::{Volume, VoxelGrid};
use crate::io;

pub use material::{
    parse_spectrum_csv, AcousticProperties, MaterialSpectrum, OpticalProperties, SpectralSample,
    HBO2_CSV, HB_CSV, WATER, WATER_MUA_CSV, WATER_SOUND_SPEED,
};
pub use sampler::{sample_phantom, SamplerRanges, REFERENCE_WAVELENGTH_NM};
pub use shape::Shape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inclusion {
    pub shape: Shape,
    pub material: String,
}

fn default_couplant() -> String {
    WATER.to_string()
}

/// A phantom: background body, ordered inclusions, and the material table
/// they reference. `water` resolves to the built-in couplant when it is not
/// listed in `materials`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub materials: Vec<MaterialSpectrum>,
    pub background_shape: Shape,
    pub background_material: String,
    #[serde(default)]
    pub inclusions: Vec<Inclusion>,
    #[serde(default = "default_couplant")]
    pub couplant_material: String,
}

impl PhantomSpec {
    pub fn resolve(&self, name: &str) -> Result<MaterialSpectrum> {
        if let Some(m) = self.materials.iter().find(|m| m.name == name) {
            return Ok(m.clone());
        }
        if name == WATER {
            return Ok(MaterialSpectrum::water());
        }
        Err(QpatError::Config(format!(
            "phantom `{}` references unknown material `{name}`",
            self.id
        )))
    }

    pub fn validate(&self) -> Result<()> {
        for m in &self.materials {
            m.validate()?;
        }
        self.background_shape.validate()?;
        self.resolve(&self.background_material)?;
        self.resolve(&self.couplant_material)?;
        for (i, inc) in self.inclusions.iter().enumerate() {
            inc.shape.validate()?;
            self.resolve(&inc.material)?;
            if !self.background_shape.encloses(&inc.shape) {
                return Err(QpatError::Validation(format!(
                    "phantom `{}`: inclusion {i} is not inside the background shape",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Material names in label order: couplant, background, then inclusion
    /// materials in first-appearance order.
    pub fn label_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        let mut push = |n: &str| {
            if !names.iter().any(|x| x == n) {
                names.push(n.to_string());
            }
        };
        push(&self.couplant_material);
        push(&self.background_material);
        for inc in &self.inclusions {
            push(&inc.material);
        }
        names
    }

    /// Resolved materials in label order.
    pub fn label_materials(&self) -> Result<Vec<MaterialSpectrum>> {
        self.label_names().iter().map(|n| self.resolve(n)).collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let spec: PhantomSpec = io::read_json(path)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }
}

/// Per-voxel material labels. `labels[v]` indexes `materials`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub grid: VoxelGrid,
    pub labels: Vec<u8>,
    pub materials: Vec<String>,
}

impl LabelMap {
    pub fn label_of(&self, name: &str) -> Option<u8> {
        self.materials.iter().position(|m| m == name).map(|i| i as u8)
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Labels of the z-slice `k`.
    pub fn slice_z(&self, k: usize) -> Vec<u8> {
        let n = self.grid.dims[0] * self.grid.dims[1];
        self.labels[k * n..(k + 1) * n].to_vec()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            dims: [usize; 3],
            spacing_mm: [f64; 3],
            origin_mm: [f64; 3],
            dtype: &'a str,
            order: &'a str,
            materials: &'a [String],
        }
        io::write_u8(path, &self.labels)?;
        io::write_json(
            &io::sidecar_path(path),
            &Sidecar {
                dims: self.grid.dims,
                spacing_mm: self.grid.spacing,
                origin_mm: self.grid.origin,
                dtype: io::DTYPE_U8,
                order: io::ORDER_C,
                materials: &self.materials,
            },
        )
    }

    pub fn read(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Sidecar {
            dims: [usize; 3],
            spacing_mm: [f64; 3],
            origin_mm: [f64; 3],
            dtype: String,
            order: String,
            materials: Vec<String>,
        }
        let meta: Sidecar = io::read_json(&io::sidecar_path(path))?;
        if meta.dtype != io::DTYPE_U8 || meta.order != io::ORDER_C {
            return Err(QpatError::Parse(format!(
                "{}: expected uint8/C label map",
                path.display()
            )));
        }
        let grid = VoxelGrid::new(meta.dims, meta.spacing_mm, meta.origin_mm)?;
        let labels = io::read_u8(path)?;
        io::check_len(path, grid.len(), labels.len())?;
        if labels.iter().any(|&l| l as usize >= meta.materials.len()) {
            return Err(QpatError::Parse(format!("{}: label out of range", path.display())));
        }
        Ok(Self {
            grid,
            labels,
            materials: meta.materials,
        })
    }
}

/// Labels each voxel by its center: the last inclusion containing it wins,
/// else background if inside the body, else couplant. Shapes extending past
/// the grid are clipped.
pub fn rasterize(spec: &PhantomSpec, grid: &VoxelGrid) -> Result<LabelMap> {
    spec.validate()?;
    grid.validate()?;
    let names = spec.label_names();
    if names.len() > u8::MAX as usize {
        return Err(QpatError::Config("more than 255 materials".into()));
    }
    let lookup = |n: &str| names.iter().position(|x| x == n).expect("label name present") as u8;
    let couplant = lookup(&spec.couplant_material);
    let background = lookup(&spec.background_material);
    let inclusions: Vec<(Shape, u8)> = spec
        .inclusions
        .iter()
        .map(|inc| (inc.shape, lookup(&inc.material)))
        .collect();

    let [nx, ny, _] = grid.dims;
    let mut labels = vec![couplant; grid.len()];
    labels
        .par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(k, slab)| {
            for j in 0..ny {
                for i in 0..nx {
                    let p = grid.center(i, j, k);
                    let label = inclusions
                        .iter()
                        .rev()
                        .find(|(s, _)| s.contains(p))
                        .map(|&(_, l)| l)
                        .or_else(|| spec.background_shape.contains(p).then_some(background));
                    if let Some(l) = label {
                        slab[j * nx + i] = l;
                    }
                }
            }
        });
    Ok(LabelMap {
        grid: *grid,
        labels,
        materials: names,
    })
}

/// Property volumes for one wavelength, all aligned with one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyVolumes {
    pub grid: VoxelGrid,
    pub mu_a: Vec<f64>,
    pub mu_s: Vec<f64>,
    pub g: Vec<f64>,
    pub n: Vec<f64>,
    pub sound_speed: Vec<f64>,
    pub density: Vec<f64>,
    pub gruneisen: Vec<f64>,
}

impl PropertyVolumes {
    pub fn mu_a_volume(&self) -> Volume {
        Volume {
            grid: self.grid,
            data: self.mu_a.clone(),
        }
    }

    pub fn gruneisen_volume(&self) -> Volume {
        Volume {
            grid: self.grid,
            data: self.gruneisen.clone(),
        }
    }

    /// Homogeneous medium filling `grid`.
    pub fn uniform(grid: VoxelGrid, optical: OpticalProperties, acoustic: AcousticProperties) -> Self {
        let n = grid.len();
        Self {
            grid,
            mu_a: vec![optical.mu_a; n],
            mu_s: vec![optical.mu_s; n],
            g: vec![optical.g; n],
            n: vec![optical.n; n],
            sound_speed: vec![acoustic.sound_speed; n],
            density: vec![acoustic.density; n],
            gruneisen: vec![acoustic.gruneisen; n],
        }
    }
}

/// Per-voxel physics coefficients for `wavelength_nm`, interpolated linearly
/// in wavelength.
pub fn assign_properties(
    labels: &LabelMap,
    materials: &[MaterialSpectrum],
    wavelength_nm: f64,
) -> Result<PropertyVolumes> {
    let table: Vec<(OpticalProperties, AcousticProperties)> = labels
        .materials
        .iter()
        .map(|name| {
            let m = materials.iter().find(|m| &m.name == name).ok_or_else(|| {
                QpatError::Config(format!("label material `{name}` missing from material list"))
            })?;
            Ok((m.at(wavelength_nm)?, m.acoustic))
        })
        .collect::<Result<_>>()?;
    let pick = |f: &dyn Fn(&(OpticalProperties, AcousticProperties)) -> f64| -> Vec<f64> {
        labels.labels.iter().map(|&l| f(&table[l as usize])).collect()
    };
    Ok(PropertyVolumes {
        grid: labels.grid,
        mu_a: pick(&|t| t.0.mu_a),
        mu_s: pick(&|t| t.0.mu_s),
        g: pick(&|t| t.0.g),
        n: pick(&|t| t.0.n),
        sound_speed: pick(&|t| t.1.sound_speed),
        density: pick(&|t| t.1.density),
        gruneisen: pick(&|t| t.1.gruneisen),
    })
}
