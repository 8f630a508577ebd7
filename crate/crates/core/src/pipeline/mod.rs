//! End-to-end orchestration:
//! phantom → fluence → p0 → acoustics → recon → estimate → evaluate.
//!
//! Every stage persists its products under the output directory and is
//! skipped on re-runs whose inputs hash identically. Downstream stages
//! always consume the persisted (f32) artifacts, so resuming from disk and
//! running from scratch give bit-identical results.

mod scenario;
mod store;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acoustics::{simulate_forward, DetectorArray, Medium2D, SolverConfig, TimeSeries};
use crate::error::{QpatError, Result};
use crate::eval::{self, gcnr, GcnrRow, MetricReport, MetricRow, Summary};
use crate::grid::{Field2D, PlaneGrid, Volume, VoxelGrid};
use crate::io;
use crate::phantom::{assign_properties, rasterize, sample_phantom, LabelMap, PhantomSpec, SamplerRanges, WATER_SOUND_SPEED};
use crate::photon::{compute_p0, simulate_fluence, EnergyBalance, FluenceVolume, IlluminationGeometry, LightSource, TransportConfig};
use crate::quant::{
    aggregate_region, apply_calibration, fit_linear_calibration, fluence_correct, fluence_normalise, CalibrationSample,
    LinearMap, RegionKind, RegionSpec, DEFAULT_BRIGHTEST_FRACTION, DEFAULT_DEPTH_THRESHOLD_MM,
};
use crate::recon::{reconstruct, ReconConfig, ReconImage};

pub use scenario::{
    depth_correlation, depth_decorrelation_from_dir, depth_profile, scenario_depth_decorrelation, scenario_with_source,
    DepthCorrelation, DepthScenario, DEFAULT_DEPTH_BINS_MM, DEPTH_BIN_WIDTH_MM,
};
pub use store::{file_sha256, hash_json, read_field, read_mask, sha256_hex, write_field, write_mask, StageStore, StageTiming};

/// Deterministic child seed for a named sub-stream.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut bytes = base.to_le_bytes().to_vec();
    bytes.extend_from_slice(tag.as_bytes());
    let h = sha256_hex(&bytes);
    u64::from_str_radix(&h[..16], 16).expect("hex digest")
}

fn default_prefix() -> String {
    "phantom_".into()
}

/// Where phantoms come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhantomSource {
    Files {
        paths: Vec<PathBuf>,
    },
    Sampler {
        seed: u64,
        count: usize,
        #[serde(default = "default_prefix")]
        prefix: String,
        #[serde(default)]
        ranges: SamplerRanges,
    },
}

impl PhantomSource {
    pub fn load(&self) -> Result<Vec<PhantomSpec>> {
        let specs = match self {
            PhantomSource::Files { paths } => paths.iter().map(|p| PhantomSpec::read(p)).collect::<Result<Vec<_>>>()?,
            PhantomSource::Sampler { seed, count, prefix, ranges } => (0..*count)
                .map(|i| {
                    let id = format!("{prefix}{i:03}");
                    sample_phantom(&id, derive_seed(*seed, &id), ranges)
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let mut ids: Vec<&str> = specs.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(QpatError::Config("phantom ids must be unique".into()));
        }
        if ids.iter().any(|id| id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.')) {
            return Err(QpatError::Config("phantom ids must be plain file names".into()));
        }
        Ok(specs)
    }

    fn validate(&self) -> Result<()> {
        match self {
            PhantomSource::Files { paths } => {
                if paths.is_empty() {
                    return Err(QpatError::Config("phantom file list is empty".into()));
                }
                for p in paths {
                    if !p.is_file() {
                        return Err(QpatError::Config(format!("phantom spec {} not found", p.display())));
                    }
                }
                Ok(())
            }
            PhantomSource::Sampler { count, ranges, .. } => {
                if *count == 0 {
                    return Err(QpatError::Config("sampler count must be >= 1".into()));
                }
                ranges.validate()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub dims: [usize; 3],
    pub spacing_mm: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { dims: [160, 160, 160], spacing_mm: 0.25 }
    }
}

impl GridConfig {
    pub fn voxel_grid(&self) -> Result<VoxelGrid> {
        VoxelGrid::centered(self.dims, self.spacing_mm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluenceConfig {
    pub photons: u64,
    pub seed: u64,
    pub source: LightSource,
    pub transport: TransportConfig,
}

impl Default for FluenceConfig {
    fn default() -> Self {
        Self {
            photons: 1_000_000,
            seed: 1,
            source: LightSource::Ring(IlluminationGeometry::default()),
            transport: TransportConfig::default(),
        }
    }
}

/// 2D acoustic domain: a square grid centered on the array center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcousticConfig {
    pub grid_size: usize,
    pub spacing_mm: f64,
    pub detectors: DetectorArray,
    pub solver: SolverConfig,
}

impl Default for AcousticConfig {
    fn default() -> Self {
        Self { grid_size: 336, spacing_mm: 0.25, detectors: DetectorArray::default(), solver: SolverConfig::default() }
    }
}

impl AcousticConfig {
    pub fn plane_grid(&self) -> PlaneGrid {
        PlaneGrid::square_centered(self.grid_size, self.spacing_mm, self.detectors.center)
    }

    fn validate(&self) -> Result<()> {
        self.detectors.validate()?;
        if self.grid_size < 8 || !(self.spacing_mm > 0.0) {
            return Err(QpatError::Config("acoustic grid too small".into()));
        }
        let half = self.grid_size as f64 * self.spacing_mm / 2.0;
        if self.detectors.radius >= half {
            return Err(QpatError::Config(format!(
                "detector radius {} mm does not fit in the {:.1} mm acoustic half-width",
                self.detectors.radius, half
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cal,
    Gtphi,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cal => "cal",
            Method::Gtphi => "gtphi",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = QpatError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cal" => Ok(Method::Cal),
            "gtphi" => Ok(Method::Gtphi),
            other => Err(QpatError::Config(format!("unknown estimator `{other}` (cal|gtphi)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub methods: Vec<Method>,
    pub brightest_fraction: f64,
    pub depth_threshold_mm: f64,
    pub gcnr_bins: usize,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Cal, Method::Gtphi],
            brightest_fraction: DEFAULT_BRIGHTEST_FRACTION,
            depth_threshold_mm: DEFAULT_DEPTH_THRESHOLD_MM,
            gcnr_bins: eval::DEFAULT_GCNR_BINS,
        }
    }
}

fn default_wavelengths() -> Vec<f64> {
    vec![800.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    #[serde(default = "default_wavelengths")]
    pub wavelengths_nm: Vec<f64>,
    /// Phantoms that are imaged and evaluated.
    pub phantoms: PhantomSource,
    /// Phantoms the estimators are calibrated on; without them the run
    /// stops after reconstruction.
    #[serde(default)]
    pub training: Option<PhantomSource>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub fluence: FluenceConfig,
    #[serde(default)]
    pub acoustic: AcousticConfig,
    #[serde(default)]
    pub recon: ReconConfig,
    #[serde(default)]
    pub estimate: EstimateConfig,
    /// Worker threads; results do not depend on it.
    #[serde(default)]
    pub threads: Option<usize>,
}

/// The parts of a config that influence numbers.
#[derive(Serialize)]
struct HashedConfig<'a> {
    version: &'a str,
    wavelengths_nm: &'a [f64],
    phantoms: &'a PhantomSource,
    training: &'a Option<PhantomSource>,
    grid: &'a GridConfig,
    fluence: &'a FluenceConfig,
    acoustic: &'a AcousticConfig,
    recon: &'a ReconConfig,
    estimate: &'a EstimateConfig,
}

impl PipelineConfig {
    pub fn new(output_dir: impl Into<PathBuf>, phantoms: PhantomSource) -> Self {
        Self {
            output_dir: output_dir.into(),
            wavelengths_nm: default_wavelengths(),
            phantoms,
            training: None,
            grid: GridConfig::default(),
            fluence: FluenceConfig::default(),
            acoustic: AcousticConfig::default(),
            recon: ReconConfig::default(),
            estimate: EstimateConfig::default(),
            threads: None,
        }
    }

    /// Coarser settings for laptop-scale runs: 64³ voxels at 0.5 mm and a
    /// 0.4 mm acoustic grid stepped at 50 ns for 40 µs. The acoustic grid
    /// still resolves everything the 0.5 mm voxels carry.
    pub fn desk_scale(output_dir: impl Into<PathBuf>, phantoms: PhantomSource) -> Self {
        Self {
            grid: GridConfig { dims: [64, 64, 64], spacing_mm: 0.5 },
            acoustic: AcousticConfig {
                grid_size: 212,
                spacing_mm: 0.4,
                solver: SolverConfig { dt: 0.05, n_steps: 800, ..SolverConfig::default() },
                ..AcousticConfig::default()
            },
            ..Self::new(output_dir, phantoms)
        }
    }

    /// Parses a JSON document; unknown keys are errors.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| QpatError::Config(format!("pipeline config: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(crate::io::with_path(path))?;
        let mut cfg = Self::from_json(&text)?;
        // relative phantom paths resolve against the config's directory
        let base = path.parent().unwrap_or(Path::new("."));
        for src in std::iter::once(&mut cfg.phantoms).chain(cfg.training.as_mut()) {
            if let PhantomSource::Files { paths } = src {
                for p in paths.iter_mut() {
                    if p.is_relative() {
                        *p = base.join(&*p);
                    }
                }
            }
        }
        Ok(cfg)
    }

    pub fn hash(&self) -> Result<String> {
        hash_json(&HashedConfig {
            version: crate::VERSION,
            wavelengths_nm: &self.wavelengths_nm,
            phantoms: &self.phantoms,
            training: &self.training,
            grid: &self.grid,
            fluence: &self.fluence,
            acoustic: &self.acoustic,
            recon: &self.recon,
            estimate: &self.estimate,
        })
    }

    /// Structural checks that need no phantom loading.
    pub fn validate(&self) -> Result<()> {
        if self.wavelengths_nm.is_empty() {
            return Err(QpatError::Config("at least one wavelength is required".into()));
        }
        let mut wls = self.wavelengths_nm.clone();
        wls.sort_by(f64::total_cmp);
        if wls.iter().any(|w| !(*w > 0.0 && w.is_finite())) || wls.windows(2).any(|w| w[0] == w[1]) {
            return Err(QpatError::Config("wavelengths must be positive and distinct".into()));
        }
        self.phantoms.validate()?;
        if let Some(t) = &self.training {
            t.validate()?;
        }
        self.grid.voxel_grid()?;
        if self.fluence.photons == 0 {
            return Err(QpatError::Config("photon count must be >= 1".into()));
        }
        self.acoustic.validate()?;
        self.recon.validate()?;
        let e = &self.estimate;
        if !(e.brightest_fraction > 0.0 && e.brightest_fraction <= 1.0) || e.gcnr_bins == 0 || !(e.depth_threshold_mm >= 0.0) {
            return Err(QpatError::Config("invalid estimate settings".into()));
        }
        if self.threads == Some(0) {
            return Err(QpatError::Config("threads must be >= 1".into()));
        }
        Ok(())
    }

    /// Wavelengths must lie inside every material spectrum.
    fn check_spectra(&self, specs: &[PhantomSpec]) -> Result<()> {
        for spec in specs {
            for m in spec.label_materials()? {
                let (lo, hi) = m.wavelength_range();
                if let Some(w) = self.wavelengths_nm.iter().find(|w| **w < lo || **w > hi) {
                    return Err(QpatError::Config(format!(
                        "phantom `{}`: material `{}` covers {lo}-{hi} nm, not {w} nm",
                        spec.id, m.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Reconstruction of one phantom at one wavelength plus the ground-truth
/// fluence on the image grid.
#[derive(Debug, Clone)]
pub struct Acquisition {
    pub phantom_id: String,
    pub wavelength_nm: f64,
    pub image: ReconImage,
    pub phi_on_image: Field2D,
    pub dir: PathBuf,
}

/// One labelled region of a phantom, on the image grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEntry {
    pub region_id: String,
    pub kind: RegionKind,
    pub material: String,
    pub file: String,
}

#[derive(Debug, Clone)]
pub struct PhantomRegions {
    pub entries: Vec<RegionEntry>,
    pub masks: Vec<Vec<bool>>,
    pub grid: PlaneGrid,
}

impl PhantomRegions {
    pub fn background(&self) -> Option<&[bool]> {
        self.entries.iter().position(|e| e.kind == RegionKind::Background).map(|i| self.masks[i].as_slice())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMaps {
    pub wavelength_nm: f64,
    pub cal: LinearMap,
    pub gtphi: LinearMap,
}

impl CalibrationMaps {
    pub fn get(&self, m: Method) -> &LinearMap {
        match m {
            Method::Cal => &self.cal,
            Method::Gtphi => &self.gtphi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: Vec<ArtifactEntry>,
    pub stages: Vec<StageTiming>,
}

impl RunManifest {
    /// Hash of everything except wall times.
    pub fn content_hash(&self) -> Result<String> {
        hash_json(&(&self.toolkit_version, &self.config_hash, &self.seeds, &self.artifacts))
    }
}

/// Per-estimator results on the evaluated phantoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub report: MetricReport,
    pub gcnr: Vec<GcnrRow>,
    pub gcnr_summary: Option<Summary>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
    /// Reconstructed images of the evaluated phantoms.
    pub images: Vec<PathBuf>,
    pub calibrations: Vec<CalibrationMaps>,
    pub methods: Vec<MethodOutcome>,
}

impl PipelineOutcome {
    pub fn method(&self, m: Method) -> Option<&MethodOutcome> {
        self.methods.iter().find(|o| o.method == m)
    }
}

fn wl_dir(wl: f64) -> String {
    format!("{wl}nm")
}

/// Rounds through f32 exactly as the binary artifacts do.
fn as_stored(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x as f32 as f64).collect()
}

pub(crate) struct Runner<'a> {
    pub cfg: &'a PipelineConfig,
    pub store: StageStore,
    pub seeds: BTreeMap<String, u64>,
    keys: BTreeMap<String, String>,
}

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a PipelineConfig) -> Result<Self> {
        Ok(Self { cfg, store: StageStore::new(&cfg.output_dir)?, seeds: BTreeMap::new(), keys: BTreeMap::new() })
    }

    fn phantom_dir(&self, id: &str) -> PathBuf {
        self.cfg.output_dir.join("phantoms").join(id)
    }

    /// Rasterized labels of a phantom.
    pub fn phantom(&mut self, spec: &PhantomSpec) -> Result<LabelMap> {
        let grid = self.cfg.grid.voxel_grid()?;
        let key = hash_json(&(crate::VERSION, "phantom", spec, &grid))?;
        self.keys.insert(format!("phantom/{}", spec.id), key.clone());
        let dir = self.phantom_dir(&spec.id);
        self.store.stage(
            "phantom",
            &spec.id,
            &dir,
            &key,
            || rasterize(spec, &grid),
            |labels, d| {
                spec.write(&d.join("phantom.json"))?;
                labels.write(&d.join("labels.bin"))?;
                Ok(vec!["phantom.json".into(), "labels.bin".into(), "labels.json".into()])
            },
            |d| LabelMap::read(&d.join("labels.bin")),
        )
    }

    /// Region masks of the central label slice on the image grid.
    pub fn regions(&mut self, spec: &PhantomSpec, labels: &LabelMap) -> Result<PhantomRegions> {
        let image_grid = self.image_grid()?;
        let key = hash_json(&(&self.keys[&format!("phantom/{}", spec.id)], "regions", &image_grid))?;
        let dir = self.phantom_dir(&spec.id).join("regions");
        let slice = labels.slice_z(labels.grid.central_slice());
        let plane = labels.grid.plane();
        let produce = || -> Result<PhantomRegions> {
            let on_image = store::nearest_resample(&slice, plane, image_grid, u8::MAX);
            let mut out = PhantomRegions { entries: Vec::new(), masks: Vec::new(), grid: image_grid };
            let mut push = |id: String, kind: RegionKind, material: &str| {
                if let Some(label) = labels.label_of(material) {
                    let mask: Vec<bool> = on_image.iter().map(|&l| l == label).collect();
                    if mask.iter().any(|&m| m) {
                        let file = format!("{id}.bin");
                        out.entries.push(RegionEntry { region_id: id, kind, material: material.into(), file });
                        out.masks.push(mask);
                    }
                }
            };
            push("background".into(), RegionKind::Background, &spec.background_material);
            for (i, inc) in spec.inclusions.iter().enumerate() {
                push(format!("inclusion_{}", i + 1), RegionKind::Inclusion, &inc.material);
            }
            Ok(out)
        };
        self.store.stage(
            "regions",
            &spec.id,
            &dir,
            &key,
            produce,
            |regions, d| {
                let mut files = vec!["regions.json".to_string()];
                for (e, mask) in regions.entries.iter().zip(&regions.masks) {
                    write_mask(&d.join(&e.file), image_grid, mask)?;
                    files.push(e.file.clone());
                    files.push(e.file.replace(".bin", ".json"));
                }
                io::write_json(&d.join("regions.json"), &regions.entries)?;
                Ok(files)
            },
            |d| {
                let entries: Vec<RegionEntry> = io::read_json(&d.join("regions.json"))?;
                let mut masks = Vec::new();
                for e in &entries {
                    masks.push(read_mask(&d.join(&e.file))?.1);
                }
                Ok(PhantomRegions { entries, masks, grid: image_grid })
            },
        )
    }

    fn image_grid(&self) -> Result<PlaneGrid> {
        let r = &self.cfg.recon;
        r.validate()?;
        let full = r.image_grid();
        let off = (r.n_pixels - r.crop) / 2;
        Ok(PlaneGrid {
            nx: r.crop,
            ny: r.crop,
            spacing: full.spacing,
            origin: [
                full.origin[0] + off as f64 * full.spacing[0],
                full.origin[1] + off as f64 * full.spacing[1],
            ],
        })
    }

    /// Fluence, acoustics and reconstruction of one phantom at one
    /// wavelength.
    pub fn acquire(&mut self, spec: &PhantomSpec, labels: &LabelMap, wl: f64) -> Result<Acquisition> {
        let cfg = self.cfg;
        let dir = self.phantom_dir(&spec.id).join(wl_dir(wl));
        let subject = format!("{} @ {wl} nm", spec.id);
        let materials = spec.label_materials()?;

        let seed = derive_seed(cfg.fluence.seed, &format!("{}/{wl}", spec.id));
        self.seeds.insert(format!("fluence/{}/{wl}", spec.id), seed);
        let fkey = hash_json(&(&self.keys[&format!("phantom/{}", spec.id)], "fluence", wl, &cfg.fluence, seed))?;
        let (phi, p0, _energy) = self.store.stage(
            "fluence",
            &subject,
            &dir,
            &fkey,
            || {
                let props = assign_properties(labels, &materials, wl)?;
                let run = simulate_fluence(&props, &cfg.fluence.source, cfg.fluence.photons, seed, &cfg.fluence.transport)?;
                let p0 = compute_p0(&props.mu_a_volume(), &run.fluence, &props.gruneisen_volume())?;
                Ok((run.fluence.to_volume(), p0.to_volume(), run.energy))
            },
            |(phi, p0, energy): &(Volume, Volume, EnergyBalance), d| {
                phi.write(&d.join("phi.bin"), "fluence_per_mm2")?;
                p0.write(&d.join("p0.bin"), "initial_pressure")?;
                io::write_json(&d.join("energy.json"), energy)?;
                Ok(["phi.bin", "phi.json", "p0.bin", "p0.json", "energy.json"].map(String::from).to_vec())
            },
            |d| {
                let phi = FluenceVolume::from_volume(Volume::read(&d.join("phi.bin"))?)?.to_volume();
                Ok((phi, Volume::read(&d.join("p0.bin"))?, io::read_json(&d.join("energy.json"))?))
            },
        )?;

        let akey = hash_json(&(&fkey, "acoustic", &cfg.acoustic))?;
        let ts = self.store.stage(
            "acoustic",
            &subject,
            &dir,
            &akey,
            || {
                let agrid = cfg.acoustic.plane_grid();
                let k = p0.grid.central_slice();
                let source = p0.slice_z(k).resample(agrid);
                let props = assign_properties(labels, &materials, wl)?;
                let plane = labels.grid.plane();
                let n = plane.len();
                let c_slice = &props.sound_speed[k * n..(k + 1) * n];
                let rho_slice = &props.density[k * n..(k + 1) * n];
                let medium = Medium2D {
                    grid: agrid,
                    sound_speed: store::nearest_resample(c_slice, plane, agrid, WATER_SOUND_SPEED),
                    density: store::nearest_resample(rho_slice, plane, agrid, 1000.0),
                };
                simulate_forward(&source, &medium, &cfg.acoustic.detectors, &cfg.acoustic.solver)
            },
            |ts: &TimeSeries, d| {
                ts.write(&d.join("ts.bin"))?;
                Ok(vec!["ts.bin".into(), "ts.json".into()])
            },
            |d| TimeSeries::read(&d.join("ts.bin")),
        )?;

        let rkey = hash_json(&(&akey, "recon", &cfg.recon))?;
        self.keys.insert(format!("recon/{}/{wl}", spec.id), rkey.clone());
        let image = self.store.stage(
            "recon",
            &subject,
            &dir,
            &rkey,
            || reconstruct(&ts, &cfg.recon),
            |img: &ReconImage, d| {
                img.write(&d.join("image.bin"))?;
                img.write_pgm(&d.join("image.pgm"))?;
                Ok(["image.bin", "image.json", "image.pgm"].map(String::from).to_vec())
            },
            |d| ReconImage::read(&d.join("image.bin")),
        )?;

        let k = phi.grid.central_slice();
        let phi_slice = phi.slice_z(k);
        let phi_on_image = Field2D { grid: image.image.grid, data: as_stored(&phi_slice.resample(image.image.grid).data) };
        Ok(Acquisition { phantom_id: spec.id.clone(), wavelength_nm: wl, image, phi_on_image, dir })
    }

    fn calibrate(&mut self, wl: f64, training: &[(PhantomSpec, PhantomRegions, Acquisition)]) -> Result<CalibrationMaps> {
        let fraction = self.cfg.estimate.brightest_fraction;
        let keys: Vec<String> = training.iter().map(|(s, _, _)| self.keys[&format!("recon/{}/{wl}", s.id)].clone()).collect();
        let key = hash_json(&(crate::VERSION, "calibration", wl, &keys, fraction))?;
        let dir = self.cfg.output_dir.join("calibration").join(wl_dir(wl));
        self.store.stage(
            "calibration",
            &format!("{wl} nm"),
            &dir,
            &key,
            || {
                let mut raw = Vec::new();
                let mut corrected = Vec::new();
                let mut masks = Vec::new();
                for (spec, regions, acq) in training {
                    let bg = regions.background().ok_or_else(|| {
                        QpatError::Validation(format!("training phantom `{}` has no background pixels", spec.id))
                    })?;
                    let reference = spec.resolve(&spec.background_material)?.at(wl)?.mu_a * 10.0;
                    masks.push((bg.to_vec(), reference));
                    corrected.push(fluence_normalise(&acq.image.image, &acq.phi_on_image)?);
                    raw.push(&acq.image.image);
                }
                let cal_samples: Vec<CalibrationSample> =
                    raw.iter().zip(&masks).map(|(img, (m, r))| CalibrationSample::new(img, m, *r)).collect();
                let phi_samples: Vec<CalibrationSample> =
                    corrected.iter().zip(&masks).map(|(img, (m, r))| CalibrationSample::new(img, m, *r)).collect();
                Ok(CalibrationMaps {
                    wavelength_nm: wl,
                    cal: fit_linear_calibration(&cal_samples, fraction)?,
                    gtphi: fit_linear_calibration(&phi_samples, fraction)?,
                })
            },
            |maps, d| {
                io::write_json(&d.join("maps.json"), maps)?;
                Ok(vec!["maps.json".into()])
            },
            |d| io::read_json(&d.join("maps.json")),
        )
    }

    fn estimate(&mut self, acq: &Acquisition, maps: &CalibrationMaps, method: Method) -> Result<Field2D> {
        let rkey = &self.keys[&format!("recon/{}/{}", acq.phantom_id, acq.wavelength_nm)];
        let key = hash_json(&(rkey, "estimate", method, maps))?;
        let dir = self.cfg.output_dir.join("estimates").join(&acq.phantom_id).join(wl_dir(acq.wavelength_nm));
        let name = format!("mu_a_{}", method.as_str());
        self.store.stage(
            &format!("estimate_{}", method.as_str()),
            &format!("{} @ {} nm", acq.phantom_id, acq.wavelength_nm),
            &dir,
            &key,
            || match method {
                Method::Cal => Ok(apply_calibration(&acq.image.image, &maps.cal)),
                Method::Gtphi => fluence_correct(&acq.image.image, &acq.phi_on_image, &maps.gtphi),
            },
            |f, d| {
                write_field(&d.join(format!("{name}.bin")), f, "mu_a_per_cm")?;
                Ok(vec![format!("{name}.bin"), format!("{name}.json")])
            },
            |d| read_field(&d.join(format!("{name}.bin"))),
        )
    }

    fn finish(self) -> Result<(RunManifest, PathBuf)> {
        let manifest = RunManifest {
            toolkit_version: crate::VERSION.into(),
            config_hash: self.cfg.hash()?,
            seeds: self.seeds,
            artifacts: self
                .store
                .artifacts
                .iter()
                .map(|(p, s)| ArtifactEntry { path: p.clone(), sha256: s.clone() })
                .collect(),
            stages: self.store.timings,
        };
        let path = self.cfg.output_dir.join("manifest.json");
        io::write_json(&path, &manifest)?;
        Ok((manifest, path))
    }
}

/// Evaluates one estimate image of a phantom against its references.
pub fn evaluate_phantom(
    spec: &PhantomSpec,
    wl: f64,
    regions: &PhantomRegions,
    mu_a: &Field2D,
    depth_threshold_mm: f64,
    gcnr_bins: usize,
) -> Result<(Vec<MetricRow>, Vec<GcnrRow>)> {
    let mut rows = Vec::new();
    let mut gcnrs = Vec::new();
    let bg_values: Vec<f64> = match regions.background() {
        Some(m) => mu_a.data.iter().zip(m).filter(|(_, &k)| k).map(|(&v, _)| v).collect(),
        None => Vec::new(),
    };
    for (entry, mask) in regions.entries.iter().zip(&regions.masks) {
        let mut region = RegionSpec::new(regions.grid, mask.clone(), entry.kind)?;
        region.depth_threshold = depth_threshold_mm;
        let estimate = aggregate_region(mu_a, &region)?;
        let reference = spec.resolve(&entry.material)?.at(wl)?.mu_a * 10.0;
        rows.push(MetricRow::new(&spec.id, wl, &entry.region_id, entry.kind, estimate, reference)?);
        if entry.kind == RegionKind::Inclusion && !bg_values.is_empty() {
            let inc: Vec<f64> = mu_a.data.iter().zip(mask).filter(|(_, &k)| k).map(|(&v, _)| v).collect();
            if let Ok(g) = gcnr(&inc, &bg_values, gcnr_bins) {
                gcnrs.push(GcnrRow { phantom_id: spec.id.clone(), wavelength_nm: wl, region_id: entry.region_id.clone(), gcnr: g });
            }
        }
    }
    Ok((rows, gcnrs))
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| QpatError::Config(format!("thread pool: {e}")))?
            .install(f),
        None => f(),
    }
}

/// Runs the whole chain for every phantom and wavelength.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    with_threads(cfg.threads, || run_pipeline_inner(cfg))
}

fn run_pipeline_inner(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    let specs = cfg.phantoms.load().map_err(|e| e.in_stage("phantom"))?;
    let training_specs = match &cfg.training {
        Some(t) => t.load().map_err(|e| e.in_stage("phantom"))?,
        None => Vec::new(),
    };
    if let Some(dup) = training_specs.iter().find(|t| specs.iter().any(|s| s.id == t.id)) {
        return Err(QpatError::Config(format!("phantom id `{}` is used for both training and evaluation", dup.id)));
    }
    cfg.check_spectra(&specs)?;
    cfg.check_spectra(&training_specs)?;
    let mut runner = Runner::new(cfg)?;
    io::write_json(&cfg.output_dir.join("config.json"), cfg)?;

    let mut prepared = Vec::new();
    for spec in &specs {
        let labels = runner.phantom(spec)?;
        let regions = runner.regions(spec, &labels)?;
        prepared.push((spec, labels, regions));
    }
    let mut training = Vec::new();
    for spec in &training_specs {
        let labels = runner.phantom(spec)?;
        let regions = runner.regions(spec, &labels)?;
        training.push((spec, labels, regions));
    }

    let mut images = Vec::new();
    let mut calibrations = Vec::new();
    let mut per_method: BTreeMap<Method, (Vec<MetricRow>, Vec<GcnrRow>)> = BTreeMap::new();
    let do_estimate = !training.is_empty() && !cfg.estimate.methods.is_empty();
    for &wl in &cfg.wavelengths_nm {
        let mut acquisitions = Vec::new();
        for (spec, labels, regions) in &prepared {
            let acq = runner.acquire(spec, labels, wl)?;
            images.push(acq.dir.join("image.bin"));
            acquisitions.push((*spec, regions, acq));
        }
        if !do_estimate {
            continue;
        }
        let mut train_acq = Vec::new();
        for (spec, labels, regions) in &training {
            let acq = runner.acquire(spec, labels, wl)?;
            train_acq.push(((*spec).clone(), regions.clone(), acq));
        }
        let maps = runner.calibrate(wl, &train_acq)?;
        calibrations.push(maps);
        for (spec, regions, acq) in &acquisitions {
            for &method in &cfg.estimate.methods {
                let mu_a = runner.estimate(acq, &maps, method)?;
                let (rows, gcnrs) = evaluate_phantom(spec, wl, regions, &mu_a, cfg.estimate.depth_threshold_mm, cfg.estimate.gcnr_bins)
                    .map_err(|e| e.in_stage(&format!("evaluate ({} @ {wl} nm)", spec.id)))?;
                let entry = per_method.entry(method).or_default();
                entry.0.extend(rows);
                entry.1.extend(gcnrs);
            }
        }
    }

    let mut methods = Vec::new();
    for (method, (rows, gcnrs)) in per_method {
        let report = eval::summarize(&rows).map_err(|e| e.in_stage("evaluate"))?;
        let report_path = cfg.output_dir.join(format!("report_{}.csv", method.as_str()));
        eval::write_csv(&report_path, &rows)?;
        runner.store.register(&report_path)?;
        let gcnr_path = cfg.output_dir.join(format!("gcnr_{}.csv", method.as_str()));
        eval::write_csv(&gcnr_path, &gcnrs)?;
        runner.store.register(&gcnr_path)?;
        let values: Vec<f64> = gcnrs.iter().map(|g| g.gcnr).collect();
        methods.push(MethodOutcome { method, report, gcnr: gcnrs, gcnr_summary: Summary::of(&values).ok() });
    }
    if !methods.is_empty() {
        #[derive(Serialize)]
        struct SummaryDoc<'a> {
            quantile_rule: &'a str,
            calibrations: &'a [CalibrationMaps],
            methods: Vec<(&'a str, &'a [eval::KindAggregate], Option<Summary>)>,
        }
        let doc = SummaryDoc {
            quantile_rule: &methods[0].report.quantile_rule,
            calibrations: &calibrations,
            methods: methods.iter().map(|m| (m.method.as_str(), m.report.aggregates.as_slice(), m.gcnr_summary)).collect(),
        };
        let path = cfg.output_dir.join("summary.json");
        io::write_json(&path, &doc)?;
        runner.store.register(&path)?;
    }
    let (manifest, manifest_path) = runner.finish()?;
    Ok(PipelineOutcome { manifest, manifest_path, images, calibrations, methods })
}
