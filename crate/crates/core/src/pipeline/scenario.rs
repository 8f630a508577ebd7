//! Depth decorrelation: how well the raw reconstructed signal at a given
//! depth below the phantom surface tracks the true absorption across a set
//! of homogeneous phantoms.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{with_threads, PhantomSource, PipelineConfig, Runner};
use crate::error::{QpatError, Result};
use crate::eval::{pearson_r, write_csv};
use crate::grid::Field2D;
use crate::phantom::{PhantomSpec, SamplerRanges};
use crate::recon::ReconImage;

/// Bin centers, mm below the surface.
pub const DEFAULT_DEPTH_BINS_MM: [f64; 13] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0, 13.0];
pub const DEPTH_BIN_WIDTH_MM: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthCorrelation {
    pub depth_mm: f64,
    /// NaN when the signal or the references do not vary.
    pub pearson_r: f64,
    pub n_phantoms: usize,
}

#[derive(Debug, Clone)]
pub struct DepthScenario {
    pub wavelength_nm: f64,
    pub phantom_ids: Vec<String>,
    pub reference_mu_a: Vec<f64>,
    pub correlations: Vec<DepthCorrelation>,
}

/// Mean image value per depth bin of a homogeneous cylinder whose axis
/// passes through `center` (depth = radius − distance from the axis).
pub fn depth_profile(image: &Field2D, center: [f64; 2], radius: f64, bins: &[f64], width: f64) -> Vec<f64> {
    let g = image.grid;
    let mut sums = vec![0.0; bins.len()];
    let mut counts = vec![0usize; bins.len()];
    for j in 0..g.ny {
        for i in 0..g.nx {
            let [x, y] = g.center(i, j);
            let depth = radius - (x - center[0]).hypot(y - center[1]);
            let v = image.data[j * g.nx + i];
            if depth < 0.0 || !v.is_finite() {
                continue;
            }
            for (b, &c) in bins.iter().enumerate() {
                if (depth - c).abs() <= width / 2.0 {
                    sums[b] += v;
                    counts[b] += 1;
                }
            }
        }
    }
    sums.iter().zip(&counts).map(|(s, &n)| if n > 0 { s / n as f64 } else { f64::NAN }).collect()
}

/// Pearson r between per-phantom bin signals and reference absorption.
pub fn depth_correlation(profiles: &[Vec<f64>], reference: &[f64], bins: &[f64]) -> Vec<DepthCorrelation> {
    bins.iter()
        .enumerate()
        .map(|(b, &depth)| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = profiles
                .iter()
                .zip(reference)
                .filter(|(p, _)| p[b].is_finite())
                .map(|(p, &r)| (r, p[b]))
                .unzip();
            DepthCorrelation { depth_mm: depth, pearson_r: pearson_r(&xs, &ys).unwrap_or(f64::NAN), n_phantoms: xs.len() }
        })
        .collect()
}

fn homogeneous_geometry(spec: &PhantomSpec, wl: f64) -> Result<([f64; 2], f64, f64)> {
    if !spec.inclusions.is_empty() {
        return Err(QpatError::Validation(format!("phantom `{}` is not homogeneous", spec.id)));
    }
    let c = spec.background_shape.center();
    let mu_a = spec.resolve(&spec.background_material)?.at(wl)?.mu_a * 10.0;
    Ok(([c[0], c[1]], spec.background_shape.radius(), mu_a))
}

fn correlate(specs: &[PhantomSpec], images: &[Field2D], wl: f64) -> Result<DepthScenario> {
    let mut profiles = Vec::new();
    let mut refs = Vec::new();
    for (spec, img) in specs.iter().zip(images) {
        let (center, radius, mu_a) = homogeneous_geometry(spec, wl)?;
        profiles.push(depth_profile(img, center, radius, &DEFAULT_DEPTH_BINS_MM, DEPTH_BIN_WIDTH_MM));
        refs.push(mu_a);
    }
    Ok(DepthScenario {
        wavelength_nm: wl,
        phantom_ids: specs.iter().map(|s| s.id.clone()).collect(),
        correlations: depth_correlation(&profiles, &refs, &DEFAULT_DEPTH_BINS_MM),
        reference_mu_a: refs,
    })
}

/// Images the phantoms of `source` at the first configured wavelength and
/// writes `depth_decorrelation.csv` into the output directory.
pub fn scenario_with_source(cfg: &PipelineConfig, source: &PhantomSource) -> Result<DepthScenario> {
    cfg.validate()?;
    with_threads(cfg.threads, || {
        let wl = cfg.wavelengths_nm[0];
        let specs = source.load().map_err(|e| e.in_stage("phantom"))?;
        if specs.len() < 2 {
            return Err(QpatError::Config("depth scenario needs at least two phantoms".into()));
        }
        cfg.check_spectra(&specs)?;
        let mut runner = Runner::new(cfg)?;
        let mut images = Vec::new();
        for spec in &specs {
            homogeneous_geometry(spec, wl)?;
            let labels = runner.phantom(spec)?;
            images.push(runner.acquire(spec, &labels, wl)?.image.image);
        }
        let scenario = correlate(&specs, &images, wl)?;
        let path = cfg.output_dir.join("depth_decorrelation.csv");
        write_csv(&path, &scenario.correlations)?;
        runner.store.register(&path)?;
        runner.finish()?;
        Ok(scenario)
    })
}

/// Runs the scenario on `n_phantoms` freshly sampled inclusion-free
/// phantoms.
pub fn scenario_depth_decorrelation(cfg: &PipelineConfig, n_phantoms: usize, seed: u64) -> Result<DepthScenario> {
    if n_phantoms < 10 {
        return Err(QpatError::Config("depth scenario needs at least 10 phantoms".into()));
    }
    let source = PhantomSource::Sampler { seed, count: n_phantoms, prefix: "homogeneous_".into(), ranges: SamplerRanges::homogeneous() };
    scenario_with_source(cfg, &source)
}

/// Recomputes the correlations from the persisted phantom specs and images
/// of a finished run.
pub fn depth_decorrelation_from_dir(output_dir: &Path, phantom_ids: &[String], wl: f64) -> Result<DepthScenario> {
    let mut specs = Vec::new();
    let mut images = Vec::new();
    for id in phantom_ids {
        let dir = output_dir.join("phantoms").join(id);
        specs.push(PhantomSpec::read(&dir.join("phantom.json"))?);
        images.push(ReconImage::read(&dir.join(format!("{wl}nm")).join("image.bin"))?.image);
    }
    correlate(&specs, &images, wl)
}
