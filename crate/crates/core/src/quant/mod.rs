//! Optical inversion on reconstructed images: linear calibration, fluence
//! correction, region aggregation and two-chromophore unmixing.
//!
//! Absorption estimates here are in 1/cm, the unit of the calibration
//! constants.

mod edt;

use serde::{Deserialize, Serialize};

pub use edt::inward_distance;

use crate::error::{QpatError, Result};
use crate::grid::{Field2D, PlaneGrid};
use crate::phantom::{parse_spectrum_csv, HBO2_CSV, HB_CSV};

/// Default depth of the inclusion rim used for aggregation, mm.
pub const DEFAULT_DEPTH_THRESHOLD_MM: f64 = 1.28;
/// Fraction of background pixels used for calibration.
pub const DEFAULT_BRIGHTEST_FRACTION: f64 = 0.02;
/// Fluence below this fraction of the maximum is treated as invalid.
pub const FLUENCE_FLOOR: f64 = 1e-6;

/// signal = slope·μa + intercept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearMap {
    pub slope: f64,
    pub intercept: f64,
    /// NaN (stored as null) when the fit is unknown or undefined.
    #[serde(default = "nan", deserialize_with = "null_as_nan")]
    pub fit_r: f64,
}

fn nan() -> f64 {
    f64::NAN
}

fn null_as_nan<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

impl LinearMap {
    pub fn new(slope: f64, intercept: f64) -> Result<Self> {
        let m = Self { slope, intercept, fit_r: f64::NAN };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.slope == 0.0 || !self.slope.is_finite() || !self.intercept.is_finite() {
            return Err(QpatError::Config("calibration slope must be finite and non-zero".into()));
        }
        Ok(())
    }

    /// Inverse map with the clamp at zero; NaN propagates.
    pub fn invert(&self, signal: f64) -> f64 {
        ((signal - self.intercept) / self.slope).max(0.0)
    }
}

/// One training image for calibration fitting.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationSample<'a> {
    /// Signal image (raw or fluence corrected); NaN pixels are skipped.
    pub signal: &'a Field2D,
    pub background_mask: &'a [bool],
    /// Reference background absorption, 1/cm.
    pub reference_mu_a: f64,
}

impl<'a> CalibrationSample<'a> {
    pub fn new(signal: &'a Field2D, background_mask: &'a [bool], reference_mu_a: f64) -> Self {
        Self { signal, background_mask, reference_mu_a }
    }
}

/// Values of the brightest `fraction` of finite masked pixels, at least one.
pub fn brightest_fraction(values: &[f64], mask: &[bool], fraction: f64) -> Vec<f64> {
    let mut v: Vec<f64> = values.iter().zip(mask).filter(|(x, &m)| m && x.is_finite()).map(|(&x, _)| x).collect();
    if v.is_empty() {
        return v;
    }
    let keep = ((fraction * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v.sort_by(|a, b| b.total_cmp(a));
    v.truncate(keep);
    v
}

/// Ordinary least squares of signal against reference μa over the pooled
/// brightest pixels of each training image's background.
pub fn fit_linear_calibration(samples: &[CalibrationSample], fraction: f64) -> Result<LinearMap> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(QpatError::Config(format!("pixel fraction must be in (0, 1], got {fraction}")));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in samples {
        if s.background_mask.len() != s.signal.data.len() {
            return Err(QpatError::Dimension("background mask not aligned with image".into()));
        }
        for v in brightest_fraction(&s.signal.data, s.background_mask, fraction) {
            xs.push(s.reference_mu_a);
            ys.push(v);
        }
    }
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return Err(QpatError::Fit("fewer than two calibration pixels".into()));
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 1e-12 * mx.abs().max(1.0).powi(2) * n {
        return Err(QpatError::Fit("reference absorption does not vary across the training set".into()));
    }
    let slope = sxy / sxx;
    if slope == 0.0 || !slope.is_finite() {
        return Err(QpatError::Fit("fitted slope is zero".into()));
    }
    let fit_r = if syy > 0.0 { sxy / (sxx * syy).sqrt() } else { f64::NAN };
    Ok(LinearMap { slope, intercept: my - slope * mx, fit_r })
}

/// μ̂a = (signal − intercept)/slope, clamped at zero.
pub fn apply_calibration(image: &Field2D, map: &LinearMap) -> Field2D {
    Field2D {
        grid: image.grid,
        data: image.data.iter().map(|&s| map.invert(s)).collect(),
    }
}

/// signal/φ per pixel; NaN where φ falls below the floor.
pub fn fluence_normalise(image: &Field2D, phi: &Field2D) -> Result<Field2D> {
    if image.grid != phi.grid || image.data.len() != phi.data.len() {
        return Err(QpatError::Dimension("fluence slice not aligned with image".into()));
    }
    let max = phi.data.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(QpatError::Domain("fluence is zero everywhere".into()));
    }
    let floor = FLUENCE_FLOOR * max;
    let data = image
        .data
        .iter()
        .zip(&phi.data)
        .map(|(&s, &p)| if p >= floor { s / p } else { f64::NAN })
        .collect();
    Ok(Field2D { grid: image.grid, data })
}

/// Fluence-corrected estimate μ̂a = (signal/φ − intercept)/slope, clamped at
/// zero, NaN where φ is below the floor.
pub fn fluence_correct(image: &Field2D, phi: &Field2D, map: &LinearMap) -> Result<Field2D> {
    let ratio = fluence_normalise(image, phi)?;
    Ok(apply_calibration(&ratio, map))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Background,
    Inclusion,
}

impl RegionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegionKind::Background => "background",
            RegionKind::Inclusion => "inclusion",
        }
    }
}

/// A segmentation class on an image grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSpec {
    pub grid: PlaneGrid,
    pub mask: Vec<bool>,
    pub kind: RegionKind,
    /// Rim depth for inclusions, mm.
    pub depth_threshold: f64,
}

impl RegionSpec {
    pub fn new(grid: PlaneGrid, mask: Vec<bool>, kind: RegionKind) -> Result<Self> {
        let r = Self { grid, mask, kind, depth_threshold: DEFAULT_DEPTH_THRESHOLD_MM };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mask.len() != self.grid.len() {
            return Err(QpatError::Dimension("region mask not aligned with grid".into()));
        }
        if !self.mask.iter().any(|&m| m) {
            return Err(QpatError::Aggregation("region mask is empty".into()));
        }
        if !(self.depth_threshold >= 0.0) {
            return Err(QpatError::Config("depth threshold must be >= 0".into()));
        }
        Ok(())
    }

    /// Distance of each masked pixel from the region boundary, mm. The
    /// boundary runs half a pixel outside the outermost masked centers.
    pub fn depth(&self) -> Vec<f64> {
        let g = &self.grid;
        let half = 0.5 * g.spacing[0].min(g.spacing[1]);
        inward_distance(&self.mask, g.nx, g.ny, g.spacing)
            .into_iter()
            .zip(&self.mask)
            .map(|(d, &m)| if m { d - half } else { 0.0 })
            .collect()
    }

    /// Pixels that enter the aggregate.
    pub fn selection(&self) -> Vec<bool> {
        match self.kind {
            RegionKind::Background => self.mask.clone(),
            RegionKind::Inclusion => self
                .depth()
                .iter()
                .zip(&self.mask)
                .map(|(&d, &m)| m && d <= self.depth_threshold)
                .collect(),
        }
    }
}

/// Median with the mean of the two central order statistics for even n.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Background: mean over the mask. Inclusion: median over the rim within
/// the depth threshold. Non-finite pixels are skipped.
pub fn aggregate_region(image: &Field2D, region: &RegionSpec) -> Result<f64> {
    region.validate()?;
    if image.grid != region.grid {
        return Err(QpatError::Dimension("region grid differs from image grid".into()));
    }
    let mut vals: Vec<f64> = image
        .data
        .iter()
        .zip(region.selection())
        .filter(|(v, m)| *m && v.is_finite())
        .map(|(&v, _)| v)
        .collect();
    if vals.is_empty() {
        return Err(QpatError::Aggregation(format!(
            "no valid {} pixels to aggregate",
            region.kind.as_str()
        )));
    }
    Ok(match region.kind {
        RegionKind::Background => vals.iter().sum::<f64>() / vals.len() as f64,
        RegionKind::Inclusion => median(&mut vals),
    })
}

/// Molar absorption of the two hemoglobin species per wavelength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChromophoreBasis {
    pub wavelengths: Vec<f64>,
    pub eps_hbo2: Vec<f64>,
    pub eps_hb: Vec<f64>,
}

fn interp_table(table: &[(f64, f64)], wl: f64) -> Result<f64> {
    let first = table.first().map(|t| t.0).unwrap_or(f64::NAN);
    let last = table.last().map(|t| t.0).unwrap_or(f64::NAN);
    if !(wl >= first && wl <= last) {
        return Err(QpatError::Domain(format!("wavelength {wl} nm outside [{first}, {last}] nm")));
    }
    let k = table.partition_point(|t| t.0 < wl);
    if table[k].0 == wl {
        return Ok(table[k].1);
    }
    let (a, b) = (table[k - 1], table[k]);
    Ok(a.1 + (b.1 - a.1) * (wl - a.0) / (b.0 - a.0))
}

impl ChromophoreBasis {
    /// Basis from the shipped hemoglobin tables.
    pub fn hemoglobin(wavelengths: &[f64]) -> Result<Self> {
        let hbo2 = parse_spectrum_csv(HBO2_CSV)?;
        let hb = parse_spectrum_csv(HB_CSV)?;
        let basis = Self {
            wavelengths: wavelengths.to_vec(),
            eps_hbo2: wavelengths.iter().map(|&w| interp_table(&hbo2, w)).collect::<Result<_>>()?,
            eps_hb: wavelengths.iter().map(|&w| interp_table(&hb, w)).collect::<Result<_>>()?,
        };
        basis.validate()?;
        Ok(basis)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.wavelengths.len();
        if n < 2 || self.eps_hbo2.len() != n || self.eps_hb.len() != n {
            return Err(QpatError::Config("basis needs >= 2 wavelengths and matching columns".into()));
        }
        let (a, b, c) = self.normal_matrix();
        if !(a * c - b * b > 1e-10 * a * c) {
            return Err(QpatError::Config("chromophore spectra are linearly dependent".into()));
        }
        Ok(())
    }

    fn normal_matrix(&self) -> (f64, f64, f64) {
        let a = self.eps_hbo2.iter().map(|v| v * v).sum();
        let b = self.eps_hbo2.iter().zip(&self.eps_hb).map(|(x, y)| x * y).sum();
        let c = self.eps_hb.iter().map(|v| v * v).sum();
        (a, b, c)
    }

    /// Least-squares concentrations (c_hbo2, c_hb) for one spectrum.
    pub fn solve(&self, mu_a: &[f64]) -> (f64, f64) {
        let (a, b, c) = self.normal_matrix();
        let p: f64 = self.eps_hbo2.iter().zip(mu_a).map(|(e, m)| e * m).sum();
        let q: f64 = self.eps_hb.iter().zip(mu_a).map(|(e, m)| e * m).sum();
        let det = a * c - b * b;
        ((c * p - b * q) / det, (a * q - b * p) / det)
    }
}

/// sO2 = c_hbo2/(c_hbo2 + c_hb) per pixel after clamping negative
/// concentrations; NaN when both vanish or any input is non-finite.
/// `images[k]` holds μa at `basis.wavelengths[k]`.
pub fn linear_unmix_so2(images: &[Field2D], basis: &ChromophoreBasis) -> Result<Field2D> {
    basis.validate()?;
    if images.len() != basis.wavelengths.len() {
        return Err(QpatError::Dimension(format!(
            "{} images for {} basis wavelengths",
            images.len(),
            basis.wavelengths.len()
        )));
    }
    let grid = images[0].grid;
    if images.iter().any(|im| im.grid != grid || im.data.len() != grid.len()) {
        return Err(QpatError::Dimension("unmixing images are not aligned".into()));
    }
    let mut spectrum = vec![0.0; images.len()];
    let data = (0..grid.len())
        .map(|p| {
            for (s, im) in spectrum.iter_mut().zip(images) {
                *s = im.data[p];
            }
            if spectrum.iter().any(|v| !v.is_finite()) {
                return f64::NAN;
            }
            let (c1, c2) = basis.solve(&spectrum);
            let (c1, c2) = (c1.max(0.0), c2.max(0.0));
            if c1 + c2 > 0.0 {
                c1 / (c1 + c2)
            } else {
                f64::NAN
            }
        })
        .collect();
    Ok(Field2D { grid, data })
}
