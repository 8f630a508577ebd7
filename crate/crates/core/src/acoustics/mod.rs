//! 2D acoustic forward model: initial pressure → detector time series.

mod fft2;
mod kspace;

use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{QpatError, Result};
use crate::grid::PlaneGrid;
use crate::io;
use crate::phantom::WATER_SOUND_SPEED;

pub use kspace::{simulate_forward, SolverConfig};

/// Arc of point-like elements in the imaging plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorArray {
    pub n_elements: usize,
    /// Angular coverage in degrees.
    pub arc_span: f64,
    pub radius: f64,
    pub center: [f64; 2],
    /// Direction of the arc midpoint, degrees from +x.
    pub orientation: f64,
}

impl Default for DetectorArray {
    fn default() -> Self {
        Self {
            n_elements: 256,
            arc_span: 270.0,
            radius: 40.5,
            center: [0.0, 0.0],
            orientation: -90.0,
        }
    }
}

impl DetectorArray {
    pub fn validate(&self) -> Result<()> {
        if self.n_elements < 2 {
            return Err(QpatError::Config("detector array needs at least 2 elements".into()));
        }
        if !(self.arc_span > 0.0 && self.arc_span <= 360.0) {
            return Err(QpatError::Config("arc span must lie in (0, 360] degrees".into()));
        }
        if !(self.radius > 0.0) {
            return Err(QpatError::Config("detector radius must be positive".into()));
        }
        Ok(())
    }

    pub fn is_closed(&self) -> bool {
        self.arc_span >= 360.0
    }

    /// Angular pitch between neighbouring elements, degrees.
    pub fn pitch(&self) -> f64 {
        self.arc_span / self.n_elements as f64
    }

    /// Element angles in radians, evenly spread over the arc.
    pub fn angles(&self) -> Vec<f64> {
        let start = self.orientation - self.arc_span / 2.0;
        (0..self.n_elements)
            .map(|i| (start + (i as f64 + 0.5) * self.pitch()).to_radians())
            .collect()
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.angles()
            .into_iter()
            .map(|a| [self.center[0] + self.radius * a.cos(), self.center[1] + self.radius * a.sin()])
            .collect()
    }
}

/// Heterogeneous 2D medium (mm/µs, kg/m³), x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Medium2D {
    pub grid: PlaneGrid,
    pub sound_speed: Vec<f64>,
    pub density: Vec<f64>,
}

impl Medium2D {
    pub fn homogeneous(grid: PlaneGrid, sound_speed: f64, density: f64) -> Self {
        Self {
            grid,
            sound_speed: vec![sound_speed; grid.len()],
            density: vec![density; grid.len()],
        }
    }

    /// Water at 25 °C.
    pub fn water(grid: PlaneGrid) -> Self {
        Self::homogeneous(grid, WATER_SOUND_SPEED, 1000.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sound_speed.len() != self.grid.len() || self.density.len() != self.grid.len() {
            return Err(QpatError::Dimension("medium fields not aligned with grid".into()));
        }
        if (self.grid.spacing[0] - self.grid.spacing[1]).abs() > 1e-12 * self.grid.spacing[0] {
            return Err(QpatError::Config("acoustic grid must have square pixels".into()));
        }
        if self.sound_speed.iter().chain(&self.density).any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(QpatError::Validation("sound speed and density must be positive".into()));
        }
        Ok(())
    }

    pub fn max_sound_speed(&self) -> f64 {
        self.sound_speed.iter().copied().fold(0.0, f64::max)
    }
}

/// Pressure recorded per element, element-major (`data[e * n_samples + t]`).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub data: Vec<f64>,
    pub n_elements: usize,
    pub n_samples: usize,
    /// Sample interval, µs.
    pub dt: f64,
    /// Time of sample 0, µs.
    pub t0: f64,
    pub positions: Vec<[f64; 2]>,
    /// Center of the detector arc.
    pub center: [f64; 2],
    /// Whether the last element neighbours the first.
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSeriesSidecar {
    pub n_elements: usize,
    pub n_samples: usize,
    pub dt_us: f64,
    pub t0_us: f64,
    pub element_positions_mm: Vec<[f64; 2]>,
    pub center_mm: [f64; 2],
    pub closed: bool,
    pub dtype: String,
    pub order: String,
}

impl TimeSeries {
    pub fn zeros(n_samples: usize, dt: f64, detectors: &DetectorArray) -> Self {
        let positions = detectors.positions();
        Self {
            data: vec![0.0; positions.len() * n_samples],
            n_elements: positions.len(),
            n_samples,
            dt,
            t0: 0.0,
            positions,
            center: detectors.center,
            closed: detectors.is_closed(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(QpatError::Validation("time series needs at least 2 samples".into()));
        }
        if self.data.len() != self.n_elements * self.n_samples || self.positions.len() != self.n_elements {
            return Err(QpatError::Dimension("time series shape mismatch".into()));
        }
        if !(self.dt > 0.0) {
            return Err(QpatError::Validation("dt must be positive".into()));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(QpatError::Validation("time series contains non-finite samples".into()));
        }
        Ok(())
    }

    pub fn channel(&self, e: usize) -> &[f64] {
        &self.data[e * self.n_samples..(e + 1) * self.n_samples]
    }

    pub fn channel_mut(&mut self, e: usize) -> &mut [f64] {
        let n = self.n_samples;
        &mut self.data[e * n..(e + 1) * n]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// Same metadata, new samples.
    pub fn with_data(&self, data: Vec<f64>, n_samples: usize, dt: f64) -> Self {
        Self {
            data,
            n_samples,
            dt,
            ..self.clone()
        }
    }

    pub fn sidecar(&self) -> TimeSeriesSidecar {
        TimeSeriesSidecar {
            n_elements: self.n_elements,
            n_samples: self.n_samples,
            dt_us: self.dt,
            t0_us: self.t0,
            element_positions_mm: self.positions.clone(),
            center_mm: self.center,
            closed: self.closed,
            dtype: io::DTYPE_F32.into(),
            order: io::ORDER_C.into(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_f32_le(path, &self.data)?;
        io::write_json(&io::sidecar_path(path), &self.sidecar())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let meta: TimeSeriesSidecar = io::read_json(&io::sidecar_path(path))?;
        let data = io::read_f32_le(path)?;
        io::check_len(path, meta.n_elements * meta.n_samples, data.len())?;
        let ts = Self {
            data,
            n_elements: meta.n_elements,
            n_samples: meta.n_samples,
            dt: meta.dt_us,
            t0: meta.t0_us,
            positions: meta.element_positions_mm,
            center: meta.center_mm,
            closed: meta.closed,
        };
        ts.validate()?;
        Ok(ts)
    }
}

/// Adds i.i.d. zero-mean Gaussian noise of standard deviation `sigma`.
pub fn add_noise(ts: &TimeSeries, sigma: f64, seed: u64) -> Result<TimeSeries> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(QpatError::Config(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(ts.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| QpatError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = ts.data.iter().map(|v| v + normal.sample(&mut rng)).collect();
    Ok(TimeSeries { data, ..ts.clone() })
}

/// Angle of `p` about `center`, radians in (−π, π].
pub fn polar_angle(p: [f64; 2], center: [f64; 2]) -> f64 {
    (p[1] - center[1]).atan2(p[0] - center[0])
}

/// Wraps an angle difference into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    } else if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_arc_geometry() {
        let d = DetectorArray::default();
        let pos = d.positions();
        assert_eq!(pos.len(), 256);
        for p in &pos {
            assert!((p[0].hypot(p[1]) - 40.5).abs() < 1e-9);
        }
        // the 90° gap is centred on +y
        let half_gap = 45.0 - d.pitch() / 2.0;
        assert!(pos
            .iter()
            .all(|p| wrap_angle(polar_angle(*p, [0.0; 2]) - PI / 2.0).to_degrees().abs() >= half_gap - 1e-9));
        let a = d.angles();
        assert!(((a[1] - a[0]).to_degrees() - 270.0 / 256.0).abs() < 1e-12);
    }

    #[test]
    fn array_validation() {
        assert!(DetectorArray { n_elements: 1, ..Default::default() }.validate().is_err());
        assert!(DetectorArray { arc_span: 0.0, ..Default::default() }.validate().is_err());
        assert!(DetectorArray { arc_span: 360.0, ..Default::default() }.validate().is_ok());
    }

    #[test]
    fn zero_sigma_is_identity() {
        let ts = TimeSeries::zeros(16, 0.025, &DetectorArray { n_elements: 4, ..Default::default() });
        let ts = TimeSeries { data: (0..64).map(|x| x as f64).collect(), ..ts };
        assert_eq!(add_noise(&ts, 0.0, 1).unwrap(), ts);
        assert!(add_noise(&ts, -1.0, 1).is_err());
    }

    #[test]
    fn noise_std_within_chi_square_bound() {
        let det = DetectorArray { n_elements: 1000, ..Default::default() };
        let ts = TimeSeries::zeros(1000, 0.025, &det);
        let noisy = add_noise(&ts, 1.0, 17).unwrap();
        let n = noisy.data.len() as f64;
        let mean = noisy.data.iter().sum::<f64>() / n;
        let var = noisy.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // sd of the sample std ≈ 1/sqrt(2n) = 7.1e-4; the [0.997, 1.003] band is > 4σ
        assert!((0.997..=1.003).contains(&var.sqrt()), "{}", var.sqrt());
        assert_eq!(noisy, add_noise(&ts, 1.0, 17).unwrap());
    }

    #[test]
    fn time_series_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let det = DetectorArray { n_elements: 3, ..Default::default() };
        let mut ts = TimeSeries::zeros(5, 0.025, &det);
        ts.data.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 0.25);
        let p = dir.path().join("ts.bin");
        ts.write(&p).unwrap();
        let back = TimeSeries::read(&p).unwrap();
        assert_eq!(back.data, ts.data);
        assert_eq!(back.n_elements, 3);
        let meta: serde_json::Value = io::read_json(&dir.path().join("ts.json")).unwrap();
        assert!(meta.get("dt_us").is_some() && meta.get("element_positions_mm").is_some());
    }

    #[test]
    fn angle_wrapping() {
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(-3.0 * PI / 2.0) - PI / 2.0).abs() < 1e-12);
    }
}
