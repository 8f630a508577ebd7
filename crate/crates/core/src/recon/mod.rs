//! Delay-and-sum reconstruction with the band-pass → interpolation →
//! analytic signal → DAS → envelope chain.

mod filter;

use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

pub use filter::{BandPass, Biquad};

use crate::acoustics::{polar_angle, wrap_angle, TimeSeries};
use crate::error::{QpatError, Result};
use crate::grid::{Field2D, PlaneGrid};
use crate::io::{self, VolumeSidecar};
use crate::phantom::WATER_SOUND_SPEED;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconConfig {
    /// Band edges in MHz.
    pub bandpass_lo_mhz: f64,
    pub bandpass_hi_mhz: f64,
    pub filter_order: usize,
    pub time_factor: usize,
    pub element_factor: usize,
    /// Pixels per side before cropping.
    pub n_pixels: usize,
    pub fov_mm: f64,
    /// Pixels per side kept by the centered crop.
    pub crop: usize,
    /// Beamforming sound speed, mm/µs.
    pub sound_speed: f64,
    pub image_center: [f64; 2],
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            bandpass_lo_mhz: 0.005,
            bandpass_hi_mhz: 7.0,
            filter_order: 3,
            time_factor: 3,
            element_factor: 2,
            n_pixels: 300,
            fov_mm: 32.0,
            crop: 288,
            sound_speed: WATER_SOUND_SPEED,
            image_center: [0.0, 0.0],
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time_factor == 0 || self.element_factor == 0 {
            return Err(QpatError::Config("interpolation factors must be >= 1".into()));
        }
        if self.n_pixels == 0 || self.crop == 0 || self.crop > self.n_pixels {
            return Err(QpatError::Config("need 0 < crop <= n_pixels".into()));
        }
        if !(self.fov_mm > 0.0) || !(self.sound_speed > 0.0) {
            return Err(QpatError::Config("fov and sound speed must be positive".into()));
        }
        Ok(())
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.fov_mm / self.n_pixels as f64
    }

    /// Grid of the uncropped image.
    pub fn image_grid(&self) -> PlaneGrid {
        PlaneGrid::square_centered(self.n_pixels, self.pixel_pitch(), self.image_center)
    }
}

/// Analytic (complex) signals, same layout as [`TimeSeries`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTimeSeries {
    pub data: Vec<Complex64>,
    pub n_elements: usize,
    pub n_samples: usize,
    pub dt: f64,
    pub t0: f64,
    pub positions: Vec<[f64; 2]>,
}

impl ComplexTimeSeries {
    pub fn channel(&self, e: usize) -> &[Complex64] {
        &self.data[e * self.n_samples..(e + 1) * self.n_samples]
    }
}

/// Zero-phase Butterworth band-pass per channel, edges in MHz.
pub fn bandpass_filter(ts: &TimeSeries, lo_mhz: f64, hi_mhz: f64, order: usize) -> Result<TimeSeries> {
    ts.validate()?;
    let bp = BandPass::butterworth(order, lo_mhz, hi_mhz, 1.0 / ts.dt)?;
    let data: Vec<f64> = (0..ts.n_elements)
        .into_par_iter()
        .flat_map_iter(|e| bp.filtfilt(ts.channel(e)))
        .collect();
    Ok(ts.with_data(data, ts.n_samples, ts.dt))
}

/// Per-channel analytic signal: negative frequencies zeroed, positive
/// doubled, DC and Nyquist kept.
pub fn hilbert_analytic(ts: &TimeSeries) -> Result<ComplexTimeSeries> {
    ts.validate()?;
    let n = ts.n_samples;
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut h = vec![0.0; n];
    h[0] = 1.0;
    for v in h.iter_mut().take(n.div_ceil(2)).skip(1) {
        *v = 2.0;
    }
    if n % 2 == 0 {
        h[n / 2] = 1.0;
    }
    let data: Vec<Complex64> = (0..ts.n_elements)
        .into_par_iter()
        .flat_map_iter(|e| {
            let mut buf: Vec<Complex64> = ts.channel(e).iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fwd.process(&mut buf);
            for (b, w) in buf.iter_mut().zip(&h) {
                *b *= w / n as f64;
            }
            inv.process(&mut buf);
            buf
        })
        .collect();
    Ok(ComplexTimeSeries {
        data,
        n_elements: ts.n_elements,
        n_samples: n,
        dt: ts.dt,
        t0: ts.t0,
        positions: ts.positions.clone(),
    })
}

/// Fourier interpolation of one channel to `factor` times as many samples.
fn fourier_upsample(x: &[f64], factor: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = x.len();
    let m = n * factor;
    let mut spec: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut spec);
    let mut big = vec![Complex64::new(0.0, 0.0); m];
    let half = n / 2;
    big[..half.min(n)].copy_from_slice(&spec[..half]);
    if n % 2 == 0 {
        // split the Nyquist bin between +/- frequencies
        big[half] = spec[half] * 0.5;
        big[m - half] = spec[half] * 0.5;
        big[m - half + 1..].copy_from_slice(&spec[half + 1..]);
    } else {
        big[half] = spec[half];
        big[m - half..].copy_from_slice(&spec[half + 1..]);
    }
    planner.plan_fft_inverse(m).process(&mut big);
    big.iter().map(|c| c.re / n as f64).collect()
}

/// Fourier interpolation along time by `time_factor`, then linear
/// interpolation of waveforms between neighbouring elements, placing
/// `element_factor − 1` virtual elements evenly in angle between each pair.
pub fn interpolate(ts: &TimeSeries, time_factor: usize, element_factor: usize) -> Result<TimeSeries> {
    ts.validate()?;
    if time_factor == 0 || element_factor == 0 {
        return Err(QpatError::Config("interpolation factors must be >= 1".into()));
    }
    let (samples, dt) = if time_factor == 1 {
        (ts.data.clone(), ts.dt)
    } else {
        let data: Vec<f64> = (0..ts.n_elements)
            .into_par_iter()
            .flat_map_iter(|e| fourier_upsample(ts.channel(e), time_factor, &mut FftPlanner::new()))
            .collect();
        (data, ts.dt / time_factor as f64)
    };
    let ns = ts.n_samples * time_factor;
    if element_factor == 1 {
        return Ok(TimeSeries { data: samples, n_samples: ns, dt, ..ts.clone() });
    }

    let ne = ts.n_elements;
    let gaps = if ts.closed { ne } else { ne - 1 };
    let mut data = Vec::with_capacity((ne + gaps * (element_factor - 1)) * ns);
    let mut positions = Vec::new();
    for e in 0..ne {
        data.extend_from_slice(&samples[e * ns..(e + 1) * ns]);
        positions.push(ts.positions[e]);
        if e >= gaps {
            continue;
        }
        let next = (e + 1) % ne;
        let (pa, pb) = (ts.positions[e], ts.positions[next]);
        let (aa, ab) = (polar_angle(pa, ts.center), polar_angle(pb, ts.center));
        let ra = (pa[0] - ts.center[0]).hypot(pa[1] - ts.center[1]);
        let rb = (pb[0] - ts.center[0]).hypot(pb[1] - ts.center[1]);
        let span = wrap_angle(ab - aa);
        let (ca, cb) = (&samples[e * ns..(e + 1) * ns], &samples[next * ns..(next + 1) * ns]);
        for k in 1..element_factor {
            let w = k as f64 / element_factor as f64;
            data.extend(ca.iter().zip(cb).map(|(a, b)| (1.0 - w) * a + w * b));
            let ang = aa + w * span;
            let r = (1.0 - w) * ra + w * rb;
            positions.push([ts.center[0] + r * ang.cos(), ts.center[1] + r * ang.sin()]);
        }
    }
    Ok(TimeSeries {
        n_elements: positions.len(),
        data,
        n_samples: ns,
        dt,
        positions,
        ..ts.clone()
    })
}

/// Reconstructed envelope image.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconImage {
    pub image: Field2D,
}

impl ReconImage {
    pub fn pixel_pitch(&self) -> f64 {
        self.image.grid.spacing[0]
    }

    pub fn fov(&self) -> [f64; 2] {
        let g = &self.image.grid;
        [g.nx as f64 * g.spacing[0], g.ny as f64 * g.spacing[1]]
    }

    /// Centered `n`×`n` window.
    pub fn crop_center(&self, n: usize) -> Result<ReconImage> {
        let g = self.image.grid;
        if n > g.nx || n > g.ny {
            return Err(QpatError::Config(format!("crop {n} larger than image {}x{}", g.nx, g.ny)));
        }
        let (ox, oy) = ((g.nx - n) / 2, (g.ny - n) / 2);
        let grid = PlaneGrid {
            nx: n,
            ny: n,
            spacing: g.spacing,
            origin: [g.origin[0] + ox as f64 * g.spacing[0], g.origin[1] + oy as f64 * g.spacing[1]],
        };
        let mut data = Vec::with_capacity(n * n);
        for j in 0..n {
            let row = (j + oy) * g.nx + ox;
            data.extend_from_slice(&self.image.data[row..row + n]);
        }
        Ok(ReconImage { image: Field2D { grid, data } })
    }

    /// Pixel index of the maximum.
    pub fn argmax(&self) -> (usize, usize) {
        let (k, _) = self
            .image
            .data
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bk, bv), (k, &v)| if v > bv { (k, v) } else { (bk, bv) });
        (k % self.image.grid.nx, k / self.image.grid.nx)
    }

    pub fn sidecar(&self) -> VolumeSidecar {
        let g = &self.image.grid;
        VolumeSidecar {
            dims: [g.nx, g.ny, 1],
            spacing_mm: [g.spacing[0], g.spacing[1], 1.0],
            origin_mm: [g.origin[0], g.origin[1], 0.0],
            dtype: io::DTYPE_F32.into(),
            order: io::ORDER_C.into(),
            fov_mm: Some(self.fov()),
            pixel_pitch_mm: Some(self.pixel_pitch()),
            quantity: Some("pa_envelope".into()),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_f32_le(path, &self.image.data)?;
        io::write_json(&io::sidecar_path(path), &self.sidecar())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let meta: VolumeSidecar = io::read_json(&io::sidecar_path(path))?;
        let data = io::read_f32_le(path)?;
        let [nx, ny, nz] = meta.dims;
        if nz != 1 {
            return Err(QpatError::Dimension(format!("{} is not a 2D image", path.display())));
        }
        io::check_len(path, nx * ny, data.len())?;
        let grid = PlaneGrid {
            nx,
            ny,
            spacing: [meta.spacing_mm[0], meta.spacing_mm[1]],
            origin: [meta.origin_mm[0], meta.origin_mm[1]],
        };
        Ok(ReconImage { image: Field2D { grid, data } })
    }

    /// 8-bit preview scaled to the image maximum.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        io::write_pgm(path, self.image.grid.nx, self.image.grid.ny, &self.image.data)
    }
}

/// Delay-and-sum of analytic signals onto `grid`; the image is the
/// magnitude of the complex sum. Delays falling outside the record add
/// nothing.
pub fn das_reconstruct(ts: &ComplexTimeSeries, grid: PlaneGrid, sound_speed: f64) -> Result<ReconImage> {
    if !(sound_speed > 0.0) {
        return Err(QpatError::Config("sound speed must be positive".into()));
    }
    if ts.data.len() != ts.n_elements * ts.n_samples || ts.positions.len() != ts.n_elements {
        return Err(QpatError::Dimension("time series shape mismatch".into()));
    }
    let ns = ts.n_samples;
    let last = (ns - 1) as f64;
    let inv = 1.0 / (sound_speed * ts.dt);
    let data: Vec<f64> = (0..grid.ny)
        .into_par_iter()
        .flat_map_iter(|j| {
            (0..grid.nx).map(move |i| {
                let [x, y] = grid.center(i, j);
                let mut acc = Complex64::new(0.0, 0.0);
                for (e, p) in ts.positions.iter().enumerate() {
                    let f = (x - p[0]).hypot(y - p[1]) * inv - ts.t0 / ts.dt;
                    if f < 0.0 || f > last {
                        continue;
                    }
                    let k = (f.floor() as usize).min(ns - 2);
                    let w = f - k as f64;
                    let ch = &ts.data[e * ns..];
                    acc += ch[k] * (1.0 - w) + ch[k + 1] * w;
                }
                acc.norm()
            })
        })
        .collect();
    Ok(ReconImage { image: Field2D { grid, data } })
}

/// Full chain from raw time series to the cropped envelope image.
pub fn reconstruct(ts: &TimeSeries, cfg: &ReconConfig) -> Result<ReconImage> {
    cfg.validate()?;
    let filtered = bandpass_filter(ts, cfg.bandpass_lo_mhz, cfg.bandpass_hi_mhz, cfg.filter_order)?;
    let dense = interpolate(&filtered, cfg.time_factor, cfg.element_factor)?;
    let analytic = hilbert_analytic(&dense)?;
    das_reconstruct(&analytic, cfg.image_grid(), cfg.sound_speed)?.crop_center(cfg.crop)
}
