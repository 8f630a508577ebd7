//! k-space pseudospectral solver for the coupled first-order linear
//! acoustic equations on a staggered grid:
//!
//! ```text
//! ∂u/∂t = −(1/ρ0) ∇p
//! ∂ρ/∂t = −ρ0 ∇·u          (split into ρx, ρy inside the PML)
//!     p = c0² (ρx + ρy)
//! ```
//!
//! Spatial derivatives are spectral with the k-space operator
//! κ = sinc(c_ref·k·Δt/2), which makes time stepping exact for a
//! homogeneous medium with c0 = c_ref.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft2::{smooth_size, Fft2};
use super::{DetectorArray, Medium2D, TimeSeries};
use crate::error::{QpatError, Result};
use crate::grid::Field2D;
use crate::phantom::WATER_SOUND_SPEED;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Time step, µs.
    pub dt: f64,
    pub n_steps: usize,
    /// Reference sound speed of the k-space correction, mm/µs.
    pub c_ref: f64,
    /// Absorbing layer thickness in grid points, added outside the medium.
    pub pml_size: usize,
    /// Absorption at the outer edge of the layer, nepers per grid point.
    pub pml_alpha: f64,
    /// Largest admissible c_max·Δt/Δx.
    pub max_cfl: f64,
    /// Blackman-window p0 in k-space before propagation.
    pub smooth_p0: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 0.025,
            n_steps: 2560,
            c_ref: WATER_SOUND_SPEED,
            pml_size: 20,
            pml_alpha: 2.0,
            max_cfl: 0.3,
            smooth_p0: true,
        }
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Angular wavenumbers in FFT order.
fn wavenumbers(n: usize, dx: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let m = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
            2.0 * PI * m / (n as f64 * dx)
        })
        .collect()
}

/// Staggered derivative operator i·k·exp(±i·k·Δx/2), Nyquist bin zeroed so
/// the result of a real field stays real.
fn shifted_derivative(k: &[f64], dx: f64, sign: f64) -> Vec<Complex64> {
    let n = k.len();
    k.iter()
        .enumerate()
        .map(|(i, &kk)| {
            if n % 2 == 0 && i == n / 2 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, kk) * Complex64::from_polar(1.0, sign * kk * dx / 2.0)
            }
        })
        .collect()
}

/// Per-point absorption factor applied twice per update (half step each).
fn pml_profile(n: usize, pml: usize, alpha: f64, c_ref: f64, dx: f64, dt: f64, staggered: bool) -> Vec<f64> {
    let shift = if staggered { 0.5 } else { 0.0 };
    (0..n)
        .map(|i| {
            let x = i as f64 + shift;
            let left = pml as f64 - x;
            let right = x - (n - 1 - pml) as f64;
            let depth = left.max(right).max(0.0).min(pml as f64);
            if pml == 0 || depth == 0.0 {
                1.0
            } else {
                let sigma = alpha * (c_ref / dx) * (depth / pml as f64).powi(4);
                (-sigma * dt / 2.0).exp()
            }
        })
        .collect()
}

/// Bilinear sampling stencil of a sensor on the padded grid.
struct Stencil {
    idx: [usize; 4],
    w: [f64; 4],
}

/// Propagates `p0` through `medium` and records pressure at the detector
/// elements. Sample `k` of the output is the pressure at time `k·dt`; the
/// series has `cfg.n_steps` samples.
pub fn simulate_forward(
    p0: &Field2D,
    medium: &Medium2D,
    detectors: &DetectorArray,
    cfg: &SolverConfig,
) -> Result<TimeSeries> {
    medium.validate()?;
    detectors.validate()?;
    if p0.grid != medium.grid || p0.data.len() != medium.grid.len() {
        return Err(QpatError::Dimension("p0 and medium grids differ".into()));
    }
    if p0.data.iter().any(|v| !v.is_finite()) {
        return Err(QpatError::Validation("p0 contains non-finite values".into()));
    }
    if cfg.n_steps < 2 || !(cfg.dt > 0.0) || !(cfg.c_ref > 0.0) {
        return Err(QpatError::Config("need n_steps >= 2 and positive dt, c_ref".into()));
    }
    let dx = medium.grid.spacing[0];
    let cfl = medium.max_sound_speed() * cfg.dt / dx;
    if cfl > cfg.max_cfl {
        return Err(QpatError::Config(format!(
            "CFL number {cfl:.3} exceeds {} (reduce dt or coarsen the grid)",
            cfg.max_cfl
        )));
    }
    if cfg.pml_size < 20 {
        return Err(QpatError::Config("PML must be at least 20 grid points".into()));
    }

    let (nx0, ny0) = (medium.grid.nx, medium.grid.ny);
    let nx = smooth_size(nx0 + 2 * cfg.pml_size);
    let ny = smooth_size(ny0 + 2 * cfg.pml_size);
    let (ox, oy) = ((nx - nx0) / 2, (ny - ny0) / 2);
    let n = nx * ny;
    let origin = [
        medium.grid.origin[0] - ox as f64 * dx,
        medium.grid.origin[1] - oy as f64 * dx,
    ];
    let pml = cfg.pml_size;

    // sensors must sit in the interior (outside the absorbing layer)
    let stencils: Vec<Stencil> = detectors
        .positions()
        .iter()
        .map(|&[x, y]| {
            let fx = (x - origin[0]) / dx - 0.5;
            let fy = (y - origin[1]) / dx - 0.5;
            let (lo_x, hi_x) = (pml as f64, (nx - 1 - pml) as f64 - 1.0);
            let (lo_y, hi_y) = (pml as f64, (ny - 1 - pml) as f64 - 1.0);
            if fx < lo_x || fx > hi_x || fy < lo_y || fy > hi_y {
                return Err(QpatError::Config(format!(
                    "detector at ({x:.2}, {y:.2}) mm lies outside the simulated domain"
                )));
            }
            let (i0, j0) = (fx.floor() as usize, fy.floor() as usize);
            let (tx, ty) = (fx - i0 as f64, fy - j0 as f64);
            Ok(Stencil {
                idx: [j0 * nx + i0, j0 * nx + i0 + 1, (j0 + 1) * nx + i0, (j0 + 1) * nx + i0 + 1],
                w: [(1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), (1.0 - tx) * ty, tx * ty],
            })
        })
        .collect::<Result<_>>()?;

    // pad medium by edge replication
    let pad = |field: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for j in 0..ny {
            let sj = j.saturating_sub(oy).min(ny0 - 1);
            for i in 0..nx {
                let si = i.saturating_sub(ox).min(nx0 - 1);
                out[j * nx + i] = field[sj * nx0 + si];
            }
        }
        out
    };
    let c = pad(&medium.sound_speed);
    let rho = pad(&medium.density);
    let c2: Vec<f64> = c.iter().map(|v| v * v).collect();
    let rho_sgx: Vec<f64> = (0..n)
        .map(|v| {
            let i = v % nx;
            if i + 1 < nx { 0.5 * (rho[v] + rho[v + 1]) } else { rho[v] }
        })
        .collect();
    let rho_sgy: Vec<f64> = (0..n)
        .map(|v| if v + nx < n { 0.5 * (rho[v] + rho[v + nx]) } else { rho[v] })
        .collect();

    let kx = wavenumbers(nx, dx);
    let ky = wavenumbers(ny, dx);
    let ddx_pos = shifted_derivative(&kx, dx, 1.0);
    let ddx_neg = shifted_derivative(&kx, dx, -1.0);
    let ddy_pos = shifted_derivative(&ky, dx, 1.0);
    let ddy_neg = shifted_derivative(&ky, dx, -1.0);
    // spectra are stored transposed: index kx * ny + ky
    let inv_n = 1.0 / n as f64;
    let kappa: Vec<f64> = (0..n)
        .map(|s| {
            let (ix, iy) = (s / ny, s % ny);
            let k = kx[ix].hypot(ky[iy]);
            sinc(cfg.c_ref * k * cfg.dt / 2.0) * inv_n
        })
        .collect();

    let pml_x = pml_profile(nx, pml, cfg.pml_alpha, cfg.c_ref, dx, cfg.dt, false);
    let pml_x_sg = pml_profile(nx, pml, cfg.pml_alpha, cfg.c_ref, dx, cfg.dt, true);
    let pml_y = pml_profile(ny, pml, cfg.pml_alpha, cfg.c_ref, dx, cfg.dt, false);
    let pml_y_sg = pml_profile(ny, pml, cfg.pml_alpha, cfg.c_ref, dx, cfg.dt, true);

    let mut fft = Fft2::new(nx, ny);
    let zero = Complex64::new(0.0, 0.0);
    let mut work = vec![zero; n];
    let mut spec = vec![zero; n];
    let mut spec2 = vec![zero; n];

    // initial pressure on the padded grid
    let mut p = vec![0.0; n];
    for j in 0..ny0 {
        for i in 0..nx0 {
            p[(j + oy) * nx + i + ox] = p0.data[j * nx0 + i];
        }
    }
    if cfg.smooth_p0 {
        for (w, &v) in work.iter_mut().zip(&p) {
            *w = Complex64::new(v, 0.0);
        }
        fft.forward(&mut work, &mut spec);
        let kmax = kx.iter().chain(&ky).fold(0.0f64, |a, &b| a.max(b.abs()));
        for (s, v) in spec.iter_mut().enumerate() {
            let (ix, iy) = (s / ny, s % ny);
            let r = (kx[ix].hypot(ky[iy]) / kmax).min(1.0);
            // radially symmetric Blackman window, 1 at k = 0
            let win = 0.42 + 0.5 * (PI * r).cos() + 0.08 * (2.0 * PI * r).cos();
            *v *= win.max(0.0) * inv_n;
        }
        fft.inverse(&mut spec, &mut work);
        for (v, w) in p.iter_mut().zip(&work) {
            *v = w.re;
        }
    }

    let mut ux = vec![0.0; n];
    let mut uy = vec![0.0; n];
    let mut rhox: Vec<f64> = p.iter().zip(&c2).map(|(p, c2)| p / (2.0 * c2)).collect();
    let mut rhoy = rhox.clone();

    // ∇p via one complex inverse transform: Re → ∂x, Im → ∂y
    let gradient = |fft: &mut Fft2, p: &[f64], work: &mut Vec<Complex64>, spec: &mut Vec<Complex64>| {
        for (w, &v) in work.iter_mut().zip(p) {
            *w = Complex64::new(v, 0.0);
        }
        fft.forward(work, spec);
        for (s, v) in spec.iter_mut().enumerate() {
            let (ix, iy) = (s / ny, s % ny);
            let a = ddx_pos[ix] * *v * kappa[s];
            let b = ddy_pos[iy] * *v * kappa[s];
            *v = a + Complex64::new(-b.im, b.re);
        }
        fft.inverse(spec, work);
    };

    gradient(&mut fft, &p, &mut work, &mut spec);
    for v in 0..n {
        ux[v] = cfg.dt / (2.0 * rho_sgx[v]) * work[v].re;
        uy[v] = cfg.dt / (2.0 * rho_sgy[v]) * work[v].im;
    }

    let mut out = TimeSeries::zeros(cfg.n_steps, cfg.dt, detectors);
    let record = |out: &mut TimeSeries, p: &[f64], t: usize| {
        let ns = out.n_samples;
        for (e, st) in stencils.iter().enumerate() {
            out.data[e * ns + t] = (0..4).map(|q| st.w[q] * p[st.idx[q]]).sum();
        }
    };
    record(&mut out, &p, 0);

    for step in 1..cfg.n_steps {
        // velocity update
        gradient(&mut fft, &p, &mut work, &mut spec);
        for j in 0..ny {
            let pys = pml_y_sg[j];
            for i in 0..nx {
                let v = j * nx + i;
                let px = pml_x_sg[i];
                ux[v] = px * (px * ux[v] - cfg.dt / rho_sgx[v] * work[v].re);
                uy[v] = pys * (pys * uy[v] - cfg.dt / rho_sgy[v] * work[v].im);
            }
        }

        // ∂ux/∂x and ∂uy/∂y from one packed forward and one packed inverse
        for v in 0..n {
            work[v] = Complex64::new(ux[v], uy[v]);
        }
        fft.forward(&mut work, &mut spec);
        for ix in 0..nx {
            let mx = if ix == 0 { 0 } else { nx - ix };
            for iy in 0..ny {
                let my = if iy == 0 { 0 } else { ny - iy };
                let s = ix * ny + iy;
                let z = spec[s];
                let zc = spec[mx * ny + my].conj();
                let fx = (z + zc) * 0.5;
                let fy = (z - zc) * Complex64::new(0.0, -0.5);
                let a = ddx_neg[ix] * fx * kappa[s];
                let b = ddy_neg[iy] * fy * kappa[s];
                spec2[s] = a + Complex64::new(-b.im, b.re);
            }
        }
        fft.inverse(&mut spec2, &mut work);
        for j in 0..ny {
            let py = pml_y[j];
            for i in 0..nx {
                let v = j * nx + i;
                let px = pml_x[i];
                rhox[v] = px * (px * rhox[v] - cfg.dt * rho[v] * work[v].re);
                rhoy[v] = py * (py * rhoy[v] - cfg.dt * rho[v] * work[v].im);
                p[v] = c2[v] * (rhox[v] + rhoy[v]);
            }
        }

        record(&mut out, &p, step);
        let latest_bad = (0..out.n_elements).any(|e| !out.data[e * out.n_samples + step].is_finite());
        if latest_bad || (step % 64 == 0 && p.iter().any(|v| !v.is_finite())) {
            return Err(QpatError::Instability {
                step,
                message: "non-finite pressure".into(),
            });
        }
    }
    Ok(out)
}
