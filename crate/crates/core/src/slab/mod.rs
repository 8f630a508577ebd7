//! Adding-doubling radiative transfer for a homogeneous slab under
//! collimated normal illumination, and its inversion from total
//! reflectance and transmittance.
//!
//! Lengths in mm, coefficients in 1/mm. Radiances live on a Radau
//! quadrature over μ ∈ (0, 1]; layer operators map incident radiance
//! vectors to outgoing ones, so adding reduces to plain matrix algebra.

mod quadrature;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use quadrature::radau;

use crate::error::{QpatError, Result};

pub const DEFAULT_QUADRATURE: usize = 8;
/// Anisotropy and refractive index assumed for phantom material slabs.
pub const PHANTOM_G: f64 = 0.7;
pub const PHANTOM_N: f64 = 1.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlabSample {
    pub mu_a: f64,
    pub mu_s_prime: f64,
    pub g: f64,
    /// Refractive index of the slab; the surroundings are air.
    pub n: f64,
    pub thickness: f64,
}

impl SlabSample {
    pub fn new(mu_a: f64, mu_s_prime: f64, thickness: f64) -> Self {
        Self { mu_a, mu_s_prime, g: PHANTOM_G, n: PHANTOM_N, thickness }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mu_a >= 0.0
            && self.mu_s_prime >= 0.0
            && self.g > -1.0
            && self.g < 1.0
            && self.n >= 1.0
            && self.thickness > 0.0
            && [self.mu_a, self.mu_s_prime, self.n, self.thickness].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(QpatError::Domain(format!("nonphysical slab sample {self:?}")))
        }
    }

    pub fn mu_s(&self) -> f64 {
        self.mu_s_prime / (1.0 - self.g)
    }
}

/// Total reflectance (specular included) and total transmittance (the
/// unscattered beam included) for unit incident power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisMeasurement {
    pub total_reflectance: f64,
    pub diffuse_transmittance: f64,
    #[serde(default)]
    pub wavelength_nm: f64,
}

impl DisMeasurement {
    pub fn new(r: f64, t: f64) -> Self {
        Self { total_reflectance: r, diffuse_transmittance: t, wavelength_nm: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let (r, t) = (self.total_reflectance, self.diffuse_transmittance);
        if !(r >= 0.0 && t >= 0.0 && r + t <= 1.0 + 1e-9) {
            return Err(QpatError::Domain(format!("need R, T >= 0 and R + T <= 1, got R {r}, T {t}")));
        }
        Ok(())
    }
}

/// Unpolarized Fresnel reflectance for light inside a medium of index `n`
/// meeting a boundary to index 1 at direction cosine `mu`.
fn fresnel_internal(n: f64, mu: f64) -> f64 {
    if n == 1.0 {
        return 0.0;
    }
    let sin_t2 = n * n * (1.0 - mu * mu);
    if sin_t2 >= 1.0 {
        return 1.0;
    }
    let ct = (1.0 - sin_t2).sqrt();
    let rs = (n * mu - ct) / (n * mu + ct);
    let rp = (mu - n * ct) / (mu + n * ct);
    0.5 * (rs * rs + rp * rp)
}

/// Quadrature and the azimuthally averaged Henyey-Greenstein redistribution.
struct Discretization {
    mu: Vec<f64>,
    w: Vec<f64>,
    /// h(+μi, +μj) and h(−μi, +μj), normalized so that each incident column
    /// conserves energy: Σi wi (hpp + hmp) = 2.
    hpp: DMatrix<f64>,
    hmp: DMatrix<f64>,
}

impl Discretization {
    fn new(n: usize, g: f64) -> Self {
        let (mu, w) = radau(n);
        const AZ: usize = 720;
        let hg = |c: f64| (1.0 - g * g) / (1.0 + g * g - 2.0 * g * c).powf(1.5);
        let avg = |a: f64, b: f64| {
            let s = ((1.0 - a * a) * (1.0 - b * b)).max(0.0).sqrt();
            (0..AZ).map(|k| hg(a * b + s * (2.0 * PI * (k as f64 + 0.5) / AZ as f64).cos())).sum::<f64>() / AZ as f64
        };
        let mut hpp = DMatrix::from_fn(n, n, |i, j| avg(mu[i], mu[j]));
        let mut hmp = DMatrix::from_fn(n, n, |i, j| avg(-mu[i], mu[j]));
        for j in 0..n {
            let total: f64 = (0..n).map(|i| w[i] * (hpp[(i, j)] + hmp[(i, j)])).sum();
            let scale = 2.0 / total;
            for i in 0..n {
                hpp[(i, j)] *= scale;
                hmp[(i, j)] *= scale;
            }
        }
        Self { mu, w, hpp, hmp }
    }

    fn checked(order: usize, g: f64) -> Result<Self> {
        if order < 4 || order % 2 != 0 {
            return Err(QpatError::Config(format!("quadrature order must be even and >= 4, got {order}")));
        }
        Ok(Self::new(order, g))
    }

    fn len(&self) -> usize {
        self.mu.len()
    }

    /// Diamond-difference solution for a thin layer of optical thickness
    /// `dtau` and albedo `a`: returns (R, T) radiance operators.
    fn thin_layer(&self, dtau: f64, a: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.len();
        // unknowns [y (down at bottom); z (up at top)] for incident x at top
        let mut lhs = DMatrix::zeros(2 * n, 2 * n);
        let mut rhs = DMatrix::zeros(2 * n, n);
        let c = a * dtau / 4.0;
        for i in 0..n {
            let m = self.mu[i];
            lhs[(i, i)] += m + dtau / 2.0;
            rhs[(i, i)] += m - dtau / 2.0;
            lhs[(n + i, n + i)] += m + dtau / 2.0;
            for j in 0..n {
                let wj = self.w[j];
                lhs[(i, j)] -= c * wj * self.hpp[(i, j)];
                rhs[(i, j)] += c * wj * self.hpp[(i, j)];
                lhs[(i, n + j)] -= c * wj * self.hmp[(i, j)];
                lhs[(n + i, j)] -= c * wj * self.hmp[(i, j)];
                rhs[(n + i, j)] += c * wj * self.hmp[(i, j)];
                lhs[(n + i, n + j)] -= c * wj * self.hpp[(i, j)];
            }
        }
        let sol = lhs.lu().solve(&rhs).expect("thin-layer system is diagonally dominant");
        let t = sol.rows(0, n).into_owned();
        let r = sol.rows(n, n).into_owned();
        (r, t)
    }
}

/// Doubles a symmetric layer once.
fn double(r: &DMatrix<f64>, t: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = r.nrows();
    let inv = (DMatrix::identity(n, n) - r * r)
        .try_inverse()
        .expect("I − R² is invertible for physical layers");
    let tinv = t * inv;
    let r2 = r + &tinv * r * t;
    let t2 = &tinv * t;
    (r2, t2)
}

/// Forward model: (R, T) of the slab between air half-spaces.
pub fn ad_forward(sample: &SlabSample, quadrature_order: usize) -> Result<DisMeasurement> {
    sample.validate()?;
    forward_with(&Discretization::checked(quadrature_order, sample.g)?, sample)
}

/// Reflection and transmission operators of the bare layer (no boundaries),
/// mapping incident radiance on the quadrature to outgoing radiance.
pub fn layer_operators(sample: &SlabSample, quadrature_order: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    sample.validate()?;
    Ok(bare_layer(&Discretization::checked(quadrature_order, sample.g)?, sample))
}

/// Composes two layers with the adding equations (top layer `a` lit from
/// above, both layers symmetric).
pub fn add_layers(a: (&DMatrix<f64>, &DMatrix<f64>), b: (&DMatrix<f64>, &DMatrix<f64>)) -> (DMatrix<f64>, DMatrix<f64>) {
    let (ra, ta) = a;
    let (rb, tb) = b;
    let n = ra.nrows();
    let inv = (DMatrix::identity(n, n) - rb * ra).try_inverse().expect("I − RbRa is invertible");
    let r = ra + ta * &inv * rb * ta;
    let t = tb * &inv * ta;
    (r, t)
}

fn bare_layer(disc: &Discretization, sample: &SlabSample) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = disc.len();
    let mu_s = sample.mu_s();
    let mu_t = sample.mu_a + mu_s;
    let tau = mu_t * sample.thickness;
    let albedo = if mu_t > 0.0 { mu_s / mu_t } else { 0.0 };
    if tau == 0.0 {
        return (DMatrix::zeros(n, n), DMatrix::identity(n, n));
    }
    // thin enough for the diamond scheme at the most grazing node
    let target = (tau / 1024.0).min(0.01 * disc.mu[0]);
    let doublings = (tau / target).log2().ceil().max(10.0) as i32;
    let (mut r, mut t) = disc.thin_layer(tau / 2f64.powi(doublings), albedo);
    for _ in 0..doublings {
        (r, t) = double(&r, &t);
    }
    (r, t)
}

fn forward_with(disc: &Discretization, sample: &SlabSample) -> Result<DisMeasurement> {
    let n = disc.len();
    let (r, t) = bare_layer(disc, sample);

    // boundaries: specular loss on entry, internal Fresnel per direction
    let r0 = ((sample.n - 1.0) / (sample.n + 1.0)).powi(2);
    let b: Vec<f64> = disc.mu.iter().map(|&m| fresnel_internal(sample.n, m)).collect();
    let flux_w: Vec<f64> = (0..n).map(|i| 2.0 * disc.mu[i] * disc.w[i]).collect();
    // unknowns [d (down below top surface); u_b (up above bottom surface)]
    let mut lhs = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        lhs[(i, i)] += 1.0;
        lhs[(n + i, n + i)] += 1.0;
        for j in 0..n {
            lhs[(i, j)] -= b[i] * r[(i, j)];
            lhs[(i, n + j)] -= b[i] * t[(i, j)];
            lhs[(n + i, j)] -= b[i] * t[(i, j)];
            lhs[(n + i, n + j)] -= b[i] * r[(i, j)];
        }
    }
    let mut src = DVector::zeros(2 * n);
    src[n - 1] = (1.0 - r0) / flux_w[n - 1];
    // without scattering, totally reflected directions decouple and the
    // system is singular; their amplitude is zero (minimum-norm solution)
    let sol = match lhs.clone().lu().solve(&src) {
        Some(v) => v,
        None => lhs
            .svd(true, true)
            .solve(&src, 1e-12)
            .map_err(|e| QpatError::Domain(format!("boundary system: {e}")))?,
    };
    let d = sol.rows(0, n).into_owned();
    let ub = sol.rows(n, n).into_owned();
    let up_top = &r * &d + &t * &ub;
    let down_bottom = &t * &d + &r * &ub;
    let escape = |v: &DVector<f64>| (0..n).map(|i| flux_w[i] * (1.0 - b[i]) * v[i]).sum::<f64>();
    Ok(DisMeasurement::new(r0 + escape(&up_top), escape(&down_bottom)))
}

/// Result of an inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseResult {
    pub mu_a: f64,
    pub mu_s_prime: f64,
    /// Euclidean norm of the (R, T) mismatch.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InverseConfig {
    pub quadrature_order: usize,
    pub grid_points: usize,
    pub mu_a_range: [f64; 2],
    pub mu_s_prime_range: [f64; 2],
    pub rel_tol: f64,
    pub max_iterations: usize,
    pub acceptance: f64,
}

impl Default for InverseConfig {
    fn default() -> Self {
        Self {
            quadrature_order: DEFAULT_QUADRATURE,
            grid_points: 25,
            mu_a_range: [1e-3, 1.0],
            mu_s_prime_range: [0.1, 3.0],
            rel_tol: 1e-4,
            max_iterations: 200,
            acceptance: 1e-3,
        }
    }
}

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| (lo.ln() + (hi / lo).ln() * k as f64 / (n - 1).max(1) as f64).exp())
        .collect()
}

/// Recovers (μa, μs′) from (R, T) for a slab of known thickness, g and n.
///
/// A log-spaced grid (plus zero for either coefficient) seeds a damped
/// Gauss-Newton refinement in log coordinates.
pub fn ad_inverse(meas: &DisMeasurement, thickness: f64, g: f64, n: f64, cfg: &InverseConfig) -> Result<InverseResult> {
    meas.validate()?;
    let probe = SlabSample { mu_a: 0.0, mu_s_prime: 0.0, g, n, thickness };
    probe.validate()?;
    let disc = Discretization::checked(cfg.quadrature_order, g)?;
    let target = [meas.total_reflectance, meas.diffuse_transmittance];
    let model = |mu_a: f64, mu_sp: f64| -> Result<[f64; 2]> {
        let m = forward_with(&disc, &SlabSample { mu_a, mu_s_prime: mu_sp, ..probe })?;
        Ok([m.total_reflectance - target[0], m.diffuse_transmittance - target[1]])
    };
    let norm = |r: [f64; 2]| r[0].hypot(r[1]);

    let mut axis_a = vec![0.0];
    axis_a.extend(logspace(cfg.mu_a_range[0], cfg.mu_a_range[1], cfg.grid_points));
    let mut axis_s = vec![0.0];
    axis_s.extend(logspace(cfg.mu_s_prime_range[0], cfg.mu_s_prime_range[1], cfg.grid_points));
    let mut best = (0.0, 0.0, f64::INFINITY);
    for &a in &axis_a {
        for &s in &axis_s {
            let r = norm(model(a, s)?);
            if r < best.2 {
                best = (a, s, r);
            }
        }
    }

    // zero stays zero: the refinement moves only the positive coefficients
    let (mut a, mut s, mut res) = best;
    let free = [a > 0.0, s > 0.0];
    // refinement may leave the seed grid, within a factor 10 above and 1000 below
    let box_a = [cfg.mu_a_range[0] * 1e-3, cfg.mu_a_range[1] * 10.0];
    let box_s = [cfg.mu_s_prime_range[0] * 1e-3, cfg.mu_s_prime_range[1] * 10.0];
    let mut lambda = 1e-3;
    for _ in 0..cfg.max_iterations {
        if res < 1e-14 {
            break;
        }
        let x = [a.ln(), s.ln()];
        let r = model(a, s)?;
        let h = 1e-6;
        let mut jac = [[0.0; 2]; 2];
        for k in 0..2 {
            if !free[k] {
                continue;
            }
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let rp = model(xp[0].exp(), xp[1].exp())?;
            let rm = model(xm[0].exp(), xm[1].exp())?;
            for q in 0..2 {
                jac[q][k] = (rp[q] - rm[q]) / (2.0 * h);
            }
        }
        // (JᵀJ + λ diag) δ = −Jᵀr
        let mut jtj = [[0.0; 2]; 2];
        let mut jtr = [0.0; 2];
        for p in 0..2 {
            for q in 0..2 {
                jtj[p][q] = jac[0][p] * jac[0][q] + jac[1][p] * jac[1][q];
            }
            jtr[p] = jac[0][p] * r[0] + jac[1][p] * r[1];
        }
        let mut accepted = false;
        let mut step = [0.0; 2];
        for _ in 0..30 {
            let m = [
                [jtj[0][0] * (1.0 + lambda) + 1e-300, jtj[0][1]],
                [jtj[1][0], jtj[1][1] * (1.0 + lambda) + 1e-300],
            ];
            step = if free[0] && free[1] {
                let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
                [(-jtr[0] * m[1][1] + jtr[1] * m[0][1]) / det, (-jtr[1] * m[0][0] + jtr[0] * m[1][0]) / det]
            } else if free[0] {
                [-jtr[0] / m[0][0], 0.0]
            } else if free[1] {
                [0.0, -jtr[1] / m[1][1]]
            } else {
                [0.0, 0.0]
            };
            let step_len = step[0].abs().max(step[1].abs());
            if step_len > 1.0 {
                step = [step[0] / step_len, step[1] / step_len];
            }
            let na = if free[0] { (x[0] + step[0]).exp().clamp(box_a[0], box_a[1]) } else { 0.0 };
            let ns = if free[1] { (x[1] + step[1]).exp().clamp(box_s[0], box_s[1]) } else { 0.0 };
            let nr = norm(model(na, ns)?);
            if nr < res {
                a = na;
                s = ns;
                res = nr;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted || step[0].abs().max(step[1].abs()) < cfg.rel_tol * 0.01 {
            break;
        }
    }
    if res > cfg.acceptance {
        return Err(QpatError::NoConvergence { mu_a: a, mu_s_prime: s, residual: res });
    }
    Ok(InverseResult { mu_a: a, mu_s_prime: s, residual: res })
}

/// Relative change of the inverted coefficients when the assumed thickness
/// is off by ±`rel_err`, against the inversion at the nominal thickness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThicknessSensitivity {
    pub plus: [f64; 2],
    pub minus: [f64; 2],
    /// Mean magnitude of the ± errors for (μa, μs′).
    pub mu_a: f64,
    pub mu_s_prime: f64,
}

pub fn propagate_thickness_error(sample: &SlabSample, rel_err: f64, cfg: &InverseConfig) -> Result<ThicknessSensitivity> {
    if !(rel_err.abs() <= 0.1) {
        return Err(QpatError::Config(format!("thickness perturbation must be within 10%, got {rel_err}")));
    }
    let meas = ad_forward(sample, cfg.quadrature_order)?;
    let invert = |d: f64| ad_inverse(&meas, d, sample.g, sample.n, cfg);
    let nominal = invert(sample.thickness)?;
    let rel = |x: f64, x0: f64| if x0 > 0.0 { (x - x0) / x0 } else { 0.0 };
    let errors = |d: f64| -> Result<[f64; 2]> {
        if d == sample.thickness {
            return Ok([0.0, 0.0]);
        }
        let r = invert(d)?;
        Ok([rel(r.mu_a, nominal.mu_a), rel(r.mu_s_prime, nominal.mu_s_prime)])
    };
    let plus = errors(sample.thickness * (1.0 + rel_err))?;
    let minus = errors(sample.thickness * (1.0 - rel_err))?;
    Ok(ThicknessSensitivity {
        plus,
        minus,
        mu_a: 0.5 * (plus[0].abs() + minus[0].abs()),
        mu_s_prime: 0.5 * (plus[1].abs() + minus[1].abs()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clear_matched_slab_is_transparent() {
        let m = ad_forward(&SlabSample { n: 1.0, ..SlabSample::new(0.0, 0.0, 3.0) }, 8).unwrap();
        assert!(m.total_reflectance.abs() < 1e-6);
        assert!((m.diffuse_transmittance - 1.0).abs() < 1e-6);
    }

    #[test]
    fn clear_slab_fresnel_series() {
        let n: f64 = 1.4;
        let r0: f64 = ((n - 1.0) / (n + 1.0)).powi(2);
        let r_expected = r0 + (1.0 - r0).powi(2) * r0 / (1.0 - r0 * r0);
        let m = ad_forward(&SlabSample::new(0.0, 0.0, 3.0), 8).unwrap();
        assert!((m.total_reflectance - r_expected).abs() < 1e-3);
        assert!((m.diffuse_transmittance - (1.0 - r0) / (1.0 + r0)).abs() < 1e-3);
    }

    #[test]
    fn beer_lambert_slab() {
        let m = ad_forward(&SlabSample { n: 1.0, ..SlabSample::new(0.25, 0.0, 4.0) }, 8).unwrap();
        assert!((m.diffuse_transmittance - (-1.0f64).exp()).abs() < 1e-3);
        assert!(m.total_reflectance.abs() < 1e-9);
    }

    #[test]
    fn lossless_slab_conserves_energy() {
        for n in [1.0, 1.4] {
            let m = ad_forward(&SlabSample { n, ..SlabSample::new(0.0, 1.2, 2.0) }, 8).unwrap();
            assert!((m.total_reflectance + m.diffuse_transmittance - 1.0).abs() < 1e-9, "n {n}");
        }
        let m = ad_forward(&SlabSample::new(0.05, 1.2, 2.0), 8).unwrap();
        assert!(m.total_reflectance + m.diffuse_transmittance < 1.0);
    }

    #[test]
    fn nonphysical_inputs_rejected() {
        assert!(matches!(ad_forward(&SlabSample::new(-0.1, 1.0, 2.0), 8), Err(QpatError::Domain(_))));
        assert!(ad_forward(&SlabSample::new(0.1, 1.0, 0.0), 8).is_err());
        assert!(matches!(ad_forward(&SlabSample::new(0.1, 1.0, 2.0), 5), Err(QpatError::Config(_))));
    }
}
