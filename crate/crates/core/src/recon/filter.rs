//! Digital Butterworth band-pass as cascaded biquads, run forward and
//! backward for zero phase.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{QpatError, Result};

/// One second-order section, `b` numerator and `a` denominator with a[0] = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = self.b[0] + self.b[1] * zi + self.b[2] * zi * zi;
        let den = self.a[0] + self.a[1] * zi + self.a[2] * zi * zi;
        num / den
    }
}

/// Band-pass designed by the bilinear transform with prewarped edges.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPass {
    pub sections: Vec<Biquad>,
}

impl BandPass {
    /// `order` is the low-pass prototype order; the band-pass has twice as
    /// many poles. Frequencies share the unit of `fs`.
    pub fn butterworth(order: usize, lo: f64, hi: f64, fs: f64) -> Result<Self> {
        let nyq = fs / 2.0;
        if order == 0 {
            return Err(QpatError::Config("filter order must be >= 1".into()));
        }
        if !(lo > 0.0 && lo < hi) {
            return Err(QpatError::Config(format!("band edges must satisfy 0 < lo < hi, got {lo}, {hi}")));
        }
        if hi >= nyq {
            return Err(QpatError::Config(format!(
                "upper band edge {hi} is not below the Nyquist frequency {nyq}"
            )));
        }
        let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
        let (wl, wh) = (warp(lo), warp(hi));
        let w0 = (wl * wh).sqrt();
        let bw = wh - wl;

        // analog band-pass poles, grouped as conjugate (or real) pairs
        let mut pairs: Vec<[Complex64; 2]> = Vec::new();
        for k in 0..order {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let p = Complex64::from_polar(1.0, theta);
            if p.im < -1e-12 {
                continue; // covered by its conjugate
            }
            // s² − p·bw·s + w0² = 0
            let half = p * bw / 2.0;
            let disc = (half * half - w0 * w0).sqrt();
            let (r1, r2) = (half + disc, half - disc);
            if p.im.abs() <= 1e-12 {
                pairs.push([r1, r2]);
            } else {
                pairs.push([r1, r1.conj()]);
                pairs.push([r2, r2.conj()]);
            }
        }
        let to_z = |s: Complex64| (1.0 + s / (2.0 * fs)) / (1.0 - s / (2.0 * fs));
        let mut sections: Vec<Biquad> = pairs
            .iter()
            .map(|[p1, p2]| {
                let (z1, z2) = (to_z(*p1), to_z(*p2));
                let sum = z1 + z2;
                let prod = z1 * z2;
                Biquad { b: [1.0, 0.0, -1.0], a: [1.0, -sum.re, prod.re] }
            })
            .collect();

        let f0 = fs / PI * (w0 / (2.0 * fs)).atan();
        let zc = Complex64::from_polar(1.0, 2.0 * PI * f0 / fs);
        let gain: Complex64 = sections.iter().map(|s| s.response(zc)).product();
        let g = 1.0 / gain.norm();
        for v in sections[0].b.iter_mut() {
            *v *= g;
        }
        Ok(Self { sections })
    }

    /// Complex frequency response of one forward pass at frequency `f`.
    pub fn response(&self, f: f64, fs: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, 2.0 * PI * f / fs);
        self.sections.iter().map(|s| s.response(z)).product()
    }

    /// Steady-state section states for a unit step, transposed direct form II.
    fn step_states(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let y = (s.b[0] + s.b[1] + s.b[2]) / (1.0 + s.a[1] + s.a[2]);
                let z1 = y - s.b[0];
                let z2 = s.b[2] - s.a[2] * y;
                let out = [scale * z1, scale * z2];
                scale *= y;
                out
            })
            .collect()
    }

    fn run(&self, x: &mut [f64], init: &[[f64; 2]], x0: f64) {
        for (s, zi) in self.sections.iter().zip(init) {
            let (mut z1, mut z2) = (zi[0] * x0, zi[1] * x0);
            for v in x.iter_mut() {
                let xin = *v;
                let y = s.b[0] * xin + z1;
                z1 = s.b[1] * xin - s.a[1] * y + z2;
                z2 = s.b[2] * xin - s.a[2] * y;
                *v = y;
            }
        }
    }

    /// Zero-phase filtering: odd extension at both ends, steady-state
    /// initial conditions, forward pass, reverse pass.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let zi = self.step_states();
        let first = ext[0];
        self.run(&mut ext, &zi, first);
        ext.reverse();
        let first = ext[0];
        self.run(&mut ext, &zi, first);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Analog Butterworth band-pass magnitude at the prewarped frequency.
    fn analog_gain(order: usize, lo: f64, hi: f64, fs: f64, f: f64) -> f64 {
        let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
        let (wl, wh, w) = (warp(lo), warp(hi), warp(f));
        let omega = (w * w - wl * wh) / (w * (wh - wl));
        1.0 / (1.0 + omega.powi(2 * order as i32)).sqrt()
    }

    #[test]
    fn response_matches_analog_prototype() {
        let (lo, hi, fs) = (0.005, 7.0, 40.0);
        let bp = BandPass::butterworth(3, lo, hi, fs).unwrap();
        for f in [0.001, 0.005, 0.05, 1.0, 5.0, 7.0, 12.0, 19.0] {
            let got = bp.response(f, fs).norm();
            let want = analog_gain(3, lo, hi, fs, f);
            assert!((got - want).abs() < 1e-6 * want.max(1e-3), "f {f}: {got} vs {want}");
        }
        assert_eq!(bp.sections.len(), 3);
    }

    #[test]
    fn rejects_edge_at_nyquist() {
        assert!(matches!(BandPass::butterworth(3, 0.005, 20.0, 40.0), Err(QpatError::Config(_))));
        assert!(BandPass::butterworth(3, 2.0, 1.0, 40.0).is_err());
    }

    #[test]
    fn dc_is_removed() {
        let bp = BandPass::butterworth(3, 0.005, 7.0, 40.0).unwrap();
        let y = bp.filtfilt(&vec![2.5; 2560]);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!(mean.abs() < 1e-3 * 2.5);
    }
}
