use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Unnormalized 2D FFT on x-fastest data of shape (ny, nx).
///
/// The spectrum is returned transposed (ky fastest, index `kx * ny + ky`),
/// which saves one transpose per direction; `inverse` accepts that layout.
pub(crate) struct Fft2 {
    pub nx: usize,
    pub ny: usize,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl Fft2 {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd_x = planner.plan_fft_forward(nx);
        let inv_x = planner.plan_fft_inverse(nx);
        let fwd_y = planner.plan_fft_forward(ny);
        let inv_y = planner.plan_fft_inverse(ny);
        let scratch_len = [&fwd_x, &inv_x, &fwd_y, &inv_y]
            .iter()
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Self {
            nx,
            ny,
            fwd_x,
            inv_x,
            fwd_y,
            inv_y,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }

    fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
        const B: usize = 32;
        for r0 in (0..rows).step_by(B) {
            for c0 in (0..cols).step_by(B) {
                for r in r0..(r0 + B).min(rows) {
                    for c in c0..(c0 + B).min(cols) {
                        dst[c * rows + r] = src[r * cols + c];
                    }
                }
            }
        }
    }

    /// `spatial` (ny rows of nx) → `spectrum` (nx rows of ny). `spatial` is
    /// clobbered.
    pub fn forward(&mut self, spatial: &mut [Complex64], spectrum: &mut [Complex64]) {
        self.fwd_x.process_with_scratch(spatial, &mut self.scratch);
        Self::transpose(spatial, spectrum, self.ny, self.nx);
        self.fwd_y.process_with_scratch(spectrum, &mut self.scratch);
    }

    /// `spectrum` (nx rows of ny) → `spatial` (ny rows of nx). `spectrum` is
    /// clobbered. No 1/N scaling.
    pub fn inverse(&mut self, spectrum: &mut [Complex64], spatial: &mut [Complex64]) {
        self.inv_y.process_with_scratch(spectrum, &mut self.scratch);
        Self::transpose(spectrum, spatial, self.nx, self.ny);
        self.inv_x.process_with_scratch(spatial, &mut self.scratch);
    }
}

/// Smallest integer ≥ n whose prime factors are all 2, 3 or 5.
pub(crate) fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_scales_by_n() {
        let (nx, ny) = (6, 10);
        let mut fft = Fft2::new(nx, ny);
        let orig: Vec<Complex64> = (0..nx * ny).map(|i| Complex64::new(i as f64, -(i as f64) * 0.5)).collect();
        let mut a = orig.clone();
        let mut spec = vec![Complex64::new(0.0, 0.0); nx * ny];
        fft.forward(&mut a, &mut spec);
        fft.inverse(&mut spec, &mut a);
        for (x, y) in a.iter().zip(&orig) {
            assert!((x / (nx * ny) as f64 - y).norm() < 1e-10);
        }
    }

    #[test]
    fn spectrum_is_transposed() {
        let (nx, ny) = (4, 3);
        let mut fft = Fft2::new(nx, ny);
        // single x-frequency plane wave: exp(2πi·x/nx)
        let mut a: Vec<Complex64> = (0..ny)
            .flat_map(|_| (0..nx).map(|i| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * i as f64 / nx as f64)))
            .collect();
        let mut spec = vec![Complex64::new(0.0, 0.0); nx * ny];
        fft.forward(&mut a, &mut spec);
        // energy sits at kx = 1, ky = 0 → index 1 * ny + 0
        assert!((spec[ny].re - (nx * ny) as f64).abs() < 1e-9);
    }

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(1), 1);
        assert_eq!(smooth_size(7), 8);
        assert_eq!(smooth_size(361), 375);
        assert_eq!(smooth_size(384), 384);
    }
}
