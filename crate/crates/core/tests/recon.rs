use std::sync::OnceLock;

use qpat::acoustics::{add_noise, simulate_forward, DetectorArray, Medium2D, SolverConfig, TimeSeries};
use qpat::grid::{Field2D, PlaneGrid};
use qpat::recon::{reconstruct, ReconConfig, ReconImage};

const SOURCE: [f64; 2] = [3.0, -2.0];

fn acoustic_grid() -> PlaneGrid {
    PlaneGrid::square_centered(336, 0.25, [0.0; 2])
}

fn point_source(center: [f64; 2]) -> Field2D {
    let grid = acoustic_grid();
    let mut f = Field2D::zeros(grid);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let [x, y] = grid.center(i, j);
            let r2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
            f.data[j * grid.nx + i] = (-r2 / (2.0 * 0.25f64.powi(2))).exp();
        }
    }
    f
}

fn simulate(center: [f64; 2]) -> TimeSeries {
    let cfg = SolverConfig { n_steps: 1400, ..Default::default() };
    simulate_forward(&point_source(center), &Medium2D::water(acoustic_grid()), &DetectorArray::default(), &cfg).unwrap()
}

fn base_series() -> &'static TimeSeries {
    static TS: OnceLock<TimeSeries> = OnceLock::new();
    TS.get_or_init(|| simulate(SOURCE))
}

fn argmax_mm(img: &ReconImage) -> [f64; 2] {
    let (i, j) = img.argmax();
    img.image.grid.center(i, j)
}

fn pixel_distance(img: &ReconImage, p: [f64; 2], q: [f64; 2]) -> f64 {
    (p[0] - q[0]).hypot(p[1] - q[1]) / img.pixel_pitch()
}

#[test]
fn point_source_is_localised() {
    let img = reconstruct(base_series(), &ReconConfig::default()).unwrap();
    assert_eq!((img.image.grid.nx, img.image.grid.ny), (288, 288));
    assert!((img.pixel_pitch() - 32.0 / 300.0).abs() < 1e-12);
    let found = argmax_mm(&img);
    assert!(pixel_distance(&img, found, SOURCE) <= 2.0, "argmax at {found:?}");
}

#[test]
fn shifting_the_source_shifts_the_peak() {
    let cfg = ReconConfig::default();
    let a = argmax_mm(&reconstruct(base_series(), &cfg).unwrap());
    let shifted = [SOURCE[0] + 2.0, SOURCE[1]];
    let img = reconstruct(&simulate(shifted), &cfg).unwrap();
    let b = argmax_mm(&img);
    assert!(pixel_distance(&img, [b[0] - a[0], b[1] - a[1]], [2.0, 0.0]) <= 1.0 + 1e-9);
}

#[test]
fn envelope_is_homogeneous() {
    let cfg = ReconConfig::default();
    let a = reconstruct(base_series(), &cfg).unwrap();
    let b = reconstruct(&base_series().scaled(2.5), &cfg).unwrap();
    let peak = a.image.max();
    for (x, y) in a.image.data.iter().zip(&b.image.data) {
        assert!((2.5 * x - y).abs() <= 1e-9 * peak);
    }
}

#[test]
fn localisation_survives_one_percent_noise() {
    let ts = base_series();
    let peak = ts.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let noisy = add_noise(ts, 0.01 * peak, 99).unwrap();
    let cfg = ReconConfig::default();
    let clean = reconstruct(ts, &cfg).unwrap().argmax();
    assert_eq!(reconstruct(&noisy, &cfg).unwrap().argmax(), clean);
}

#[test]
fn rotating_by_one_pitch_rotates_the_peak() {
    let det = DetectorArray::default();
    let pitch = det.pitch().to_radians();
    let (s, c) = pitch.sin_cos();
    let rotated = [c * SOURCE[0] - s * SOURCE[1], s * SOURCE[0] + c * SOURCE[1]];
    let cfg = ReconConfig::default();
    let img = reconstruct(&simulate(rotated), &cfg).unwrap();
    let a = argmax_mm(&reconstruct(base_series(), &cfg).unwrap());
    let expected = [c * a[0] - s * a[1], s * a[0] + c * a[1]];
    assert!(pixel_distance(&img, argmax_mm(&img), expected) <= 2.0);
}
