use qpat::acoustics::{add_noise, simulate_forward, DetectorArray, Medium2D, SolverConfig, TimeSeries};
use qpat::grid::{Field2D, PlaneGrid};

const C: f64 = 1.5;

fn disc(grid: PlaneGrid, center: [f64; 2], radius: f64) -> Field2D {
    let mut f = Field2D::zeros(grid);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let [x, y] = grid.center(i, j);
            if (x - center[0]).hypot(y - center[1]) <= radius {
                f.data[j * grid.nx + i] = 1.0;
            }
        }
    }
    f
}

fn homogeneous(grid: PlaneGrid) -> Medium2D {
    let mut m = Medium2D::water(grid);
    m.sound_speed.iter_mut().for_each(|v| *v = C);
    m
}

fn ring(radius: f64, n: usize, center: [f64; 2]) -> DetectorArray {
    DetectorArray { n_elements: n, arc_span: 360.0, radius, center, orientation: 0.0 }
}

/// Two elements almost on top of each other along +x from `center`.
fn probe(distance: f64, center: [f64; 2]) -> DetectorArray {
    DetectorArray { n_elements: 2, arc_span: 1e-6, radius: distance, center, orientation: 0.0 }
}

fn cfg(n_steps: usize) -> SolverConfig {
    SolverConfig { dt: 0.015, n_steps, smooth_p0: false, ..Default::default() }
}

fn leading_edge(ts: &TimeSeries, e: usize, frac: f64) -> f64 {
    let ch = ts.channel(e);
    let peak = ch.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let thr = frac * peak;
    let k = ch.iter().position(|v| v.abs() >= thr).unwrap();
    let (a, b) = (ch[k - 1].abs(), ch[k].abs());
    ts.t0 + ts.dt * ((k - 1) as f64 + (thr - a) / (b - a))
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[test]
fn first_arrival_matches_distance_over_speed() {
    let grid = PlaneGrid::square_centered(200, 0.1, [0.0; 2]);
    let r = 1.0;
    let src = [-4.0, 0.0];
    let det = probe(10.0, src);
    let ts = simulate_forward(&disc(grid, src, r), &homogeneous(grid), &det, &cfg(500)).unwrap();
    let t = leading_edge(&ts, 0, 0.1);
    let expected = (10.0 - r) / C;
    assert!((t - expected).abs() / expected < 0.01, "arrival {t} vs {expected}");
}

#[test]
fn wavefront_speed_from_two_detectors() {
    let grid = PlaneGrid::square_centered(200, 0.1, [0.0; 2]);
    let src = [-4.0, 0.0];
    let p0 = disc(grid, src, 0.5);
    let medium = homogeneous(grid);
    let near = simulate_forward(&p0, &medium, &probe(5.0, src), &cfg(600)).unwrap();
    let far = simulate_forward(&p0, &medium, &probe(10.0, src), &cfg(600)).unwrap();
    let speed = 5.0 / (leading_edge(&far, 0, 0.5) - leading_edge(&near, 0, 0.5));
    assert!((speed - C).abs() / C < 0.005, "speed {speed}");
}

#[test]
fn reciprocity_of_source_and_detector() {
    let grid = PlaneGrid::square_centered(160, 0.1, [0.0; 2]);
    let medium = homogeneous(grid);
    let a: [f64; 2] = [-3.05, 1.05];
    let b = [3.95, -2.05];
    let d = (b[0] - a[0]).hypot(b[1] - a[1]);
    let angle = (b[1] - a[1]).atan2(b[0] - a[0]);
    // a one-element "array" pointing at the other position
    let at = |from: [f64; 2], ang: f64| DetectorArray {
        n_elements: 2,
        arc_span: 1e-6,
        radius: d,
        center: from,
        orientation: ang.to_degrees(),
    };
    let ab = simulate_forward(&disc(grid, a, 0.35), &medium, &at(a, angle), &cfg(500)).unwrap();
    let ba = simulate_forward(&disc(grid, b, 0.35), &medium, &at(b, angle + std::f64::consts::PI), &cfg(500)).unwrap();
    let diff: Vec<f64> = ab.channel(0).iter().zip(ba.channel(0)).map(|(x, y)| x - y).collect();
    assert!(rms(&diff) < 0.01 * rms(ab.channel(0)));
}

#[test]
fn absorbing_layer_reflection_is_small() {
    // same source and sensors on a small and a large domain: the difference
    // over the record is what the boundary of the small domain sent back
    let src = [0.0, 0.0];
    let det = ring(5.5, 4, src);
    let small = PlaneGrid::square_centered(128, 0.1, [0.0; 2]);
    let large = PlaneGrid::square_centered(320, 0.1, [0.0; 2]);
    let run_cfg = SolverConfig { smooth_p0: true, ..cfg(900) };
    let ts_s = simulate_forward(&disc(small, src, 0.5), &homogeneous(small), &det, &run_cfg).unwrap();
    let ts_l = simulate_forward(&disc(large, src, 0.5), &homogeneous(large), &det, &run_cfg).unwrap();
    let peak = ts_l.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = ts_s.data.iter().zip(&ts_l.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(worst < 0.01 * peak, "reflection {worst} vs peak {peak}");
}

#[test]
fn halving_dt_changes_waveform_little() {
    let grid = PlaneGrid::square_centered(128, 0.1, [0.0; 2]);
    let p0 = disc(grid, [-1.0, 0.0], 0.8);
    let medium = homogeneous(grid);
    let det = ring(4.0, 4, [-1.0, 0.0]);
    let coarse = simulate_forward(&p0, &medium, &det, &cfg(400)).unwrap();
    let fine_cfg = SolverConfig { dt: 0.0075, n_steps: 800, smooth_p0: false, ..Default::default() };
    let fine = simulate_forward(&p0, &medium, &det, &fine_cfg).unwrap();
    for e in 0..4 {
        let c = coarse.channel(e);
        let f: Vec<f64> = fine.channel(e).iter().step_by(2).copied().collect();
        let diff: Vec<f64> = c.iter().zip(&f).map(|(a, b)| a - b).collect();
        assert!(rms(&diff) < 0.005 * rms(c), "element {e}");
    }
}

#[test]
fn noise_is_reproducible() {
    let grid = PlaneGrid::square_centered(64, 0.2, [0.0; 2]);
    let det = ring(3.0, 4, [0.0; 2]);
    let ts = simulate_forward(&disc(grid, [0.0; 2], 1.0), &homogeneous(grid), &det, &cfg(100)).unwrap();
    let a = add_noise(&ts, 0.1, 5).unwrap();
    let b = add_noise(&ts, 0.1, 5).unwrap();
    assert_eq!(a.data, b.data);
    assert_ne!(a.data, ts.data);
}
