use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use qpat::grid::{Field2D, PlaneGrid};
use qpat::quant::{
    aggregate_region, apply_calibration, fit_linear_calibration, fluence_correct, fluence_normalise, linear_unmix_so2,
    CalibrationSample, ChromophoreBasis, LinearMap, RegionKind, RegionSpec,
};

const WAVELENGTHS: [f64; 5] = [700.0, 750.0, 800.0, 850.0, 900.0];

fn grid(n: usize) -> PlaneGrid {
    PlaneGrid::square_centered(n, 0.2, [0.0; 2])
}

fn disc(n: usize, radius_px: f64) -> Vec<bool> {
    let c = n as f64 / 2.0 - 0.5;
    (0..n * n)
        .map(|k| ((k % n) as f64 - c).hypot((k / n) as f64 - c) <= radius_px)
        .collect()
}

/// μa images built from known concentrations, with relative Gaussian noise.
fn mixture(basis: &ChromophoreBasis, c: &[(f64, f64)], noise: f64, seed: u64) -> Vec<Field2D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = PlaneGrid { nx: c.len(), ny: 1, spacing: [1.0, 1.0], origin: [0.0, 0.0] };
    (0..basis.wavelengths.len())
        .map(|k| {
            let data = c
                .iter()
                .map(|&(a, b)| {
                    let clean = a * basis.eps_hbo2[k] + b * basis.eps_hb[k];
                    clean * (1.0 + noise * Normal::new(0.0, 1.0).unwrap().sample(&mut rng))
                })
                .collect();
            Field2D { grid: g, data }
        })
        .collect()
}

#[test]
fn pure_chromophores_are_exact() {
    let basis = ChromophoreBasis::hemoglobin(&WAVELENGTHS).unwrap();
    let so2 = linear_unmix_so2(&mixture(&basis, &[(1.0, 0.0), (0.0, 2.0), (3.0, 3.0)], 0.0, 0), &basis).unwrap();
    assert_eq!(so2.data[0], 1.0);
    assert_eq!(so2.data[1], 0.0);
    assert!((so2.data[2] - 0.5).abs() < 1e-12);
}

#[test]
fn two_wavelength_basis_is_enough() {
    let basis = ChromophoreBasis::hemoglobin(&[750.0, 850.0]).unwrap();
    let so2 = linear_unmix_so2(&mixture(&basis, &[(0.7, 0.3)], 0.0, 0), &basis).unwrap();
    assert!((so2.data[0] - 0.7).abs() < 1e-10);
}

#[test]
fn zero_signal_is_invalid() {
    let basis = ChromophoreBasis::hemoglobin(&WAVELENGTHS).unwrap();
    let so2 = linear_unmix_so2(&mixture(&basis, &[(0.0, 0.0)], 0.0, 0), &basis).unwrap();
    assert!(so2.data[0].is_nan());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn noisy_mixtures_recover_so2(
        c in prop::collection::vec((0.05f64..1.0, 0.05f64..1.0), 1..20),
        seed in any::<u64>(),
    ) {
        let basis = ChromophoreBasis::hemoglobin(&WAVELENGTHS).unwrap();
        let so2 = linear_unmix_so2(&mixture(&basis, &c, 1e-3, seed), &basis).unwrap();
        for (&(a, b), s) in c.iter().zip(&so2.data) {
            prop_assert!((s - a / (a + b)).abs() <= 0.01, "{} vs {}", s, a / (a + b));
        }
    }

    #[test]
    fn unmixing_ignores_global_scale(
        c in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..10),
        scale in 1e-3f64..1e3,
        seed in any::<u64>(),
    ) {
        let basis = ChromophoreBasis::hemoglobin(&WAVELENGTHS).unwrap();
        let images = mixture(&basis, &c, 1e-2, seed);
        let scaled: Vec<Field2D> = images
            .iter()
            .map(|f| Field2D { grid: f.grid, data: f.data.iter().map(|v| v * scale).collect() })
            .collect();
        let a = linear_unmix_so2(&images, &basis).unwrap();
        let b = linear_unmix_so2(&scaled, &basis).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            prop_assert!((x - y).abs() < 1e-9 || (x.is_nan() && y.is_nan()));
        }
    }

    #[test]
    fn calibration_inverts_its_forward_model(
        mu in prop::collection::vec(0.0f64..10.0, 1..50),
        slope in prop_oneof![-1e4f64..-1e-2, 1e-2f64..1e4],
        intercept in -1e3f64..1e3,
    ) {
        let map = LinearMap::new(slope, intercept).unwrap();
        let g = PlaneGrid { nx: mu.len(), ny: 1, spacing: [1.0, 1.0], origin: [0.0, 0.0] };
        let signal = Field2D { grid: g, data: mu.iter().map(|m| slope * m + intercept).collect() };
        let back = apply_calibration(&signal, &map);
        for (m, b) in mu.iter().zip(&back.data) {
            prop_assert!((m - b).abs() <= 1e-9 * (1.0 + intercept.abs() / slope.abs()));
        }
    }

    #[test]
    fn fluence_scale_cancels_after_refit(
        refs in prop::collection::vec(0.1f64..4.0, 3..6),
        scale in 1e-3f64..1e3,
        seed in any::<u64>(),
    ) {
        let n = 12;
        let g = grid(n);
        let mask = vec![true; n * n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phis: Vec<Field2D> = refs
            .iter()
            .map(|_| Field2D { grid: g, data: (0..n * n).map(|_| rand::Rng::random_range(&mut rng, 0.05..1.0)).collect() })
            .collect();
        let images: Vec<Field2D> = refs
            .iter()
            .zip(&phis)
            .map(|(&m, phi)| Field2D { grid: g, data: phi.data.iter().map(|p| (500.0 * m + 80.0) * p).collect() })
            .collect();
        let estimate = |s: f64| {
            let scaled: Vec<Field2D> =
                phis.iter().map(|p| Field2D { grid: g, data: p.data.iter().map(|v| v * s).collect() }).collect();
            let corrected: Vec<Field2D> =
                images.iter().zip(&scaled).map(|(im, p)| fluence_normalise(im, p).unwrap()).collect();
            let samples: Vec<CalibrationSample> =
                corrected.iter().zip(&refs).map(|(c, &r)| CalibrationSample::new(c, &mask, r)).collect();
            let map = fit_linear_calibration(&samples, 0.02).unwrap();
            fluence_correct(&images[0], &scaled[0], &map).unwrap()
        };
        let a = estimate(1.0);
        let b = estimate(scale);
        for (x, y) in a.data.iter().zip(&b.data) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            prop_assert!((x - refs[0]).abs() <= 1e-9 * refs[0].max(1.0));
        }
    }

    #[test]
    fn aggregation_is_permutation_invariant_and_monotone(
        values in prop::collection::vec(-5.0f64..5.0, 400),
        perm_seed in any::<u64>(),
        delta in 1e-3f64..1.0,
        inclusion in any::<bool>(),
    ) {
        let n = 20;
        let kind = if inclusion { RegionKind::Inclusion } else { RegionKind::Background };
        let region = RegionSpec::new(grid(n), disc(n, 7.0), kind).unwrap();
        let image = Field2D { grid: grid(n), data: values.clone() };
        let base = aggregate_region(&image, &region).unwrap();

        // shuffle the values among the aggregated pixels
        let sel: Vec<usize> = region.selection().iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i).collect();
        let mut picked: Vec<f64> = sel.iter().map(|&i| values[i]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        rand::seq::SliceRandom::shuffle(picked.as_mut_slice(), &mut rng);
        let mut shuffled = values.clone();
        for (&i, v) in sel.iter().zip(picked) {
            shuffled[i] = v;
        }
        let permuted = aggregate_region(&Field2D { grid: grid(n), data: shuffled }, &region).unwrap();
        prop_assert!((base - permuted).abs() < 1e-12);

        let raised = Field2D { grid: grid(n), data: values.iter().map(|v| v + delta).collect() };
        prop_assert!(aggregate_region(&raised, &region).unwrap() > base);
    }
}
