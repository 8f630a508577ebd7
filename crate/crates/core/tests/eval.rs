use proptest::prelude::*;
use qpat::eval::*;
use qpat::quant::RegionKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

fn gaussians(n: usize, shift: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, 1.0).unwrap();
    let a = (0..n).map(|_| d.sample(&mut rng) + shift).collect();
    let b = (0..n).map(|_| d.sample(&mut rng)).collect();
    (a, b)
}

#[test]
fn gcnr_matches_gaussian_overlap() {
    let (a, b) = gaussians(100_000, 2.0, 11);
    let expected = 1.0 - 2.0 * StdNormal::new(0.0, 1.0).unwrap().cdf(-1.0);
    let got = gcnr(&a, &b, DEFAULT_GCNR_BINS).unwrap();
    assert!((got - expected).abs() < 0.01, "{got} vs {expected}");
}

#[test]
fn gcnr_identical_distributions_near_zero() {
    // Binning noise alone leaves about 0.07 at 256 bins and 10^4 draws,
    // so the small sample uses coarser bins.
    let (a, b) = gaussians(10_000, 0.0, 3);
    assert!(gcnr(&a, &b, 64).unwrap() < 0.05);
    let (a, b) = gaussians(100_000, 0.0, 3);
    assert!(gcnr(&a, &b, DEFAULT_GCNR_BINS).unwrap() < 0.05);
}

// Brute force over every split of the pooled sample, U by pairwise counting.
fn brute_force_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let na = a.len();
    let u_of = |ga: &[f64], gb: &[f64]| -> f64 {
        let mut u = 0.0;
        for x in ga {
            for y in gb {
                u += if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 };
            }
        }
        u
    };
    let mean = (na * (n - na)) as f64 / 2.0;
    let dev = (u_of(a, b) - mean).abs();
    let (mut hits, mut total) = (0u64, 0u64);
    let (mut ga, mut gb) = (Vec::with_capacity(na), Vec::with_capacity(n));
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        ga.clear();
        gb.clear();
        for (k, v) in pooled.iter().enumerate() {
            if mask >> k & 1 == 1 { ga.push(*v) } else { gb.push(*v) }
        }
        total += 1;
        if (u_of(&ga, &gb) - mean).abs() >= dev - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / total as f64
}

#[test]
fn mann_whitney_n12_matches_brute_force() {
    let a = [0.21, 0.35, 0.12, 0.48, 0.33, 0.27, 0.41, 0.19, 0.30, 0.52, 0.25, 0.38];
    let b = [0.45, 0.61, 0.39, 0.58, 0.50, 0.36, 0.66, 0.47, 0.55, 0.43, 0.30, 0.71];
    let r = mann_whitney_u(&a, &b).unwrap();
    assert_eq!(r.method, PValueMethod::Normal);
    let oracle = brute_force_p(&a, &b);
    assert!((r.p - oracle).abs() < 0.02, "{} vs {oracle}", r.p);
    assert!(r.p < 0.01);
}

#[test]
fn exact_p_matches_brute_force_with_ties() {
    let a = [1.0, 2.0, 2.0, 5.0, 7.0];
    let b = [2.0, 3.0, 5.0, 8.0, 9.0, 9.0];
    let r = mann_whitney_u(&a, &b).unwrap();
    assert_eq!(r.method, PValueMethod::Exact);
    assert!((r.p - brute_force_p(&a, &b)).abs() < 1e-12);
}

// Worst-case |normal − exact| over every attainable U, distinct values.
fn worst_normal_gap(na: usize, nb: usize) -> f64 {
    let ranks: Vec<f64> = (1..=na + nb).map(|r| r as f64).collect();
    (0..=na * nb)
        .map(|u| {
            let u = u as f64;
            (mann_whitney_exact_p(u, &ranks, na) - mann_whitney_normal_p(u, na, nb, 0.0)).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn normal_approximation_within_two_points_from_five_per_group() {
    for na in 5..=8 {
        for nb in 5..=8 {
            let gap = worst_normal_gap(na, nb);
            assert!(gap < 0.02, "({na},{nb}): {gap}");
        }
    }
}

#[test]
fn normal_approximation_is_loose_for_tiny_groups() {
    // two per group: exact p jumps in steps of 1/3, the approximation cannot follow
    assert!(worst_normal_gap(2, 2) > 0.05);
}

#[test]
fn pearson_fixture_matches_sum_formula() {
    let x = [1.3, 2.9, 3.1, 4.8, 5.0, 6.7, 7.2, 8.8, 9.4, 10.1];
    let y = [0.8, 2.1, 3.9, 3.7, 5.8, 6.0, 7.9, 8.1, 9.9, 9.7];
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    let oracle = (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
    assert!((pearson_r(&x, &y).unwrap() - oracle).abs() < 1e-12);
}

fn rows_from(values: &[f64]) -> Vec<MetricRow> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| MetricRow::new(&format!("p{i}"), 800.0, "inclusion", RegionKind::Inclusion, 1.0 + v / 100.0, 1.0).unwrap())
        .collect()
}

#[test]
fn summarize_recomputable_from_rows() {
    let rows = rows_from(&[1.0, 2.0, 3.0, 4.0, 5.0]);
    let rep = summarize(&rows).unwrap();
    let agg = rep.aggregate(RegionKind::Inclusion).unwrap();
    assert!((agg.rel_err.median - 3.0).abs() < 1e-9);
    assert!((agg.rel_err.half_iqr - 1.0).abs() < 1e-9);
    assert_eq!(summarize(&rep.rows).unwrap(), rep);
    assert!(rep.aggregate(RegionKind::Background).is_none());
}

proptest! {
    #[test]
    fn gcnr_invariant_under_affine(shift in -3.0f64..3.0, scale in 0.01f64..100.0, offset in -50.0f64..50.0, seed in 0u64..1000) {
        let (a, b) = gaussians(2000, shift, seed);
        let f = |v: &Vec<f64>| v.iter().map(|x| scale * x + offset).collect::<Vec<_>>();
        let g0 = gcnr(&a, &b, DEFAULT_GCNR_BINS).unwrap();
        let g1 = gcnr(&f(&a), &f(&b), DEFAULT_GCNR_BINS).unwrap();
        // rounding can move a value sitting on a bin edge
        prop_assert!((g0 - g1).abs() <= 2.0 / 2000.0 + 1e-12);
    }

    #[test]
    fn gcnr_nearly_invariant_under_exponential(shift in 0.0f64..3.0, seed in 0u64..1000) {
        let (a, b) = gaussians(20_000, shift, seed);
        let e = |v: &Vec<f64>| v.iter().map(|x| (0.2 * x).exp()).collect::<Vec<_>>();
        let g0 = gcnr(&a, &b, DEFAULT_GCNR_BINS).unwrap();
        let g1 = gcnr(&e(&a), &e(&b), DEFAULT_GCNR_BINS).unwrap();
        prop_assert!((g0 - g1).abs() < 0.03, "{} vs {}", g0, g1);
    }

    #[test]
    fn pearson_invariant_under_positive_affine(
        xs in prop::collection::vec(-10.0f64..10.0, 3..30),
        k in 0.1f64..10.0, c in -5.0f64..5.0,
    ) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * x + i as f64).collect();
        if let Ok(r) = pearson_r(&xs, &ys) {
            let xt: Vec<f64> = xs.iter().map(|x| k * x + c).collect();
            prop_assert!((pearson_r(&xt, &ys).unwrap() - r).abs() < 1e-9);
        }
    }

    #[test]
    fn errors_nonnegative_and_symmetric(x in 1e-6f64..10.0, xh in -10.0f64..10.0) {
        prop_assert!(rel_error(x, xh).unwrap() >= 0.0);
        prop_assert!(abs_error(x, xh) >= 0.0);
        prop_assert_eq!(abs_error(x, xh), abs_error(xh, x));
    }

    #[test]
    fn summarize_ignores_row_order(vals in prop::collection::vec(0.0f64..100.0, 1..20), seed in 0u64..100) {
        use rand::seq::SliceRandom;
        let rows = rows_from(&vals);
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(summarize(&rows).unwrap().aggregates, summarize(&shuffled).unwrap().aggregates);
    }

    #[test]
    fn exact_and_normal_close_for_balanced_mid_groups(
        a in prop::collection::vec(0.0f64..1.0, 5..=8),
        b in prop::collection::vec(0.0f64..1.0, 5..=8),
    ) {
        let r = mann_whitney_u(&a, &b).unwrap();
        let pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
        let n = pooled.len() as f64;
        let mut sorted = pooled.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        prop_assume!(sorted.len() == pooled.len());
        let approx = mann_whitney_normal_p(r.u, a.len(), b.len(), 0.0);
        prop_assert!((r.p - approx).abs() < 0.02, "n={} {} vs {}", n, r.p, approx);
    }
}
