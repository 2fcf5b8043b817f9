use enso_core::diagnostics::{
    classify_events, kernel_density, long_run_stats, moments, regression_profile, EventKind, MonthlySeries, SeriesUnits,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normals(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn celsius(values: Vec<f64>) -> MonthlySeries {
    MonthlySeries::new("x", SeriesUnits::Celsius, 1950, 1, values).unwrap()
}

#[test]
fn gaussian_moments_concentrate() {
    let x = normals(1_000_000, 1);
    let m = moments(&x).unwrap();
    assert!(m.skewness.abs() < 0.01, "skewness {}", m.skewness);
    assert!((m.kurtosis - 3.0).abs() < 0.02, "kurtosis {}", m.kurtosis);
}

#[test]
fn white_noise_acf_stays_in_band() {
    let n = 12_000;
    let s = celsius(normals(n, 2));
    let st = long_run_stats(&s, 100).unwrap();
    let band = 3.0 / (n as f64).sqrt();
    let inside = st.acf[1..].iter().filter(|a| a.abs() < band).count();
    assert!(inside as f64 >= 0.95 * 100.0, "{inside} of 100 lags inside");
}

#[test]
fn skewed_density_integrates_to_one() {
    // Skewness near 0.7, like the eastern Pacific index.
    let x: Vec<f64> = normals(50_000, 3).iter().map(|v| v + 0.12 * v * v).collect();
    let m = moments(&x).unwrap();
    assert!(m.skewness > 0.5 && m.skewness < 0.9, "{}", m.skewness);
    let d = kernel_density(&x).unwrap();
    assert!((d.integral() - 1.0).abs() < 1e-3, "{}", d.integral());
}

#[test]
fn noisy_profile_is_recovered_and_reconstructs_grid() {
    let t = 600;
    let tc = normals(t, 4);
    let te: Vec<f64> = normals(t, 5).iter().zip(&tc).map(|(e, c)| e + 0.4 * c).collect();
    let noise = normals(t * 5, 6);
    let grid = DMatrix::from_fn(5, t, |i, k| 0.3 * tc[k] + 0.7 * te[k] + 0.02 * noise[i * t + k]);
    let lons = [160.0, 180.0, 200.0, 220.0, 240.0];
    let p = regression_profile(&grid, &lons, &tc, &te).unwrap();
    for i in 0..5 {
        assert!((p.r_c[i] - 0.3).abs() < 0.05 * 0.3);
        assert!((p.r_e[i] - 0.7).abs() < 0.05 * 0.7);
    }
    let rec = p.reconstruct_grid(&tc, &te);
    let mean = grid.mean();
    let ss_tot: f64 = grid.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = grid.iter().zip(rec.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    assert!(1.0 - ss_res / ss_tot > 0.95);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn each_year_gets_at_most_one_kind(
        tc in prop::collection::vec(-3.0f64..3.0, 36..120),
        shift in -1.0f64..1.0,
    ) {
        let te: Vec<f64> = tc.iter().rev().map(|v| v + shift).collect();
        let cat = classify_events(&celsius(tc.clone()), &celsius(te)).unwrap();
        let mut years: Vec<i32> = cat.events.iter().map(|e| e.year).collect();
        let n = years.len();
        years.dedup();
        prop_assert_eq!(years.len(), n);
        for e in &cat.events {
            match e.kind {
                EventKind::EP => prop_assert!(e.djf_te > e.djf_tc && e.djf_te > 0.5),
                EventKind::CP => prop_assert!(e.djf_tc > e.djf_te && e.djf_tc > 0.5),
                EventKind::LaNina => prop_assert!(!e.extreme),
            }
        }
    }

    #[test]
    fn segments_partition_the_record(months in 0usize..3000, years in 1usize..90) {
        let s = celsius((0..months).map(|k| k as f64).collect());
        let segs = s.segments(years);
        let covered: Vec<f64> = segs.iter().flat_map(|g| g.values.iter().copied()).collect();
        prop_assert_eq!(covered.len(), segs.len() * years * 12);
        prop_assert!(months - covered.len() < years * 12);
        for (k, v) in covered.iter().enumerate() {
            prop_assert_eq!(*v, k as f64);
        }
    }
}
