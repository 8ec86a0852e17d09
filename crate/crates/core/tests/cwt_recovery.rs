//! Dominant-frequency recovery of pure tones across the analysed band.

use std::f64::consts::PI;

use carle_core::cwt::{build_scale_grid, CwtPlan, MorletPhase};
use carle_core::features::{dominant_frequency, energy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn tones_land_within_one_scale_bin() {
    let (f_o, fs, len) = (35.0, 2560.0, 2048);
    let grid = build_scale_grid(f_o, fs, 64, 0.81).unwrap();
    let plan = CwtPlan::new(&grid, len, MorletPhase::Conventional).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut hits = 0;
    for _ in 0..20 {
        let f = rng.random_range(f_o / 3.0..3.0 * f_o);
        let phase = rng.random_range(0.0..2.0 * PI);
        let x: Vec<f64> = (0..len).map(|k| (2.0 * PI * f * k as f64 / fs + phase).sin()).collect();
        let (e, _) = energy(&plan.transform(&x).unwrap());
        let got = dominant_frequency(&e, &grid).unwrap();
        if (grid.fractional_index(got) - grid.fractional_index(f)).abs() <= 1.0 {
            hits += 1;
        }
    }
    assert!(hits >= 19, "{hits}/20");
}

#[test]
fn recovery_holds_at_other_rotation_speeds() {
    for f_o in [25.0, 40.0, 100.0] {
        let fs = 25_600.0;
        let grid = build_scale_grid(f_o, fs, 64, 0.81).unwrap();
        let len = 8192;
        let plan = CwtPlan::new(&grid, len, MorletPhase::Conventional).unwrap();
        for f in [f_o / 2.0, f_o, 2.0 * f_o] {
            let x: Vec<f64> = (0..len).map(|k| (2.0 * PI * f * k as f64 / fs).cos()).collect();
            let (e, _) = energy(&plan.transform(&x).unwrap());
            let got = dominant_frequency(&e, &grid).unwrap();
            assert!((grid.fractional_index(got) - grid.fractional_index(f)).abs() <= 1.0, "f_o {f_o} f {f} got {got}");
        }
    }
}
