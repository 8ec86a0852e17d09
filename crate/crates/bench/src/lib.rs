//! Seeded inputs shared by the benchmarks.

use carle_core::signal::synth_run_to_failure;
use carle_core::{MultiChannelSignal, SynthConfig};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tone_window(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|k| (k as f64 * 0.11).sin() + 0.3 * rng.random_range(-1.0..1.0))
        .collect()
}

pub fn desk_signal(duration_s: f64, seed: u64) -> MultiChannelSignal {
    let cfg = SynthConfig { duration_s, ..SynthConfig::desk(35.0) };
    synth_run_to_failure(&cfg, seed).expect("valid desk config").0
}

pub fn uniform_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

pub fn uniform_batch(batch: usize, seq: usize, width: usize, seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_simple_fn((batch, seq, width), || rng.random_range(-1.0..1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_are_seeded() {
        assert_eq!(tone_window(64, 1), tone_window(64, 1));
        assert_ne!(tone_window(64, 1), tone_window(64, 2));
        assert_eq!(uniform_batch(2, 3, 4, 5).dim(), (2, 3, 4));
        assert_eq!(desk_signal(1.0, 0).len(), 2560);
    }
}
