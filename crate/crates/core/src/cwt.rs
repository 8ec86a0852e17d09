//! Morlet continuous wavelet transform over a log-spaced scale grid derived
//! from the shaft rotation frequency.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default Morlet central frequency.
pub const DEFAULT_CENTER_FREQ: f64 = 0.81;
pub const DEFAULT_N_SCALES: usize = 64;

/// `sqrt(2 ln 1e8)`: beyond this many scales from its center the Morlet
/// envelope is below 1e-8 and the wavelet is treated as zero.
const SUPPORT_HALF_WIDTH: f64 = 6.069_690_6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleGrid {
    scales: Vec<f64>,
    center_freq: f64,
    f_min_hz: f64,
    f_max_hz: f64,
    sample_rate_hz: f64,
}

/// Scales (in samples) spanning the first three sub- and super-harmonics of
/// the rotation frequency `f_o`.
pub fn build_scale_grid(
    rotation_hz: f64,
    sample_rate_hz: f64,
    n_scales: usize,
    center_freq: f64,
) -> Result<ScaleGrid> {
    if !(rotation_hz > 0.0 && rotation_hz.is_finite()) {
        return Err(Error::param(format!(
            "rotation frequency must be positive, got {rotation_hz}"
        )));
    }
    if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
        return Err(Error::param(format!(
            "sample rate must be positive, got {sample_rate_hz}"
        )));
    }
    if !(center_freq > 0.0 && center_freq.is_finite()) {
        return Err(Error::param(format!(
            "center frequency must be positive, got {center_freq}"
        )));
    }
    if n_scales < 2 {
        return Err(Error::param(format!(
            "scale grid needs at least 2 scales, got {n_scales}"
        )));
    }
    let f_min = rotation_hz / 3.0;
    let f_max = 3.0 * rotation_hz;
    let nyquist = sample_rate_hz / 2.0;
    if f_max >= nyquist {
        return Err(Error::param(format!(
            "f_max = 3 * f_o = {f_max} Hz must stay below the Nyquist frequency {nyquist} Hz"
        )));
    }
    let a_min = center_freq * sample_rate_hz / f_max;
    let a_max = center_freq * sample_rate_hz / f_min;
    let log_min = a_min.ln();
    let step = (a_max.ln() - log_min) / (n_scales - 1) as f64;
    let mut scales: Vec<f64> = (0..n_scales)
        .map(|i| (log_min + step * i as f64).exp())
        .collect();
    scales[0] = a_min;
    scales[n_scales - 1] = a_max;
    Ok(ScaleGrid {
        scales,
        center_freq,
        f_min_hz: f_min,
        f_max_hz: f_max,
        sample_rate_hz,
    })
}

impl ScaleGrid {
    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    pub fn center_freq(&self) -> f64 {
        self.center_freq
    }

    pub fn f_min_hz(&self) -> f64 {
        self.f_min_hz
    }

    pub fn f_max_hz(&self) -> f64 {
        self.f_max_hz
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn a_min(&self) -> f64 {
        self.scales[0]
    }

    pub fn a_max(&self) -> f64 {
        self.scales[self.scales.len() - 1]
    }

    /// Constant ratio between neighbouring scales.
    pub fn ratio(&self) -> f64 {
        (self.a_max() / self.a_min()).powf(1.0 / (self.len() - 1) as f64)
    }

    pub fn scale_to_freq(&self, scale: f64) -> f64 {
        self.center_freq * self.sample_rate_hz / scale
    }

    pub fn freq_to_scale(&self, freq_hz: f64) -> f64 {
        self.center_freq * self.sample_rate_hz / freq_hz
    }

    /// Fractional grid position of a frequency, 0 at `a_min`.
    pub fn fractional_index(&self, freq_hz: f64) -> f64 {
        (self.freq_to_scale(freq_hz) / self.a_min()).ln() / self.ratio().ln()
    }
}

/// Placement of the central frequency in the Morlet phase term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorletPhase {
    /// `exp(i 2π f_c t)`: oscillates at `f_c` cycles per unit, which is what
    /// the scale/frequency map `f = f_c / (a T)` assumes.
    #[default]
    Conventional,
    /// `exp(i f_c t / 2π)`.
    Literal,
}

impl MorletPhase {
    fn angular(self, center_freq: f64) -> f64 {
        match self {
            MorletPhase::Conventional => 2.0 * PI * center_freq,
            MorletPhase::Literal => center_freq / (2.0 * PI),
        }
    }
}

/// Morlet mother wavelet: complex sinusoid under a unit Gaussian envelope.
pub fn morlet(t: f64, center_freq: f64, phase: MorletPhase) -> Complex64 {
    let envelope = (-0.5 * t * t).exp();
    Complex64::from_polar(envelope, phase.angular(center_freq) * t)
}

/// Wavelet coefficients of one window, shape `(scales, samples)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scalogram {
    pub coefficients: Array2<Complex64>,
}

impl Scalogram {
    pub fn n_scales(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.coefficients.ncols()
    }

    pub fn magnitudes(&self) -> Array2<f64> {
        self.coefficients.mapv(|c| c.norm())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CwtBackend {
    /// Explicit summation at every (scale, shift) pair.
    Direct,
    /// The same truncated sums evaluated as FFT convolutions.
    #[default]
    Fft,
}

fn check_inputs(window: &[f64], grid: &ScaleGrid) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::param("degenerate scale grid: need at least 2 scales"));
    }
    if window.len() < 4 {
        return Err(Error::input(format!(
            "window of {} samples is too short for the CWT (minimum 4)",
            window.len()
        )));
    }
    Ok(())
}

/// Conjugated wavelet taps `conj(psi(j / a))` for `j` in `-r..=r`, with the
/// `dt / sqrt(a)` factor folded in.
fn kernel_taps(scale: f64, radius: usize, grid: &ScaleGrid, phase: MorletPhase) -> Vec<Complex64> {
    let norm = 1.0 / (grid.sample_rate_hz * scale.sqrt());
    let r = radius as i64;
    (-r..=r)
        .map(|j| morlet(j as f64 / scale, grid.center_freq, phase).conj() * norm)
        .collect()
}

fn support_radius(scale: f64, window_len: usize) -> usize {
    ((SUPPORT_HALF_WIDTH * scale).floor() as usize).min(window_len - 1)
}

/// Direct-summation CWT of one channel window:
/// `Γ(a, b) = Σ_t x(t) ψ*((t - b) / a) Δt / sqrt(a)` with `t`, `b` in samples.
pub fn transform(window: &[f64], grid: &ScaleGrid, phase: MorletPhase) -> Result<Scalogram> {
    check_inputs(window, grid)?;
    let n = window.len();
    let mut coefficients = Array2::<Complex64>::zeros((grid.len(), n));
    for (row, &scale) in grid.scales.iter().enumerate() {
        let radius = support_radius(scale, n);
        let taps = kernel_taps(scale, radius, grid, phase);
        for b in 0..n {
            let lo = b.saturating_sub(radius);
            let hi = (b + radius).min(n - 1);
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, &x) in window.iter().enumerate().take(hi + 1).skip(lo) {
                acc += taps[t + radius - b] * x;
            }
            coefficients[[row, b]] = acc;
        }
    }
    Ok(Scalogram { coefficients })
}

/// Precomputed kernel spectra for repeated FFT-based transforms of windows
/// with a fixed length.
pub struct CwtPlan {
    grid: ScaleGrid,
    phase: MorletPhase,
    window_len: usize,
    fft_len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    kernels: Vec<Vec<Complex64>>,
}

impl std::fmt::Debug for CwtPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CwtPlan")
            .field("scales", &self.grid.len())
            .field("window_len", &self.window_len)
            .field("fft_len", &self.fft_len)
            .finish()
    }
}

impl CwtPlan {
    pub fn new(grid: &ScaleGrid, window_len: usize, phase: MorletPhase) -> Result<Self> {
        check_inputs(&vec![0.0; window_len], grid)?;
        let fft_len = (2 * window_len).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);
        let kernels = grid
            .scales
            .iter()
            .map(|&scale| {
                let radius = support_radius(scale, window_len);
                let taps = kernel_taps(scale, radius, grid, phase);
                // Correlation with the taps is convolution with the reversed
                // taps h[m] = taps[radius - m], laid out circularly.
                let mut h = vec![Complex64::new(0.0, 0.0); fft_len];
                for (j, tap) in taps.iter().enumerate() {
                    let m = radius as i64 - j as i64;
                    h[m.rem_euclid(fft_len as i64) as usize] = *tap;
                }
                forward.process(&mut h);
                h
            })
            .collect();
        Ok(Self {
            grid: grid.clone(),
            phase,
            window_len,
            fft_len,
            forward,
            inverse,
            kernels,
        })
    }

    pub fn grid(&self) -> &ScaleGrid {
        &self.grid
    }

    pub fn phase(&self) -> MorletPhase {
        self.phase
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn transform(&self, window: &[f64]) -> Result<Scalogram> {
        if window.len() != self.window_len {
            return Err(Error::shape(
                "CWT plan window",
                self.window_len,
                window.len(),
            ));
        }
        let mut spectrum: Vec<Complex64> = window
            .iter()
            .map(|&x| Complex64::new(x, 0.0))
            .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
            .take(self.fft_len)
            .collect();
        self.forward.process(&mut spectrum);
        let scale = 1.0 / self.fft_len as f64;
        let mut coefficients = Array2::<Complex64>::zeros((self.grid.len(), self.window_len));
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_len];
        for (row, kernel) in self.kernels.iter().enumerate() {
            for ((b, s), k) in buf.iter_mut().zip(&spectrum).zip(kernel) {
                *b = s * k;
            }
            self.inverse.process(&mut buf);
            for (dst, src) in coefficients.row_mut(row).iter_mut().zip(&buf) {
                *dst = src * scale;
            }
        }
        Ok(Scalogram { coefficients })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_bounds_follow_rotation_frequency() {
        let g = build_scale_grid(35.0, 25_000.0, 64, 0.81).unwrap();
        assert_relative_eq!(g.a_min(), 0.81 * 25_000.0 / 105.0, max_relative = 1e-12);
        assert_relative_eq!(g.a_max(), 0.81 * 25_000.0 / (35.0 / 3.0), max_relative = 1e-12);
        assert!((g.a_min() - 192.857).abs() < 1e-3);
        assert!((g.a_max() - 1735.714).abs() < 1e-3);
        let r = g.scales()[1] / g.scales()[0];
        for w in g.scales().windows(2) {
            assert!(w[1] > w[0]);
            assert_relative_eq!(w[1] / w[0], r, max_relative = 1e-9);
        }
        assert_relative_eq!(g.scale_to_freq(g.a_min()), g.f_max_hz(), max_relative = 1e-12);
        assert_relative_eq!(g.scale_to_freq(g.a_max()), g.f_min_hz(), max_relative = 1e-12);
    }

    #[test]
    fn two_scale_grid_is_the_endpoints() {
        let g = build_scale_grid(100.0, 25_600.0, 2, 0.81).unwrap();
        assert_eq!(g.scales(), &[0.81 * 25_600.0 / 300.0, 0.81 * 25_600.0 / (100.0 / 3.0)]);
    }

    #[test]
    fn grid_rejects_nyquist_violation() {
        let err = build_scale_grid(500.0, 2000.0, 8, 0.81).unwrap_err();
        assert!(err.to_string().contains("Nyquist"), "{err}");
        assert!(build_scale_grid(35.0, 2000.0, 1, 0.81).is_err());
        assert!(build_scale_grid(0.0, 2000.0, 8, 0.81).is_err());
    }

    #[test]
    fn morlet_values() {
        for phase in [MorletPhase::Conventional, MorletPhase::Literal] {
            assert_eq!(morlet(0.0, 0.81, phase), Complex64::new(1.0, 0.0));
            for fc in [0.2, 0.81, 5.0] {
                assert_relative_eq!(morlet(2.0, fc, phase).norm(), (-2.0f64).exp(), max_relative = 1e-12);
                let t = 1.37;
                let a = morlet(-t, fc, phase);
                let b = morlet(t, fc, phase).conj();
                assert_relative_eq!(a.re, b.re, max_relative = 1e-12);
                assert_relative_eq!(a.im, b.im, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn zero_window_gives_zero_scalogram() {
        let g = build_scale_grid(35.0, 2560.0, 8, 0.81).unwrap();
        let s = transform(&[0.0; 64], &g, MorletPhase::Conventional).unwrap();
        assert_eq!(s.coefficients.dim(), (8, 64));
        assert!(s.coefficients.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn short_window_is_rejected() {
        let g = build_scale_grid(35.0, 2560.0, 8, 0.81).unwrap();
        assert!(transform(&[1.0; 3], &g, MorletPhase::Conventional).is_err());
    }

    #[test]
    fn fft_backend_matches_direct_summation() {
        let g = build_scale_grid(35.0, 2560.0, 16, 0.81).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        for phase in [MorletPhase::Conventional, MorletPhase::Literal] {
            let direct = transform(&x, &g, phase).unwrap();
            let plan = CwtPlan::new(&g, x.len(), phase).unwrap();
            let fast = plan.transform(&x).unwrap();
            let peak = direct.coefficients.iter().map(|c| c.norm()).fold(0.0, f64::max);
            for (a, b) in direct.coefficients.iter().zip(fast.coefficients.iter()) {
                assert!((a - b).norm() <= 1e-9 * peak);
            }
        }
    }

    #[test]
    fn transform_is_linear() {
        let g = build_scale_grid(35.0, 2560.0, 8, 0.81).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let x: Vec<f64> = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let z: Vec<f64> = x.iter().zip(&y).map(|(x, y)| a * x + b * y).collect();
            let sx = transform(&x, &g, MorletPhase::Conventional).unwrap();
            let sy = transform(&y, &g, MorletPhase::Conventional).unwrap();
            let sz = transform(&z, &g, MorletPhase::Conventional).unwrap();
            let peak = sz.coefficients.iter().map(|c| c.norm()).fold(0.0, f64::max);
            for ((zx, xx), yy) in sz.coefficients.iter().zip(sx.coefficients.iter()).zip(sy.coefficients.iter()) {
                assert!((zx - (xx * a + yy * b)).norm() <= 1e-9 * peak);
            }
        }
    }

    #[test]
    fn time_shift_moves_columns() {
        // Small scales so interior columns exist.
        let g = build_scale_grid(100.0, 2560.0, 4, 0.81).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let long: Vec<f64> = (0..600).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = 400;
        let k = 17;
        let base = transform(&long[k..k + n], &g, MorletPhase::Conventional).unwrap();
        let shifted = transform(&long[..n], &g, MorletPhase::Conventional).unwrap();
        let radius = (SUPPORT_HALF_WIDTH * g.a_max()).floor() as usize;
        for row in 0..g.len() {
            for b in radius + k..n - radius {
                let a = shifted.coefficients[[row, b]];
                let c = base.coefficients[[row, b - k]];
                assert!((a - c).norm() <= 1e-6 * a.norm().max(1e-12));
            }
        }
    }

    #[test]
    fn sinusoid_peaks_near_its_scale() {
        let fs = 2560.0;
        let g = build_scale_grid(35.0, fs, 64, 0.81).unwrap();
        let f = 52.0;
        let x: Vec<f64> = (0..2048).map(|k| (2.0 * PI * f * k as f64 / fs).sin()).collect();
        let s = CwtPlan::new(&g, x.len(), MorletPhase::Conventional).unwrap().transform(&x).unwrap();
        let energies: Vec<f64> = s.coefficients.rows().into_iter().map(|r| r.iter().map(|c| c.norm_sqr()).sum()).collect();
        let best = energies
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &e)| if e > acc.1 { (i, e) } else { acc })
            .0;
        assert!((best as f64 - g.fractional_index(f)).abs() <= 1.0);
    }
}
