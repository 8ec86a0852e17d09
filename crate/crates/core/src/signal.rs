//! Multichannel vibration signals: smoothing, windowing, noise injection and
//! a synthetic run-to-failure generator.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equal-length per-channel sample sequences sharing one sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelSignal {
    channels: Vec<Vec<f64>>,
    sample_rate_hz: f64,
}

impl MultiChannelSignal {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::param(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        let Some(first) = channels.first() else {
            return Err(Error::input("signal has no channels"));
        };
        let len = first.len();
        if len == 0 {
            return Err(Error::input("signal has no samples"));
        }
        if let Some((i, c)) = channels.iter().enumerate().find(|(_, c)| c.len() != len) {
            return Err(Error::input(format!(
                "channel {} has {} samples, channel 1 has {len}",
                i + 1,
                c.len()
            )));
        }
        Ok(Self {
            channels,
            sample_rate_hz,
        })
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.channels[i]
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    fn map_channels(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Self {
        Self {
            channels: self.channels.iter().map(|c| f(c)).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// Reads `t,ch1,ch2,...` (a leading `t` column is dropped) or headerless
    /// numeric columns, every column then being a channel.
    pub fn read_csv<R: Read>(reader: R, sample_rate_hz: f64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut records = rdr.records();
        let mut columns: Vec<Vec<f64>> = Vec::new();
        let mut skip_first = false;
        let mut row_no = 0usize;

        let push_row = |record: &csv::StringRecord,
                            columns: &mut Vec<Vec<f64>>,
                            skip_first: bool,
                            row_no: usize|
         -> Result<()> {
            let fields: Vec<&str> = record.iter().skip(usize::from(skip_first)).collect();
            if columns.is_empty() {
                *columns = vec![Vec::new(); fields.len()];
            }
            if fields.len() != columns.len() {
                return Err(Error::input(format!(
                    "row {row_no}: expected {} channel columns, found {}",
                    columns.len(),
                    fields.len()
                )));
            }
            for (col, field) in columns.iter_mut().zip(fields) {
                let v: f64 = field.parse().map_err(|_| {
                    Error::input(format!("row {row_no}: non-numeric value {field:?}"))
                })?;
                col.push(v);
            }
            Ok(())
        };

        if let Some(first) = records.next() {
            let first = first?;
            row_no += 1;
            let is_header = first.iter().any(|f| f.parse::<f64>().is_err());
            if is_header {
                skip_first = first
                    .get(0)
                    .is_some_and(|h| h.eq_ignore_ascii_case("t") || h.eq_ignore_ascii_case("time"));
            } else {
                push_row(&first, &mut columns, false, row_no)?;
            }
        }
        for record in records {
            let record = record?;
            row_no += 1;
            push_row(&record, &mut columns, skip_first, row_no)?;
        }
        if columns.is_empty() {
            return Err(Error::input("signal CSV contains no channel columns"));
        }
        Self::new(columns, sample_rate_hz)
    }

    /// Writes the `t,ch1,...` layout accepted by [`MultiChannelSignal::read_csv`].
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.channel_count()).map(|i| format!("ch{i}")));
        w.write_record(&header)?;
        let dt = self.sample_period();
        let mut row = Vec::with_capacity(self.channel_count() + 1);
        for k in 0..self.len() {
            row.clear();
            row.push(format!("{}", k as f64 * dt));
            row.extend(self.channels.iter().map(|c| format!("{}", c[k])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Discrete Gaussian smoothing kernel truncated at ±4σ and renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    taps: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::param(format!(
                "gaussian sigma must be positive, got {sigma}"
            )));
        }
        let radius = (4.0 * sigma).ceil() as i64;
        let mut taps: Vec<f64> = (-radius..=radius)
            .map(|x| {
                let x = x as f64;
                (-x * x / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let total: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= total);
        Ok(Self { sigma, taps })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn radius(&self) -> usize {
        self.taps.len() / 2
    }

    /// Convolves one channel, reflecting about the half-sample boundary
    /// (`c b a | a b c | c b a`).
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len() as i64;
        let r = self.radius() as i64;
        let period = 2 * n;
        let reflect = |i: i64| -> usize {
            let m = i.rem_euclid(period);
            (if m < n { m } else { period - 1 - m }) as usize
        };
        (0..n)
            .map(|t| {
                self.taps
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w * x[reflect(t + j as i64 - r)])
                    .sum()
            })
            .collect()
    }
}

pub fn gaussian_filter(signal: &MultiChannelSignal, sigma: f64) -> Result<MultiChannelSignal> {
    let kernel = GaussianKernel::new(sigma)?;
    Ok(signal.map_channels(|c| kernel.apply(c)))
}

/// Reported SNR when the residual power is zero (unfiltered or constant signal).
pub const DEFAULT_SNR_CAP_DB: f64 = 120.0;

fn mean_power(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    sum / n as f64
}

/// SNR in dB of the filtered signal against the removed residual for each
/// smoothing width. A width of zero means no filtering.
pub fn snr_sweep(
    signal: &MultiChannelSignal,
    sigmas: &[f64],
    cap_db: f64,
) -> Result<Vec<(f64, f64)>> {
    if sigmas.is_empty() {
        return Err(Error::param("sigma sweep is empty"));
    }
    if sigmas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("sigma sweep must be strictly increasing"));
    }
    if sigmas[0] < 0.0 {
        return Err(Error::param("sigma sweep values must be non-negative"));
    }
    sigmas
        .iter()
        .map(|&sigma| {
            if sigma == 0.0 {
                return Ok((sigma, cap_db));
            }
            let filtered = gaussian_filter(signal, sigma)?;
            let p_sig = mean_power(filtered.channels.iter().flatten().copied());
            let p_res = mean_power(
                signal
                    .channels
                    .iter()
                    .flatten()
                    .zip(filtered.channels.iter().flatten())
                    .map(|(r, f)| r - f),
            );
            let snr = if p_res <= 0.0 {
                cap_db
            } else if p_sig <= 0.0 {
                -cap_db
            } else {
                (10.0 * (p_sig / p_res).log10()).min(cap_db)
            };
            Ok((sigma, snr))
        })
        .collect()
}

/// A rectangular segment of every channel.
#[derive(Debug, Clone)]
pub struct Window<'a> {
    pub start_index: usize,
    pub length: usize,
    pub samples: Vec<&'a [f64]>,
}

/// Number of windows `extract_windows` yields.
pub fn window_count(len: usize, window_len: usize, stride: usize) -> usize {
    if window_len == 0 || stride == 0 || window_len > len {
        0
    } else {
        (len - window_len) / stride + 1
    }
}

pub fn extract_windows(
    signal: &MultiChannelSignal,
    window_len: usize,
    stride: usize,
) -> Result<Vec<Window<'_>>> {
    if window_len == 0 || stride == 0 {
        return Err(Error::param("window length and stride must be positive"));
    }
    if window_len > signal.len() {
        return Err(Error::input(format!(
            "window length {window_len} exceeds signal length {}",
            signal.len()
        )));
    }
    Ok((0..window_count(signal.len(), window_len, stride))
        .map(|k| {
            let start = k * stride;
            Window {
                start_index: start,
                length: window_len,
                samples: signal
                    .channels
                    .iter()
                    .map(|c| &c[start..start + window_len])
                    .collect(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian { mean: f64, std: f64 },
    /// Replaces `fraction` of the points of each channel with an outlier
    /// `amplitude * range` below the channel minimum or above its maximum.
    SaltPepper { fraction: f64, amplitude: f64 },
}

impl NoiseKind {
    pub fn gaussian_default() -> Self {
        NoiseKind::Gaussian {
            mean: 0.0,
            std: 0.1,
        }
    }

    pub fn salt_pepper_default() -> Self {
        NoiseKind::SaltPepper {
            fraction: 0.1,
            amplitude: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseKind::Gaussian { mean, std } => {
                if !mean.is_finite() || !(std >= 0.0 && std.is_finite()) {
                    return Err(Error::param(format!(
                        "gaussian noise needs finite mean and std >= 0, got ({mean}, {std})"
                    )));
                }
            }
            NoiseKind::SaltPepper {
                fraction,
                amplitude,
            } => {
                if !(0.0..=1.0).contains(&fraction) {
                    return Err(Error::param(format!(
                        "salt-and-pepper fraction must lie in [0, 1], got {fraction}"
                    )));
                }
                if !(amplitude > 0.0 && amplitude.is_finite()) {
                    return Err(Error::param(format!(
                        "salt-and-pepper amplitude must be positive, got {amplitude}"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn inject_noise(
    signal: &MultiChannelSignal,
    kind: NoiseKind,
    seed: u64,
) -> Result<MultiChannelSignal> {
    kind.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = match kind {
        NoiseKind::Gaussian { mean, std } => {
            if std == 0.0 {
                signal.map_channels(|c| c.iter().map(|x| x + mean).collect())
            } else {
                let normal = Normal::new(mean, std).expect("validated std");
                signal.map_channels(|c| c.iter().map(|x| x + normal.sample(&mut rng)).collect())
            }
        }
        NoiseKind::SaltPepper {
            fraction,
            amplitude,
        } => signal.map_channels(|c| {
            let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let range = hi - lo;
            let count = (fraction * c.len() as f64).round() as usize;
            let mut out = c.to_vec();
            for i in index::sample(&mut rng, c.len(), count.min(c.len())) {
                out[i] = if rng.random_bool(0.5) {
                    lo - amplitude * range
                } else {
                    hi + amplitude * range
                };
            }
            out
        }),
    };
    Ok(out)
}

/// Degradation profile for [`synth_run_to_failure`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub rotation_hz: f64,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    pub channels: usize,
    /// Fraction of life at which the fault starts to grow.
    pub onset_fraction: f64,
    /// Exponential growth rate of fault severity after onset; 0 disables degradation.
    pub growth_rate: f64,
    /// Amplitudes of the 1x, 2x, 3x... shaft harmonics in the healthy state.
    pub harmonics: Vec<f64>,
    /// Fault impact repetition rate as a multiple of the rotation frequency.
    pub fault_order: f64,
    pub resonance_hz: f64,
    pub burst_amplitude: f64,
    pub burst_decay_s: f64,
    pub noise_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::desk(35.0)
    }
}

impl SynthConfig {
    /// Desk-scale profile: low sample rate so the full pipeline runs in seconds.
    pub fn desk(rotation_hz: f64) -> Self {
        Self {
            rotation_hz,
            sample_rate_hz: 2560.0,
            duration_s: 48.0,
            channels: 2,
            onset_fraction: 0.5,
            growth_rate: 3.0,
            harmonics: vec![1.0, 0.4, 0.2],
            fault_order: 2.3,
            resonance_hz: 900.0,
            burst_amplitude: 3.0,
            burst_decay_s: 0.004,
            noise_std: 0.2,
        }
    }

    /// XJTU-SY style condition: 25 kHz sampling.
    pub fn xjtu(rotation_hz: f64) -> Self {
        Self {
            sample_rate_hz: 25_000.0,
            resonance_hz: 3_000.0,
            burst_decay_s: 0.001,
            ..Self::desk(rotation_hz)
        }
    }

    /// PRONOSTIA style condition: 25.6 kHz sampling, 100 Hz shaft.
    pub fn pronostia() -> Self {
        Self {
            sample_rate_hz: 25_600.0,
            resonance_hz: 3_000.0,
            burst_decay_s: 0.001,
            ..Self::desk(100.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must be positive, got {v}")))
            }
        };
        positive("rotation_hz", self.rotation_hz)?;
        positive("sample_rate_hz", self.sample_rate_hz)?;
        positive("duration_s", self.duration_s)?;
        positive("burst_decay_s", self.burst_decay_s)?;
        positive("fault_order", self.fault_order)?;
        if self.channels == 0 {
            return Err(Error::param("channel count must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.onset_fraction) {
            return Err(Error::param("onset_fraction must lie in [0, 1)"));
        }
        if !(self.growth_rate >= 0.0) || !(self.noise_std >= 0.0) {
            return Err(Error::param("growth_rate and noise_std must be non-negative"));
        }
        if self.resonance_hz >= self.sample_rate_hz / 2.0 {
            return Err(Error::param("resonance_hz must be below Nyquist"));
        }
        Ok(())
    }

    /// Fault severity in [0, 1] at life fraction `u`.
    pub fn severity(&self, u: f64) -> f64 {
        if self.growth_rate == 0.0 || u < self.onset_fraction {
            return 0.0;
        }
        let v = ((u - self.onset_fraction) / (1.0 - self.onset_fraction)).min(1.0);
        ((self.growth_rate * v).exp() - 1.0) / (self.growth_rate.exp() - 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMetadata {
    pub config: SynthConfig,
    pub seed: u64,
    pub samples: usize,
    pub onset_time_s: f64,
    pub failure_time_s: f64,
}

/// Shaft harmonics plus resonance bursts at the fault rate whose amplitude and
/// occurrence probability follow the severity curve, plus stationary noise.
pub fn synth_run_to_failure(
    config: &SynthConfig,
    seed: u64,
) -> Result<(MultiChannelSignal, SynthMetadata)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (config.duration_s * config.sample_rate_hz).round() as usize;
    if n == 0 {
        return Err(Error::param("duration too short for one sample"));
    }
    let dt = 1.0 / config.sample_rate_hz;
    let noise = Normal::new(0.0, config.noise_std.max(f64::MIN_POSITIVE)).expect("finite std");
    let fault_period = 1.0 / (config.fault_order * config.rotation_hz);
    let burst_len = ((8.0 * config.burst_decay_s) / dt).ceil() as usize;

    let mut channels = Vec::with_capacity(config.channels);
    for _ in 0..config.channels {
        let phases: Vec<f64> = config
            .harmonics
            .iter()
            .map(|_| rng.random_range(0.0..2.0 * PI))
            .collect();
        let mut x: Vec<f64> = (0..n)
            .map(|k| {
                let t = k as f64 * dt;
                let s = config.severity(t / config.duration_s);
                let tonal: f64 = config
                    .harmonics
                    .iter()
                    .zip(&phases)
                    .enumerate()
                    .map(|(h, (a, p))| {
                        a * (1.0 + 2.0 * s) * (2.0 * PI * (h + 1) as f64 * config.rotation_hz * t + p).sin()
                    })
                    .sum();
                let eps = if config.noise_std > 0.0 {
                    noise.sample(&mut rng) * (1.0 + s)
                } else {
                    0.0
                };
                tonal + eps
            })
            .collect();

        let mut t_impact = rng.random_range(0.0..fault_period);
        while t_impact < config.duration_s {
            let s = config.severity(t_impact / config.duration_s);
            if s > 0.0 && rng.random_bool(s.clamp(0.0, 1.0)) {
                let amp = config.burst_amplitude * s * rng.random_range(0.7..1.3);
                let k0 = (t_impact / dt).ceil() as usize;
                for k in k0..(k0 + burst_len).min(n) {
                    let tau = k as f64 * dt - t_impact;
                    x[k] += amp
                        * (-tau / config.burst_decay_s).exp()
                        * (2.0 * PI * config.resonance_hz * tau).sin();
                }
            }
            t_impact += fault_period * rng.random_range(0.98..1.02);
        }
        channels.push(x);
    }

    let signal = MultiChannelSignal::new(channels, config.sample_rate_hz)?;
    let meta = SynthMetadata {
        config: config.clone(),
        seed,
        samples: n,
        onset_time_s: config.onset_fraction * config.duration_s,
        failure_time_s: config.duration_s,
    };
    Ok((signal, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single(x: Vec<f64>) -> MultiChannelSignal {
        MultiChannelSignal::new(vec![x], 1000.0).unwrap()
    }

    fn variance(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
    }

    #[test]
    fn rejects_ragged_and_empty_signals() {
        assert!(MultiChannelSignal::new(vec![vec![1.0, 2.0], vec![1.0]], 10.0).is_err());
        assert!(MultiChannelSignal::new(vec![vec![]], 10.0).is_err());
        assert!(MultiChannelSignal::new(vec![], 10.0).is_err());
        assert!(MultiChannelSignal::new(vec![vec![1.0]], 0.0).is_err());
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        for i in 1..=100 {
            let sigma = 0.1 * i as f64;
            let k = GaussianKernel::new(sigma).unwrap();
            assert!((k.taps().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let t = k.taps();
            assert_eq!(t.len() % 2, 1);
            for j in 0..t.len() / 2 {
                assert_eq!(t[j], t[t.len() - 1 - j]);
            }
        }
    }

    #[test]
    fn filter_rejects_bad_sigma() {
        let s = single(vec![1.0; 8]);
        assert!(matches!(gaussian_filter(&s, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(gaussian_filter(&s, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn constant_signal_is_preserved() {
        let s = single(vec![3.25; 50]);
        for sigma in [0.3, 1.0, 7.5, 40.0] {
            let f = gaussian_filter(&s, sigma).unwrap();
            for v in f.channel(0) {
                assert_relative_eq!(*v, 3.25, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn impulse_response_is_the_kernel() {
        let mut x = vec![0.0; 41];
        x[20] = 1.0;
        let f = gaussian_filter(&single(x), 1.0).unwrap();
        let center = 1.0 / (2.0 * PI).sqrt();
        assert!((f.channel(0)[20] - center).abs() < 1e-5);
        let k = GaussianKernel::new(1.0).unwrap();
        for (j, w) in k.taps().iter().enumerate() {
            assert_eq!(f.channel(0)[20 - 4 + j], *w);
        }
    }

    #[test]
    fn white_noise_variance_drops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..5000).map(|_| normal.sample(&mut rng)).collect();
        let f = gaussian_filter(&single(x.clone()), 2.0).unwrap();
        assert!(variance(f.channel(0)) < variance(&x));
    }

    #[test]
    fn window_counts() {
        let s = single(vec![0.0; 100]);
        assert_eq!(extract_windows(&s, 25, 25).unwrap().len(), 4);
        assert_eq!(extract_windows(&s, 30, 30).unwrap().len(), 3);
        assert_eq!(extract_windows(&s, 25, 10).unwrap().len(), 8);
        assert!(matches!(extract_windows(&s, 101, 1), Err(Error::Input(_))));
        let w = extract_windows(&s, 30, 30).unwrap();
        assert_eq!(w[2].start_index, 60);
        assert!(w.iter().all(|w| w.start_index + w.length <= 100));
    }

    #[test]
    fn snr_of_constant_signal_is_capped() {
        let s = single(vec![2.0; 200]);
        let sweep = snr_sweep(&s, &[0.0, 0.5, 1.0, 2.0], DEFAULT_SNR_CAP_DB).unwrap();
        assert!(sweep.iter().all(|(_, snr)| *snr == DEFAULT_SNR_CAP_DB));
    }

    #[test]
    fn snr_sweep_validates_sigmas() {
        let s = single(vec![1.0, 2.0, 3.0]);
        assert!(snr_sweep(&s, &[], 120.0).is_err());
        assert!(snr_sweep(&s, &[1.0, 1.0], 120.0).is_err());
        assert!(snr_sweep(&s, &[2.0, 1.0], 120.0).is_err());
    }

    #[test]
    fn snr_declines_with_smoothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0, 0.3).unwrap();
        let x: Vec<f64> = (0..4000)
            .map(|k| (2.0 * PI * 5.0 * k as f64 / 1000.0).sin() + normal.sample(&mut rng))
            .collect();
        let sigmas: Vec<f64> = (1..=8).map(|i| 0.25 * i as f64).collect();
        let sweep = snr_sweep(&single(x), &sigmas, 120.0).unwrap();
        for w in sweep.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-12, "{sweep:?}");
        }
    }

    #[test]
    fn gaussian_noise_with_zero_std_is_identity() {
        let s = single((0..100).map(|k| k as f64).collect());
        let out = inject_noise(&s, NoiseKind::Gaussian { mean: 0.0, std: 0.0 }, 1).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn gaussian_noise_adds_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..100_000).map(|_| normal.sample(&mut rng)).collect();
        let v0 = variance(&x);
        let out = inject_noise(&single(x), NoiseKind::gaussian_default(), 5).unwrap();
        let v1 = variance(out.channel(0));
        // Normalize by the realized input variance; the increment is 0.01.
        assert!((v1 / v0 - 1.01).abs() < 0.005, "{v0} {v1}");
    }

    #[test]
    fn salt_pepper_replaces_exact_count() {
        let s = single((0..10_000).map(|k| (k as f64 * 0.01).sin()).collect());
        let out = inject_noise(&s, NoiseKind::salt_pepper_default(), 9).unwrap();
        let changed = s
            .channel(0)
            .iter()
            .zip(out.channel(0))
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(changed, 1000);
        let bad = NoiseKind::SaltPepper {
            fraction: 1.5,
            amplitude: 0.5,
        };
        assert!(matches!(inject_noise(&s, bad, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn noise_is_seed_reproducible() {
        let s = single((0..1000).map(|k| k as f64).collect());
        for kind in [NoiseKind::gaussian_default(), NoiseKind::salt_pepper_default()] {
            let a = inject_noise(&s, kind, 42).unwrap();
            let b = inject_noise(&s, kind, 42).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn synth_validates_config() {
        let mut c = SynthConfig::desk(35.0);
        c.duration_s = 0.0;
        assert!(synth_run_to_failure(&c, 0).is_err());
        let mut c = SynthConfig::desk(35.0);
        c.rotation_hz = -1.0;
        assert!(synth_run_to_failure(&c, 0).is_err());
    }

    #[test]
    fn synth_energy_grows_after_onset() {
        let cfg = SynthConfig {
            duration_s: 10.0,
            ..SynthConfig::desk(35.0)
        };
        let (sig, meta) = synth_run_to_failure(&cfg, 1).unwrap();
        assert_eq!(meta.failure_time_s, 10.0);
        let x = sig.channel(0);
        let decile = x.len() / 10;
        let energy = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>();
        assert!(energy(&x[x.len() - decile..]) > energy(&x[..decile]));
    }

    #[test]
    fn xjtu_profile_uses_25khz() {
        let c = SynthConfig::xjtu(35.0);
        assert_eq!(c.sample_rate_hz, 25_000.0);
        assert_eq!(c.rotation_hz, 35.0);
        c.validate().unwrap();
    }

    #[test]
    fn csv_round_trip_with_and_without_header() {
        let s = MultiChannelSignal::new(vec![vec![0.5, -1.25, 3.0], vec![1.0, 2.0, 4.0]], 4.0).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = MultiChannelSignal::read_csv(buf.as_slice(), 4.0).unwrap();
        assert_eq!(back, s);
        let raw = "1,2\n3,4\n5,6\n";
        let h = MultiChannelSignal::read_csv(raw.as_bytes(), 1.0).unwrap();
        assert_eq!(h.channel_count(), 2);
        assert_eq!(h.channel(1), &[2.0, 4.0, 6.0]);
        assert!(MultiChannelSignal::read_csv("a,b\n1,x\n".as_bytes(), 1.0).is_err());
    }
}
