//! The seven time-frequency features per window and channel, and the
//! per-window feature vectors built from them.

use std::io::{Read, Write};

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cwt::{self, CwtBackend, CwtPlan, MorletPhase, ScaleGrid, Scalogram};
use crate::error::{Error, Result};
use crate::signal::{self, MultiChannelSignal};

/// Per-channel feature order inside a feature vector.
pub const FEATURE_NAMES: [&str; 7] = [
    "log_energy",
    "dominant_freq",
    "entropy",
    "kurtosis",
    "skewness",
    "mean",
    "std",
];

pub const FEATURES_PER_CHANNEL: usize = FEATURE_NAMES.len();

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TfrFeatures {
    pub log_energy: f64,
    pub dominant_freq_hz: f64,
    pub entropy: f64,
    pub kurtosis: f64,
    pub skewness: f64,
    pub mean: f64,
    pub std: f64,
}

impl TfrFeatures {
    pub fn to_array(&self) -> [f64; 7] {
        [
            self.log_energy,
            self.dominant_freq_hz,
            self.entropy,
            self.kurtosis,
            self.skewness,
            self.mean,
            self.std,
        ]
    }
}

/// Concatenated per-channel features for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub window_index: usize,
    pub values: Vec<f64>,
}

/// Column labels `ch1.log_energy, ..., chN.std`: channels outer, features inner.
pub fn feature_names(channels: usize) -> Vec<String> {
    (1..=channels)
        .flat_map(|c| FEATURE_NAMES.iter().map(move |f| format!("ch{c}.{f}")))
        .collect()
}

/// Per-scale energies `Σ_b |Γ(a,b)|²` and their total.
pub fn energy(scalogram: &Scalogram) -> (Vec<f64>, f64) {
    let per_scale: Vec<f64> = scalogram
        .coefficients
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|c| c.norm_sqr()).sum())
        .collect();
    let total = per_scale.iter().sum();
    (per_scale, total)
}

/// Frequency of the most energetic scale; ties go to the smaller scale.
pub fn dominant_frequency(scale_energies: &[f64], grid: &ScaleGrid) -> Result<f64> {
    if scale_energies.len() != grid.len() {
        return Err(Error::shape(
            "scale energies",
            grid.len(),
            scale_energies.len(),
        ));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, &e) in scale_energies.iter().enumerate() {
        if e > 0.0 && best.is_none_or(|(_, b)| e > b) {
            best = Some((i, e));
        }
    }
    let (i, _) = best.ok_or_else(|| Error::degenerate("all scale energies are zero"))?;
    Ok(grid.scale_to_freq(grid.scales()[i]))
}

/// Shannon entropy (nats) of the normalized scale-energy distribution.
pub fn entropy(scale_energies: &[f64]) -> Result<f64> {
    let total: f64 = scale_energies.iter().sum();
    if !(total > 0.0) {
        return Err(Error::degenerate("zero total energy"));
    }
    let h: f64 = scale_energies
        .iter()
        .filter(|&&e| e > 0.0)
        .map(|&e| {
            let p = e / total;
            -p * p.ln()
        })
        .sum();
    Ok(h.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    /// Pearson (non-excess) kurtosis.
    pub kurtosis: f64,
}

/// Population moments of a window.
pub fn moments(samples: &[f64]) -> Result<Moments> {
    if samples.len() < 4 {
        return Err(Error::input(format!(
            "moments need at least 4 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let (m2, m3, m4) = samples.iter().fold((0.0, 0.0, 0.0), |(m2, m3, m4), &x| {
        let d = x - mean;
        let d2 = d * d;
        (m2 + d2, m3 + d2 * d, m4 + d2 * d2)
    });
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let std = m2.sqrt();
    // Relative threshold so constant windows with rounding noise still count.
    if std == 0.0 || std <= 1e-12 * mean.abs() {
        return Err(Error::degenerate("zero standard deviation"));
    }
    Ok(Moments {
        mean,
        std,
        skewness: m3 / (m2 * std),
        kurtosis: m4 / (m2 * m2),
    })
}

/// All seven features of one channel window.
pub fn window_features(
    samples: &[f64],
    scalogram: &Scalogram,
    grid: &ScaleGrid,
) -> Result<TfrFeatures> {
    let (per_scale, total) = energy(scalogram);
    if !(total > 0.0) {
        return Err(Error::degenerate("zero wavelet energy"));
    }
    let m = moments(samples)?;
    Ok(TfrFeatures {
        log_energy: total.ln(),
        dominant_freq_hz: dominant_frequency(&per_scale, grid)?,
        entropy: entropy(&per_scale)?,
        kurtosis: m.kurtosis,
        skewness: m.skewness,
        mean: m.mean,
        std: m.std,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegeneratePolicy {
    /// Fail with the window index attached.
    #[default]
    Error,
    /// Drop the window and log a warning.
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    /// Gaussian smoothing width in samples.
    pub sigma_g: f64,
    pub window_len: usize,
    /// Defaults to `window_len` (non-overlapping windows).
    pub stride: Option<usize>,
    pub rotation_hz: f64,
    pub n_scales: usize,
    pub center_freq: f64,
    pub phase: MorletPhase,
    pub backend: CwtBackend,
    pub on_degenerate: DegeneratePolicy,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            sigma_g: 0.75,
            window_len: 1024,
            stride: None,
            rotation_hz: 35.0,
            n_scales: cwt::DEFAULT_N_SCALES,
            center_freq: cwt::DEFAULT_CENTER_FREQ,
            phase: MorletPhase::default(),
            backend: CwtBackend::default(),
            on_degenerate: DegeneratePolicy::default(),
        }
    }
}

impl ExtractionConfig {
    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.window_len)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_g > 0.0 && self.sigma_g.is_finite()) {
            return Err(Error::param(format!("sigma_g must be positive, got {}", self.sigma_g)));
        }
        if self.window_len < 4 {
            return Err(Error::param("window_len must be at least 4"));
        }
        if self.stride() == 0 {
            return Err(Error::param("stride must be positive"));
        }
        if self.n_scales < 2 {
            return Err(Error::param("n_scales must be at least 2"));
        }
        if !(self.rotation_hz > 0.0) || !(self.center_freq > 0.0) {
            return Err(Error::param("rotation_hz and center_freq must be positive"));
        }
        Ok(())
    }
}

/// Feature vectors of one recording plus the bookkeeping needed to align
/// labels when windows were skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub vectors: Vec<FeatureVector>,
    pub total_windows: usize,
    pub skipped: Vec<usize>,
}

/// Smooth, window, transform and summarize every channel.
pub fn extract_features(signal: &MultiChannelSignal, config: &ExtractionConfig) -> Result<Extraction> {
    config.validate()?;
    let grid = cwt::build_scale_grid(
        config.rotation_hz,
        signal.sample_rate_hz(),
        config.n_scales,
        config.center_freq,
    )?;
    let filtered = signal::gaussian_filter(signal, config.sigma_g)?;
    let windows = signal::extract_windows(&filtered, config.window_len, config.stride())?;
    let plan = match config.backend {
        CwtBackend::Fft => Some(CwtPlan::new(&grid, config.window_len, config.phase)?),
        CwtBackend::Direct => None,
    };

    let mut vectors = Vec::with_capacity(windows.len());
    let mut skipped = Vec::new();
    for (index, window) in windows.iter().enumerate() {
        let features: Result<Vec<f64>> = window
            .samples
            .iter()
            .map(|samples| {
                let scalogram = match &plan {
                    Some(plan) => plan.transform(samples)?,
                    None => cwt::transform(samples, &grid, config.phase)?,
                };
                window_features(samples, &scalogram, &grid)
            })
            .try_fold(Vec::with_capacity(FEATURES_PER_CHANNEL * window.samples.len()), |mut acc, f| {
                acc.extend(f?.to_array());
                Ok(acc)
            });
        match features {
            Ok(values) => vectors.push(FeatureVector {
                window_index: index,
                values,
            }),
            Err(e @ Error::DegenerateWindow { .. }) => match config.on_degenerate {
                DegeneratePolicy::Error => return Err(e.at_window(index)),
                DegeneratePolicy::Skip => {
                    warn!("skipping window {index}: {e}");
                    skipped.push(index);
                }
            },
            Err(e) => return Err(e),
        }
    }
    Ok(Extraction {
        vectors,
        total_windows: windows.len(),
        skipped,
    })
}

/// Rows of feature vectors with their column labels; the on-disk training input.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub window_index: Vec<usize>,
    pub values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn from_vectors(channels: usize, vectors: &[FeatureVector]) -> Result<Self> {
        let width = FEATURES_PER_CHANNEL * channels;
        let mut values = Array2::zeros((vectors.len(), width));
        for (mut row, v) in values.rows_mut().into_iter().zip(vectors) {
            if v.values.len() != width {
                return Err(Error::shape("feature vector", width, v.values.len()));
            }
            row.iter_mut().zip(&v.values).for_each(|(d, s)| *d = *s);
        }
        Ok(Self {
            names: feature_names(channels),
            window_index: vectors.iter().map(|v| v.window_index).collect(),
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn write_csv<W: Write>(&self, mut writer: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(writer, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["window_index".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (idx, row) in self.window_index.iter().zip(self.values.rows()) {
            let mut rec = vec![idx.to_string()];
            rec.extend(row.iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("window_index") {
            return Err(Error::input("feature CSV must start with a window_index column"));
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        if names.is_empty() || names.len() % FEATURES_PER_CHANNEL != 0 {
            return Err(Error::input(format!(
                "feature CSV has {} feature columns, expected a positive multiple of {FEATURES_PER_CHANNEL}",
                names.len()
            )));
        }
        let mut window_index = Vec::new();
        let mut data = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != names.len() + 1 {
                return Err(Error::input(format!("feature CSV row {}: wrong column count", row + 1)));
            }
            let parse_err = |f: &str| Error::input(format!("feature CSV row {}: bad value {f:?}", row + 1));
            window_index.push(record[0].parse().map_err(|_| parse_err(&record[0]))?);
            for f in record.iter().skip(1) {
                data.push(f.parse::<f64>().map_err(|_| parse_err(f))?);
            }
        }
        let values = Array2::from_shape_vec((window_index.len(), names.len()), data)
            .map_err(|e| Error::input(e.to_string()))?;
        Ok(Self {
            names,
            window_index,
            values,
        })
    }
}
