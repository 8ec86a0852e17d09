//! Experiment configuration: one TOML file with nested sections, every field
//! optional. Flags are applied on top by the argument layer.

use std::path::{Path, PathBuf};

use carle_core::labels::DEFAULT_KNEE_FRACTION;
use carle_core::{ExtractionConfig, LabelScheme, ModelConfig, NoiseKind, SynthConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// A recording on disk: raw-signal CSV or feature CSV, with an optional
/// label CSV. In TOML either a bare path string or `{ path, labels }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "SourceRepr")]
pub struct Source {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SourceRepr {
    Path(PathBuf),
    Full {
        path: PathBuf,
        #[serde(default)]
        labels: Option<PathBuf>,
    },
}

impl From<SourceRepr> for Source {
    fn from(r: SourceRepr) -> Self {
        match r {
            SourceRepr::Path(path) => Source { path, labels: None },
            SourceRepr::Full { path, labels } => Source { path, labels },
        }
    }
}

impl Source {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Source {
            path: path.into(),
            labels: None,
        }
    }

    /// File stem, used to name per-recording outputs.
    pub fn name(&self) -> String {
        self.path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "recording".to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Sample rate of raw-signal CSVs; never inferred from the file.
    pub sample_rate_hz: f64,
    pub train: Vec<Source>,
    pub validation: Vec<Source>,
    pub test: Vec<Source>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: SynthConfig::default().sample_rate_hz,
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    pub scheme: LabelScheme,
    pub knee_fraction: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            scheme: LabelScheme::Linear,
            knee_fraction: DEFAULT_KNEE_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Perturbations evaluated next to the clean input.
    pub conditions: Vec<NoiseKind>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            conditions: vec![NoiseKind::gaussian_default(), NoiseKind::salt_pepper_default()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnrConfig {
    pub sigmas: Vec<f64>,
    pub cap_db: f64,
}

impl Default for SnrConfig {
    fn default() -> Self {
        Self {
            sigmas: (1..=8).map(|i| 0.25 * i as f64).collect(),
            cap_db: 120.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossDomainConfig {
    /// Align inside the top principal components only; `None` aligns the
    /// full space.
    pub pca_components: Option<usize>,
    pub ridge: f64,
    /// Align the network's logit vectors instead of the input features.
    pub logit_space: bool,
}

impl Default for CrossDomainConfig {
    fn default() -> Self {
        Self {
            pca_components: None,
            ridge: 1e-6,
            logit_space: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; every subsystem derives its own stream from it.
    pub seed: u64,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub extraction: ExtractionConfig,
    pub labels: LabelConfig,
    pub model: ModelConfig,
    pub noise: NoiseConfig,
    pub snr: SnrConfig,
    pub crossdomain: CrossDomainConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Range checks for every numeric parameter, run before any compute.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if !(d.sample_rate_hz > 0.0 && d.sample_rate_hz.is_finite()) {
            return Err(CliError::usage(format!(
                "data.sample_rate_hz must be positive, got {}",
                d.sample_rate_hz
            )));
        }
        for s in d.train.iter().chain(&d.validation).chain(&d.test) {
            if s.path.as_os_str().is_empty() {
                return Err(CliError::usage("empty data path"));
            }
        }
        self.synth.validate()?;
        self.extraction.validate()?;
        if !(self.labels.knee_fraction > 0.0 && self.labels.knee_fraction < 1.0) {
            return Err(CliError::usage(format!(
                "labels.knee_fraction must lie in (0, 1), got {}",
                self.labels.knee_fraction
            )));
        }
        self.model.validate()?;
        for n in &self.noise.conditions {
            n.validate()?;
        }
        if self.snr.sigmas.is_empty() || self.snr.sigmas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::usage("snr.sigmas must be a non-empty increasing list"));
        }
        if self.snr.sigmas[0] < 0.0 || !(self.snr.cap_db > 0.0) {
            return Err(CliError::usage("snr.sigmas must be non-negative and snr.cap_db positive"));
        }
        if !(self.crossdomain.ridge >= 0.0 && self.crossdomain.ridge.is_finite()) {
            return Err(CliError::usage("crossdomain.ridge must be non-negative"));
        }
        if self.crossdomain.pca_components == Some(0) {
            return Err(CliError::usage("crossdomain.pca_components must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use carle_core::Variant;

    #[test]
    fn empty_file_is_default() {
        let c = ExperimentConfig::from_toml("", Path::new("x.toml")).unwrap();
        assert_eq!(c, ExperimentConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn nested_sections_and_sources() {
        let text = r#"
            seed = 7
            [data]
            sample_rate_hz = 25600.0
            train = ["a.csv", { path = "b.csv", labels = "b_rul.csv" }]
            [model]
            variant = "crle"
            [model.train]
            max_epochs = 3
            [extraction]
            rotation_hz = 40.0
        "#;
        let c = ExperimentConfig::from_toml(text, Path::new("x.toml")).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.data.train[0], Source::new("a.csv"));
        assert_eq!(c.data.train[1].labels.as_deref(), Some(Path::new("b_rul.csv")));
        assert_eq!(c.model.variant, Variant::Crle);
        assert_eq!(c.model.train.max_epochs, 3);
        assert_eq!(c.model.train.batch_size, 32);
        assert_eq!(c.extraction.rotation_hz, 40.0);
    }

    #[test]
    fn unknown_top_level_key_is_rejected() {
        assert!(ExperimentConfig::from_toml("sed = 3", Path::new("x.toml")).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = ExperimentConfig::default();
        c.data.test.push(Source::new("t.csv"));
        c.crossdomain.pca_components = Some(4);
        let back = ExperimentConfig::from_toml(&c.to_toml(), Path::new("x.toml")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn validation_rejects_bad_ranges() {
        let mut c = ExperimentConfig::default();
        c.labels.knee_fraction = 1.0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.extraction.sigma_g = -1.0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.snr.sigmas = vec![1.0, 0.5];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.model.train.batch_size = 0;
        assert!(c.validate().is_err());
    }
}
