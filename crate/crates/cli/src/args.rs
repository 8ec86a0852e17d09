use std::path::PathBuf;

use carle_core::{LabelScheme, Normalization, Profile, Variant};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{ExperimentConfig, Source};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "carle", version, about = "Bearing remaining-useful-life experiments")]
pub struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic run-to-failure signal CSV.
    Synth(SynthArgs),
    /// Turn a raw-signal CSV into a feature CSV (and optionally labels).
    Extract(ExtractArgs),
    /// Train the network and forest; write checkpoint, metrics and history.
    Train(TrainArgs),
    /// Predict with a checkpoint.
    Predict(PredictArgs),
    /// Train all four variants under one seed and compare them.
    Ablate(TrainArgs),
    /// Evaluate a checkpoint on clean and noise-corrupted raw signals.
    Noise(EvalArgs),
    /// Evaluate a checkpoint on a target domain with and without alignment.
    Crossdomain(CrossDomainArgs),
    /// SNR of the smoothed signal against the removed residual per sigma.
    SnrSweep(SnrArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SchemeArg {
    Linear,
    Piecewise,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormArg {
    Global,
    Baseline,
}

/// Overrides shared by every subcommand. Flags beat the config file, which
/// beats built-in defaults.
#[derive(Debug, Default, Args)]
pub struct Common {
    /// TOML experiment config.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sample rate of raw-signal CSVs in Hz.
    #[arg(long)]
    pub sample_rate: Option<f64>,
    /// Shaft rotation frequency in Hz (synthesis and scale grid).
    #[arg(long)]
    pub rotation_hz: Option<f64>,
    #[arg(long)]
    pub window_len: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub sigma_g: Option<f64>,
    #[arg(long)]
    pub n_scales: Option<usize>,
    #[arg(long, value_enum)]
    pub label_scheme: Option<SchemeArg>,
    #[arg(long)]
    pub knee: Option<f64>,
    #[arg(long)]
    pub profile: Option<Profile>,
    #[arg(long, alias = "ablate")]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long, value_enum)]
    pub normalization: Option<NormArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Early-stopping patience in epochs.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub no_early_stopping: bool,
    #[arg(long)]
    pub trees: Option<usize>,
}

impl Common {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.sample_rate {
            c.data.sample_rate_hz = v;
            c.synth.sample_rate_hz = v;
        }
        if let Some(v) = self.rotation_hz {
            c.synth.rotation_hz = v;
            c.extraction.rotation_hz = v;
        }
        if let Some(v) = self.window_len {
            c.extraction.window_len = v;
        }
        if self.stride.is_some() {
            c.extraction.stride = self.stride;
        }
        if let Some(v) = self.sigma_g {
            c.extraction.sigma_g = v;
        }
        if let Some(v) = self.n_scales {
            c.extraction.n_scales = v;
        }
        if let Some(v) = self.label_scheme {
            c.labels.scheme = match v {
                SchemeArg::Linear => LabelScheme::Linear,
                SchemeArg::Piecewise => LabelScheme::Piecewise,
            };
        }
        if let Some(v) = self.knee {
            c.labels.knee_fraction = v;
        }
        if let Some(v) = self.profile {
            c.model.profile = v;
        }
        if let Some(v) = self.variant {
            c.model.variant = v;
        }
        if let Some(v) = self.seq_len {
            c.model.seq_len = v;
        }
        match self.normalization {
            Some(NormArg::Global) => c.model.normalization = Normalization::Global,
            Some(NormArg::Baseline) if !matches!(c.model.normalization, Normalization::Baseline { .. }) => {
                c.model.normalization = Normalization::default()
            }
            _ => {}
        }
        let t = &mut c.model.train;
        if let Some(v) = self.epochs {
            t.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            t.learning_rate = v;
        }
        if self.patience.is_some() {
            t.early_stopping_patience = self.patience;
        }
        if self.no_early_stopping {
            t.early_stopping_patience = None;
        }
        if let Some(v) = self.trees {
            c.model.forest.n_trees = v;
        }
        Ok(c)
    }
}

/// Pairs `--x PATH` with `--x-labels PATH`, either none or one per path.
fn sources(paths: &[PathBuf], labels: &[PathBuf], flag: &str) -> Result<Vec<Source>> {
    if !labels.is_empty() && labels.len() != paths.len() {
        return Err(CliError::usage(format!(
            "--{flag}-labels given {} times for {} --{flag} paths",
            labels.len(),
            paths.len()
        )));
    }
    Ok(paths
        .iter()
        .enumerate()
        .map(|(i, p)| Source {
            path: p.clone(),
            labels: labels.get(i).cloned(),
        })
        .collect())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(short, long, default_value = "synth.csv")]
    pub out: PathBuf,
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub channels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long, default_value = "features.csv")]
    pub out: PathBuf,
    /// Also write generated RUL labels here.
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training recording (raw-signal or feature CSV); repeatable.
    #[arg(long)]
    pub train: Vec<PathBuf>,
    #[arg(long)]
    pub train_labels: Vec<PathBuf>,
    #[arg(long)]
    pub validation: Vec<PathBuf>,
    #[arg(long)]
    pub validation_labels: Vec<PathBuf>,
    #[arg(long)]
    pub test: Vec<PathBuf>,
    #[arg(long)]
    pub test_labels: Vec<PathBuf>,
    #[arg(short, long, default_value = "carle-out")]
    pub out: PathBuf,
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = self.common.resolve()?;
        if !self.train.is_empty() {
            c.data.train = sources(&self.train, &self.train_labels, "train")?;
        }
        if !self.validation.is_empty() {
            c.data.validation = sources(&self.validation, &self.validation_labels, "validation")?;
        }
        if !self.test.is_empty() {
            c.data.test = sources(&self.test, &self.test_labels, "test")?;
        }
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Recording to predict (raw-signal or feature CSV); repeatable.
    #[arg(short, long, required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub input_labels: Vec<PathBuf>,
    #[arg(short, long, default_value = "carle-predict")]
    pub out: PathBuf,
}

impl PredictArgs {
    pub fn inputs(&self) -> Result<Vec<Source>> {
        sources(&self.input, &self.input_labels, "input")
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Raw-signal CSV; repeatable.
    #[arg(short, long, required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub input_labels: Vec<PathBuf>,
    #[arg(short, long, default_value = "carle-noise")]
    pub out: PathBuf,
}

impl EvalArgs {
    pub fn inputs(&self) -> Result<Vec<Source>> {
        sources(&self.input, &self.input_labels, "input")
    }
}

#[derive(Debug, Args)]
pub struct CrossDomainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Source-domain recordings the checkpoint was trained on; repeatable.
    #[arg(long, required = true)]
    pub source: Vec<PathBuf>,
    /// Target-domain recordings to evaluate; repeatable.
    #[arg(long, required = true)]
    pub target: Vec<PathBuf>,
    #[arg(long)]
    pub target_labels: Vec<PathBuf>,
    #[arg(long)]
    pub pca_components: Option<usize>,
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long)]
    pub logit_space: bool,
    #[arg(short, long, default_value = "carle-crossdomain")]
    pub out: PathBuf,
}

impl CrossDomainArgs {
    pub fn resolve(&self) -> Result<(ExperimentConfig, Vec<Source>, Vec<Source>)> {
        let mut c = self.common.resolve()?;
        if self.pca_components.is_some() {
            c.crossdomain.pca_components = self.pca_components;
        }
        if let Some(r) = self.ridge {
            c.crossdomain.ridge = r;
        }
        if self.logit_space {
            c.crossdomain.logit_space = true;
        }
        let source = sources(&self.source, &[], "source")?;
        let target = sources(&self.target, &self.target_labels, "target")?;
        Ok((c, source, target))
    }
}

#[derive(Debug, Args)]
pub struct SnrArgs {
    #[command(flatten)]
    pub common: Common,
    /// Raw-signal CSV; a synthetic signal is generated when omitted.
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    /// Comma-separated smoothing widths.
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Vec<f64>,
    #[arg(short, long, default_value = "snr.csv")]
    pub out: PathBuf,
}
