//! Loading recordings from raw-signal or feature CSVs and attaching labels.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use carle_core::features::extract_features;
use carle_core::labels::{make_labels, read_labels_csv};
use carle_core::{FeatureMatrix, MultiChannelSignal, Recording};

use crate::config::{ExperimentConfig, Source};
use crate::error::{CliError, Result};

/// One recording ready for the model.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub window_index: Vec<usize>,
    pub recording: Recording,
}

impl Dataset {
    pub fn labels(&self) -> &[f64] {
        &self.recording.labels
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

/// Feature CSVs start with a `window_index` header column.
pub fn is_feature_csv(path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .ok_or_else(|| CliError::usage(format!("{} is empty", path.display())))?;
    Ok(first.split(',').next().map(str::trim) == Some("window_index"))
}

pub fn read_signal(path: &Path, sample_rate_hz: f64) -> Result<MultiChannelSignal> {
    MultiChannelSignal::read_csv(open(path)?, sample_rate_hz)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

/// Features of a raw signal plus the number of windows before any were
/// skipped as degenerate.
pub fn featurize(signal: &MultiChannelSignal, cfg: &ExperimentConfig) -> Result<(FeatureMatrix, usize)> {
    let ex = extract_features(signal, &cfg.extraction)?;
    let fm = FeatureMatrix::from_vectors(signal.channel_count(), &ex.vectors)?;
    Ok((fm, ex.total_windows))
}

/// Labels for the kept windows: from the label file when given (one value
/// per kept row or per original window), otherwise generated over the full
/// run-to-failure span.
pub fn labels_for(
    window_index: &[usize],
    total_windows: usize,
    labels_path: Option<&Path>,
    cfg: &ExperimentConfig,
) -> Result<Vec<f64>> {
    let all = match labels_path {
        Some(p) => {
            let v = read_labels_csv(open(p)?).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
            if v.len() == window_index.len() {
                return Ok(v);
            }
            if v.len() != total_windows {
                return Err(CliError::usage(format!(
                    "{}: {} labels for {} windows",
                    p.display(),
                    v.len(),
                    window_index.len()
                )));
            }
            v
        }
        None => make_labels(total_windows, cfg.labels.scheme, cfg.labels.knee_fraction)?.values,
    };
    Ok(window_index.iter().map(|&i| all[i]).collect())
}

pub fn from_features(name: String, fm: FeatureMatrix, total: usize, labels: Option<&Path>, cfg: &ExperimentConfig) -> Result<Dataset> {
    let y = labels_for(&fm.window_index, total, labels, cfg)?;
    Ok(Dataset {
        name,
        recording: Recording::new(fm.values, y)?,
        window_index: fm.window_index,
    })
}

pub fn load(src: &Source, cfg: &ExperimentConfig) -> Result<Dataset> {
    let (fm, total) = if is_feature_csv(&src.path)? {
        let fm = FeatureMatrix::read_csv(open(&src.path)?)
            .map_err(|e| CliError::usage(format!("{}: {e}", src.path.display())))?;
        let total = fm.window_index.iter().max().map_or(0, |m| m + 1);
        (fm, total)
    } else {
        featurize(&read_signal(&src.path, cfg.data.sample_rate_hz)?, cfg)?
    };
    if fm.rows() < 2 {
        return Err(CliError::usage(format!("{}: fewer than 2 windows", src.path.display())));
    }
    from_features(src.name(), fm, total, src.labels.as_deref(), cfg)
}

pub fn load_all(sources: &[Source], cfg: &ExperimentConfig) -> Result<Vec<Dataset>> {
    sources.iter().map(|s| load(s, cfg)).collect()
}

pub fn recordings(sets: &[Dataset]) -> Vec<Recording> {
    sets.iter().map(|d| d.recording.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use carle_core::signal::synth_run_to_failure;
    use std::io::Write;

    fn config() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.synth.duration_s = 8.0;
        c
    }

    #[test]
    fn raw_and_feature_csv_load_the_same_rows() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config();
        let (signal, _) = synth_run_to_failure(&cfg.synth, 4).unwrap();
        let raw = dir.path().join("raw.csv");
        signal.write_csv(File::create(&raw).unwrap()).unwrap();
        let a = load(&Source::new(&raw), &cfg).unwrap();

        let (fm, _) = featurize(&signal, &cfg).unwrap();
        let feat = dir.path().join("feat.csv");
        fm.write_csv(File::create(&feat).unwrap(), Some("config_hash=abc")).unwrap();
        assert!(is_feature_csv(&feat).unwrap());
        assert!(!is_feature_csv(&raw).unwrap());
        let b = load(&Source::new(&feat), &cfg).unwrap();

        assert_eq!(a.window_index, b.window_index);
        assert_eq!(a.labels(), b.labels());
        assert_eq!(a.labels()[0], 1.0);
        assert_eq!(*a.labels().last().unwrap(), 0.0);
        for (x, y) in a.recording.features.iter().zip(&b.recording.features) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn label_file_overrides_generated_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rul.csv");
        let mut f = File::create(&p).unwrap();
        writeln!(f, "rul\n0.9\n0.5\n0.1").unwrap();
        let cfg = config();
        assert_eq!(labels_for(&[0, 1, 2], 3, Some(&p), &cfg).unwrap(), vec![0.9, 0.5, 0.1]);
        assert_eq!(labels_for(&[0, 2], 3, Some(&p), &cfg).unwrap(), vec![0.9, 0.1]);
        assert!(labels_for(&[0, 1, 2, 3], 5, Some(&p), &cfg).is_err());
        assert_eq!(labels_for(&[0, 2], 3, None, &cfg).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn missing_file_is_an_input_error() {
        let err = load(&Source::new("/nonexistent/x.csv"), &config()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
