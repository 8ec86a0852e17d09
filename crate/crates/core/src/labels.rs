//! Normalized remaining-useful-life targets for run-to-failure recordings.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_KNEE_FRACTION: f64 = 0.6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScheme {
    /// Constant-rate decay from 1 at the first window to 0 at the last.
    #[default]
    Linear,
    /// Held at 1 until the knee, then linear decay to 0.
    Piecewise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RulLabels {
    pub values: Vec<f64>,
    pub scheme: LabelScheme,
    pub knee_fraction: Option<f64>,
}

pub fn make_labels(n_windows: usize, scheme: LabelScheme, knee_fraction: f64) -> Result<RulLabels> {
    if n_windows < 2 {
        return Err(Error::param(format!(
            "RUL labels need at least 2 windows, got {n_windows}"
        )));
    }
    let last = (n_windows - 1) as f64;
    let values = match scheme {
        LabelScheme::Linear => (0..n_windows).map(|i| 1.0 - i as f64 / last).collect(),
        LabelScheme::Piecewise => {
            if !(knee_fraction > 0.0 && knee_fraction < 1.0) {
                return Err(Error::param(format!(
                    "knee fraction must lie in (0, 1), got {knee_fraction}"
                )));
            }
            let knee = knee_fraction * last;
            (0..n_windows)
                .map(|i| {
                    let i = i as f64;
                    if i <= knee {
                        1.0
                    } else {
                        (last - i) / (last - knee)
                    }
                })
                .collect()
        }
    };
    Ok(RulLabels {
        values,
        scheme,
        knee_fraction: (scheme == LabelScheme::Piecewise).then_some(knee_fraction),
    })
}

/// Single `rul` column, one row per feature-matrix row.
pub fn write_labels_csv<W: Write>(mut writer: W, values: &[f64], comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(writer, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rul"])?;
    for v in values {
        w.write_record([format!("{v}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels_csv<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    if rdr.headers()?.len() != 1 {
        return Err(Error::input("label CSV must have exactly one column"));
    }
    rdr.records()
        .enumerate()
        .map(|(i, r)| {
            let r = r?;
            r[0].parse::<f64>()
                .map_err(|_| Error::input(format!("label CSV row {}: bad value {:?}", i + 1, &r[0])))
        })
        .collect()
}
