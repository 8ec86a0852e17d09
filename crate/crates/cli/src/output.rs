//! Writers for the emitted artifacts. CSVs carry the config hash in a leading
//! `#` comment, JSON files in a `config_hash` field.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use carle_core::nn::EpochRecord;
use serde_json::Value;

use crate::error::{CliError, Result};

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

pub fn hash_comment(hash: &str) -> String {
    format!("config_hash={hash}")
}

/// Writes through `f`, then flushes, mapping io errors to the path.
pub fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

/// Pretty JSON with sorted keys and a trailing newline, so equal values give
/// equal bytes.
pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    write_with(path, |w| writeln!(w, "{text}"))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_history(path: &Path, hash: &str, history: &[EpochRecord]) -> Result<()> {
    write_with(path, |w| {
        writeln!(w, "# {}", hash_comment(hash))?;
        writeln!(w, "epoch,rmse,mae,val_rmse,val_mae,lr")?;
        for r in history {
            writeln!(w, "{},{},{},{},{},{}", r.epoch, r.rmse, r.mae, opt(r.val_rmse), opt(r.val_mae), r.lr)?;
        }
        Ok(())
    })
}

pub fn write_predictions(path: &Path, hash: &str, window_index: &[usize], y_true: &[f64], y_pred: &[f64]) -> Result<()> {
    write_with(path, |w| {
        writeln!(w, "# {}", hash_comment(hash))?;
        writeln!(w, "window_index,y_true,y_pred")?;
        for ((i, t), p) in window_index.iter().zip(y_true).zip(y_pred) {
            writeln!(w, "{i},{t},{p}")?;
        }
        Ok(())
    })
}
