//! File helpers: atomic writes and config loading.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use capsim::engine::SimConfig;
use capsim::model::SatMatrix;
use capsim::policy::PolicyDelta;
use serde::Serialize;

/// Writes via a temp file in the same directory, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp =
        tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Reads a simulation config from JSON or TOML, chosen by extension.
pub fn load_sim_config(path: &Path) -> Result<SimConfig> {
    let text = read_text(path)?;
    let cfg: SimConfig = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        Some("json") | None => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        Some(other) => bail!("unsupported config extension `.{other}` (use .json or .toml)"),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_matrix(path: &Path) -> Result<SatMatrix> {
    let text = read_text(path)?;
    serde_json::from_str(&text).with_context(|| format!("parsing matrix {}", path.display()))
}

pub fn load_delta(path: &Path) -> Result<PolicyDelta> {
    let text = read_text(path)?;
    serde_json::from_str(&text).with_context(|| format!("parsing delta {}", path.display()))
}

/// Heat-map CSV: header row of labels, then one row per label.
pub fn grid_csv(labels: &[String], cells: &[Vec<Option<f64>>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![String::new()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for (label, row) in labels.iter().zip(cells) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(|v| v.map(|x| format!("{x:.6}")).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
