//! Output emission: directory layout, CSV and JSON files, and the
//! reproducibility manifest with per-file digests.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::experiments::ExperimentOutput;

#[derive(Debug, Serialize)]
pub struct Digests {
    #[serde(rename = "data.csv")]
    pub data_csv: String,
    #[serde(rename = "report.json")]
    pub report_json: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub wall_time_seconds: f64,
    pub digests: Digests,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(row)?;
    }
    Ok(writer.into_inner()?)
}

/// Write data.csv, report.json, and manifest.json under
/// `<out>/<experiment>/<config-hash>/`; returns the directory and the
/// manifest that was written.
pub fn write_outputs(
    out_root: &Path,
    experiment: &str,
    config_hash: &str,
    seed: u64,
    wall_time_seconds: f64,
    output: &ExperimentOutput,
) -> Result<(PathBuf, RunManifest)> {
    let dir = out_root.join(experiment).join(config_hash);
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;

    let csv = csv_bytes(&output.csv_header, &output.csv_rows)?;
    let report = {
        let mut text = serde_json::to_string_pretty(&output.report)?;
        text.push('\n');
        text.into_bytes()
    };

    let manifest = RunManifest {
        config_hash: config_hash.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        wall_time_seconds,
        digests: Digests {
            data_csv: sha256_hex(&csv),
            report_json: sha256_hex(&report),
        },
    };
    let manifest_bytes = {
        let mut text = serde_json::to_string_pretty(&serde_json::to_value(&manifest)?)?;
        text.push('\n');
        text.into_bytes()
    };

    for (name, bytes) in [
        ("data.csv", &csv),
        ("report.json", &report),
        ("manifest.json", &manifest_bytes),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, bytes)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok((dir, manifest))
}
