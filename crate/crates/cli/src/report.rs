//! Artifact envelopes and writers. Every JSON artifact carries the format
//! version, the config hash, the seed and a ledger snapshot.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use symplext::verify::ConstantLedger;

use crate::config::RunConfig;

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct Artifact<T: Serialize> {
    pub version: u32,
    pub artifact: &'static str,
    pub tool: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub ledger: Option<ConstantLedger>,
    pub body: T,
}

impl<T: Serialize> Artifact<T> {
    pub fn new(artifact: &'static str, cfg: &RunConfig, ledger: Option<ConstantLedger>, body: T) -> Self {
        Artifact {
            version: ARTIFACT_VERSION,
            artifact,
            tool: concat!("symplext ", env!("CARGO_PKG_VERSION")),
            config_hash: cfg.hash(),
            seed: cfg.verify.seed,
            ledger,
            body,
        }
    }

    pub fn write(&self, dir: &Path, file: &str) -> std::io::Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(file);
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone)]
pub struct GridRow {
    pub z: Vec<f64>,
    pub image: Vec<f64>,
    pub residual: f64,
}

pub fn csv_header(dim: usize) -> String {
    let n = dim / 2;
    let names: Vec<String> = (1..=n).map(|i| format!("x{i}")).chain((1..=n).map(|i| format!("y{i}"))).collect();
    let mut cols = names.clone();
    cols.extend(names.iter().map(|s| format!("Phi_{s}")));
    cols.push("residual".into());
    cols.join(",")
}

pub fn write_grid_csv(path: &Path, dim: usize, rows: &[GridRow]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "# version={ARTIFACT_VERSION}")?;
    writeln!(out, "{}", csv_header(dim))?;
    for r in rows {
        let cells: Vec<String> = r.z.iter().chain(&r.image).chain(std::iter::once(&r.residual)).map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        assert_eq!(csv_header(2), "x1,y1,Phi_x1,Phi_y1,residual");
        assert_eq!(csv_header(4), "x1,x2,y1,y2,Phi_x1,Phi_x2,Phi_y1,Phi_y2,residual");
    }

    #[test]
    fn artifacts_carry_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let p = Artifact::new("test", &cfg, None, vec![1.0, 2.0]).write(dir.path(), "a.json").unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
        assert_eq!(v["version"], 1);
        assert_eq!(v["config_hash"], cfg.hash());
        assert!(v["ledger"].is_null());

        let csv = dir.path().join("g.csv");
        write_grid_csv(&csv, 2, &[GridRow { z: vec![0.5, 1.0], image: vec![0.5, 1.25], residual: 1e-9 }]).unwrap();
        let text = fs::read_to_string(csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "x1,y1,Phi_x1,Phi_y1,residual");
        let vals: Vec<f64> = lines[2].split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(vals, vec![0.5, 1.0, 0.5, 1.25, 1e-9]);
    }
}
