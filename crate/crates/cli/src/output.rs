use std::fs;
use std::path::{Path, PathBuf};

use cmm::io::{format_matrix_text, matrix_to_rows};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::RunConfig;
use crate::error::CliError;

/// Writes run artifacts, each tagged with the config hash and seed.
pub struct Artifacts {
    dir: PathBuf,
    hash: String,
    seed: u64,
}

fn output_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Output {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

impl Artifacts {
    /// Creates the run directory and writes `config.json`.
    pub fn create(cfg: &RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(&cfg.out).map_err(|e| output_error(&cfg.out, e))?;
        let out = Artifacts {
            dir: cfg.out.clone(),
            hash: cfg.hash(),
            seed: cfg.seed,
        };
        out.json("config.json", cfg)?;
        Ok(out)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| output_error(&path, e))
    }

    /// Writes `value` (which must serialize to an object) with `config_hash`
    /// and `seed` fields added.
    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut doc = Map::new();
        doc.insert("config_hash".into(), Value::from(self.hash.clone()));
        doc.insert("seed".into(), Value::from(self.seed));
        match serde_json::to_value(value).map_err(|e| output_error(&path, e))? {
            Value::Object(fields) => doc.extend(fields),
            other => {
                doc.insert("value".into(), other);
            }
        }
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| output_error(&path, e))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes `<stem>.txt` and `<stem>.json`.
    pub fn plan(&self, stem: &str, x: &DMatrix<f64>) -> Result<(), CliError> {
        let header = format!("config_hash {} seed {}", self.hash, self.seed);
        self.write(&format!("{stem}.txt"), format_matrix_text(x, Some(&header)).as_bytes())?;
        #[derive(Serialize)]
        struct Plan {
            rows: usize,
            cols: usize,
            plan: Vec<Vec<f64>>,
        }
        let plan = Plan {
            rows: x.nrows(),
            cols: x.ncols(),
            plan: matrix_to_rows(x),
        };
        self.json(&format!("{stem}.json"), &plan)
    }

    /// Writes a CSV with `config_hash` and `seed` columns appended.
    pub fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let err = |e: csv::Error| output_error(&path, e);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header.iter().copied().chain(["config_hash", "seed"])).map_err(err)?;
        let seed = self.seed.to_string();
        for row in rows {
            w.write_record(row.iter().map(String::as_str).chain([self.hash.as_str(), seed.as_str()]))
                .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| output_error(&path, e))?;
        self.write(name, &bytes)
    }
}

/// Shortest round-trip text for a float.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

/// Like [`num`], with an empty field for missing values.
pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
