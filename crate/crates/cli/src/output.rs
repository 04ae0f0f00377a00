//! Output directory handling and run manifests.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use crate::CliError;

/// Everything needed to reproduce a run's files.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
    pub version: String,
    pub wall_clock_seconds: f64,
}

/// Collects the files written by one subcommand and writes the manifest last.
pub struct Outputs {
    dir: PathBuf,
    subcommand: String,
    written: Vec<String>,
    started: Instant,
}

impl Outputs {
    pub fn new(dir: &Path, subcommand: &str) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            subcommand: subcommand.into(),
            written: Vec::new(),
            started: Instant::now(),
        })
    }

    /// Opens `name` in the output directory for writing.
    pub fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.dir.join(name);
        self.written.push(path.display().to_string());
        Ok(BufWriter::new(File::create(path)?))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn finish<C: Serialize>(self, config: &C, seed: Option<u64>) -> Result<PathBuf, CliError> {
        let manifest = RunManifest {
            subcommand: self.subcommand.clone(),
            argv: std::env::args().collect(),
            config: serde_json::to_value(config)?,
            seed,
            outputs: self.written,
            version: env!("CARGO_PKG_VERSION").into(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = self.dir.join(format!("{}.manifest.json", self.subcommand));
        let mut f = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut f, &manifest)?;
        writeln!(f)?;
        f.flush()?;
        Ok(path)
    }
}
