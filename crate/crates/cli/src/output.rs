//! Output files: refuse to clobber without `--overwrite`, tag CSVs with the
//! config hash and keep timestamps in a JSON sidecar.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::PipelineConfig;
use crate::Failure;

pub struct Outputs<'a> {
    pub overwrite: bool,
    pub config: &'a PipelineConfig,
    pub command: &'static str,
}

impl Outputs<'_> {
    /// Checks every path before anything is written, so a refused run
    /// leaves no partial output behind.
    pub fn claim(&self, paths: &[&Path]) -> Result<(), Failure> {
        for p in paths {
            if !self.overwrite && p.exists() {
                return Err(Failure::usage(format!(
                    "{} exists; pass --overwrite to replace it",
                    p.display()
                )));
            }
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Failure::data(format!("cannot create {}: {e}", dir.display())))?;
            }
        }
        Ok(())
    }

    pub fn comment(&self) -> String {
        format!("config_hash={}", self.config.hash())
    }

    /// Writes a CSV through `body`, which receives the comment line to emit.
    pub fn csv(&self, path: &Path, body: impl FnOnce(&mut Vec<u8>, &str) -> std::io::Result<()>) -> Result<(), Failure> {
        let mut buf = Vec::new();
        body(&mut buf, &self.comment()).expect("writing to memory");
        write_file(path, &buf)
    }

    /// `<path>.json` next to an artifact: command, config, hash, creation
    /// time and any command-specific details.
    pub fn sidecar(&self, path: &Path, details: impl Serialize) -> Result<(), Failure> {
        #[derive(Serialize)]
        struct Sidecar<'a, D> {
            command: &'a str,
            artifact: &'a Path,
            config_hash: String,
            created_unix: u64,
            config: &'a PipelineConfig,
            details: D,
        }
        let side = Sidecar {
            command: self.command,
            artifact: path,
            config_hash: self.config.hash(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            config: self.config,
            details,
        };
        let text = serde_json::to_string_pretty(&side).expect("sidecar serializes");
        write_file(&sidecar_path(path), text.as_bytes())
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let mut f = std::fs::File::create(path).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))?;
    f.write_all(bytes)
        .map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}
