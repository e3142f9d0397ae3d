//! Pipeline configuration: one TOML file, every key optional, overridable
//! from the command line with `--set section.key=value`.

use std::path::{Path, PathBuf};

use parasynth::analysis::AnalysisConfig;
use parasynth::dataset::{SustainConfig, DEFAULT_HOP};
use parasynth::envelope::TaeConfig;
use parasynth::experiments::{DEFAULT_BETAS, DEFAULT_LATENT_DIMS, DEFAULT_WALK_STEP};
use parasynth::model::{ModelKind, TrainConfig};
use parasynth::synthesis::{DEFAULT_VIBRATO_DEPTH, DEFAULT_VIBRATO_RATE};
use parasynth::synthetic::CorpusConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed: dataset split, weight init, cell seeds, latent walks.
    pub seed: u64,
    pub paths: Paths,
    pub ingest: IngestConfig,
    pub analysis: AnalysisConfig,
    pub tae: TaeConfig,
    pub model: TrainConfig,
    pub experiments: GridConfig,
    pub synthesis: SynthesisConfig,
    pub synthetic: SyntheticConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            paths: Paths::default(),
            ingest: IngestConfig::default(),
            analysis: AnalysisConfig::default(),
            tae: TaeConfig::default(),
            model: TrainConfig::default(),
            experiments: GridConfig::default(),
            synthesis: SynthesisConfig::default(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

/// Artifact locations. Unset artifact paths live in `work_dir` under fixed
/// names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset_dir: PathBuf,
    /// `take_id, midi[, eligible]` lines; file names are used when absent.
    pub metadata: Option<PathBuf>,
    pub work_dir: PathBuf,
    pub frames: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub envelopes: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset_dir: "dataset".into(),
            metadata: None,
            work_dir: "work".into(),
            frames: None,
            split: None,
            envelopes: None,
            model: None,
        }
    }
}

impl Paths {
    fn artifact(&self, set: &Option<PathBuf>, name: &str) -> PathBuf {
        set.clone().unwrap_or_else(|| self.work_dir.join(name))
    }

    pub fn frames(&self) -> PathBuf {
        self.artifact(&self.frames, "frames.vpft")
    }

    pub fn split(&self) -> PathBuf {
        self.artifact(&self.split, "split.json")
    }

    pub fn envelopes(&self) -> PathBuf {
        self.artifact(&self.envelopes, "envelopes.vpen")
    }

    pub fn model(&self) -> PathBuf {
        self.artifact(&self.model, "model.vpmd")
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset_dir);
        fix(&mut self.work_dir);
        for p in [&mut self.metadata, &mut self.frames, &mut self.split, &mut self.envelopes, &mut self.model]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub split_ratio: f64,
    pub hop: usize,
    pub sustain: SustainConfig,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            split_ratio: 0.8,
            hop: DEFAULT_HOP,
            sustain: SustainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub betas: Vec<f64>,
    pub latent_dims: Vec<usize>,
    pub kinds: Vec<ModelKind>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            betas: DEFAULT_BETAS.to_vec(),
            latent_dims: DEFAULT_LATENT_DIMS.to_vec(),
            kinds: vec![ModelKind::Ae, ModelKind::Cvae],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub sample_rate: u32,
    pub hop: usize,
    pub seconds: f64,
    pub walk_step: f64,
    pub vibrato_rate: f64,
    pub vibrato_depth_cents: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            sample_rate: 48_000,
            hop: DEFAULT_HOP,
            seconds: 2.0,
            walk_step: DEFAULT_WALK_STEP,
            vibrato_rate: DEFAULT_VIBRATO_RATE,
            vibrato_depth_cents: DEFAULT_VIBRATO_DEPTH,
        }
    }
}

/// Generated stand-in dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub corpus: CorpusConfig,
    /// Length of each rendered take.
    pub seconds: f64,
    pub sample_rate: u32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            corpus: CorpusConfig::default(),
            seconds: 1.0,
            sample_rate: 48_000,
        }
    }
}

/// Reads `path` (if any), applies `key=value` overrides and resolves
/// relative paths against the config file's directory (the working
/// directory without a file).
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig, Failure> {
    let (mut table, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::usage(format!("cannot read config {}: {e}", p.display())))?;
            let table: toml::Table = text
                .parse()
                .map_err(|e| Failure::usage(format!("bad config {}: {e}", p.display())))?;
            let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (table, dir)
        }
        None => (toml::Table::new(), PathBuf::new()),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut cfg: PipelineConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| Failure::usage(format!("invalid configuration: {e}")))?;
    let base = if base.as_os_str().is_empty() {
        std::env::current_dir().map_err(|e| Failure::usage(format!("no working directory: {e}")))?
    } else {
        base
    };
    cfg.paths.resolve(&base);
    Ok(cfg)
}

/// `a.b.c=v`, where `v` is read as a TOML value and falls back to a string.
fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), Failure> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Failure::usage(format!("override `{item}` is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Failure::usage(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl PipelineConfig {
    /// SHA-256 of the canonical JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 3\n[paths]\nwork_dir = \"out\"\n[model]\nbeta = 0.5\n").unwrap();
        let cfg = load(Some(&path), &["model.latent_dim=8".into(), "paths.dataset_dir=/data".into(), "seed=9".into()]).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.beta, 0.5);
        assert_eq!(cfg.model.latent_dim, 8);
        assert_eq!(cfg.paths.work_dir, dir.path().join("out"));
        assert_eq!(cfg.paths.dataset_dir, PathBuf::from("/data"));
        assert_eq!(cfg.paths.model(), dir.path().join("out/model.vpmd"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(load(None, &["model.betta=1".into()]).is_err());
        assert!(load(None, &["nonsense".into()]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
