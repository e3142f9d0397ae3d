//! The data stages behind `ingest` and `analyze`, kept free of file-naming
//! and flag handling.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use parasynth::analysis::{AnalysisConfig, Analyzer};
use parasynth::dataset::{
    extract_sustain, frame_clip, frame_len_for, load_wav, split_dataset, DatasetSplit, FrameTable, Metadata, SustainConfig,
};
use parasynth::envelope::{fit_frame, pad, SpectralGrid, TaeConfig};
use parasynth::formats::{EnvelopeRecord, EnvelopeTable};
use parasynth::pitch::midi_to_hz;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::Failure;

/// `*.wav` files directly inside `dir`, sorted by name.
pub fn wav_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::data(format!("cannot list {}: {e}", dir.display())))?;
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Failure::data(format!("no WAV files in {}", dir.display())));
    }
    Ok(out)
}

/// Loads, trims and frames every eligible take. Frames keep file order.
pub fn frame_takes(
    files: &[PathBuf],
    metadata: Option<&Metadata>,
    sustain: &SustainConfig,
    hop: usize,
) -> Result<FrameTable, Failure> {
    let tables: Vec<Option<FrameTable>> = files
        .par_iter()
        .map(|path| {
            let ctx = |e: parasynth::Error| Failure::from(e).context(path.display());
            let clip = load_wav(path, metadata).map_err(ctx)?;
            if metadata.and_then(|m| m.get(&clip.take_id)).is_some_and(|r| !r.eligible) {
                return Ok(None);
            }
            let frame_len = frame_len_for(clip.sample_rate);
            let cfg = SustainConfig {
                min_len: frame_len,
                ..*sustain
            };
            let region = extract_sustain(&clip, &cfg).map_err(ctx)?;
            frame_clip(&clip, region, frame_len, hop).map(Some).map_err(ctx)
        })
        .collect::<Result<_, Failure>>()?;
    let mut tables = tables.into_iter().flatten();
    let mut all = tables.next().ok_or_else(|| Failure::data("every take is marked ineligible"))?;
    for t in tables {
        if t.sample_rate != all.sample_rate {
            return Err(Failure::data(format!(
                "mixed sample rates ({} and {} Hz)",
                all.sample_rate, t.sample_rate
            )));
        }
        all.frames.extend(t.frames);
    }
    Ok(all)
}

/// Split manifest written by `ingest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub ratio: f64,
    /// label → (train takes, test takes)
    pub labels: BTreeMap<i32, (usize, usize)>,
    pub split: DatasetSplit,
}

impl Manifest {
    pub fn build(table: &FrameTable, ratio: f64, seed: u64) -> Result<Self, Failure> {
        let mut takes: Vec<(String, i32)> = table.frames.iter().map(|f| (f.take_id.clone(), f.midi)).collect();
        takes.sort();
        takes.dedup();
        Self::from_takes(&takes, ratio, seed)
    }

    pub fn from_takes(takes: &[(String, i32)], ratio: f64, seed: u64) -> Result<Self, Failure> {
        let split = split_dataset(takes, ratio, seed)?;
        Ok(Self::of_split(split, ratio))
    }

    pub fn of_split(split: DatasetSplit, ratio: f64) -> Self {
        let mut labels: BTreeMap<i32, (usize, usize)> = BTreeMap::new();
        for (_, m) in &split.train {
            labels.entry(*m).or_default().0 += 1;
        }
        for (_, m) in &split.test {
            labels.entry(*m).or_default().1 += 1;
        }
        Manifest { ratio, labels, split }
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::data(format!("bad split manifest {}: {e}", path.display())))
    }
}

/// Harmonic analysis, TAE fit and padding of every frame.
pub fn analyze_frames(table: &FrameTable, analysis: &AnalysisConfig, tae: &TaeConfig) -> Result<EnvelopeTable, Failure> {
    let cfg = AnalysisConfig {
        frame_len: table.frame_len,
        ..*analysis
    };
    let fs = table.sample_rate as f64;
    let analyzer = Analyzer::new(cfg, fs)?;
    let grid = SpectralGrid::new(fs, cfg.fft_size);
    let records = table
        .frames
        .par_iter()
        .map(|f| {
            let samples: Vec<f64> = f.samples.iter().map(|&s| s as f64).collect();
            let run = || -> parasynth::Result<EnvelopeRecord> {
                let hf = analyzer.analyze(&samples, midi_to_hz(f.midi as f64))?;
                let (env, _) = fit_frame(&hf, grid, tae)?;
                Ok(EnvelopeRecord {
                    take_id: f.take_id.clone(),
                    midi: f.midi,
                    frame_index: f.frame_index,
                    envelope: pad(&env)?,
                })
            };
            run().map_err(|e| Failure::from(e).context(format!("take {} frame {}", f.take_id, f.frame_index)))
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    Ok(EnvelopeTable {
        sample_rate: table.sample_rate,
        fft_size: cfg.fft_size as u32,
        records,
    })
}
