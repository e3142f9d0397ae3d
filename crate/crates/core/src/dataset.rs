//! Note ingest: clips, MIDI labels, sustain isolation, train/test splits and
//! analysis framing.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wav;

/// Analysis frame length at 48 kHz (21.3 ms).
pub const REFERENCE_FRAME_LEN: usize = 1024;
pub const REFERENCE_SAMPLE_RATE: u32 = 48_000;
pub const DEFAULT_HOP: usize = 256;

/// Frame length in samples for a 1024/48000 s frame at `sample_rate`.
pub fn frame_len_for(sample_rate: u32) -> usize {
    ((sample_rate as f64 * REFERENCE_FRAME_LEN as f64) / REFERENCE_SAMPLE_RATE as f64).round()
        as usize
}

/// A labeled mono recording of one note.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub midi_label: i32,
    pub take_id: String,
}

impl AudioClip {
    pub fn new(
        samples: Vec<f32>,
        sample_rate: u32,
        midi_label: i32,
        take_id: impl Into<String>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("clip samples"));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::InvalidArgument(
                "clip samples must be finite and within [-1, 1]".into(),
            ));
        }
        Ok(Self {
            samples,
            sample_rate,
            midi_label,
            take_id: take_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// One line of the take metadata file: `take_id, midi, eligible`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TakeRecord {
    pub take_id: String,
    pub midi: i32,
    pub eligible: bool,
}

/// Sidecar metadata mapping take ids to MIDI labels.
#[derive(Debug, Clone, Default)]
pub struct Metadata {
    records: Vec<TakeRecord>,
    index: HashMap<String, usize>,
}

impl Metadata {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = |msg: &str| Error::format(origin, format!("line {}: {msg}", lineno + 1));
            if fields.len() < 2 || fields.len() > 3 {
                // a header row is tolerated on the first line
                if lineno == 0 {
                    continue;
                }
                return Err(bad("expected `take_id, midi[, eligible]`"));
            }
            let midi = match fields[1].parse::<i32>() {
                Ok(m) => m,
                Err(_) if lineno == 0 => continue,
                Err(_) => return Err(bad("MIDI field is not an integer")),
            };
            let eligible = match fields.get(2).map(|s| s.to_ascii_lowercase()) {
                None => true,
                Some(f) => match f.as_str() {
                    "1" | "true" | "yes" | "y" => true,
                    "0" | "false" | "no" | "n" => false,
                    _ => return Err(bad("eligibility flag must be 0/1 or true/false")),
                },
            };
            records.push(TakeRecord {
                take_id: fields[0].to_string(),
                midi,
                eligible,
            });
        }
        let index = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.take_id.clone(), i))
            .collect();
        Ok(Self { records, index })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn records(&self) -> &[TakeRecord] {
        &self.records
    }

    pub fn get(&self, take_id: &str) -> Option<&TakeRecord> {
        self.index.get(take_id).map(|&i| &self.records[i])
    }
}

/// Extracts a MIDI number from a `midi<NN>` token (case-insensitive, optional
/// `_` or `-` before the digits), e.g. `violin_take03_midi65`.
pub fn midi_from_name(name: &str) -> Option<i32> {
    let lower = name.to_ascii_lowercase();
    let mut search = 0;
    while let Some(pos) = lower[search..].find("midi") {
        let mut rest = &lower[search + pos + 4..];
        if let Some(stripped) = rest.strip_prefix(['_', '-']) {
            rest = stripped;
        }
        let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
        if !digits.is_empty() && digits.len() <= 3 {
            return digits.parse().ok();
        }
        search += pos + 4;
    }
    None
}

/// Loads a note recording. The take id is the file stem; the MIDI label comes
/// from `metadata` when it lists the take, otherwise from the file name.
pub fn load_wav(path: &Path, metadata: Option<&Metadata>) -> Result<AudioClip> {
    let take_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidArgument(format!("bad file name {}", path.display())))?
        .to_string();
    let midi = metadata
        .and_then(|m| m.get(&take_id))
        .map(|r| r.midi)
        .or_else(|| midi_from_name(&take_id))
        .ok_or_else(|| Error::MissingLabel(take_id.clone()))?;
    let pcm = wav::read_wav(path)?;
    AudioClip::new(pcm.samples, pcm.sample_rate, midi, take_id)
}

/// Sustained portion of a clip, `[start_sample, end_sample)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SustainRegion {
    pub start_sample: usize,
    pub end_sample: usize,
}

impl SustainRegion {
    pub fn len(&self) -> usize {
        self.end_sample - self.start_sample
    }

    pub fn is_empty(&self) -> bool {
        self.end_sample <= self.start_sample
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SustainConfig {
    /// RMS window length in samples (non-overlapping).
    pub window: usize,
    /// Windows within this many dB of the loudest window count as sustained.
    pub rel_threshold_db: f64,
    /// Windows trimmed from each end of the sustained run.
    pub margin: usize,
    /// Shortest acceptable region (one analysis frame).
    pub min_len: usize,
}

impl Default for SustainConfig {
    fn default() -> Self {
        Self {
            window: 1024,
            rel_threshold_db: 20.0,
            margin: 4,
            min_len: REFERENCE_FRAME_LEN,
        }
    }
}

/// Short-time RMS over non-overlapping windows; a trailing partial window is
/// dropped.
pub fn window_rms(samples: &[f32], window: usize) -> Vec<f64> {
    samples
        .chunks_exact(window)
        .map(|w| (w.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / window as f64).sqrt())
        .collect()
}

/// Finds the longest run of windows within `rel_threshold_db` of the peak
/// short-time RMS and trims `margin` windows from both ends.
pub fn extract_sustain(clip: &AudioClip, cfg: &SustainConfig) -> Result<SustainRegion> {
    if cfg.window == 0 {
        return Err(Error::InvalidArgument("sustain window must be positive".into()));
    }
    if clip.len() <= 3 * cfg.window {
        return Err(Error::ClipTooShort {
            len: clip.len(),
            min: 3 * cfg.window,
        });
    }
    let rms = window_rms(&clip.samples, cfg.window);
    let peak = rms.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(Error::SilentClip);
    }
    let threshold = peak * 10f64.powf(-cfg.rel_threshold_db / 20.0);

    // longest run; ties keep the earliest
    let (mut best_start, mut best_len) = (0, 0);
    let mut run_start = None;
    for (i, &r) in rms.iter().chain(std::iter::once(&-1.0)).enumerate() {
        match (r >= threshold, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                if i - s > best_len {
                    best_start = s;
                    best_len = i - s;
                }
                run_start = None;
            }
            _ => {}
        }
    }

    let trimmed = best_len.saturating_sub(2 * cfg.margin);
    let start = (best_start + cfg.margin) * cfg.window;
    let len = trimmed * cfg.window;
    if len < cfg.min_len.max(1) {
        return Err(Error::RegionTooShort {
            len,
            min: cfg.min_len.max(1),
        });
    }
    Ok(SustainRegion {
        start_sample: start,
        end_sample: start + len,
    })
}

/// Train/test assignment of takes, stratified by MIDI label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<(String, i32)>,
    pub test: Vec<(String, i32)>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn is_train(&self, take_id: &str, midi: i32) -> bool {
        self.train.iter().any(|(t, m)| t == take_id && *m == midi)
    }

    pub fn is_test(&self, take_id: &str, midi: i32) -> bool {
        self.test.iter().any(|(t, m)| t == take_id && *m == midi)
    }

    pub fn train_set(&self) -> BTreeSet<(String, i32)> {
        self.train.iter().cloned().collect()
    }

    pub fn test_set(&self) -> BTreeSet<(String, i32)> {
        self.test.iter().cloned().collect()
    }
}

/// Shuffles each label's takes with a seeded RNG and sends the first
/// `⌈ratio·n⌉` to train. Labels are visited in ascending order and takes are
/// sorted first, so the result depends only on the record set and the seed.
pub fn split_dataset(records: &[(String, i32)], ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let mut by_label: BTreeMap<i32, Vec<String>> = BTreeMap::new();
    for (take, midi) in records {
        by_label.entry(*midi).or_default().push(take.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit {
        train: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for (label, mut takes) in by_label {
        if takes.len() < 2 {
            return Err(Error::TooFewRecords {
                label,
                count: takes.len(),
            });
        }
        takes.sort();
        takes.dedup();
        takes.shuffle(&mut rng);
        let n_train = ((ratio * takes.len() as f64) - 1e-9).ceil() as usize;
        for (i, take) in takes.into_iter().enumerate() {
            if i < n_train {
                split.train.push((take, label));
            } else {
                split.test.push((take, label));
            }
        }
    }
    Ok(split)
}

/// One analysis frame cut from a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub take_id: String,
    pub midi: i32,
    pub frame_index: u32,
    pub samples: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameTable {
    pub frames: Vec<Frame>,
    pub frame_len: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl FrameTable {
    pub fn empty(frame_len: usize, hop: usize, sample_rate: u32) -> Self {
        Self {
            frames: Vec::new(),
            frame_len,
            hop,
            sample_rate,
        }
    }
}

/// Number of frames of `frame_len` at `hop` spacing that fit in `region_len`.
pub fn frame_count(region_len: usize, frame_len: usize, hop: usize) -> usize {
    if region_len < frame_len || hop == 0 {
        0
    } else {
        (region_len - frame_len) / hop + 1
    }
}

/// Slices the region into frames at `start, start + hop, …` while a full
/// frame fits.
pub fn frame_clip(
    clip: &AudioClip,
    region: SustainRegion,
    frame_len: usize,
    hop: usize,
) -> Result<FrameTable> {
    if hop == 0 || frame_len == 0 {
        return Err(Error::InvalidArgument("frame length and hop must be positive".into()));
    }
    if region.is_empty() || region.end_sample > clip.len() {
        return Err(Error::InvalidArgument(format!(
            "region {}..{} outside clip of {} samples",
            region.start_sample,
            region.end_sample,
            clip.len()
        )));
    }
    if region.len() < frame_len {
        return Err(Error::RegionTooShort {
            len: region.len(),
            min: frame_len,
        });
    }
    let count = frame_count(region.len(), frame_len, hop);
    let frames = (0..count)
        .map(|i| {
            let offset = region.start_sample + i * hop;
            Frame {
                take_id: clip.take_id.clone(),
                midi: clip.midi_label,
                frame_index: i as u32,
                samples: clip.samples[offset..offset + frame_len].to_vec(),
            }
        })
        .collect();
    Ok(FrameTable {
        frames,
        frame_len,
        hop,
        sample_rate: clip.sample_rate,
    })
}
