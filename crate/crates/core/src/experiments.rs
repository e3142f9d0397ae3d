//! Evaluation protocols: hyperparameter sweep, skipped-pitch and
//! octave-endpoint reconstruction, and latent random-walk generation.

use std::collections::BTreeSet;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::DatasetSplit;
use crate::envelope::SpectralGrid;
use crate::formats::EnvelopeRecord;
use crate::model::{train, LatentCode, ModelKind, ModelParams, Samples, TrainConfig};
use crate::synthesis::{check_band, frame_from_padded, SynthFrame};
use crate::{Error, Result};

pub const DEFAULT_BETAS: [f64; 3] = [0.01, 0.1, 1.0];
pub const DEFAULT_LATENT_DIMS: [usize; 4] = [2, 8, 32, 64];
pub const DEFAULT_WALK_STEP: f64 = 0.05;
pub const OCTAVE: std::ops::RangeInclusive<i32> = 60..=71;
pub const SKIP_TARGETS: std::ops::RangeInclusive<i32> = 63..=68;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Sweep,
    SkipPitch,
    Endpoints,
    Generate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub protocol: Protocol,
    pub target_midi: Option<i32>,
    pub betas: Vec<f64>,
    pub latent_dims: Vec<usize>,
    pub kinds: Vec<ModelKind>,
    pub seed: u64,
    /// Everything else about training (epochs, batch size, lr, …).
    pub base: TrainConfig,
}

impl ExperimentSpec {
    pub fn sweep(base: TrainConfig, seed: u64) -> Self {
        ExperimentSpec {
            protocol: Protocol::Sweep,
            target_midi: None,
            betas: DEFAULT_BETAS.to_vec(),
            latent_dims: DEFAULT_LATENT_DIMS.to_vec(),
            kinds: vec![ModelKind::Ae, ModelKind::Cvae],
            seed,
            base,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseRow {
    pub model_kind: ModelKind,
    pub beta: f64,
    pub latent_dim: usize,
    /// `None` when the row covers the whole test set.
    pub midi: Option<i32>,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Baseline {
    pub model_kind: ModelKind,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ReportMetadata {
    pub protocol: Option<Protocol>,
    pub split_seed: u64,
    pub master_seed: u64,
    pub config_hash: Option<String>,
    pub betas: Vec<f64>,
    pub latent_dims: Vec<usize>,
    pub cell_seeds: Vec<u64>,
    pub target_midi: Option<i32>,
    pub train_midis: Vec<i32>,
    /// Seen-pitch reference for the skip protocol.
    pub baselines: Vec<Baseline>,
    pub diagnostics: Vec<String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseReport {
    pub rows: Vec<MseRow>,
    pub metadata: ReportMetadata,
}

impl MseReport {
    fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            (a.model_kind, a.midi, a.latent_dim)
                .cmp(&(b.model_kind, b.midi, b.latent_dim))
                .then(a.beta.total_cmp(&b.beta))
        });
    }

    pub fn get(&self, kind: ModelKind, beta: f64, latent_dim: usize, midi: Option<i32>) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.model_kind == kind && r.beta == beta && r.latent_dim == latent_dim && r.midi == midi)
            .map(|r| r.mse)
    }

    pub fn by_midi(&self, kind: ModelKind) -> Vec<(i32, f64)> {
        self.rows
            .iter()
            .filter(|r| r.model_kind == kind)
            .filter_map(|r| r.midi.map(|m| (m, r.mse)))
            .collect()
    }

    pub fn baseline(&self, kind: ModelKind) -> Option<f64> {
        self.metadata.baselines.iter().find(|b| b.model_kind == kind).map(|b| b.mse)
    }

    /// `model_kind,beta,latent_dim,midi,mse`; `midi` is `all` for whole-set rows.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W, comment: Option<&str>) -> std::io::Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "model_kind,beta,latent_dim,midi,mse")?;
        for r in &self.rows {
            let midi = r.midi.map_or_else(|| "all".to_string(), |m| m.to_string());
            writeln!(out, "{},{},{},{},{:e}", r.model_kind.name(), r.beta, r.latent_dim, midi, r.mse)?;
        }
        Ok(())
    }
}

/// Analyzed frames plus the take-level split they were drawn under.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub records: Vec<EnvelopeRecord>,
    pub split: DatasetSplit,
}

impl Corpus {
    pub fn new(records: Vec<EnvelopeRecord>, split: DatasetSplit) -> Self {
        Corpus { records, split }
    }

    pub fn midis(&self) -> BTreeSet<i32> {
        self.records.iter().map(|r| r.midi).collect()
    }

    pub fn select(&self, pred: impl Fn(&EnvelopeRecord) -> bool) -> Vec<&EnvelopeRecord> {
        self.records.iter().filter(|r| pred(r)).collect()
    }

    pub fn train_records(&self, midis: &BTreeSet<i32>) -> Vec<&EnvelopeRecord> {
        self.select(|r| midis.contains(&r.midi) && self.split.is_train(&r.take_id, r.midi))
    }

    pub fn test_records(&self, midis: &BTreeSet<i32>) -> Vec<&EnvelopeRecord> {
        self.select(|r| midis.contains(&r.midi) && self.split.is_test(&r.take_id, r.midi))
    }

    pub fn all_records(&self, midi: i32) -> Vec<&EnvelopeRecord> {
        self.select(|r| r.midi == midi)
    }
}

/// Training labels are the integer MIDI numbers of the takes.
pub fn samples_of(records: &[&EnvelopeRecord]) -> Result<Samples> {
    Samples::from_envelopes(records.iter().map(|r| (&r.envelope, Some(r.midi))))
}

/// Mean over frames of the per-frame mean squared error (all 91 padded
/// dimensions, raw coefficient domain) between input and deterministic
/// reconstruction.
pub fn evaluate_mse(m: &ModelParams, frames: &Samples) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::Empty("evaluation frames"));
    }
    let out = m.reconstruct(frames)?;
    let per_frame = (&out - &frames.x).mapv(|d| d * d).mean_axis(ndarray::Axis(1)).expect("nonempty");
    Ok(per_frame.mean().expect("nonempty"))
}

/// Independent stream per cell so parallel scheduling cannot change results.
pub fn cell_seed(master: u64, index: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(master);
    r.set_stream(index);
    r.next_u64()
}

fn config_for(base: &TrainConfig, kind: ModelKind, beta: f64, latent_dim: usize, seed: u64) -> TrainConfig {
    let conditional = kind == ModelKind::Cvae;
    TrainConfig {
        kind,
        conditional,
        beta,
        latent_dim,
        seed,
        ..base.clone()
    }
}

/// Trains and evaluates one cell; divergence becomes a NaN row plus a
/// diagnostic instead of an error.
fn run_cell(cfg: &TrainConfig, train_set: &Samples, evals: &[(Option<i32>, &Samples)]) -> Result<(Vec<(Option<i32>, f64)>, Option<String>)> {
    match train(train_set, cfg) {
        Ok(m) => {
            let rows = evals
                .iter()
                .map(|(midi, s)| Ok((*midi, evaluate_mse(&m, s)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok((rows, None))
        }
        Err(e) if e.is_numeric() => {
            let msg = format!("{} beta={} dim={}: {e}", cfg.kind.name(), cfg.beta, cfg.latent_dim);
            Ok((evals.iter().map(|(m, _)| (*m, f64::NAN)).collect(), Some(msg)))
        }
        Err(e) => Err(e),
    }
}

/// One model per (kind, β, latent dim) on the train split, evaluated on the
/// test split. The autoencoder ignores β but is still trained once per β so
/// the grid stays rectangular.
pub fn hyperparam_sweep(spec: &ExperimentSpec, corpus: &Corpus) -> Result<MseReport> {
    if spec.protocol != Protocol::Sweep {
        return Err(Error::InvalidArgument("spec is not a sweep".into()));
    }
    if spec.betas.is_empty() || spec.latent_dims.is_empty() || spec.kinds.is_empty() {
        return Err(Error::InvalidArgument("sweep grid is empty".into()));
    }
    let midis = corpus.midis();
    let train_set = samples_of(&corpus.train_records(&midis))?;
    let test_set = samples_of(&corpus.test_records(&midis))?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::Empty("train or test split"));
    }
    let mut cells = Vec::new();
    for &kind in &spec.kinds {
        for &beta in &spec.betas {
            for &dim in &spec.latent_dims {
                let seed = cell_seed(spec.seed, cells.len() as u64);
                cells.push(config_for(&spec.base, kind, beta, dim, seed));
            }
        }
    }
    let results = cells
        .par_iter()
        .map(|cfg| run_cell(cfg, &train_set, &[(None, &test_set)]))
        .collect::<Result<Vec<_>>>()?;

    let mut report = MseReport {
        rows: Vec::new(),
        metadata: ReportMetadata {
            protocol: Some(Protocol::Sweep),
            split_seed: corpus.split.seed,
            master_seed: spec.seed,
            betas: spec.betas.clone(),
            latent_dims: spec.latent_dims.clone(),
            cell_seeds: cells.iter().map(|c| c.seed).collect(),
            train_midis: midis.iter().copied().collect(),
            notes: vec!["MSE over padded 91-dim vectors in the raw coefficient domain".into()],
            ..Default::default()
        },
    };
    for (cfg, (rows, diag)) in cells.iter().zip(results) {
        for (midi, mse) in rows {
            report.rows.push(MseRow {
                model_kind: cfg.kind,
                beta: cfg.beta,
                latent_dim: cfg.latent_dim,
                midi,
                mse,
            });
        }
        report.metadata.diagnostics.extend(diag);
    }
    report.sort();
    Ok(report)
}

/// Training labels for the skipped-pitch protocol: `{T−3..T+3} \ {T}`.
pub fn skip_pitch_labels(target: i32) -> Result<BTreeSet<i32>> {
    if !SKIP_TARGETS.contains(&target) {
        return Err(Error::InvalidArgument(format!(
            "skip-pitch target {target} outside {}..={}",
            SKIP_TARGETS.start(),
            SKIP_TARGETS.end()
        )));
    }
    Ok((target - 3..=target + 3).filter(|&m| m != target).collect())
}

/// Frames a skipped-pitch run trains on (train split of the neighbours).
pub fn skip_pitch_training<'a>(corpus: &'a Corpus, target: i32) -> Result<Vec<&'a EnvelopeRecord>> {
    Ok(corpus.train_records(&skip_pitch_labels(target)?))
}

pub fn endpoint_training(corpus: &Corpus) -> Vec<&EnvelopeRecord> {
    corpus.train_records(&[*OCTAVE.start(), *OCTAVE.end()].into_iter().collect())
}

fn pair_report(protocol: Protocol, spec_seed: u64, corpus: &Corpus, base: &TrainConfig) -> MseReport {
    MseReport {
        rows: Vec::new(),
        metadata: ReportMetadata {
            protocol: Some(protocol),
            split_seed: corpus.split.seed,
            master_seed: spec_seed,
            betas: vec![base.beta],
            latent_dims: vec![base.latent_dim],
            ..Default::default()
        },
    }
}

/// Trains each kind on the neighbours of `target` and evaluates on every
/// frame of `target`. The seen-pitch baseline (test split of the neighbours)
/// goes to the metadata.
pub fn skip_pitch_experiment(target: i32, kinds: &[ModelKind], corpus: &Corpus, base: &TrainConfig, seed: u64) -> Result<MseReport> {
    let labels = skip_pitch_labels(target)?;
    let train_recs = corpus.train_records(&labels);
    let unseen = corpus.all_records(target);
    let seen = corpus.test_records(&labels);
    if train_recs.is_empty() || unseen.is_empty() || seen.is_empty() {
        return Err(Error::TooFewRecords {
            label: target,
            count: unseen.len().min(train_recs.len()).min(seen.len()),
        });
    }
    let train_set = samples_of(&train_recs)?;
    let unseen_set = samples_of(&unseen)?;
    let seen_set = samples_of(&seen)?;

    let cfgs: Vec<TrainConfig> = kinds
        .iter()
        .enumerate()
        .map(|(i, &k)| config_for(base, k, base.beta, base.latent_dim, cell_seed(seed, i as u64)))
        .collect();
    let results = cfgs
        .par_iter()
        .map(|cfg| run_cell(cfg, &train_set, &[(Some(target), &unseen_set), (None, &seen_set)]))
        .collect::<Result<Vec<_>>>()?;

    let mut report = pair_report(Protocol::SkipPitch, seed, corpus, base);
    report.metadata.target_midi = Some(target);
    report.metadata.train_midis = labels.iter().copied().collect();
    report.metadata.cell_seeds = cfgs.iter().map(|c| c.seed).collect();
    report
        .metadata
        .notes
        .push("unseen MSE over all frames of the target; baseline over test-split frames of the training pitches".into());
    for (cfg, (rows, diag)) in cfgs.iter().zip(results) {
        for (midi, mse) in rows {
            match midi {
                Some(_) => report.rows.push(MseRow {
                    model_kind: cfg.kind,
                    beta: cfg.beta,
                    latent_dim: cfg.latent_dim,
                    midi,
                    mse,
                }),
                None => report.metadata.baselines.push(Baseline { model_kind: cfg.kind, mse }),
            }
        }
        report.metadata.diagnostics.extend(diag);
    }
    report.sort();
    Ok(report)
}

/// Trains on the octave endpoints and evaluates every MIDI of the octave:
/// the endpoints on their test split, the unseen interior on all frames.
pub fn endpoint_experiment(kinds: &[ModelKind], corpus: &Corpus, base: &TrainConfig, seed: u64) -> Result<MseReport> {
    let (lo, hi) = (*OCTAVE.start(), *OCTAVE.end());
    let train_recs = endpoint_training(corpus);
    for m in [lo, hi] {
        if !train_recs.iter().any(|r| r.midi == m) {
            return Err(Error::TooFewRecords { label: m, count: 0 });
        }
    }
    let train_set = samples_of(&train_recs)?;
    let mut evals = Vec::new();
    for midi in OCTAVE {
        let recs = if midi == lo || midi == hi {
            corpus.test_records(&[midi].into_iter().collect())
        } else {
            corpus.all_records(midi)
        };
        if recs.is_empty() {
            return Err(Error::TooFewRecords { label: midi, count: 0 });
        }
        evals.push((Some(midi), samples_of(&recs)?));
    }
    let eval_refs: Vec<(Option<i32>, &Samples)> = evals.iter().map(|(m, s)| (*m, s)).collect();

    let cfgs: Vec<TrainConfig> = kinds
        .iter()
        .enumerate()
        .map(|(i, &k)| config_for(base, k, base.beta, base.latent_dim, cell_seed(seed, i as u64)))
        .collect();
    let results = cfgs
        .par_iter()
        .map(|cfg| run_cell(cfg, &train_set, &eval_refs))
        .collect::<Result<Vec<_>>>()?;

    let mut report = pair_report(Protocol::Endpoints, seed, corpus, base);
    report.metadata.train_midis = vec![lo, hi];
    report.metadata.cell_seeds = cfgs.iter().map(|c| c.seed).collect();
    report
        .metadata
        .notes
        .push("endpoints evaluated on their test split, interior pitches on all frames".into());
    for (cfg, (rows, diag)) in cfgs.iter().zip(results) {
        for (midi, mse) in rows {
            report.rows.push(MseRow {
                model_kind: cfg.kind,
                beta: cfg.beta,
                latent_dim: cfg.latent_dim,
                midi,
                mse,
            });
        }
        report.metadata.diagnostics.extend(diag);
    }
    report.sort();
    Ok(report)
}

/// `z_0 = 0`, `z_{t+1} = z_t + step·n_t`.
pub fn random_walk_latents<R: Rng + ?Sized>(n_frames: usize, step: f64, latent_dim: usize, rng: &mut R) -> Result<Vec<LatentCode>> {
    if n_frames == 0 {
        return Err(Error::InvalidArgument("random walk needs at least one frame".into()));
    }
    if !(step >= 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("walk step {step} must be finite and ≥ 0")));
    }
    let mut z = vec![0.0; latent_dim];
    let mut out = Vec::with_capacity(n_frames);
    out.push(LatentCode { z: z.clone() });
    for _ in 1..n_frames {
        for v in z.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v += step * n;
        }
        out.push(LatentCode { z: z.clone() });
    }
    Ok(out)
}

/// Decodes a latent walk at a fixed pitch into harmonic frames.
pub fn generate_note<R: Rng + ?Sized>(
    m: &ModelParams,
    f0: f64,
    n_frames: usize,
    step: f64,
    rng: &mut R,
    grid: SpectralGrid,
) -> Result<Vec<SynthFrame>> {
    if !m.config.conditional {
        return Err(Error::ModelMismatch("generation needs a pitch-conditioned model".into()));
    }
    check_band(f0, grid.sample_rate)?;
    let midi = crate::pitch::hz_to_midi(f0);
    random_walk_latents(n_frames, step, m.latent_dim(), rng)?
        .iter()
        .map(|z| frame_from_padded(m.decode(z, Some(midi))?, f0, grid))
        .collect()
}
