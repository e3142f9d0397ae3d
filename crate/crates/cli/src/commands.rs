use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use parasynth::dataset::Metadata;
use parasynth::envelope::SpectralGrid;
use parasynth::experiments::{
    endpoint_experiment, endpoint_training, generate_note, hyperparam_sweep, skip_pitch_experiment, Corpus, ExperimentSpec,
    MseReport, Protocol, OCTAVE, SKIP_TARGETS,
};
use parasynth::formats::{read_envelopes, read_frame_table, write_envelopes, write_frame_table};
use parasynth::model::{read_model, write_loss_csv, train_with, write_model, ModelKind, ModelParams, TrainConfig};
use parasynth::pitch::midi_to_hz;
use parasynth::synthesis::{additive_synth, check_band, synthesize_note, vibrato_contour, write_wav};
use parasynth::synthetic::{corpus_table, generate_corpus, write_wav_dataset};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::output::{sidecar_path, Outputs};
use crate::pipeline::{analyze_frames, frame_takes, wav_files, Manifest};
use crate::{Failure, NoteArgs, ReconArgs, ReconProtocol, TrainArgs, VibratoArgs};

pub struct Context<'a> {
    pub cfg: &'a PipelineConfig,
    pub out: Option<PathBuf>,
    pub overwrite: bool,
}

impl Context<'_> {
    fn outputs(&self, command: &'static str) -> Outputs<'_> {
        Outputs {
            overwrite: self.overwrite,
            config: self.cfg,
            command,
        }
    }

    fn out_or(&self, default: PathBuf) -> PathBuf {
        self.out.clone().unwrap_or(default)
    }

    fn grid(&self) -> SpectralGrid {
        SpectralGrid::new(self.cfg.synthesis.sample_rate as f64, self.cfg.analysis.fft_size)
    }
}

fn require(path: &Path, what: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::data(format!(
            "missing {what} {} (run the upstream command first)",
            path.display()
        )))
    }
}

fn load_corpus(cfg: &PipelineConfig) -> Result<Corpus, Failure> {
    let (env_path, split_path) = (cfg.paths.envelopes(), cfg.paths.split());
    require(&env_path, "envelope table")?;
    require(&split_path, "split manifest")?;
    let table = read_envelopes(&env_path)?;
    let manifest = Manifest::load(&split_path)?;
    if table.records.is_empty() {
        return Err(Failure::data(format!("{} holds no envelopes", env_path.display())));
    }
    Ok(Corpus::new(table.records, manifest.split))
}

fn load_model(cfg: &PipelineConfig, path: Option<&Path>) -> Result<ModelParams, Failure> {
    let path = path.map(Path::to_path_buf).unwrap_or_else(|| cfg.paths.model());
    require(&path, "model")?;
    Ok(read_model(&path)?)
}

pub fn synth(ctx: &Context, envelopes: bool) -> Result<(), Failure> {
    let s = &ctx.cfg.synthetic;
    let mut corpus_cfg = s.corpus.clone();
    corpus_cfg.split_seed = ctx.cfg.seed;
    let outputs = ctx.outputs("synth");
    if envelopes {
        let env_path = ctx.out_or(ctx.cfg.paths.envelopes());
        let split_path = ctx.cfg.paths.split();
        outputs.claim(&[&env_path, &split_path])?;
        let grid = SpectralGrid::new(s.sample_rate as f64, ctx.cfg.analysis.fft_size);
        let (_, corpus) = generate_corpus(&corpus_cfg, grid)?;
        write_envelopes(&corpus_table(&corpus, grid), &env_path)?;
        let manifest = Manifest::of_split(corpus.split.clone(), corpus_cfg.train_ratio);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        crate::output::write_file(&split_path, text.as_bytes())?;
        outputs.sidecar(&env_path, serde_json::json!({ "records": corpus.records.len() }))
    } else {
        let dir = ctx.out_or(ctx.cfg.paths.dataset_dir.clone());
        let occupied = std::fs::read_dir(&dir).map(|mut d| d.next().is_some()).unwrap_or(false);
        if occupied && !ctx.overwrite {
            return Err(Failure::usage(format!(
                "{} is not empty; pass --overwrite to write into it",
                dir.display()
            )));
        }
        let files = write_wav_dataset(&dir, &corpus_cfg, s.seconds, s.sample_rate)?;
        println!("wrote {} takes to {}", files.len(), dir.display());
        Ok(())
    }
}

pub fn ingest(ctx: &Context) -> Result<(), Failure> {
    let cfg = ctx.cfg;
    let frames_path = ctx.out_or(cfg.paths.frames());
    let split_path = cfg.paths.split();
    let outputs = ctx.outputs("ingest");
    outputs.claim(&[&frames_path, &split_path])?;
    let dir = &cfg.paths.dataset_dir;
    if !dir.is_dir() {
        return Err(Failure::data(format!("dataset directory {} not found", dir.display())));
    }
    let metadata = match &cfg.paths.metadata {
        Some(p) => Some(Metadata::load(p)?),
        None => None,
    };
    let files = wav_files(dir)?;
    let table = frame_takes(&files, metadata.as_ref(), &cfg.ingest.sustain, cfg.ingest.hop)?;
    let manifest = Manifest::build(&table, cfg.ingest.split_ratio, cfg.seed)?;
    write_frame_table(&table, &frames_path)?;
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    crate::output::write_file(&split_path, text.as_bytes())?;
    outputs.sidecar(
        &frames_path,
        serde_json::json!({ "files": files.len(), "frames": table.frames.len(), "labels": manifest.labels.len() }),
    )?;
    println!(
        "{} frames from {} takes, {} labels",
        table.frames.len(),
        manifest.split.train.len() + manifest.split.test.len(),
        manifest.labels.len()
    );
    Ok(())
}

pub fn analyze(ctx: &Context) -> Result<(), Failure> {
    let cfg = ctx.cfg;
    let frames_path = cfg.paths.frames();
    let env_path = ctx.out_or(cfg.paths.envelopes());
    let outputs = ctx.outputs("analyze");
    require(&frames_path, "frame table")?;
    outputs.claim(&[&env_path])?;
    let table = read_frame_table(&frames_path)?;
    let envs = analyze_frames(&table, &cfg.analysis, &cfg.tae)?;
    write_envelopes(&envs, &env_path)?;
    outputs.sidecar(&env_path, serde_json::json!({ "records": envs.records.len() }))?;
    println!("{} envelopes", envs.records.len());
    Ok(())
}

/// Training configuration after flag overrides. Picking a kind also picks
/// its conditioning.
fn train_config(cfg: &PipelineConfig, a: &TrainArgs) -> TrainConfig {
    let mut tc = cfg.model.clone();
    if let Some(k) = a.kind {
        tc.kind = k;
        tc.conditional = k == ModelKind::Cvae;
    }
    if let Some(b) = a.beta {
        tc.beta = b;
    }
    if let Some(d) = a.latent_dim {
        tc.latent_dim = d;
    }
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    tc.seed = cfg.seed;
    tc
}

#[derive(Serialize)]
struct TrainDetails {
    train_config: TrainConfig,
    train_midis: Vec<i32>,
    n_samples: usize,
    final_recon: f64,
    final_kl: f64,
}

pub fn train(ctx: &Context, a: &TrainArgs) -> Result<(), Failure> {
    let cfg = ctx.cfg;
    let tc = train_config(cfg, a);
    tc.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let model_path = ctx.out_or(cfg.paths.model());
    let loss_path = model_path.with_extension("loss.csv");
    let outputs = ctx.outputs("train");
    let corpus = load_corpus(cfg)?;
    outputs.claim(&[&model_path, &loss_path])?;

    let records = if a.endpoints {
        endpoint_training(&corpus)
    } else {
        let excluded: BTreeSet<i32> = a.exclude_midi.iter().copied().collect();
        let midis: BTreeSet<i32> = corpus.midis().difference(&excluded).copied().collect();
        corpus.train_records(&midis)
    };
    if records.is_empty() {
        return Err(Failure::data("no training frames left after the pitch selection"));
    }
    let train_midis: BTreeSet<i32> = records.iter().map(|r| r.midi).collect();
    let data = parasynth::experiments::samples_of(&records)?;
    let mut history = Vec::with_capacity(tc.epochs);
    let model = train_with(&data, &tc, |_, l| history.push(*l))?;

    write_model(&model, &model_path)?;
    let last = history.last().copied().expect("at least one epoch");
    outputs.csv(&loss_path, |w, c| write_loss_csv(w, &history, Some(c)))?;
    outputs.sidecar(
        &model_path,
        TrainDetails {
            train_config: tc,
            train_midis: train_midis.into_iter().collect(),
            n_samples: data.len(),
            final_recon: last.recon,
            final_kl: last.kl,
        },
    )?;
    println!("trained on {} frames: recon {:.4e}, kl {:.4e}", data.len(), last.recon, last.kl);
    Ok(())
}

fn write_report(ctx: &Context, outputs: &Outputs, path: &Path, mut report: MseReport) -> Result<(), Failure> {
    report.metadata.config_hash = Some(ctx.cfg.hash());
    outputs.csv(path, |w, c| report.write_csv(w, Some(c)))?;
    outputs.sidecar(path, &report.metadata)?;
    for row in &report.rows {
        let midi = row.midi.map_or("all".to_string(), |m| m.to_string());
        println!(
            "{:>4} beta={:<5} dim={:<3} midi={:<4} mse={:.4e}",
            row.model_kind.name(),
            row.beta,
            row.latent_dim,
            midi,
            row.mse
        );
    }
    if report.metadata.diagnostics.is_empty() {
        Ok(())
    } else {
        Err(Failure::numeric(format!(
            "{} cell(s) failed numerically; see {}",
            report.metadata.diagnostics.len(),
            sidecar_path(path).display()
        )))
    }
}

pub fn sweep(ctx: &Context) -> Result<(), Failure> {
    let cfg = ctx.cfg;
    let g = &cfg.experiments;
    if g.betas.is_empty() || g.latent_dims.is_empty() || g.kinds.is_empty() {
        return Err(Failure::usage("sweep grid is empty"));
    }
    let path = ctx.out_or(cfg.paths.work_dir.join("sweep.csv"));
    let outputs = ctx.outputs("sweep");
    let corpus = load_corpus(cfg)?;
    outputs.claim(&[&path])?;
    let spec = ExperimentSpec {
        protocol: Protocol::Sweep,
        target_midi: None,
        betas: g.betas.clone(),
        latent_dims: g.latent_dims.clone(),
        kinds: g.kinds.clone(),
        seed: cfg.seed,
        base: cfg.model.clone(),
    };
    let report = hyperparam_sweep(&spec, &corpus)?;
    write_report(ctx, &outputs, &path, report)
}

pub fn recon(ctx: &Context, a: &ReconArgs) -> Result<(), Failure> {
    let cfg = ctx.cfg;
    if let Some(m) = a.midi {
        if !OCTAVE.contains(&m) {
            return Err(Failure::usage(format!("--midi {m} lies outside the octave 60..71")));
        }
    }
    let default = match (a.protocol, a.midi) {
        (ReconProtocol::SkipPitch, Some(t)) if SKIP_TARGETS.contains(&t) => format!("recon_skip_midi{t}.csv"),
        (ReconProtocol::SkipPitch, Some(t)) => {
            return Err(Failure::usage(format!(
                "skip-pitch needs --midi in {}..{} so three neighbours exist on each side (got {t})",
                SKIP_TARGETS.start(),
                SKIP_TARGETS.end()
            )))
        }
        (ReconProtocol::SkipPitch, None) => return Err(Failure::usage("skip-pitch needs --midi")),
        (ReconProtocol::Endpoints, None) => "recon_endpoints.csv".to_string(),
        (ReconProtocol::Endpoints, Some(_)) => return Err(Failure::usage("--midi does not apply to the endpoint protocol")),
    };
    let path = ctx.out_or(cfg.paths.work_dir.join(default));
    let outputs = ctx.outputs("recon");
    let corpus = load_corpus(cfg)?;
    outputs.claim(&[&path])?;
    let kinds = &cfg.experiments.kinds;
    let report = match a.midi {
        Some(t) => skip_pitch_experiment(t, kinds, &corpus, &cfg.model, cfg.seed)?,
        None => endpoint_experiment(kinds, &corpus, &cfg.model, cfg.seed)?,
    };
    write_report(ctx, &outputs, &path, report)
}

fn note_setup(ctx: &Context, a: &NoteArgs, name: &str) -> Result<(ModelParams, PathBuf, usize, f64), Failure> {
    let s = &ctx.cfg.synthesis;
    let f0 = midi_to_hz(a.midi);
    check_band(f0, s.sample_rate as f64).map_err(|e| Failure::usage(e.to_string()))?;
    let seconds = a.seconds.unwrap_or(s.seconds);
    if !(seconds > 0.0 && seconds.is_finite()) || s.hop == 0 {
        return Err(Failure::usage("duration and hop must be positive"));
    }
    let n_frames = (seconds * s.sample_rate as f64 / s.hop as f64).round() as usize + 1;
    let path = ctx.out_or(ctx.cfg.paths.work_dir.join(format!("{name}_midi{}.wav", a.midi)));
    let model = load_model(ctx.cfg, a.model.as_deref())?;
    if !model.config.conditional {
        return Err(Failure::usage("rendering needs a pitch-conditioned model (train with --kind cvae)"));
    }
    Ok((model, path, n_frames, f0))
}

pub fn generate(ctx: &Context, a: &NoteArgs) -> Result<(), Failure> {
    let s = &ctx.cfg.synthesis;
    let (model, path, n_frames, f0) = note_setup(ctx, a, "generate")?;
    let outputs = ctx.outputs("generate");
    outputs.claim(&[&path])?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
    let step = a.step.unwrap_or(s.walk_step);
    let frames = generate_note(&model, f0, n_frames, step, &mut rng, ctx.grid())?;
    let y = additive_synth(&frames, s.hop, s.sample_rate as f64)?;
    write_wav(&y, s.sample_rate, &path)?;
    outputs.sidecar(&path, serde_json::json!({ "f0": f0, "frames": n_frames, "step": step }))?;
    println!("wrote {} ({} samples, f0 {:.2} Hz)", path.display(), y.len(), f0);
    Ok(())
}

pub fn vibrato(ctx: &Context, a: &VibratoArgs) -> Result<(), Failure> {
    let s = &ctx.cfg.synthesis;
    let (model, path, n_frames, f0) = note_setup(ctx, &a.note, "vibrato")?;
    let outputs = ctx.outputs("vibrato");
    outputs.claim(&[&path])?;
    let rate = a.rate.unwrap_or(s.vibrato_rate);
    let depth = a.depth.unwrap_or(s.vibrato_depth_cents);
    let contour = vibrato_contour(f0, rate, depth, n_frames, s.hop, s.sample_rate as f64)
        .map_err(|e| Failure::usage(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
    let step = a.note.step.unwrap_or(s.walk_step);
    let y = synthesize_note(&model, &contour, step, &mut rng, ctx.grid(), s.hop)?;
    write_wav(&y, s.sample_rate, &path)?;
    outputs.sidecar(
        &path,
        serde_json::json!({ "f0": f0, "frames": n_frames, "rate": rate, "depth_cents": depth, "step": step }),
    )?;
    println!("wrote {} ({} samples, {rate} Hz / {depth} cents)", path.display(), y.len());
    Ok(())
}
