//! Synthetic envelope families with a known, pitch-dependent shape.
//!
//! Each log-amplitude envelope is a fixed spectral tilt, a few broad
//! resonances whose centres rise with pitch, and a set of timbre factors
//! whose weights vary per take (and drift slowly within a take). Each factor
//! is a fine spectral ripple confined to its own band of quefrencies, so the
//! factors are orthogonal and equally strong after per-coefficient
//! standardization. Coefficients are stored up to the order `k_cc(f0)` of
//! the note, exactly as analysis would store them.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::split_dataset;
use crate::envelope::{kcc_for_pitch, real_cepstrum, PaddedEnvelope, SpectralGrid};
use crate::experiments::Corpus;
use crate::formats::{EnvelopeRecord, EnvelopeTable};
use crate::pitch::midi_to_hz;
use crate::synthesis::{render_additive, SynthFrame};
use crate::{Error, Result, PAD_WIDTH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyConfig {
    /// When false the mean envelope is frozen at MIDI 60 for every pitch.
    pub pitch_dependent: bool,
    /// Resonance centres scale as `2^(shift·(midi−60)/12)`.
    pub formant_shift: f64,
    /// Multiplies every resonance height.
    pub formant_gain: f64,
    /// Multiplies every resonance width.
    pub formant_width: f64,
    pub n_factors: usize,
    /// Std of a factor weight across takes.
    pub factor_std: f64,
    /// Std of the within-take drift of each factor weight.
    pub drift_std: f64,
    /// Frame-to-frame correlation of the drift.
    pub drift_corr: f64,
    /// First quefrency used by timbre; `[timbre_q_lo, 91)` is split into
    /// one band per factor.
    pub timbre_q_lo: usize,
    /// Magnitude of every coefficient of a factor pattern at unit weight.
    pub ripple_amp: f64,
    /// White noise added to every stored coefficient.
    pub cc_noise: f64,
    /// Fixes ripple signs; takes draw from their own streams.
    pub seed: u64,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        FamilyConfig {
            pitch_dependent: true,
            formant_shift: 1.0,
            formant_gain: 1.0,
            formant_width: 1.0,
            n_factors: 9,
            factor_std: 1.0,
            drift_std: 0.15,
            drift_corr: 0.9,
            timbre_q_lo: 14,
            ripple_amp: 0.01,
            cc_noise: 1e-3,
            seed: 7,
        }
    }
}

/// (centre Hz, height nats, std Hz)
const FORMANTS: [(f64, f64, f64); 3] = [(600.0, 6.0, 1250.0), (1700.0, 4.0, 1500.0), (3200.0, 3.2, 1750.0)];

#[derive(Debug, Clone)]
pub struct Family {
    pub config: FamilyConfig,
    pub grid: SpectralGrid,
    /// Coefficients 0..91 of each unit-weight factor.
    patterns: Vec<Vec<f64>>,
}

fn bump(f: f64, centre: f64, width: f64) -> f64 {
    (-0.5 * ((f - centre) / width).powi(2)).exp()
}

impl Family {
    pub fn new(config: FamilyConfig, grid: SpectralGrid) -> Result<Self> {
        let n = config.n_factors;
        let lo = config.timbre_q_lo;
        if !(0.0..1.0).contains(&config.drift_corr) || lo == 0 || (n > 0 && PAD_WIDTH - lo < 2 * n) {
            return Err(Error::InvalidArgument(format!(
                "cannot fit {n} timbre bands above quefrency {lo} (drift correlation must lie in [0, 1))"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let width = (PAD_WIDTH - lo) as f64 / n.max(1) as f64;
        let patterns = (0..n)
            .map(|i| {
                // a fixed random-sign ripple over this factor's band
                let start = lo as f64 + i as f64 * width;
                (0..PAD_WIDTH)
                    .map(|q| {
                        let u = (q as f64 - start) / width;
                        if (0.0..1.0).contains(&u) {
                            if rng.random::<bool>() { config.ripple_amp } else { -config.ripple_amp }
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Family { config, grid, patterns })
    }

    /// Tilt plus pitch-dependent resonances, no timbre.
    fn mean_curve(&self, midi: f64) -> Vec<f64> {
        let p = if self.config.pitch_dependent { midi } else { 60.0 };
        let scale = 2f64.powf(self.config.formant_shift * (p - 60.0) / 12.0);
        let bin = self.grid.bin_hz();
        let nyq = self.grid.nyquist();
        // every term is even about DC and Nyquist, so the cepstrum of the
        // mean decays fast and truncation adds little
        (0..self.grid.n_bins())
            .map(|k| {
                let f = k as f64 * bin;
                let mut v = -2.0 - 2.0 * (1.0 - (std::f64::consts::PI * f / nyq).cos());
                for &(c, h, s) in &FORMANTS {
                    let (c, s) = (c * scale, s * self.config.formant_width);
                    let g = bump(f, c, s) + bump(f, -c, s) + bump(f, 2.0 * nyq - c, s);
                    v += self.config.formant_gain * h * g;
                }
                v
            })
            .collect()
    }

    /// Cepstrum (0..=N/2) of the envelope at `midi` with bump heights `w`.
    fn cepstrum(&self, midi: f64, w: &[f64]) -> Result<Vec<f64>> {
        let mut cep = real_cepstrum(&self.mean_curve(midi))?;
        cep.truncate(self.grid.fft_size / 2 + 1);
        for (pat, wi) in self.patterns.iter().zip(w) {
            // patterns stop at 91 < N/2
            cep.iter_mut().zip(pat).for_each(|(c, p)| *c += wi * p);
        }
        Ok(cep)
    }

    /// Noise-free log curve (half spectrum) at `midi` with bump heights `w`.
    pub fn log_curve(&self, midi: f64, w: &[f64]) -> Result<Vec<f64>> {
        crate::envelope::ccs_to_logmag(&self.cepstrum(midi, w)?, self.grid.fft_size)
    }

    fn padded(&self, midi: f64, cep: &[f64], noise: Option<&mut ChaCha8Rng>) -> Result<PaddedEnvelope> {
        let f0 = midi_to_hz(midi);
        let k = kcc_for_pitch(f0, self.grid.sample_rate)?;
        let mut x = vec![0.0; PAD_WIDTH];
        x[..k].copy_from_slice(&cep[..k]);
        if let Some(rng) = noise {
            for v in &mut x[..k] {
                let n: f64 = rng.sample(StandardNormal);
                *v += self.config.cc_noise * n;
            }
        }
        Ok(PaddedEnvelope { x, f0, k_cc: k })
    }

    /// The family member at `midi` with every timbre factor at zero.
    pub fn mean_envelope(&self, midi: f64) -> Result<PaddedEnvelope> {
        self.padded(midi, &self.cepstrum(midi, &[])?, None)
    }

    /// Bump heights for each frame of one take: a take offset plus AR(1) drift.
    pub fn take_factors(&self, n_frames: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let c = &self.config;
        let offset: Vec<f64> = (0..c.n_factors).map(|_| c.factor_std * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut drift: Vec<f64> = (0..c.n_factors).map(|_| c.drift_std * rng.sample::<f64, _>(StandardNormal)).collect();
        let innov = c.drift_std * (1.0 - c.drift_corr * c.drift_corr).sqrt();
        let mut out = Vec::with_capacity(n_frames);
        for t in 0..n_frames {
            if t > 0 {
                for d in &mut drift {
                    *d = c.drift_corr * *d + innov * rng.sample::<f64, _>(StandardNormal);
                }
            }
            out.push(offset.iter().zip(&drift).map(|(a, b)| a + b).collect());
        }
        out
    }

    /// Padded envelopes for one take.
    pub fn take_envelopes(&self, midi: i32, n_frames: usize, rng: &mut ChaCha8Rng) -> Result<Vec<PaddedEnvelope>> {
        self.take_factors(n_frames, rng)
            .iter()
            .map(|w| {
                let cep = self.cepstrum(midi as f64, w)?;
                self.padded(midi as f64, &cep, Some(rng))
            })
            .collect()
    }

    /// Harmonic frames for one take (amplitudes read off the noise-free curve).
    pub fn take_harmonics(&self, midi: i32, n_frames: usize, rng: &mut ChaCha8Rng) -> Result<Vec<SynthFrame>> {
        let f0 = midi_to_hz(midi as f64);
        let count = crate::envelope::harmonic_count(f0, self.grid.sample_rate);
        self.take_factors(n_frames, rng)
            .iter()
            .map(|w| {
                let curve = self.log_curve(midi as f64, w)?;
                let amps = (1..=count)
                    .map(|h| crate::analysis::interpolate_bins(&curve, h as f64 * f0 / self.grid.bin_hz()).exp())
                    .collect();
                Ok(SynthFrame { f0, amps })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub family: FamilyConfig,
    pub midis: Vec<i32>,
    pub takes_per_pitch: usize,
    pub frames_per_take: usize,
    pub train_ratio: f64,
    pub split_seed: u64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            family: FamilyConfig::default(),
            midis: (60..=71).collect(),
            takes_per_pitch: 40,
            frames_per_take: 5,
            train_ratio: 0.8,
            split_seed: 0,
            seed: 1,
        }
    }
}

pub fn take_id(midi: i32, take: usize) -> String {
    format!("synth_midi{midi}_take{take:02}")
}

/// Per-take stream so a take's frames do not depend on which others exist.
fn take_rng(seed: u64, midi: i32, take: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((midi as u64) << 16) | take as u64);
    r
}

pub fn generate_corpus(cfg: &CorpusConfig, grid: SpectralGrid) -> Result<(Family, Corpus)> {
    if cfg.takes_per_pitch < 2 || cfg.frames_per_take == 0 {
        return Err(Error::InvalidArgument("need at least 2 takes per pitch and 1 frame per take".into()));
    }
    let family = Family::new(cfg.family.clone(), grid)?;
    let mut records = Vec::new();
    let mut takes = Vec::new();
    for &midi in &cfg.midis {
        for t in 0..cfg.takes_per_pitch {
            let id = take_id(midi, t);
            let mut rng = take_rng(cfg.seed, midi, t);
            for (i, envelope) in family.take_envelopes(midi, cfg.frames_per_take, &mut rng)?.into_iter().enumerate() {
                records.push(EnvelopeRecord {
                    take_id: id.clone(),
                    midi,
                    frame_index: i as u32,
                    envelope,
                });
            }
            takes.push((id, midi));
        }
    }
    let split = split_dataset(&takes, cfg.train_ratio, cfg.split_seed)?;
    Ok((family, Corpus::new(records, split)))
}

pub fn corpus_table(corpus: &Corpus, grid: SpectralGrid) -> EnvelopeTable {
    let mut table = EnvelopeTable::new(grid.sample_rate as u32, grid.fft_size as u32);
    table.records = corpus.records.clone();
    table
}

/// Log-amplitude contrast applied when a take is rendered as audio. The
/// envelope family spans about 170 dB, far beyond 16-bit PCM; scaled by this
/// factor it spans about 60 dB and every harmonic stays above quantization
/// noise.
pub const AUDIO_CONTRAST: f64 = 0.35;

/// Renders one take as audio: `seconds` of steady tone with linear
/// fade-in/out of `fade` seconds, peak 0.5. Harmonic amplitudes are the
/// family's raised to [`AUDIO_CONTRAST`].
pub fn render_take(family: &Family, midi: i32, take: usize, seed: u64, seconds: f64, fade: f64, hop: usize) -> Result<Vec<f64>> {
    let fs = family.grid.sample_rate;
    let n_frames = (seconds * fs / hop as f64).ceil() as usize + 1;
    let mut frames = family.take_harmonics(midi, n_frames, &mut take_rng(seed, midi, take))?;
    let total = (n_frames - 1) as f64 * hop as f64 / fs;
    for (i, f) in frames.iter_mut().enumerate() {
        let t = i as f64 * hop as f64 / fs;
        let g = (t / fade).min((total - t) / fade).clamp(0.0, 1.0);
        f.amps.iter_mut().for_each(|a| *a = g * a.powf(AUDIO_CONTRAST));
    }
    let mut y = render_additive(&frames, hop, fs)?;
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        y.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    Ok(y)
}

/// Writes `synth_midi<NN>_take<TT>.wav` files for every pitch and take.
pub fn write_wav_dataset(dir: &Path, cfg: &CorpusConfig, seconds: f64, sample_rate: u32) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let family = Family::new(cfg.family.clone(), SpectralGrid::new(sample_rate as f64, 2048))?;
    let mut paths = Vec::new();
    for &midi in &cfg.midis {
        for t in 0..cfg.takes_per_pitch {
            let y = render_take(&family, midi, t, cfg.seed, seconds, 0.1, crate::dataset::DEFAULT_HOP)?;
            let path = dir.join(format!("{}.wav", take_id(midi, t)));
            crate::wav::write_wav(&y, sample_rate, &path)?;
            paths.push(path);
        }
    }
    Ok(paths)
}
