//! Additive resynthesis: a phase-continuous harmonic oscillator bank driven
//! by per-hop frames, plus vibrato contours.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;

use crate::envelope::{harmonic_count, kcc_for_pitch, sample_at_harmonics, unpad, PaddedEnvelope, SpectralGrid};
use crate::experiments::random_walk_latents;
use crate::model::ModelParams;
use crate::pitch::hz_to_midi;
use crate::{Error, Result};

/// Peak level after normalization.
pub const NORMALIZED_PEAK: f64 = 0.9;
pub const DEFAULT_VIBRATO_RATE: f64 = 5.5;
pub const DEFAULT_VIBRATO_DEPTH: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub f0: f64,
    /// Linear amplitudes of harmonics 1..=len.
    pub amps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PitchContour {
    pub f0: Vec<f64>,
}

/// Lowest and highest f0 that still leave room for one harmonic plus the
/// spare below Nyquist: `20 < f0 < Fs/4`.
pub fn synthesis_band(sample_rate: f64) -> (f64, f64) {
    (20.0, sample_rate / 4.0)
}

pub fn check_band(f0: f64, sample_rate: f64) -> Result<()> {
    let (low, high) = synthesis_band(sample_rate);
    if !(f0 > low && f0 < high) {
        return Err(Error::OutOfBand { freq: f0, low, high });
    }
    Ok(())
}

fn validate_frames(frames: &[SynthFrame], sample_rate: f64) -> Result<()> {
    if frames.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 frames, got {}", frames.len())));
    }
    let nyquist = sample_rate / 2.0;
    for fr in frames {
        if !(fr.f0 > 0.0 && fr.f0.is_finite()) {
            return Err(Error::InvalidArgument(format!("frame f0 {} is not positive", fr.f0)));
        }
        if fr.amps.len() as f64 * fr.f0 >= nyquist {
            return Err(Error::OutOfBand {
                freq: fr.amps.len() as f64 * fr.f0,
                low: 0.0,
                high: nyquist,
            });
        }
        if fr.amps.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(Error::InvalidArgument("harmonic amplitudes must be finite and ≥ 0".into()));
        }
    }
    Ok(())
}

/// Oscillator bank without output normalization. Frame `k` sits at sample
/// `k·hop`; f0 and amplitudes are interpolated linearly inside each hop and a
/// harmonic missing from one side fades to or from zero. Output length is
/// `(frames − 1)·hop`.
pub fn render_additive(frames: &[SynthFrame], hop: usize, sample_rate: f64) -> Result<Vec<f64>> {
    validate_frames(frames, sample_rate)?;
    if hop == 0 {
        return Err(Error::InvalidArgument("hop must be ≥ 1".into()));
    }
    let nyquist = sample_rate / 2.0;
    let mut out = vec![0.0; (frames.len() - 1) * hop];
    let mut phase = 0.0f64;
    for (k, pair) in frames.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        let n_h = a.amps.len().max(b.amps.len());
        let seg = &mut out[k * hop..(k + 1) * hop];
        for (j, y) in seg.iter_mut().enumerate() {
            let frac = j as f64 / hop as f64;
            let f0 = a.f0 + frac * (b.f0 - a.f0);
            let mut acc = 0.0;
            for h in 1..=n_h {
                if h as f64 * f0 >= nyquist {
                    break;
                }
                let amp_a = a.amps.get(h - 1).copied().unwrap_or(0.0);
                let amp_b = b.amps.get(h - 1).copied().unwrap_or(0.0);
                let amp = amp_a + frac * (amp_b - amp_a);
                if amp != 0.0 {
                    acc += amp * (h as f64 * phase).sin();
                }
            }
            *y = acc;
            phase += TAU * f0 / sample_rate;
            if phase > TAU * 1e6 {
                // keep h·phase well inside f64 precision on long renders
                phase %= TAU;
            }
        }
    }
    Ok(out)
}

/// [`render_additive`] peak-normalized to 0.9. All-zero input stays silent.
pub fn additive_synth(frames: &[SynthFrame], hop: usize, sample_rate: f64) -> Result<Vec<f64>> {
    let mut y = render_additive(frames, hop, sample_rate)?;
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = NORMALIZED_PEAK / peak;
        y.iter_mut().for_each(|v| *v *= g);
    }
    Ok(y)
}

/// `f0[t] = fc · 2^{(depth/1200)·sin(2π·rate·t·hop/Fs)}`.
pub fn vibrato_contour(f0_center: f64, rate: f64, depth_cents: f64, n_frames: usize, hop: usize, sample_rate: f64) -> Result<PitchContour> {
    if !(rate > 0.0) || !(depth_cents >= 0.0) {
        return Err(Error::InvalidArgument(format!("vibrato needs rate > 0 and depth ≥ 0 (got {rate}, {depth_cents})")));
    }
    let f0: Vec<f64> = (0..n_frames)
        .map(|t| {
            let s = (TAU * rate * t as f64 * hop as f64 / sample_rate).sin();
            f0_center * 2f64.powf(depth_cents / 1200.0 * s)
        })
        .collect();
    for &f in &f0 {
        check_band(f, sample_rate)?;
    }
    Ok(PitchContour { f0 })
}

/// Harmonic amplitudes of a decoded padded vector at `f0`.
pub fn frame_from_padded(x: Vec<f64>, f0: f64, grid: SpectralGrid) -> Result<SynthFrame> {
    let k_cc = kcc_for_pitch(f0, grid.sample_rate)?;
    let env = unpad(&PaddedEnvelope { x, f0, k_cc }, grid)?;
    let amps = sample_at_harmonics(&env, f0, harmonic_count(f0, grid.sample_rate))?;
    Ok(SynthFrame { f0, amps })
}

/// Decodes a latent random walk along a pitch contour and renders it.
pub fn synthesize_note<R: Rng + ?Sized>(
    m: &ModelParams,
    contour: &PitchContour,
    step: f64,
    rng: &mut R,
    grid: SpectralGrid,
    hop: usize,
) -> Result<Vec<f64>> {
    if !m.config.conditional {
        return Err(Error::ModelMismatch("synthesis needs a pitch-conditioned model".into()));
    }
    for &f in &contour.f0 {
        check_band(f, grid.sample_rate)?;
    }
    let walk = random_walk_latents(contour.f0.len(), step, m.latent_dim(), rng)?;
    let frames = contour
        .f0
        .iter()
        .zip(&walk)
        .map(|(&f0, z)| frame_from_padded(m.decode(z, Some(hz_to_midi(f0)))?, f0, grid))
        .collect::<Result<Vec<_>>>()?;
    additive_synth(&frames, hop, grid.sample_rate)
}

/// 16-bit PCM mono; see [`crate::wav::write_wav`].
pub fn write_wav(samples: &[f64], sample_rate: u32, path: &Path) -> Result<()> {
    crate::wav::write_wav(samples, sample_rate, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{log_to_db, AnalysisConfig, Analyzer};
    use crate::pitch::{cents_between, midi_to_hz};

    const FS: f64 = 48_000.0;

    fn steady(f0: f64, amps: Vec<f64>, n: usize) -> Vec<SynthFrame> {
        vec![SynthFrame { f0, amps }; n]
    }

    fn spectrum_db(x: &[f64], n_fft: usize) -> Vec<f64> {
        // Blackman-Harris keeps leakage far below −60 dB
        let win = crate::analysis::window_shape(crate::analysis::WindowKind::BlackmanHarris, x.len());
        let w = crate::analysis::window_frame(x, &win).unwrap();
        let s = crate::analysis::magnitude_spectrum(&w, n_fft, FS).unwrap();
        s.log_mag.iter().map(|&l| log_to_db(l)).collect()
    }

    #[test]
    fn pure_sine_is_spectrally_clean() {
        let y = additive_synth(&steady(440.0, vec![0.5], 200), 256, FS).unwrap();
        assert_eq!(y.len(), 199 * 256);
        let seg = &y[8192..8192 + 16384];
        let db = spectrum_db(seg, 16384);
        let bin = FS / 16384.0;
        let (kmax, &top) = db.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert!((kmax as f64 * bin - 440.0).abs() <= bin);
        // energy outside the main lobe around the fundamental
        let lobe = 6;
        let rest = db
            .iter()
            .enumerate()
            .filter(|(k, _)| (*k as i64 - kmax as i64).abs() > lobe)
            .map(|(_, &d)| d)
            .fold(f64::MIN, f64::max);
        assert!(rest - top < -60.0, "spur at {} dB", rest - top);
    }

    #[test]
    fn silence_stays_silent() {
        let y = additive_synth(&steady(300.0, vec![0.0; 10], 5), 128, FS).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_is_normalized_and_scales_linearly() {
        let amps: Vec<f64> = (1..=20).map(|h| 1.0 / h as f64).collect();
        let a = render_additive(&steady(330.0, amps.clone(), 40), 256, FS).unwrap();
        let b = render_additive(&steady(330.0, amps.iter().map(|v| v * 3.7).collect(), 40), 256, FS).unwrap();
        let rms = |x: &[f64]| (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        assert!((rms(&b) / rms(&a) - 3.7).abs() < 1e-6);
        let y = additive_synth(&steady(330.0, amps, 40), 256, FS).unwrap();
        let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.9).abs() < 1e-12);
    }

    #[test]
    fn hop_boundaries_are_continuous() {
        let amps: Vec<f64> = (1..=30).map(|h| 1.0 / h as f64).collect();
        let y = additive_synth(&steady(261.63, amps, 100), 256, FS).unwrap();
        let (mut boundary, mut interior) = (0.0f64, 0.0f64);
        for n in 1..y.len() {
            let d = (y[n] - y[n - 1]).abs();
            if n % 256 == 0 {
                boundary = boundary.max(d);
            } else {
                interior = interior.max(d);
            }
        }
        assert!(boundary / interior < 2.0);
    }

    #[test]
    fn births_and_deaths_fade_over_one_hop() {
        let frames = vec![
            SynthFrame { f0: 440.0, amps: vec![0.5] },
            SynthFrame { f0: 440.0, amps: vec![0.5, 0.4] },
            SynthFrame { f0: 440.0, amps: vec![0.5] },
        ];
        let y = render_additive(&frames, 480, FS).unwrap();
        // first sample after each frame boundary carries no step from h=2
        let only_h1: Vec<f64> = (0..960).map(|n| 0.5 * (TAU * 440.0 * n as f64 / FS).sin()).collect();
        assert!((y[0] - only_h1[0]).abs() < 1e-12);
        let mid_diff = (y[480] - only_h1[480]).abs();
        assert!(mid_diff > 0.0);
        assert!((y[959] - only_h1[959]).abs() < 0.4 * 2.0 / 480.0 + 1e-9);
    }

    #[test]
    fn constant_pitch_renders_are_harmonic() {
        let f0 = 349.23;
        let amps: Vec<f64> = (1..=40).map(|h| 1.0 / h as f64).collect();
        let y = additive_synth(&steady(f0, amps, 120), 256, FS).unwrap();
        let n_fft = 16384;
        let db = spectrum_db(&y[4096..4096 + n_fft], n_fft);
        let top = db.iter().cloned().fold(f64::MIN, f64::max);
        let bin = FS / n_fft as f64;
        for k in 1..db.len() - 1 {
            if db[k] > top - 40.0 && db[k] >= db[k - 1] && db[k] >= db[k + 1] {
                let f = k as f64 * bin;
                let h = (f / f0).round();
                assert!((f - h * f0).abs() <= bin, "peak at {f} Hz is not harmonic");
            }
        }
    }

    #[test]
    fn round_trip_through_analysis() {
        let f0 = midi_to_hz(65.0);
        let amps: Vec<f64> = (1..harmonic_count(f0, FS)).map(|h| 1.0 / h as f64).collect();
        let y = render_additive(&steady(f0, amps.clone(), 60), 256, FS).unwrap();
        let an = Analyzer::new(AnalysisConfig::default(), FS).unwrap();
        let frame = an.analyze(&y[4096..4096 + 1024], f0).unwrap();
        for h in frame.harmonics.iter().take(amps.len()) {
            let err = log_to_db(h.amp_log) - log_to_db(amps[h.h - 1].ln());
            assert!(err.abs() < 0.5, "h={} err {err} dB", h.h);
        }
    }

    #[test]
    fn rejects_band_violations() {
        assert!(render_additive(&steady(440.0, vec![1.0; 60], 3), 64, FS).is_err());
        assert!(render_additive(&steady(440.0, vec![1.0], 1), 64, FS).is_err());
        assert!(render_additive(&steady(-3.0, vec![1.0], 3), 64, FS).is_err());
    }

    #[test]
    fn vibrato_contours() {
        let flat = vibrato_contour(300.0, 5.5, 0.0, 50, 256, FS).unwrap();
        assert!(flat.f0.iter().all(|&f| f == 300.0));

        // rate chosen so frame 1 lands on the sine peak
        let rate = FS / (4.0 * 256.0);
        let oct = vibrato_contour(200.0, rate, 1200.0, 4, 256, FS).unwrap();
        assert!((oct.f0[1] - 400.0).abs() < 1e-9);

        let c = vibrato_contour(349.23, 5.5, 40.0, 2000, 256, FS).unwrap();
        let max_dev = c.f0.iter().map(|&f| (hz_to_midi(f) - hz_to_midi(349.23)).abs()).fold(0.0, f64::max);
        assert!((max_dev - 0.4).abs() < 1e-3, "{max_dev}");
        assert!(c.f0.iter().all(|&f| cents_between(349.23, f).abs() <= 40.0 + 1e-9));

        assert!(vibrato_contour(11_000.0, 5.5, 200.0, 100, 256, FS).is_err());
        assert!(vibrato_contour(300.0, 0.0, 10.0, 10, 256, FS).is_err());
    }
}
