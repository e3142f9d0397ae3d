//! Source-filter parametrization of the harmonic spectrum.
//!
//! The filter is a log-magnitude spectral envelope represented by its first
//! `K` real cepstral coefficients, with `K = ⌊Fs / (2·f0)⌋` so the envelope
//! cannot resolve individual harmonics. The envelope is fitted with the
//! iterative True Amplitude Envelope procedure so it rides on the harmonic
//! peaks instead of their mean.
//!
//! Cepstra here use the unitary-inverse convention `c = IDFT(L) / N`, so
//! `ccs[0]` is the mean log level and
//! `L[k] = c₀ + 2·Σ_{q=1}^{K-1} c_q·cos(2πqk/N)`.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analysis::{interpolate_bins, HarmonicFrame};
use crate::error::{Error, Result};
use crate::fft;
use crate::PAD_WIDTH;

/// Sample rate and FFT size shared by analysis and envelope rendering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralGrid {
    pub sample_rate: f64,
    pub fft_size: usize,
}

impl SpectralGrid {
    pub fn new(sample_rate: f64, fft_size: usize) -> Self {
        Self {
            sample_rate,
            fft_size,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate / self.fft_size as f64
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate / 2.0
    }
}

impl Default for SpectralGrid {
    fn default() -> Self {
        Self::new(48_000.0, 2048)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CepstralEnvelope {
    pub ccs: Vec<f64>,
    pub f0: f64,
    pub k_cc: usize,
    pub grid: SpectralGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaddedEnvelope {
    pub x: Vec<f64>,
    pub f0: f64,
    pub k_cc: usize,
}

/// Cepstral order for pitch `f0`: `⌊Fs / (2·f0)⌋`, at most [`PAD_WIDTH`].
pub fn kcc_for_pitch(f0: f64, sample_rate: f64) -> Result<usize> {
    if !(f0 > 0.0 && f0 <= sample_rate / 2.0) {
        return Err(Error::OutOfBand {
            freq: f0,
            low: 0.0,
            high: sample_rate / 2.0,
        });
    }
    let k = (sample_rate / (2.0 * f0)).floor() as usize;
    Ok(k.clamp(1, PAD_WIDTH))
}

fn fft_size_of(log_mag: &[f64]) -> Result<usize> {
    if log_mag.len() < 2 {
        return Err(Error::InvalidArgument("spectrum needs at least 2 bins".into()));
    }
    let n = 2 * (log_mag.len() - 1);
    if !n.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "{} bins is not a power-of-two half spectrum",
            log_mag.len()
        )));
    }
    Ok(n)
}

/// Real cepstrum of a half spectrum, full length `N`.
pub fn real_cepstrum(log_mag: &[f64]) -> Result<Vec<f64>> {
    let n = fft_size_of(log_mag)?;
    let mut buf = mirror(log_mag, n);
    fft::inverse(n).process(&mut buf);
    Ok(buf.iter().map(|c| c.re / n as f64).collect())
}

fn mirror(half: &[f64], n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| Complex64::new(if k <= n / 2 { half[k] } else { half[n - k] }, 0.0))
        .collect()
}

/// Number of stored coefficients for order `k`. The full order `N/2` also
/// keeps the self-mirrored quefrency `N/2`, making the lifter an identity.
pub fn retained_len(k: usize, fft_size: usize) -> usize {
    if k >= fft_size / 2 {
        fft_size / 2 + 1
    } else {
        k
    }
}

fn check_order(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n / 2 {
        return Err(Error::InvalidArgument(format!(
            "cepstral order {k} outside 1..={}",
            n / 2
        )));
    }
    Ok(())
}

/// Lifters a half spectrum to order `k`; returns the smoothed half spectrum
/// and the retained coefficients.
fn smooth_with_ccs(log_mag: &[f64], k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = fft_size_of(log_mag)?;
    check_order(k, n)?;
    let mut buf = mirror(log_mag, n);
    fft::inverse(n).process(&mut buf);
    let keep = retained_len(k, n);
    let scale = 1.0 / n as f64;
    for (q, c) in buf.iter_mut().enumerate() {
        let quefrency = q.min(n - q);
        if quefrency < keep {
            *c *= scale;
        } else {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    let ccs = buf[..keep].iter().map(|c| c.re).collect();
    fft::forward(n).process(&mut buf);
    Ok((buf[..=n / 2].iter().map(|c| c.re).collect(), ccs))
}

/// Keeps quefrencies `< k` (and their mirrors) of the log spectrum.
pub fn cepstral_smooth(log_mag: &[f64], k: usize) -> Result<Vec<f64>> {
    smooth_with_ccs(log_mag, k).map(|(curve, _)| curve)
}

/// Renders retained cepstral coefficients as a half-spectrum log curve.
pub fn ccs_to_logmag(ccs: &[f64], fft_size: usize) -> Result<Vec<f64>> {
    if ccs.is_empty() || ccs.len() > fft_size / 2 + 1 || !fft_size.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "{} coefficients do not fit an FFT of {fft_size}",
            ccs.len()
        )));
    }
    let n = fft_size;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (q, &c) in ccs.iter().enumerate() {
        buf[q] = Complex64::new(c, 0.0);
        if q > 0 && q < n - q {
            buf[n - q] = Complex64::new(c, 0.0);
        }
    }
    fft::forward(n).process(&mut buf);
    Ok(buf[..=n / 2].iter().map(|c| c.re).collect())
}

pub fn envelope_to_logmag(env: &CepstralEnvelope) -> Result<Vec<f64>> {
    ccs_to_logmag(&env.ccs, env.grid.fft_size)
}

/// Squared distance between two coefficient vectors of equal order, weighted
/// so it equals the mean squared difference of the rendered curves over the
/// full `N`-point spectrum (each `q ≥ 1` appears twice in the symmetric
/// cepstrum).
pub fn cc_distance_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(q, (x, y))| {
            let w = if q == 0 { 1.0 } else { 2.0 };
            w * (x - y).powi(2)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaeConfig {
    /// Stop once the target exceeds the envelope by less than this (log units).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TaeConfig {
    fn default() -> Self {
        Self {
            tol: 0.023,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaeFit {
    /// Retained cepstral coefficients of the final envelope.
    pub ccs: Vec<f64>,
    /// Final envelope, half spectrum.
    pub curve: Vec<f64>,
    /// `max_k(target[k] − E_i[k])` after each smoothing pass.
    pub trace: Vec<f64>,
    pub converged: bool,
}

impl TaeFit {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

fn max_excess(target: &[f64], env: &[f64]) -> f64 {
    target
        .iter()
        .zip(env)
        .map(|(t, e)| t - e)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// True Amplitude Envelope: repeatedly lifters `max(target, E)` until the
/// envelope sits no more than `tol` below the target anywhere.
pub fn true_amplitude_envelope(target: &[f64], k: usize, cfg: &TaeConfig) -> Result<TaeFit> {
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("TAE target"));
    }
    let (mut curve, mut ccs) = smooth_with_ccs(target, k)?;
    let mut trace = vec![max_excess(target, &curve)];
    while *trace.last().unwrap() >= cfg.tol && trace.len() < cfg.max_iter {
        let lifted: Vec<f64> = target.iter().zip(&curve).map(|(t, e)| t.max(*e)).collect();
        (curve, ccs) = smooth_with_ccs(&lifted, k)?;
        trace.push(max_excess(target, &curve));
    }
    let converged = *trace.last().unwrap() < cfg.tol;
    Ok(TaeFit {
        ccs,
        curve,
        trace,
        converged,
    })
}

/// Piecewise-linear log-amplitude target through the harmonic peaks.
///
/// Each harmonic lands on its nearest bin; bins between consecutive
/// harmonics are linearly interpolated, and the ends are held flat.
pub fn harmonic_target(frame: &HarmonicFrame, grid: SpectralGrid) -> Result<Vec<f64>> {
    if frame.harmonics.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "envelope target needs at least 2 harmonics, got {}",
            frame.harmonics.len()
        )));
    }
    let n_bins = grid.n_bins();
    let mut knots: Vec<(usize, f64)> = Vec::with_capacity(frame.harmonics.len());
    for h in &frame.harmonics {
        let bin = ((h.freq / grid.bin_hz()).round() as usize).min(n_bins - 1);
        match knots.last_mut() {
            Some(last) if last.0 == bin => last.1 = last.1.max(h.amp_log),
            _ => knots.push((bin, h.amp_log)),
        }
    }
    knots.sort_by_key(|k| k.0);
    let mut target = vec![0.0; n_bins];
    let (first, last) = (knots[0], knots[knots.len() - 1]);
    for (k, t) in target.iter_mut().enumerate() {
        *t = if k <= first.0 {
            first.1
        } else if k >= last.0 {
            last.1
        } else {
            let i = knots.partition_point(|kn| kn.0 <= k) - 1;
            let (b0, a0) = knots[i];
            let (b1, a1) = knots[i + 1];
            a0 + (a1 - a0) * (k - b0) as f64 / (b1 - b0) as f64
        };
    }
    Ok(target)
}

/// Fits the cepstral envelope of one analyzed frame at its own pitch order.
pub fn fit_frame(frame: &HarmonicFrame, grid: SpectralGrid, cfg: &TaeConfig) -> Result<(CepstralEnvelope, TaeFit)> {
    let k = kcc_for_pitch(frame.f0, grid.sample_rate)?;
    let target = harmonic_target(frame, grid)?;
    let fit = true_amplitude_envelope(&target, k, cfg)?;
    let env = CepstralEnvelope {
        ccs: fit.ccs.clone(),
        f0: frame.f0,
        k_cc: k,
        grid,
    };
    Ok((env, fit))
}

/// Linear amplitudes of the envelope at `h·f0`, `h = 1..=count`.
pub fn sample_at_harmonics(env: &CepstralEnvelope, f0: f64, count: usize) -> Result<Vec<f64>> {
    let nyquist = env.grid.nyquist();
    if !(f0 > 0.0) || count as f64 * f0 >= nyquist {
        return Err(Error::OutOfBand {
            freq: count as f64 * f0,
            low: 0.0,
            high: nyquist,
        });
    }
    let curve = envelope_to_logmag(env)?;
    let bin_hz = env.grid.bin_hz();
    Ok((1..=count)
        .map(|h| interpolate_bins(&curve, h as f64 * f0 / bin_hz).exp())
        .collect())
}

/// Harmonics strictly below Nyquist with one spare: `⌊(Fs/2)/f0⌋ − 1`.
pub fn harmonic_count(f0: f64, sample_rate: f64) -> usize {
    ((sample_rate / 2.0 / f0).floor() as usize).saturating_sub(1)
}

pub fn pad(env: &CepstralEnvelope) -> Result<PaddedEnvelope> {
    if env.k_cc > PAD_WIDTH || env.ccs.len() != env.k_cc {
        return Err(Error::InvalidArgument(format!(
            "cannot pad {} coefficients (k_cc {}) to width {PAD_WIDTH}",
            env.ccs.len(),
            env.k_cc
        )));
    }
    let mut x = vec![0.0; PAD_WIDTH];
    x[..env.k_cc].copy_from_slice(&env.ccs);
    Ok(PaddedEnvelope {
        x,
        f0: env.f0,
        k_cc: env.k_cc,
    })
}

pub fn unpad(p: &PaddedEnvelope, grid: SpectralGrid) -> Result<CepstralEnvelope> {
    if p.k_cc == 0 || p.k_cc > PAD_WIDTH || p.x.len() != PAD_WIDTH {
        return Err(Error::InvalidArgument(format!(
            "malformed padded envelope (k_cc {}, width {})",
            p.k_cc,
            p.x.len()
        )));
    }
    Ok(CepstralEnvelope {
        ccs: p.x[..p.k_cc].to_vec(),
        f0: p.f0,
        k_cc: p.k_cc,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{log_to_db, Harmonic};
    use crate::pitch::midi_to_hz;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    const N: usize = 2048;

    fn random_curve(rng: &mut ChaCha8Rng, bins: usize) -> Vec<f64> {
        (0..bins).map(|_| rng.random_range(-5.0..1.0)).collect()
    }

    #[test]
    fn cepstral_order_for_pitch() {
        assert_eq!(kcc_for_pitch(261.626, 48_000.0).unwrap(), 91);
        assert_eq!(kcc_for_pitch(24_000.0, 48_000.0).unwrap(), 1);
        assert_eq!(kcc_for_pitch(493.883, 48_000.0).unwrap(), 48);
        assert_eq!(kcc_for_pitch(midi_to_hz(65.0), 48_000.0).unwrap(), 68);
        assert!(kcc_for_pitch(0.0, 48_000.0).is_err());
        assert!(kcc_for_pitch(30_000.0, 48_000.0).is_err());
    }

    #[test]
    fn cepstral_order_matches_integer_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let f0 = rng.random_range(200.0..2000.0);
            // largest integer k with k·2·f0 ≤ Fs
            let mut k = 0usize;
            while (k + 1) as f64 * 2.0 * f0 <= 48_000.0 {
                k += 1;
            }
            assert_eq!(kcc_for_pitch(f0, 48_000.0).unwrap(), k.clamp(1, 91));
        }
    }

    #[test]
    fn constant_spectrum_survives_any_order() {
        let flat = vec![-1.5; N / 2 + 1];
        for k in [1, 7, 91, N / 2] {
            let s = cepstral_smooth(&flat, k).unwrap();
            assert!(s.iter().all(|v| (v + 1.5).abs() < 1e-12));
        }
        let c = real_cepstrum(&flat).unwrap();
        assert!((c[0] + 1.5).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn full_order_lifter_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_curve(&mut rng, N / 2 + 1);
        let s = cepstral_smooth(&x, N / 2).unwrap();
        assert!(x.iter().zip(&s).all(|(a, b)| (a - b).abs() < 1e-9));
        assert!(cepstral_smooth(&x, 0).is_err());
        assert!(cepstral_smooth(&x, N / 2 + 1).is_err());
    }

    #[test]
    fn lifter_on_fourier_basis() {
        let q0 = 20;
        let cosine: Vec<f64> = (0..=N / 2)
            .map(|k| (2.0 * std::f64::consts::PI * (q0 * k) as f64 / N as f64).cos())
            .collect();
        let kept = cepstral_smooth(&cosine, 21).unwrap();
        assert!(kept.iter().zip(&cosine).all(|(a, b)| (a - b).abs() < 1e-9));
        let removed = cepstral_smooth(&cosine, 20).unwrap();
        assert!(removed.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn flat_target_converges_immediately() {
        let target = vec![0.5f64.ln(); N / 2 + 1];
        let fit = true_amplitude_envelope(&target, 40, &TaeConfig::default()).unwrap();
        assert_eq!(fit.iterations(), 1);
        assert!(fit.converged);
        assert!((fit.ccs[0] - 0.5f64.ln()).abs() < 1e-12);
        assert!(fit.ccs[1..].iter().all(|c| c.abs() < 1e-12));
        assert!(true_amplitude_envelope(&[f64::NAN; 5], 1, &TaeConfig::default()).is_err());
    }

    /// Random smooth generator: c_q ~ N(0, (0.3/q)²), K = 30.
    fn generator_ccs(rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut ccs = vec![-3.0 + rng.random_range(-0.5..0.5)];
        for q in 1..30 {
            let g: f64 = rng.sample(StandardNormal);
            ccs.push(0.3 * g / q as f64);
        }
        ccs
    }

    fn harmonics_from_curve(curve: &[f64], f0: f64, grid: SpectralGrid) -> HarmonicFrame {
        let harmonics = (1..=harmonic_count(f0, grid.sample_rate))
            .map(|h| {
                let freq = h as f64 * f0;
                Harmonic {
                    h,
                    freq,
                    amp_log: interpolate_bins(curve, freq / grid.bin_hz()),
                }
            })
            .collect();
        HarmonicFrame { f0, harmonics }
    }

    #[test]
    fn render_then_recover() {
        let grid = SpectralGrid::default();
        let f0 = midi_to_hz(65.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..10 {
            let truth = ccs_to_logmag(&generator_ccs(&mut rng), N).unwrap();
            let frame = harmonics_from_curve(&truth, f0, grid);
            let (env, fit) = fit_frame(&frame, grid, &TaeConfig::default()).unwrap();
            assert!(fit.converged);
            let amps = sample_at_harmonics(&env, f0, frame.n_harmonics()).unwrap();
            for (h, a) in frame.harmonics.iter().zip(&amps) {
                let err = log_to_db(a.ln()) - log_to_db(h.amp_log);
                assert!(err.abs() < 0.5, "h={} err {err} dB", h.h);
            }
        }
    }

    #[test]
    fn notch_between_harmonics_stays_under_envelope() {
        let grid = SpectralGrid::default();
        let f0 = midi_to_hz(62.0);
        let frame = HarmonicFrame {
            f0,
            harmonics: (1..=40)
                .map(|h| Harmonic {
                    h,
                    freq: h as f64 * f0,
                    amp_log: -1.0 - 0.05 * h as f64,
                })
                .collect(),
        };
        let mut target = harmonic_target(&frame, grid).unwrap();
        // carve a notch midway between harmonics 5 and 6
        let notch = ((5.5 * f0) / grid.bin_hz()).round() as usize;
        for t in &mut target[notch - 2..=notch + 2] {
            *t -= 3.0;
        }
        let cfg = TaeConfig::default();
        let k = kcc_for_pitch(f0, grid.sample_rate).unwrap();
        let fit = true_amplitude_envelope(&target, k, &cfg).unwrap();
        assert!(fit.converged);
        for w in fit.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "trace {:?}", fit.trace);
        }
        for h in &frame.harmonics {
            let bin = (h.freq / grid.bin_hz()).round() as usize;
            assert!(fit.curve[bin] >= target[bin] - cfg.tol);
        }
        assert!(fit.curve[notch] > target[notch]);
    }

    #[test]
    fn target_construction() {
        let grid = SpectralGrid::new(40_960.0, 2048); // 20 Hz bins
        let frame = HarmonicFrame {
            f0: 440.0,
            harmonics: vec![
                Harmonic { h: 1, freq: 440.0, amp_log: 0.0 },
                Harmonic { h: 2, freq: 880.0, amp_log: 0.5f64.ln() },
            ],
        };
        let t = harmonic_target(&frame, grid).unwrap();
        assert!((t[33] - 0.5f64.sqrt().ln()).abs() < 1e-12);
        assert_eq!(t[0], 0.0);
        assert_eq!(t[1024], 0.5f64.ln());
        let one = HarmonicFrame {
            f0: 440.0,
            harmonics: frame.harmonics[..1].to_vec(),
        };
        assert!(harmonic_target(&one, grid).is_err());
    }

    #[test]
    fn target_hits_every_stem() {
        let grid = SpectralGrid::default();
        let f0 = midi_to_hz(65.0);
        let frame = HarmonicFrame {
            f0,
            harmonics: (1..=13)
                .map(|h| Harmonic { h, freq: h as f64 * f0, amp_log: -(h as f64).ln() })
                .collect(),
        };
        let t = harmonic_target(&frame, grid).unwrap();
        for w in frame.harmonics.windows(2) {
            let (b0, b1) = (
                (w[0].freq / grid.bin_hz()).round() as usize,
                (w[1].freq / grid.bin_hz()).round() as usize,
            );
            assert_eq!(t[b0], w[0].amp_log);
            assert_eq!(t[b1], w[1].amp_log);
            for k in b0..b1 {
                let slope0 = t[k + 1] - t[k];
                let slope = (w[1].amp_log - w[0].amp_log) / (b1 - b0) as f64;
                assert!((slope0 - slope).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rendering_round_trips() {
        let grid = SpectralGrid::default();
        let env = CepstralEnvelope { ccs: vec![-2.0, 0.0, 0.0], f0: 300.0, k_cc: 3, grid };
        assert!(envelope_to_logmag(&env).unwrap().iter().all(|v| (v + 2.0).abs() < 1e-12));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_curve(&mut rng, N / 2 + 1);
        let (smooth, ccs) = smooth_with_ccs(&x, 50).unwrap();
        let rendered = ccs_to_logmag(&ccs, N).unwrap();
        assert!(smooth.iter().zip(&rendered).all(|(a, b)| (a - b).abs() < 1e-9));

        let random: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        let curve = ccs_to_logmag(&random, N).unwrap();
        let back = real_cepstrum(&curve).unwrap();
        assert!(random.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-9));
        assert!(back[60..=N / 2].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn harmonic_sampling() {
        let grid = SpectralGrid::default();
        let env = CepstralEnvelope { ccs: vec![0.25f64.ln()], f0: 400.0, k_cc: 1, grid };
        let amps = sample_at_harmonics(&env, 400.0, 5).unwrap();
        assert!(amps.iter().all(|a| (a - 0.25).abs() < 1e-12));
        assert!(sample_at_harmonics(&env, 400.0, 60).is_err());
        assert!(sample_at_harmonics(&env, 400.0, 59).is_ok());
    }

    #[test]
    fn padding() {
        let grid = SpectralGrid::default();
        let f0 = midi_to_hz(71.0);
        let k = kcc_for_pitch(f0, 48_000.0).unwrap();
        assert_eq!(k, 48);
        let env = CepstralEnvelope { ccs: (0..k).map(|i| i as f64 + 0.5).collect(), f0, k_cc: k, grid };
        let p = pad(&env).unwrap();
        assert_eq!(p.x.len(), 91);
        assert_eq!(p.x.iter().rev().take_while(|v| **v == 0.0).count(), 43);
        assert_eq!(unpad(&p, grid).unwrap(), env);

        let full = CepstralEnvelope { ccs: vec![1.0; 91], f0: 261.63, k_cc: 91, grid };
        assert_eq!(pad(&full).unwrap().x, full.ccs);
        let over = CepstralEnvelope { ccs: vec![1.0; 92], f0: 200.0, k_cc: 92, grid };
        assert!(pad(&over).is_err());
    }

    #[test]
    fn cc_and_log_spectrum_distances_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let k = rng.random_range(2..=91);
            let a: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (ca, cb) = (ccs_to_logmag(&a, N).unwrap(), ccs_to_logmag(&b, N).unwrap());
            // mean over the full symmetric spectrum
            let full: f64 = (0..N)
                .map(|i| {
                    let k = if i <= N / 2 { i } else { N - i };
                    (ca[k] - cb[k]).powi(2)
                })
                .sum::<f64>()
                / N as f64;
            let cc = cc_distance_sq(&a, &b);
            assert!(((full - cc) / full).abs() < 1e-6);
        }
    }

    #[test]
    fn transposition_keeps_the_filter() {
        let grid = SpectralGrid::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ccs = generator_ccs(&mut rng);
        let env = CepstralEnvelope { ccs: ccs.clone(), f0: 300.0, k_cc: ccs.len(), grid };
        let curve = envelope_to_logmag(&env).unwrap();
        for f0 in [300.0, 377.0] {
            let amps = sample_at_harmonics(&env, f0, 20).unwrap();
            for (h, a) in amps.iter().enumerate() {
                let expected = interpolate_bins(&curve, (h + 1) as f64 * f0 / grid.bin_hz()).exp();
                assert_eq!(*a, expected);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn smoothing_is_a_projection(seed in any::<u64>(), k in 1usize..=200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_curve(&mut rng, N / 2 + 1);
            let once = cepstral_smooth(&x, k).unwrap();
            let twice = cepstral_smooth(&once, k).unwrap();
            prop_assert!(once.iter().zip(&twice).all(|(a, b)| (a - b).abs() < 1e-9));
        }

        #[test]
        fn pad_round_trip(values in prop::collection::vec(-10.0f64..10.0, 1..=91)) {
            let grid = SpectralGrid::default();
            let env = CepstralEnvelope { k_cc: values.len(), ccs: values, f0: 300.0, grid };
            prop_assert_eq!(unpad(&pad(&env).unwrap(), grid).unwrap(), env);
        }
    }
}
