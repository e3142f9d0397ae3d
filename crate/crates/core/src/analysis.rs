//! Harmonic analysis of a single frame: windowing, log-magnitude spectrum,
//! parabolic peak picking, f0 refinement and harmonic amplitude readout.
//!
//! All amplitudes are natural-log linear amplitudes; the window is scaled so
//! that a sinusoid of amplitude `A` reads as `ln A` at its interpolated peak.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::pitch::cents_between;

/// Magnitudes are floored here (−200 dB) before taking the log.
pub const MAG_FLOOR: f64 = 1e-10;

pub fn log_floor() -> f64 {
    MAG_FLOOR.ln()
}

/// Converts dB to natural-log amplitude units.
pub fn db_to_log(db: f64) -> f64 {
    db * std::f64::consts::LN_10 / 20.0
}

/// Converts natural-log amplitude to dB.
pub fn log_to_db(log_amp: f64) -> f64 {
    log_amp * 20.0 / std::f64::consts::LN_10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    BlackmanHarris,
    Hann,
}

/// Periodic window of length `len`, unnormalized.
pub fn window_shape(kind: WindowKind, len: usize) -> Vec<f64> {
    let n = len as f64;
    (0..len)
        .map(|i| {
            let x = 2.0 * PI * i as f64 / n;
            match kind {
                WindowKind::BlackmanHarris => {
                    0.35875 - 0.48829 * x.cos() + 0.14128 * (2.0 * x).cos()
                        - 0.01168 * (3.0 * x).cos()
                }
                WindowKind::Hann => 0.5 - 0.5 * x.cos(),
            }
        })
        .collect()
}

/// Window scaled by `2 / Σw`, so a windowed sinusoid of amplitude `A` peaks
/// at magnitude `A` in the DFT.
pub fn amplitude_window(kind: WindowKind, len: usize) -> Vec<f64> {
    let w = window_shape(kind, len);
    let scale = 2.0 / w.iter().sum::<f64>();
    w.into_iter().map(|v| v * scale).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub frame_len: usize,
    pub fft_size: usize,
    pub window: WindowKind,
    /// Peaks more than this many dB below the strongest one are ignored.
    pub peak_floor_db: f64,
    /// Half-width of the f0 search band around the nominal pitch.
    pub search_cents: f64,
    /// Harmonic match window is `±0.5·f0·tolerance_ratio` around `h·f0`.
    pub tolerance_ratio: f64,
    /// Upper limit on extracted harmonics; `None` keeps all below Nyquist.
    pub max_harmonics: Option<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            frame_len: 1024,
            fft_size: 2048,
            window: WindowKind::BlackmanHarris,
            peak_floor_db: 100.0,
            search_cents: 100.0,
            tolerance_ratio: 0.25,
            max_harmonics: None,
        }
    }
}

/// Log-magnitude half spectrum, `fft_size / 2 + 1` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrame {
    pub log_mag: Vec<f64>,
    pub fft_size: usize,
    pub sample_rate: f64,
}

impl SpectralFrame {
    pub fn bin_hz(&self) -> f64 {
        self.sample_rate / self.fft_size as f64
    }

    pub fn bin_freq(&self, k: usize) -> f64 {
        k as f64 * self.bin_hz()
    }

    /// Log magnitude at an arbitrary frequency, linear between bins.
    pub fn log_mag_at(&self, freq: f64) -> f64 {
        interpolate_bins(&self.log_mag, freq / self.bin_hz())
    }
}

/// Linear interpolation of a bin curve at fractional bin `pos` (clamped).
pub fn interpolate_bins(curve: &[f64], pos: f64) -> f64 {
    let last = curve.len() - 1;
    let pos = pos.clamp(0.0, last as f64);
    let k = (pos.floor() as usize).min(last);
    if k == last {
        return curve[last];
    }
    let frac = pos - k as f64;
    curve[k] + frac * (curve[k + 1] - curve[k])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub freq: f64,
    pub amp_log: f64,
    pub bin: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Harmonic {
    pub h: usize,
    pub freq: f64,
    pub amp_log: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicFrame {
    pub f0: f64,
    pub harmonics: Vec<Harmonic>,
}

impl HarmonicFrame {
    pub fn n_harmonics(&self) -> usize {
        self.harmonics.len()
    }
}

/// Multiplies `frame` by `window` (see [`amplitude_window`]).
pub fn window_frame(frame: &[f64], window: &[f64]) -> Result<Vec<f64>> {
    if frame.len() != window.len() {
        return Err(Error::LengthMismatch {
            expected: window.len(),
            actual: frame.len(),
        });
    }
    Ok(frame.iter().zip(window).map(|(x, w)| x * w).collect())
}

/// Zero-pads to `fft_size`, transforms, and takes the floored natural log of
/// the magnitude.
pub fn magnitude_spectrum(windowed: &[f64], fft_size: usize, sample_rate: f64) -> Result<SpectralFrame> {
    if !fft_size.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "FFT size {fft_size} is not a power of two"
        )));
    }
    if fft_size < windowed.len() {
        return Err(Error::InvalidArgument(format!(
            "FFT size {fft_size} shorter than frame of {}",
            windowed.len()
        )));
    }
    let spectrum = fft::real_forward(windowed, fft_size);
    let log_mag = spectrum[..=fft_size / 2]
        .iter()
        .map(|c| c.norm().max(MAG_FLOOR).ln())
        .collect();
    Ok(SpectralFrame {
        log_mag,
        fft_size,
        sample_rate,
    })
}

/// Local maxima within `floor_db_rel` dB of the spectral maximum, refined by
/// a parabola through the three log-magnitude bins around each maximum.
pub fn detect_peaks(spec: &SpectralFrame, floor_db_rel: f64) -> Vec<Peak> {
    let mag = &spec.log_mag;
    if mag.len() < 3 {
        return Vec::new();
    }
    let max = mag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = (max - db_to_log(floor_db_rel)).max(log_floor());
    let mut peaks = Vec::new();
    for k in 1..mag.len() - 1 {
        let (alpha, beta, gamma) = (mag[k - 1], mag[k], mag[k + 1]);
        if beta > threshold && beta > alpha && beta >= gamma {
            let denom = alpha - 2.0 * beta + gamma;
            let delta = if denom.abs() > 0.0 {
                0.5 * (alpha - gamma) / denom
            } else {
                0.0
            };
            peaks.push(Peak {
                freq: (k as f64 + delta) * spec.bin_hz(),
                amp_log: beta - 0.25 * (alpha - gamma) * delta,
                bin: k,
            });
        }
    }
    peaks
}

/// The strongest peak within `±search_cents` of `nominal_f0`, or the nominal
/// pitch when the band holds no peak.
pub fn refine_f0(peaks: &[Peak], nominal_f0: f64, search_cents: f64) -> f64 {
    peaks
        .iter()
        .filter(|p| p.freq > 0.0 && cents_between(nominal_f0, p.freq).abs() <= search_cents)
        .max_by(|a, b| a.amp_log.total_cmp(&b.amp_log))
        .map_or(nominal_f0, |p| p.freq)
}

/// Reads harmonic amplitudes for `h = 1 ..= min(max, ⌊(Fs/2)/f0⌋ − 1)`.
///
/// Each harmonic takes the nearest peak within `±0.5·f0·tolerance_ratio` of
/// `h·f0`; without a match the interpolated spectrum at `h·f0` is used.
pub fn extract_harmonics(
    spec: &SpectralFrame,
    peaks: &[Peak],
    f0: f64,
    max_harmonics: Option<usize>,
    tolerance_ratio: f64,
) -> Result<HarmonicFrame> {
    let nyquist = spec.sample_rate / 2.0;
    if !(f0 > 0.0 && f0 < nyquist) {
        return Err(Error::OutOfBand {
            freq: f0,
            low: 0.0,
            high: nyquist,
        });
    }
    let band_limit = ((nyquist / f0).floor() as usize).saturating_sub(1);
    let count = max_harmonics.map_or(band_limit, |m| m.min(band_limit));
    let half_width = 0.5 * f0 * tolerance_ratio;
    let harmonics = (1..=count)
        .map(|h| {
            let target = h as f64 * f0;
            let matched = peaks
                .iter()
                .filter(|p| (p.freq - target).abs() <= half_width)
                .min_by(|a, b| (a.freq - target).abs().total_cmp(&(b.freq - target).abs()));
            match matched {
                Some(p) => Harmonic {
                    h,
                    freq: p.freq,
                    amp_log: p.amp_log,
                },
                None => Harmonic {
                    h,
                    freq: target,
                    amp_log: spec.log_mag_at(target),
                },
            }
        })
        .collect();
    Ok(HarmonicFrame { f0, harmonics })
}

/// Windowing and spectrum settings bound to one frame length.
#[derive(Debug, Clone)]
pub struct Analyzer {
    pub config: AnalysisConfig,
    pub sample_rate: f64,
    window: Vec<f64>,
}

impl Analyzer {
    pub fn new(config: AnalysisConfig, sample_rate: f64) -> Result<Self> {
        if config.frame_len == 0 || config.fft_size < config.frame_len {
            return Err(Error::InvalidArgument(format!(
                "frame length {} incompatible with FFT size {}",
                config.frame_len, config.fft_size
            )));
        }
        Ok(Self {
            window: amplitude_window(config.window, config.frame_len),
            config,
            sample_rate,
        })
    }

    pub fn spectrum(&self, frame: &[f64]) -> Result<SpectralFrame> {
        let windowed = window_frame(frame, &self.window)?;
        magnitude_spectrum(&windowed, self.config.fft_size, self.sample_rate)
    }

    /// Full chain for one frame whose nominal pitch is known.
    pub fn analyze(&self, frame: &[f64], nominal_f0: f64) -> Result<HarmonicFrame> {
        let spec = self.spectrum(frame)?;
        let peaks = detect_peaks(&spec, self.config.peak_floor_db);
        let f0 = refine_f0(&peaks, nominal_f0, self.config.search_cents);
        extract_harmonics(
            &spec,
            &peaks,
            f0,
            self.config.max_harmonics,
            self.config.tolerance_ratio,
        )
    }
}

/// Debug dump: `frame_index,f0,h,freq,amp_db` rows.
pub fn write_harmonics_csv<W: Write>(out: &mut W, frames: &[(u32, HarmonicFrame)]) -> std::io::Result<()> {
    writeln!(out, "frame_index,f0,h,freq,amp_db")?;
    for (index, frame) in frames {
        for h in &frame.harmonics {
            writeln!(
                out,
                "{index},{},{},{},{}",
                frame.f0,
                h.h,
                h.freq,
                log_to_db(h.amp_log)
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    const FS: f64 = 48_000.0;

    fn sines(partials: &[(f64, f64)], len: usize) -> Vec<f64> {
        (0..len)
            .map(|n| {
                partials
                    .iter()
                    .map(|&(f, a)| a * (2.0 * PI * f * n as f64 / FS).sin())
                    .sum()
            })
            .collect()
    }

    fn analyzer() -> Analyzer {
        Analyzer::new(AnalysisConfig::default(), FS).unwrap()
    }

    #[test]
    fn window_identity_and_zero() {
        let w = amplitude_window(WindowKind::BlackmanHarris, 1024);
        assert_eq!(window_frame(&vec![1.0; 1024], &w).unwrap(), w);
        assert!(window_frame(&vec![0.0; 1024], &w).unwrap().iter().all(|&v| v == 0.0));
        assert!(matches!(
            window_frame(&[1.0; 10], &w),
            Err(Error::LengthMismatch { expected: 1024, actual: 10 })
        ));
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bin_centred_sine_reads_unit_amplitude() {
        // bin 50 of the 2048-point grid is an exact DFT frequency
        let f = 50.0 * FS / 2048.0;
        let spec = analyzer().spectrum(&sines(&[(f, 1.0)], 1024)).unwrap();
        let peaks = detect_peaks(&spec, 100.0);
        let top = peaks.iter().max_by(|a, b| a.amp_log.total_cmp(&b.amp_log)).unwrap();
        assert_eq!(top.bin, 50);
        assert!(log_to_db(top.amp_log).abs() < 0.01, "{} dB", log_to_db(top.amp_log));
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut x = vec![0.0; 1024];
        x[0] = 1.0;
        let spec = magnitude_spectrum(&x, 2048, FS).unwrap();
        assert_eq!(spec.log_mag.len(), 1025);
        assert!(spec.log_mag.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn bin_mapping() {
        let f = 100.0 * FS / 2048.0;
        assert_eq!(f, 2343.75);
        let spec = magnitude_spectrum(&sines(&[(f, 1.0)], 2048), 2048, FS).unwrap();
        let argmax = (0..spec.log_mag.len())
            .max_by(|&a, &b| spec.log_mag[a].total_cmp(&spec.log_mag[b]))
            .unwrap();
        assert_eq!(argmax, 100);
        assert_eq!(spec.bin_freq(argmax), 2343.75);
    }

    #[test]
    fn parseval() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..1024).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spec = magnitude_spectrum(&x, 2048, FS).unwrap();
        let time: f64 = x.iter().map(|v| v * v).sum();
        let n = spec.log_mag.len();
        let freq: f64 = spec
            .log_mag
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let w = if k == 0 || k == n - 1 { 1.0 } else { 2.0 };
                w * (2.0 * l).exp()
            })
            .sum::<f64>()
            / 2048.0;
        assert!(((time - freq) / time).abs() < 1e-6);
    }

    #[test]
    fn spectrum_argument_errors() {
        assert!(magnitude_spectrum(&[0.0; 1024], 512, FS).is_err());
        assert!(magnitude_spectrum(&[0.0; 1000], 1500, FS).is_err());
    }

    #[test]
    fn peaks_of_known_sinusoids() {
        let a = analyzer();
        let spec = a.spectrum(&sines(&[(440.0, 1.0)], 1024)).unwrap();
        let peaks = detect_peaks(&spec, 60.0);
        let top = peaks.iter().max_by(|a, b| a.amp_log.total_cmp(&b.amp_log)).unwrap();
        assert!((top.freq - 440.0).abs() < 0.5, "{}", top.freq);
        assert!(peaks.iter().filter(|p| p.amp_log > top.amp_log - db_to_log(40.0)).count() == 1);

        let spec = a.spectrum(&sines(&[(440.0, 0.5), (880.0, 0.5)], 1024)).unwrap();
        let mut peaks = detect_peaks(&spec, 40.0);
        peaks.sort_by(|a, b| b.amp_log.total_cmp(&a.amp_log));
        assert!((log_to_db(peaks[0].amp_log) - log_to_db(peaks[1].amp_log)).abs() < 0.1);

        let zero = a.spectrum(&[0.0; 1024]).unwrap();
        assert!(detect_peaks(&zero, 100.0).is_empty());
    }

    #[test]
    fn f0_refinement() {
        let mk = |freq| Peak { freq, amp_log: 0.0, bin: 0 };
        assert_eq!(refine_f0(&[mk(442.1), mk(880.0)], 440.0, 100.0), 442.1);
        assert_eq!(refine_f0(&[mk(600.0)], 440.0, 100.0), 440.0);
        let spec = analyzer().spectrum(&sines(&[(261.0, 0.8)], 1024)).unwrap();
        let f0 = refine_f0(&detect_peaks(&spec, 100.0), 261.63, 100.0);
        assert!((f0 - 261.0).abs() < 0.5, "{f0}");
    }

    #[test]
    fn sawtooth_harmonics() {
        let f0 = 349.23;
        let partials: Vec<(f64, f64)> = (1..=67).map(|h| (h as f64 * f0, 1.0 / h as f64)).collect();
        let frame = analyzer().analyze(&sines(&partials, 1024), 349.23).unwrap();
        assert_eq!(frame.n_harmonics(), (24_000.0 / f0) as usize - 1);
        for h in &frame.harmonics[..13] {
            let err = log_to_db(h.amp_log) - log_to_db((1.0 / h.h as f64).ln());
            assert!(err.abs() < 0.2, "h={} err={err} dB", h.h);
        }
    }

    #[test]
    fn single_sinusoid_and_nyquist() {
        let a = analyzer();
        let frame = a.analyze(&sines(&[(500.0, 0.5)], 1024), 500.0).unwrap();
        assert_eq!(frame.harmonics[0].h, 1);
        assert!((log_to_db(frame.harmonics[0].amp_log) - log_to_db(0.5f64.ln())).abs() < 0.1);
        assert!(frame.harmonics[1..].iter().all(|h| log_to_db(h.amp_log) < -80.0));
        let spec = a.spectrum(&[0.0; 1024]).unwrap();
        assert!(extract_harmonics(&spec, &[], 24_000.0, None, 0.25).is_err());
    }

    #[test]
    fn random_frequency_interpolation_accuracy() {
        let a = analyzer();
        let bin = FS / 2048.0;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let f = rng.random_range(200.0..20_000.0);
            let amp = rng.random_range(0.05..1.0);
            let spec = a.spectrum(&sines(&[(f, amp)], 1024)).unwrap();
            let top = *detect_peaks(&spec, 100.0)
                .iter()
                .max_by(|a, b| a.amp_log.total_cmp(&b.amp_log))
                .unwrap();
            assert!((top.freq - f).abs() < 0.01 * bin, "f={f} got {}", top.freq);
            let err_db = log_to_db(top.amp_log) - log_to_db(amp.ln());
            assert!(err_db.abs() < 0.05, "f={f} amplitude error {err_db} dB");
        }
    }

    #[test]
    fn harmonics_csv() {
        let frame = HarmonicFrame {
            f0: 100.0,
            harmonics: vec![Harmonic { h: 1, freq: 100.0, amp_log: 0.0 }],
        };
        let mut out = Vec::new();
        write_harmonics_csv(&mut out, &[(3, frame)]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "frame_index,f0,h,freq,amp_db\n3,100,1,100,0\n");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn scaling_shifts_log_amplitudes(scale in 0.05f64..4.0, f0 in 262.0f64..494.0) {
            let a = analyzer();
            let partials: Vec<(f64, f64)> = (1..=8).map(|h| (h as f64 * f0, 0.2 / h as f64)).collect();
            let x = sines(&partials, 1024);
            let scaled: Vec<f64> = x.iter().map(|v| v * scale).collect();
            let base = a.analyze(&x, f0).unwrap();
            let other = a.analyze(&scaled, f0).unwrap();
            prop_assert_eq!(base.n_harmonics(), other.n_harmonics());
            for (p, q) in base.harmonics.iter().zip(&other.harmonics).take(8) {
                prop_assert!((q.amp_log - p.amp_log - scale.ln()).abs() < 1e-6);
                prop_assert!((q.freq - p.freq).abs() < 1e-6);
            }
            prop_assert!(base.n_harmonics() as f64 * base.f0 < FS / 2.0);
            prop_assert_eq!(a.analyze(&x, f0).unwrap(), base);
        }
    }
}
