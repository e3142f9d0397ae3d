//! PCM WAV reading and writing.
//!
//! Reading accepts 8/16/24/32-bit integer and 32-bit float PCM, mono or
//! multichannel (downmixed by channel average). Writing always produces
//! 16-bit PCM mono with the canonical 44-byte header.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Decoded mono audio and its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct PcmAudio {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        hound::Error::Unsupported => {
            Error::UnsupportedFormat(format!("{}: unsupported WAV codec", path.display()))
        }
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Reads a WAV file into mono samples scaled to [-1, 1].
pub fn read_wav(path: &Path) -> Result<PcmAudio> {
    let reader = WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.sample_rate == 0 || spec.channels == 0 {
        return Err(Error::format(path, "zero sample rate or channel count"));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 * scale) as f32))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_err(path, e))?
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: {bits}-bit {fmt:?}",
                path.display()
            )))
        }
    };

    let channels = spec.channels as usize;
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|c| c.iter().map(|&s| s as f64).sum::<f64>() as f32 / channels as f32)
            .collect()
    };
    let samples = samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect();
    Ok(PcmAudio {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// Quantizes one sample to 16-bit PCM (scale 32768, saturating at +32767).
pub fn quantize_i16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes 16-bit PCM mono. Samples must lie in [-1, 1].
pub fn write_wav(samples: &[f64], sample_rate: u32, path: &Path) -> Result<()> {
    if sample_rate == 0 {
        return Err(Error::InvalidArgument("sample rate must be positive".into()));
    }
    for (index, &value) in samples.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite("audio samples"));
        }
        if value.abs() > 1.0 {
            return Err(Error::Clipping { index, value });
        }
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    {
        let mut w = writer.get_i16_writer(samples.len() as u32);
        for &s in samples {
            w.write_sample(quantize_i16(s));
        }
        w.flush().map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silent_second_has_canonical_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("silence.wav");
        write_wav(&vec![0.0; 48000], 48000, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 44 + 96000);
        assert_eq!(&bytes[0..4], b"RIFF");
        let riff_size = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        assert_eq!(riff_size, 36 + 96000);
        assert_eq!(&bytes[8..16], b"WAVEfmt ");
        assert_eq!(u16::from_le_bytes([bytes[20], bytes[21]]), 1); // PCM
        assert_eq!(&bytes[36..40], b"data");

        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 48000);
        assert_eq!(back.samples.len(), 48000);
        assert!(back.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn half_scale_sample_reads_as_one_half() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("half.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 48000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(16384i16).unwrap();
        w.write_sample(-32768i16).unwrap();
        w.finalize().unwrap();
        let back = read_wav(&path).unwrap();
        assert!((back.samples[0] - 0.5).abs() <= 1.0 / 32768.0);
        assert_eq!(back.samples[1], -1.0);
    }

    #[test]
    fn full_scale_sine_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sine.wav");
        let x: Vec<f64> = (0..48000)
            .map(|n| (2.0 * std::f64::consts::PI * 440.0 * n as f64 / 48000.0).sin())
            .collect();
        write_wav(&x, 48000, &path).unwrap();
        let back = read_wav(&path).unwrap();
        let max_err = x
            .iter()
            .zip(&back.samples)
            .map(|(a, &b)| (a - b as f64).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 2f64.powi(-14), "max error {max_err}");
    }

    #[test]
    fn stereo_is_averaged_and_float_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 44100,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for (l, r) in [(0.5f32, -0.25f32), (1.0, 0.0)] {
            w.write_sample(l).unwrap();
            w.write_sample(r).unwrap();
        }
        w.finalize().unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 44100);
        assert_eq!(back.samples, vec![0.125, 0.5]);
    }

    #[test]
    fn twenty_four_bit_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s24.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 48000,
            bits_per_sample: 24,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(1i32 << 22).unwrap();
        w.finalize().unwrap();
        assert_eq!(read_wav(&path).unwrap().samples, vec![0.5]);
    }

    #[test]
    fn clipping_and_bad_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.wav");
        assert!(matches!(
            write_wav(&[0.0, 1.5], 48000, &path),
            Err(Error::Clipping { index: 1, .. })
        ));
        let junk = dir.path().join("junk.wav");
        std::fs::write(&junk, b"definitely not a riff file").unwrap();
        assert!(read_wav(&junk).is_err());
        assert!(matches!(
            read_wav(&dir.path().join("missing.wav")),
            Err(Error::Io { .. })
        ));
    }
}
