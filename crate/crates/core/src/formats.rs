//! Binary artifact streams shared between pipeline stages.
//!
//! All integers and floats are little-endian. Strings are a `u16` byte length
//! followed by UTF-8. Every file starts with a four-byte magic and a `u32`
//! version.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::dataset::{Frame, FrameTable};
use crate::envelope::PaddedEnvelope;
use crate::{Error, Result, PAD_WIDTH};

pub const FRAME_MAGIC: [u8; 4] = *b"VPFT";
pub const ENVELOPE_MAGIC: [u8; 4] = *b"VPEN";
pub const FORMAT_VERSION: u32 = 1;

pub(crate) struct LeWriter<W: Write> {
    inner: W,
    path: PathBuf,
}

impl<W: Write> LeWriter<W> {
    pub(crate) fn new(inner: W, path: &Path) -> Self {
        LeWriter {
            inner,
            path: path.to_path_buf(),
        }
    }

    pub(crate) fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b).map_err(|e| Error::io(&self.path, e))
    }

    pub(crate) fn u16(&mut self, v: u16) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn f32(&mut self, v: f32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn f64s(&mut self, v: &[f64]) -> Result<()> {
        v.iter().try_for_each(|&x| self.f64(x))
    }

    pub(crate) fn string(&mut self, s: &str) -> Result<()> {
        let len = u16::try_from(s.len())
            .map_err(|_| Error::format(&self.path, format!("string of {} bytes is too long", s.len())))?;
        self.u16(len)?;
        self.bytes(s.as_bytes())
    }

    pub(crate) fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub(crate) struct LeReader<R: Read> {
    inner: R,
    path: PathBuf,
}

impl<R: Read> LeReader<R> {
    pub(crate) fn new(inner: R, path: &Path) -> Self {
        LeReader {
            inner,
            path: path.to_path_buf(),
        }
    }

    pub(crate) fn fail(&self, message: impl Into<String>) -> Error {
        Error::format(&self.path, message)
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                self.fail("truncated file")
            } else {
                Error::io(&self.path, e)
            }
        })
    }

    /// False at a clean end of stream, true when a record follows.
    pub(crate) fn more(&mut self, first: &mut u8) -> Result<bool> {
        let mut b = [0u8; 1];
        loop {
            match self.inner.read(&mut b) {
                Ok(0) => return Ok(false),
                Ok(_) => {
                    *first = b[0];
                    return Ok(true);
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(Error::io(&self.path, e)),
            }
        }
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let mut m = [0u8; 4];
        self.fill(&mut m).map_err(|_| self.fail("missing magic"))?;
        if m != expected {
            return Err(self.fail(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(&expected)
            )));
        }
        Ok(())
    }

    pub(crate) fn version(&mut self, supported: u32) -> Result<u32> {
        let v = self.u32()?;
        if v != supported {
            return Err(self.fail(format!("unsupported version {v}")));
        }
        Ok(v)
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        let mut b = [0u8; 2];
        self.fill(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn string_with_len(&mut self, len: usize) -> Result<String> {
        let mut b = vec![0u8; len];
        self.fill(&mut b)?;
        String::from_utf8(b).map_err(|_| self.fail("string is not UTF-8"))
    }

    /// Reads a string whose first length byte was already consumed by [`more`].
    pub(crate) fn string_after(&mut self, first: u8) -> Result<String> {
        let mut hi = [0u8; 1];
        self.fill(&mut hi)?;
        let len = u16::from_le_bytes([first, hi[0]]) as usize;
        self.string_with_len(len)
    }
}

fn create(path: &Path) -> Result<LeWriter<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(LeWriter::new(BufWriter::new(f), path))
}

fn open(path: &Path) -> Result<LeReader<BufReader<File>>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(LeReader::new(BufReader::new(f), path))
}

fn midi_u16(midi: i32, path: &Path) -> Result<u16> {
    u16::try_from(midi).map_err(|_| Error::format(path, format!("MIDI label {midi} does not fit u16")))
}

fn u32_of(v: usize, what: &str, path: &Path) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::format(path, format!("{what} {v} does not fit u32")))
}

pub fn encode_frame_table<W: Write>(table: &FrameTable, out: W, path: &Path) -> Result<()> {
    let mut w = LeWriter::new(out, path);
    w.bytes(&FRAME_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.u32(u32_of(table.frame_len, "frame_len", path)?)?;
    w.u32(u32_of(table.hop, "hop", path)?)?;
    w.u32(table.sample_rate)?;
    for fr in &table.frames {
        if fr.samples.len() != table.frame_len {
            return Err(Error::LengthMismatch {
                expected: table.frame_len,
                actual: fr.samples.len(),
            });
        }
        w.string(&fr.take_id)?;
        w.u16(midi_u16(fr.midi, path)?)?;
        w.u32(fr.frame_index)?;
        for &s in &fr.samples {
            w.f32(s)?;
        }
    }
    w.finish()
}

pub fn decode_frame_table<R: Read>(input: R, path: &Path) -> Result<FrameTable> {
    let mut r = LeReader::new(input, path);
    r.magic(FRAME_MAGIC)?;
    r.version(FORMAT_VERSION)?;
    let frame_len = r.u32()? as usize;
    let hop = r.u32()? as usize;
    let sample_rate = r.u32()?;
    if frame_len == 0 || hop == 0 || sample_rate == 0 {
        return Err(r.fail("zero frame_len, hop or sample rate in header"));
    }
    let mut table = FrameTable::empty(frame_len, hop, sample_rate);
    let mut first = 0u8;
    while r.more(&mut first)? {
        let take_id = r.string_after(first)?;
        let midi = r.u16()? as i32;
        let frame_index = r.u32()?;
        let samples = (0..frame_len).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        table.frames.push(Frame {
            take_id,
            midi,
            frame_index,
            samples,
        });
    }
    Ok(table)
}

pub fn write_frame_table(table: &FrameTable, path: &Path) -> Result<()> {
    let w = create(path)?;
    encode_frame_table(table, w.inner, path)
}

pub fn read_frame_table(path: &Path) -> Result<FrameTable> {
    let r = open(path)?;
    decode_frame_table(r.inner, path)
}

/// One analyzed frame: its origin plus the padded coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeRecord {
    pub take_id: String,
    pub midi: i32,
    pub frame_index: u32,
    pub envelope: PaddedEnvelope,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeTable {
    pub sample_rate: u32,
    pub fft_size: u32,
    pub records: Vec<EnvelopeRecord>,
}

impl EnvelopeTable {
    pub fn new(sample_rate: u32, fft_size: u32) -> Self {
        EnvelopeTable {
            sample_rate,
            fft_size,
            records: Vec::new(),
        }
    }
}

pub fn encode_envelopes<W: Write>(table: &EnvelopeTable, out: W, path: &Path) -> Result<()> {
    let mut w = LeWriter::new(out, path);
    w.bytes(&ENVELOPE_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.u32(table.sample_rate)?;
    w.u32(table.fft_size)?;
    w.u32(PAD_WIDTH as u32)?;
    for rec in &table.records {
        let env = &rec.envelope;
        if env.x.len() != PAD_WIDTH {
            return Err(Error::LengthMismatch {
                expected: PAD_WIDTH,
                actual: env.x.len(),
            });
        }
        w.string(&rec.take_id)?;
        w.u16(midi_u16(rec.midi, path)?)?;
        w.u32(rec.frame_index)?;
        w.f64(env.f0)?;
        w.u16(env.k_cc as u16)?;
        for &c in &env.x {
            w.f32(c as f32)?;
        }
    }
    w.finish()
}

pub fn decode_envelopes<R: Read>(input: R, path: &Path) -> Result<EnvelopeTable> {
    let mut r = LeReader::new(input, path);
    r.magic(ENVELOPE_MAGIC)?;
    r.version(FORMAT_VERSION)?;
    let sample_rate = r.u32()?;
    let fft_size = r.u32()?;
    let width = r.u32()? as usize;
    if width != PAD_WIDTH {
        return Err(r.fail(format!("pad width {width}, expected {PAD_WIDTH}")));
    }
    let mut table = EnvelopeTable::new(sample_rate, fft_size);
    let mut first = 0u8;
    while r.more(&mut first)? {
        let take_id = r.string_after(first)?;
        let midi = r.u16()? as i32;
        let frame_index = r.u32()?;
        let f0 = r.f64()?;
        let k_cc = r.u16()? as usize;
        if k_cc == 0 || k_cc > PAD_WIDTH {
            return Err(r.fail(format!("k_cc {k_cc} outside 1..={PAD_WIDTH}")));
        }
        let x = (0..PAD_WIDTH)
            .map(|_| r.f32().map(f64::from))
            .collect::<Result<Vec<_>>>()?;
        table.records.push(EnvelopeRecord {
            take_id,
            midi,
            frame_index,
            envelope: PaddedEnvelope { x, f0, k_cc },
        });
    }
    Ok(table)
}

pub fn write_envelopes(table: &EnvelopeTable, path: &Path) -> Result<()> {
    let w = create(path)?;
    encode_envelopes(table, w.inner, path)
}

pub fn read_envelopes(path: &Path) -> Result<EnvelopeTable> {
    let r = open(path)?;
    decode_envelopes(r.inner, path)
}
