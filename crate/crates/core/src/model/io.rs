//! `VPMD` model files.
//!
//! Layout after magic and version: config block, normalization vectors,
//! encoder and decoder (layer count, then per layer out, in, row-major
//! weights, biases), loss history.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{CondEncoding, EpochLoss, Layer, Mlp, ModelKind, ModelParams, Normalization, TrainConfig};
use crate::formats::{LeReader, LeWriter};
use crate::{Error, Result, PAD_WIDTH};

pub const MODEL_MAGIC: [u8; 4] = *b"VPMD";
const MODEL_VERSION: u32 = 1;

fn write_mlp<W: Write>(w: &mut LeWriter<W>, m: &Mlp) -> Result<()> {
    w.f64(m.leak)?;
    w.u32(m.layers.len() as u32)?;
    for l in &m.layers {
        w.u32(l.n_out() as u32)?;
        w.u32(l.n_in() as u32)?;
        w.f64s(l.w.as_slice().expect("standard layout"))?;
        w.f64s(l.b.as_slice().expect("standard layout"))?;
    }
    Ok(())
}

fn read_mlp<R: Read>(r: &mut LeReader<R>) -> Result<Mlp> {
    let leak = r.f64()?;
    let n = r.u32()? as usize;
    if n == 0 || n > 64 {
        return Err(r.fail(format!("implausible layer count {n}")));
    }
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let out = r.u32()? as usize;
        let inp = r.u32()? as usize;
        if out == 0 || inp == 0 || out * inp > 1 << 24 {
            return Err(r.fail(format!("implausible layer shape {out}×{inp}")));
        }
        let w = Array2::from_shape_vec((out, inp), r.f64s(out * inp)?).expect("shape");
        let b = Array1::from(r.f64s(out)?);
        layers.push(Layer { w, b });
    }
    Ok(Mlp { layers, leak })
}

pub fn encode_model<W: Write>(m: &ModelParams, out: W, path: &Path) -> Result<()> {
    m.validate()?;
    let mut w = LeWriter::new(out, path);
    let c = &m.config;
    w.bytes(&MODEL_MAGIC)?;
    w.u32(MODEL_VERSION)?;
    w.u32(match c.kind {
        ModelKind::Ae => 0,
        ModelKind::Cvae => 1,
    })?;
    w.u32(c.conditional as u32)?;
    w.u32(match c.cond_encoding {
        CondEncoding::Scalar => 0,
        CondEncoding::OneHot => 1,
    })?;
    w.f64(c.beta)?;
    w.u32(c.latent_dim as u32)?;
    w.u32(c.hidden as u32)?;
    w.f64(c.lr)?;
    w.u32(c.epochs as u32)?;
    w.u32(c.batch_size as u32)?;
    w.u64(c.seed)?;
    w.f64(c.leak)?;
    w.u32(c.sample_latent as u32)?;

    w.u32(PAD_WIDTH as u32)?;
    w.f64s(&m.norm.mean)?;
    w.f64s(&m.norm.std)?;
    write_mlp(&mut w, &m.encoder)?;
    write_mlp(&mut w, &m.decoder)?;
    w.u32(m.loss_history.len() as u32)?;
    for e in &m.loss_history {
        w.f64(e.recon)?;
        w.f64(e.kl)?;
    }
    w.finish()
}

pub fn decode_model<R: Read>(input: R, path: &Path) -> Result<ModelParams> {
    let mut r = LeReader::new(input, path);
    r.magic(MODEL_MAGIC)?;
    r.version(MODEL_VERSION)?;
    let kind = match r.u32()? {
        0 => ModelKind::Ae,
        1 => ModelKind::Cvae,
        k => return Err(r.fail(format!("unknown model kind {k}"))),
    };
    let conditional = r.u32()? != 0;
    let cond_encoding = match r.u32()? {
        0 => CondEncoding::Scalar,
        1 => CondEncoding::OneHot,
        k => return Err(r.fail(format!("unknown condition encoding {k}"))),
    };
    let config = TrainConfig {
        kind,
        conditional,
        cond_encoding,
        beta: r.f64()?,
        latent_dim: r.u32()? as usize,
        hidden: r.u32()? as usize,
        lr: r.f64()?,
        epochs: r.u32()? as usize,
        batch_size: r.u32()? as usize,
        seed: r.u64()?,
        leak: r.f64()?,
        sample_latent: r.u32()? != 0,
    };
    let width = r.u32()? as usize;
    if width != PAD_WIDTH {
        return Err(r.fail(format!("normalization width {width}, expected {PAD_WIDTH}")));
    }
    let norm = Normalization {
        mean: r.f64s(width)?,
        std: r.f64s(width)?,
    };
    let encoder = read_mlp(&mut r)?;
    let decoder = read_mlp(&mut r)?;
    let n = r.u32()? as usize;
    let mut loss_history = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        loss_history.push(EpochLoss {
            recon: r.f64()?,
            kl: r.f64()?,
        });
    }
    let m = ModelParams {
        config,
        encoder,
        decoder,
        norm,
        loss_history,
    };
    m.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(m)
}

pub fn write_model(m: &ModelParams, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    encode_model(m, BufWriter::new(f), path)
}

pub fn read_model(path: &Path) -> Result<ModelParams> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_model(BufReader::new(f), path)
}

/// `epoch,recon,kl` rows, preceded by `# <comment>` when given.
pub fn write_loss_csv<W: Write>(mut out: W, history: &[EpochLoss], comment: Option<&str>) -> std::io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "epoch,recon,kl")?;
    for (i, e) in history.iter().enumerate() {
        writeln!(out, "{},{:e},{:e}", i + 1, e.recon, e.kl)?;
    }
    Ok(())
}
