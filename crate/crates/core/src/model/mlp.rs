use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// One affine map, `y = W x + b` with `W` stored out×in.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Layer {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Layer {
            w: Array2::zeros((n_out, n_in)),
            b: Array1::zeros(n_out),
        }
    }

    pub fn n_in(&self) -> usize {
        self.w.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.w.nrows()
    }

    /// Uniform ±√(1/fan_in). Weights and biases come from two streams of
    /// the same seed, filled row by row, so a layer with fewer rows is a
    /// prefix of a wider one drawn with the same tag.
    pub fn init(n_in: usize, n_out: usize, seed: u64, tag: u64) -> Self {
        let bound = (1.0 / n_in as f64).sqrt();
        let mut wr = ChaCha8Rng::seed_from_u64(seed);
        wr.set_stream(2 * tag);
        let mut br = ChaCha8Rng::seed_from_u64(seed);
        br.set_stream(2 * tag + 1);
        let w = Array2::from_shape_simple_fn((n_out, n_in), || wr.random_range(-bound..bound));
        let b = Array1::from_shape_simple_fn(n_out, || br.random_range(-bound..bound));
        Layer { w, b }
    }

    pub fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Fully connected net: leaky rectifier after every layer but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub leak: f64,
}

/// Activations kept for the backward pass. `inputs[i]` feeds layer `i`,
/// `pre[i]` is its affine output before the rectifier.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub inputs: Vec<Array2<f64>>,
    pub pre: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
}

impl MlpGrads {
    pub fn zeros_like(m: &Mlp) -> Self {
        MlpGrads {
            layers: m.layers.iter().map(|l| Layer::zeros(l.n_in(), l.n_out())).collect(),
        }
    }
}

pub(crate) fn leaky(x: f64, leak: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        leak * x
    }
}

impl Mlp {
    /// `dims = [in, h1, …, out]`; layer `i` uses init tag `tag_base + i`.
    pub fn init(dims: &[usize], leak: f64, seed: u64, tag_base: u64) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Layer::init(d[0], d[1], seed, tag_base + i as u64))
            .collect();
        Mlp { layers, leak }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::ModelMismatch("network without layers".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].n_out() != pair[1].n_in() {
                return Err(Error::ModelMismatch(format!(
                    "layer {i} emits {} values, layer {} expects {}",
                    pair[0].n_out(),
                    i + 1,
                    pair[1].n_in()
                )));
            }
        }
        for l in &self.layers {
            if l.b.len() != l.n_out() {
                return Err(Error::ModelMismatch("bias length differs from layer width".into()));
            }
            if !l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite("network parameter"));
            }
        }
        Ok(())
    }

    /// Batch forward, rows are samples.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        if x.ncols() != self.n_in() {
            return Err(Error::LengthMismatch {
                expected: self.n_in(),
                actual: x.ncols(),
            });
        }
        let last = self.layers.len() - 1;
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut a = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let mut h = a.dot(&l.w.t());
            h += &l.b;
            let out = if i < last { h.mapv(|v| leaky(v, self.leak)) } else { h.clone() };
            cache.inputs.push(a);
            cache.pre.push(h);
            a = out;
        }
        Ok((a, cache))
    }

    /// Forward for a single input vector.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.forward(view)?.0.into_raw_vec_and_offset().0)
    }

    /// Accumulates parameter gradients into `grads` given `d_out` = ∂L/∂output,
    /// and returns ∂L/∂input.
    pub fn backward(&self, cache: &MlpCache, d_out: Array2<f64>, grads: &mut MlpGrads) -> Result<Array2<f64>> {
        if cache.inputs.len() != self.layers.len() || cache.pre.len() != self.layers.len() {
            return Err(Error::InvalidArgument("backward called without a matching forward cache".into()));
        }
        let last = self.layers.len() - 1;
        let mut d = d_out;
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            if i < last {
                let leak = self.leak;
                d.zip_mut_with(&cache.pre[i], |g, &h| {
                    if h <= 0.0 {
                        *g *= leak
                    }
                });
            }
            let g = &mut grads.layers[i];
            g.w += &d.t().dot(&cache.inputs[i]);
            g.b += &d.sum_axis(Axis(0));
            d = d.dot(&l.w);
        }
        Ok(d)
    }

    /// Parameter tensors in a fixed order: W0, b0, W1, b1, …
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            v.push(l.w.as_slice_mut().expect("standard layout"));
            v.push(l.b.as_slice_mut().expect("standard layout"));
        }
        v
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            v.push(l.w.as_slice().expect("standard layout"));
            v.push(l.b.as_slice().expect("standard layout"));
        }
        v
    }
}

impl MlpGrads {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            v.push(l.w.as_slice().expect("standard layout"));
            v.push(l.b.as_slice().expect("standard layout"));
        }
        v
    }
}
