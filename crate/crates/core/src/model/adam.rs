use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(shapes: &[usize]) -> Self {
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected ADAM update over every tensor.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::LengthMismatch {
            expected: state.m.len(),
            actual: params.len(),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::LengthMismatch {
                expected: state.m[i].len(),
                actual: g.len(),
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_gradient_moves_by_lr() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.0, 0.0];
        let mut st = AdamState::new(&[2]);
        let mut prev = p.clone();
        for _ in 0..2000 {
            adam_step(&mut [&mut p[..]], &[&[0.3, -5.0][..]], &mut st, &cfg).unwrap();
            let step: Vec<f64> = p.iter().zip(&prev).map(|(a, b)| (a - b).abs()).collect();
            // bias correction makes every step exactly lr·g/(|g|+eps)
            assert!((step[0] - cfg.lr).abs() < 1e-10);
            assert!((step[1] - cfg.lr).abs() < 1e-10);
            prev = p.clone();
        }
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let cfg = AdamConfig::default();
        let mut p = vec![1.0, 2.0];
        let mut st = AdamState::new(&[2]);
        adam_step(&mut [&mut p[..]], &[&[0.0, 0.0][..]], &mut st, &cfg).unwrap();
        assert_eq!(p, vec![1.0, 2.0]);

        adam_step(&mut [&mut p[..]], &[&[1.0, -1.0][..]], &mut st, &cfg).unwrap();
        let (m, v) = (st.m[0].clone(), st.v[0].clone());
        adam_step(&mut [&mut p[..]], &[&[0.0, 0.0][..]], &mut st, &cfg).unwrap();
        for j in 0..2 {
            assert_eq!(st.m[0][j], 0.9 * m[j]);
            assert_eq!(st.v[0][j], 0.999 * v[j]);
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![0.0; 3];
        let mut st = AdamState::new(&[2]);
        assert!(adam_step(&mut [&mut p[..]], &[&[0.0; 3][..]], &mut st, &AdamConfig::default()).is_err());
    }
}
