//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &[&Tensor]) -> Self {
        let zeros = |t: &&Tensor| Tensor::zeros(t.rows(), t.cols());
        Self {
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }
}

/// One update. Entries with `grads[i] == None` are frozen and left untouched;
/// `decay[i]` selects which tensors receive weight decay. The decay
/// `p <- p (1 - lr wd)` is applied before the bias-corrected adaptive step.
pub fn adamw_step(
    params: &mut [&mut Tensor],
    grads: &[Option<Tensor>],
    decay: &[bool],
    state: &mut OptimizerState,
    config: &AdamWConfig,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || decay.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::data("optimizer state does not match the parameter list"));
    }
    for i in 0..n {
        if let Some(g) = &grads[i] {
            if g.shape() != params[i].shape() || state.m[i].shape() != params[i].shape() {
                return Err(Error::data(format!(
                    "gradient {i} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    params[i].shape()
                )));
            }
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - config.beta1.powf(t);
    let c2 = 1.0 - config.beta2.powf(t);
    let lr = config.learning_rate;
    for i in 0..n {
        let Some(g) = &grads[i] else { continue };
        let shrink = if decay[i] { 1.0 - lr * config.weight_decay } else { 1.0 };
        let p = params[i].data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for k in 0..p.len() {
            let gk = g.data()[k];
            m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * gk;
            v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] = p[k] * shrink - lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(p: f64, g: f64, decay: bool, config: AdamWConfig) -> f64 {
        let mut param = Tensor::scalar(p);
        let mut state = OptimizerState::new(&[&param]);
        adamw_step(&mut [&mut param], &[Some(Tensor::scalar(g))], &[decay], &mut state, &config).unwrap();
        assert_eq!(state.step, 1);
        param.item()
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let config = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        assert_eq!(run(1.7, 0.0, true, config), 1.7);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let config = AdamWConfig {
            learning_rate: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        // m_hat = 1, v_hat = 1: p = 1 - 0.1 / (1 + 1e-8)
        let p = run(1.0, 1.0, true, config);
        assert!((p - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((p - 0.9).abs() < 1e-8);
    }

    #[test]
    fn decay_only_step_shrinks_multiplicatively() {
        let config = AdamWConfig::default();
        let p = run(2.0, 0.0, true, config);
        assert!((p - 2.0 * (1.0 - 1e-6)).abs() < 1e-15);
        assert_eq!(run(2.0, 0.0, false, config), 2.0);
    }

    #[test]
    fn frozen_entries_are_skipped() {
        let mut a = Tensor::scalar(1.0);
        let mut b = Tensor::scalar(1.0);
        let mut state = OptimizerState::new(&[&a, &b]);
        adamw_step(
            &mut [&mut a, &mut b],
            &[Some(Tensor::scalar(1.0)), None],
            &[true, true],
            &mut state,
            &AdamWConfig::default(),
        )
        .unwrap();
        assert!(a.item() < 1.0);
        assert_eq!(b.item(), 1.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut a = Tensor::zeros(2, 2);
        let mut state = OptimizerState::new(&[&a]);
        let bad = adamw_step(&mut [&mut a], &[Some(Tensor::zeros(1, 2))], &[true], &mut state, &AdamWConfig::default());
        assert!(bad.is_err());
        assert_eq!(state.step, 0);
    }

    #[test]
    fn zero_learning_rate_keeps_bits() {
        let config = AdamWConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        let mut a = Tensor::from_vec(1, 3, vec![0.1, -2.0, 3.5]).unwrap();
        let before = a.clone();
        let mut state = OptimizerState::new(&[&a]);
        for _ in 0..10 {
            adamw_step(&mut [&mut a], &[Some(Tensor::filled(1, 3, 0.7))], &[true], &mut state, &config).unwrap();
        }
        assert_eq!(a, before);
    }
}
