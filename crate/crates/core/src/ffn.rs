//! Residual feed-forward head applied after the convolution stack.
//!
//! Each layer maps `x` to `x + beta * x3 / |x3|` where
//! `x3 = dropout(GELU(LayerNorm(x) W1 + b1)) W2 + b2`, with a `4d` hidden
//! width. The stack may end with a row L2 normalization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use crate::waml::NORM_EPS;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct HeadConfig {
    /// Number of residual layers.
    pub layers: usize,
    pub beta_init: f64,
    pub beta_trainable: bool,
    /// One beta for all layers instead of one per layer.
    pub shared_beta: bool,
    pub dropout: f64,
    pub final_l2_norm: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            beta_init: 0.3,
            beta_trainable: true,
            shared_beta: false,
            dropout: 0.1,
            final_l2_norm: true,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout = {} is outside [0, 1)", self.dropout)));
        }
        if !self.beta_init.is_finite() {
            return Err(Error::config("beta_init must be finite"));
        }
        Ok(())
    }
}

/// Weights of one layer. Biases, gain and shift are `1 x width` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FfnLayer {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln_gain: Tensor,
    pub ln_bias: Tensor,
}

impl FfnLayer {
    /// Uniform `+-1/sqrt(fan_in)` weights, zero biases, unit gain.
    pub fn init(d: usize, rng: &mut impl Rng) -> Self {
        let uniform = |rows: usize, cols: usize, rng: &mut dyn rand::RngCore| {
            let bound = 1.0 / (rows as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::from_vec(rows, cols, data).expect("shape")
        };
        Self {
            w1: uniform(d, 4 * d, rng),
            b1: Tensor::zeros(1, 4 * d),
            w2: uniform(4 * d, d, rng),
            b2: Tensor::zeros(1, d),
            ln_gain: Tensor::filled(1, d, 1.0),
            ln_bias: Tensor::zeros(1, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.w1.rows()
    }

    fn check(&self) -> Result<()> {
        let d = self.dim();
        let h = self.w1.cols();
        let ok = self.b1.shape() == (1, h)
            && self.w2.shape() == (h, d)
            && self.b2.shape() == (1, d)
            && self.ln_gain.shape() == (1, d)
            && self.ln_bias.shape() == (1, d);
        if ok {
            Ok(())
        } else {
            Err(Error::data("inconsistent feed-forward layer shapes"))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FfnParams {
    pub layers: Vec<FfnLayer>,
    /// `1x1` tensors; one per layer, or a single shared one.
    pub betas: Vec<Tensor>,
}

impl FfnParams {
    pub fn init(d: usize, config: &HeadConfig, rng: &mut impl Rng) -> Self {
        let layers = (0..config.layers).map(|_| FfnLayer::init(d, rng)).collect();
        let n_beta = if config.shared_beta { config.layers.min(1) } else { config.layers };
        Self {
            layers,
            betas: vec![Tensor::scalar(config.beta_init); n_beta],
        }
    }

    pub fn beta_index(&self, layer: usize) -> usize {
        if self.betas.len() == 1 {
            0
        } else {
            layer
        }
    }

    pub fn validate(&self) -> Result<()> {
        for layer in &self.layers {
            layer.check()?;
        }
        if !(self.betas.len() == self.layers.len() || (self.betas.len() == 1 && !self.layers.is_empty())) {
            return Err(Error::data("beta count does not match layer count"));
        }
        if self.betas.iter().any(|b| b.shape() != (1, 1) || !b.is_finite()) {
            return Err(Error::data("betas must be finite scalars"));
        }
        Ok(())
    }
}

/// Tape handles for one layer's weights.
#[derive(Clone, Copy, Debug)]
pub struct FfnLayerVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub ln_gain: Var,
    pub ln_bias: Var,
}

#[derive(Clone, Debug)]
pub struct FfnVars {
    pub layers: Vec<FfnLayerVars>,
    pub betas: Vec<Var>,
}

impl FfnVars {
    fn beta(&self, layer: usize) -> Var {
        if self.betas.len() == 1 {
            self.betas[0]
        } else {
            self.betas[layer]
        }
    }
}

/// Inverted-dropout mask: entries are 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Tensor::from_vec(rows, cols, data).expect("shape")
}

/// Records one layer. `dropout` carries `(rate, seed)` in training mode.
pub fn ffn_layer_var(
    tape: &mut Tape,
    x: Var,
    layer: &FfnLayerVars,
    beta: Var,
    dropout: Option<(f64, u64)>,
) -> Result<Var> {
    let x1 = tape.layer_norm(x, layer.ln_gain, layer.ln_bias, LAYER_NORM_EPS)?;
    let pre = tape.matmul(x1, layer.w1)?;
    let pre = tape.add_row_broadcast(pre, layer.b1)?;
    let mut x2 = tape.gelu(pre)?;
    if let Some((rate, seed)) = dropout {
        if rate > 0.0 {
            let (r, c) = tape.value(x2).shape();
            x2 = tape.mul_const(x2, dropout_mask(r, c, rate, seed))?;
        }
    }
    let x3 = tape.matmul(x2, layer.w2)?;
    let x3 = tape.add_row_broadcast(x3, layer.b2)?;
    let x3 = tape.row_l2_normalize(x3, NORM_EPS)?;
    let branch = tape.mul_scalar(beta, x3)?;
    Ok(tape.add(x, branch)?)
}

/// Records the head. In training mode layer `j` draws its dropout mask from
/// `seed + j`.
pub fn head_forward_var(
    tape: &mut Tape,
    e0: Var,
    vars: &FfnVars,
    config: &HeadConfig,
    training_seed: Option<u64>,
) -> Result<Var> {
    let mut e = e0;
    for (j, layer) in vars.layers.iter().enumerate() {
        let dropout = training_seed.map(|s| (config.dropout, s.wrapping_add(j as u64)));
        e = ffn_layer_var(tape, e, layer, vars.beta(j), dropout)?;
    }
    if config.final_l2_norm {
        e = tape.row_l2_normalize(e, NORM_EPS)?;
    }
    Ok(e)
}

/// Registers `params` on `tape`; betas are constants unless `beta_trainable`.
pub fn bind(tape: &mut Tape, params: &FfnParams, trainable: bool, beta_trainable: bool) -> FfnVars {
    let mut reg = |t: &Tensor, train: bool| if train { tape.param(t.clone()) } else { tape.constant(t.clone()) };
    let layers = params
        .layers
        .iter()
        .map(|l| FfnLayerVars {
            w1: reg(&l.w1, trainable),
            b1: reg(&l.b1, trainable),
            w2: reg(&l.w2, trainable),
            b2: reg(&l.b2, trainable),
            ln_gain: reg(&l.ln_gain, trainable),
            ln_bias: reg(&l.ln_bias, trainable),
        })
        .collect();
    let betas = params.betas.iter().map(|b| reg(b, trainable && beta_trainable)).collect();
    FfnVars { layers, betas }
}

/// One layer on plain tensors. `dropout_seed` enables training mode.
pub fn ffn_layer(x: &Tensor, layer: &FfnLayer, beta: f64, dropout: Option<(f64, u64)>) -> Result<Tensor> {
    layer.check()?;
    if x.cols() != layer.dim() {
        return Err(Error::data(format!(
            "input width {} does not match layer width {}",
            x.cols(),
            layer.dim()
        )));
    }
    let mut tape = Tape::new();
    let params = FfnParams {
        layers: vec![layer.clone()],
        betas: vec![Tensor::scalar(beta)],
    };
    let vars = bind(&mut tape, &params, false, false);
    let xv = tape.constant(x.clone());
    let out = ffn_layer_var(&mut tape, xv, &vars.layers[0], vars.betas[0], dropout)?;
    Ok(tape.value(out).clone())
}

/// The whole head on plain tensors; `training_seed` enables dropout.
pub fn head_forward(e0: &Tensor, params: &FfnParams, config: &HeadConfig, training_seed: Option<u64>) -> Result<Tensor> {
    config.validate()?;
    params.validate()?;
    if let Some(l) = params.layers.first() {
        if l.dim() != e0.cols() {
            return Err(Error::data(format!(
                "input width {} does not match head width {}",
                e0.cols(),
                l.dim()
            )));
        }
    }
    let mut tape = Tape::new();
    let vars = bind(&mut tape, params, false, false);
    let x = tape.constant(e0.clone());
    let out = head_forward_var(&mut tape, x, &vars, config, training_seed)?;
    Ok(tape.value(out).clone())
}
