//! Parameter-free weighted-averaging convolution.
//!
//! One layer, for every node `v` simultaneously:
//!
//! ```text
//! h_hat_v = h_v / |h_v|
//! n_v     = sum_{u in N(v)} h_hat_u / sqrt(|N(v)|),  then  n_v / |n_v|
//! out_v   = alpha * h_hat_v + (1 - alpha) * n_v
//! ```
//!
//! Isolated nodes get a zero neighbor term. The `lightgcn-sum` aggregator
//! replaces the whole layer by the degree-scaled neighbor sum of the raw input.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::Csr;
use crate::tensor::{Tape, Tensor, Var};

/// Norms below this are clamped during row normalization.
pub const NORM_EPS: f64 = 1e-12;

pub const DEFAULT_ALPHAS: [f64; 5] = [0.4, 0.45, 0.5, 0.6, 0.7];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlphaMode {
    Fixed,
    /// Each alpha is `sigmoid(theta)` with `theta` trained.
    TrainableLogistic,
}

impl AlphaMode {
    pub fn name(self) -> &'static str {
        match self {
            AlphaMode::Fixed => "fixed",
            AlphaMode::TrainableLogistic => "trainable-logistic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fixed" => Some(AlphaMode::Fixed),
            "trainable-logistic" | "trainable" => Some(AlphaMode::TrainableLogistic),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregator {
    Waml,
    LightgcnSum,
}

impl Aggregator {
    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Waml => "waml",
            Aggregator::LightgcnSum => "lightgcn-sum",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "waml" => Some(Aggregator::Waml),
            "lightgcn-sum" | "lightgcn" => Some(Aggregator::LightgcnSum),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WamlConfig {
    /// One alpha per layer; the layer count is `alphas.len()`.
    pub alphas: Vec<f64>,
    pub alpha_mode: AlphaMode,
    pub aggregator: Aggregator,
    /// With `false`, layers skip both L2 steps:
    /// `alpha * h_v + (1 - alpha) * sum_u h_u / sqrt(|N(v)|)`.
    pub l2_normalize: bool,
}

impl Default for WamlConfig {
    fn default() -> Self {
        Self {
            alphas: DEFAULT_ALPHAS.to_vec(),
            alpha_mode: AlphaMode::Fixed,
            aggregator: Aggregator::Waml,
            l2_normalize: true,
        }
    }
}

impl WamlConfig {
    pub fn layers(&self) -> usize {
        self.alphas.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &a) in self.alphas.iter().enumerate() {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::config(format!("alphas[{i}] = {a} is outside [0, 1]")));
            }
            if self.alpha_mode == AlphaMode::TrainableLogistic && (a == 0.0 || a == 1.0) {
                return Err(Error::config(format!(
                    "alphas[{i}] = {a} has no logistic preimage; use a value strictly inside (0, 1)"
                )));
            }
        }
        Ok(())
    }

    /// Initial unconstrained values for trainable-logistic mode.
    pub fn alpha_logits(&self) -> Tensor {
        let logits = self.alphas.iter().map(|&a| (a / (1.0 - a)).ln()).collect();
        Tensor::from_vec(1, self.alphas.len(), logits).expect("1 x K")
    }
}

/// `1/sqrt(deg)` per node, zero for isolated nodes.
pub fn inverse_sqrt_degrees(adj: &Csr) -> Arc<[f64]> {
    (0..adj.node_count())
        .map(|v| match adj.degree(v) {
            0 => 0.0,
            d => 1.0 / (d as f64).sqrt(),
        })
        .collect()
}

/// Per-layer mixing weight: a constant or a `1x1` tape value.
#[derive(Clone, Copy, Debug)]
pub enum Alpha {
    Fixed(f64),
    Var(Var),
}

/// Precomputed graph operands shared by every layer.
#[derive(Clone, Debug)]
pub struct Propagation {
    adj: Arc<Csr>,
    scales: Arc<[f64]>,
}

impl Propagation {
    pub fn new(adj: Arc<Csr>) -> Self {
        let scales = inverse_sqrt_degrees(&adj);
        Self { adj, scales }
    }

    pub fn adjacency(&self) -> &Arc<Csr> {
        &self.adj
    }

    /// Records one layer on `tape`.
    pub fn layer(&self, tape: &mut Tape, h: Var, alpha: Alpha, config: &WamlConfig) -> Result<Var> {
        let rows = tape.value(h).rows();
        if rows != self.adj.node_count() {
            return Err(Error::data(format!(
                "feature matrix has {rows} rows but the graph has {} nodes",
                self.adj.node_count()
            )));
        }
        if config.aggregator == Aggregator::LightgcnSum {
            let n = tape.neighbor_sum(h, self.adj.clone())?;
            return Ok(tape.row_scale(n, self.scales.clone())?);
        }
        let (own, neigh) = if config.l2_normalize {
            let own = tape.row_l2_normalize(h, NORM_EPS)?;
            let n = tape.neighbor_sum(own, self.adj.clone())?;
            let n = tape.row_scale(n, self.scales.clone())?;
            (own, tape.row_l2_normalize(n, NORM_EPS)?)
        } else {
            let n = tape.neighbor_sum(h, self.adj.clone())?;
            (h, tape.row_scale(n, self.scales.clone())?)
        };
        let out = match alpha {
            Alpha::Fixed(a) => {
                let own = tape.scale(own, a)?;
                let neigh = tape.scale(neigh, 1.0 - a)?;
                tape.add(own, neigh)?
            }
            Alpha::Var(a) => {
                let rest = tape.one_minus(a)?;
                let own = tape.mul_scalar(a, own)?;
                let neigh = tape.mul_scalar(rest, neigh)?;
                tape.add(own, neigh)?
            }
        };
        Ok(out)
    }

    /// Records the whole stack; `alphas` overrides the config values when given.
    pub fn stack(&self, tape: &mut Tape, h0: Var, config: &WamlConfig, alphas: Option<&[Alpha]>) -> Result<Var> {
        let mut h = h0;
        for i in 0..config.layers() {
            let alpha = alphas.map_or(Alpha::Fixed(config.alphas[i]), |a| a[i]);
            h = self.layer(tape, h, alpha, config)?;
        }
        Ok(h)
    }
}

/// One layer with fixed `alpha` under the default (normalizing) aggregator.
pub fn waml_layer(h: &Tensor, adj: &Arc<Csr>, alpha: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha = {alpha} is outside [0, 1]")));
    }
    let config = WamlConfig {
        alphas: vec![alpha],
        ..Default::default()
    };
    waml_stack(h, adj, &config)
}

/// `h^K` for the configured stack, with fixed alphas.
pub fn waml_stack(h0: &Tensor, adj: &Arc<Csr>, config: &WamlConfig) -> Result<Tensor> {
    Ok(waml_stack_traced(h0, adj, config)?.pop().expect("h0 is always present"))
}

/// `[h^0, h^1, ..., h^K]`.
pub fn waml_stack_traced(h0: &Tensor, adj: &Arc<Csr>, config: &WamlConfig) -> Result<Vec<Tensor>> {
    config.validate()?;
    let prop = Propagation::new(adj.clone());
    let mut tape = Tape::new();
    let mut h = tape.constant(h0.clone());
    let mut trace = vec![h0.clone()];
    for i in 0..config.layers() {
        h = prop.layer(&mut tape, h, Alpha::Fixed(config.alphas[i]), config)?;
        trace.push(tape.value(h).clone());
    }
    Ok(trace)
}
