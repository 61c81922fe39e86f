//! Central finite-difference verification of tape gradients.

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// Entries with `|analytic| + |numeric|` at or below this are skipped.
pub const MAGNITUDE_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|)` over compared entries.
    pub max_rel_error: f64,
    /// `(parameter, flat index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub compared: usize,
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares backward-pass gradients of `f` against central differences with
/// the given `step`, for every element of every tensor in `params`.
///
/// `f` must rebuild the computation from scratch on the tape it is handed,
/// treating the supplied vars as its parameters, and return a scalar loss.
pub fn check_gradients<F>(params: &[Tensor], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|p| tape.constant(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        compared: 0,
        skipped: 0,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for k in 0..p.data().len() {
            let orig = p.data()[k];
            work[pi].data_mut()[k] = orig + step;
            let plus = eval(&work)?;
            work[pi].data_mut()[k] = orig - step;
            let minus = eval(&work)?;
            work[pi].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[pi].data()[k];
            if a.abs() + numeric.abs() <= MAGNITUDE_FLOOR {
                report.skipped += 1;
                continue;
            }
            report.compared += 1;
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((pi, k));
                }
            }
        }
    }
    Ok(report)
}

/// Node pairs `(seller, product)` used as the batch of [`composite_check`].
const COMPOSITE_PAIRS: [(usize, usize); 3] = [(0, 2), (1, 3), (0, 4)];

/// Finite-difference check of the whole encoder and loss on a 6-node graph:
/// trainable embeddings and alpha logits, five convolution layers, a
/// three-layer head with dropout, and the contrastive loss at `tau = 0.1`.
pub fn composite_check(seed: u64, step: f64) -> Result<GradCheckReport> {
    use std::sync::Arc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::features::FeatureConfig;
    use crate::graph::Csr;
    use crate::model::{BoundParams, Encoder, ModelConfig, ModelParams};
    use crate::train::contrastive_loss;
    use crate::waml::{AlphaMode, WamlConfig};

    let d = 4;
    // sellers 0-1, products 2-4, category 5
    let adj = Arc::new(Csr::from_undirected(6, [(0, 2), (1, 3), (0, 4), (2, 3), (3, 4), (5, 2), (5, 4)]));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h0 = Tensor::from_vec(6, d, (0..6 * d).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let config = ModelConfig {
        features: FeatureConfig {
            dim: d,
            ..Default::default()
        },
        waml: WamlConfig {
            alpha_mode: AlphaMode::TrainableLogistic,
            ..Default::default()
        },
        trainable_embeddings: true,
        ..Default::default()
    };
    let encoder = Encoder::new(adj, h0, config)?;
    let mut params = ModelParams::init(6, encoder.config(), seed);
    // move biases and norm parameters off their trivial initial values
    for layer in &mut params.head.layers {
        for t in [&mut layer.b1, &mut layer.b2, &mut layer.ln_gain, &mut layer.ln_bias] {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.2..0.2);
            }
        }
    }
    let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    let n = COMPOSITE_PAIRS.len();
    let idx: Arc<[usize]> = COMPOSITE_PAIRS
        .iter()
        .map(|p| p.0)
        .chain(COMPOSITE_PAIRS.iter().map(|p| p.1))
        .collect();
    check_gradients(&tensors, step, |tape, vars| {
        let bound = BoundParams::from_vars(vars, &params)?;
        let h = encoder.propagate_var(tape, &bound)?;
        let rows = tape.gather_rows(h, idx.clone())?;
        let e = encoder.head_var(tape, &bound, rows, Some(seed))?;
        let es = tape.gather_rows(e, (0..n).collect())?;
        let ep = tape.gather_rows(e, (n..2 * n).collect())?;
        contrastive_loss(tape, es, ep, 0.1, false)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composite_gradients_match_differences() {
        for seed in 0..3 {
            let report = composite_check(seed, 1e-5).unwrap();
            assert!(report.compared > 100, "{report:?}");
            assert!(report.passes(1e-4), "seed {seed}: {report:?}");
        }
    }
}
