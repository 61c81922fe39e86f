//! Training protocol: split seller-product edges, run minibatch AdamW on the
//! contrastive objective, and keep the parameters with the best validation
//! Recall@K.

mod checkpoint;
mod loss;
mod optim;
mod split;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{contrastive_loss, contrastive_loss_value, triplet_loss, LossKind};
pub use optim::{adamw_step, AdamWConfig, OptimizerState};
pub use split::{epoch_batches, sample_minibatch, split_edges, EdgeSplit, Pair};

use std::collections::HashSet;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result, TensorError};
use crate::eval::{encode_all, evaluate, EvalConfig};
use crate::graph::{EdgeType, HeteroGraph};
use crate::model::{Encoder, ModelParams};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub temperature: f64,
    pub optimizer: AdamWConfig,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub loss: LossKind,
    /// Average in the product-anchored mirror of the contrastive loss.
    pub symmetric: bool,
    pub triplet_margin: f64,
    /// Train / validation / test fractions of the seller-product edges.
    pub split: (f64, f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            temperature: 0.1,
            optimizer: AdamWConfig::default(),
            max_epochs: 50,
            patience: 10,
            seed: 0,
            loss: LossKind::Contrastive,
            symmetric: false,
            triplet_margin: 0.5,
            split: (0.8, 0.1, 0.1),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("temperature must be positive"));
        }
        let o = &self.optimizer;
        if !(o.learning_rate >= 0.0) || !(o.weight_decay >= 0.0) || !(o.eps > 0.0) {
            return Err(Error::config("learning_rate and weight_decay must be non-negative, eps positive"));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::config("adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub validation_recall: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation recall.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    /// One tab-separated line per epoch: epoch, loss, validation recall, seconds.
    pub fn log_text(&self) -> String {
        let mut out = String::new();
        for e in &self.log {
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}\t{:.3}", e.epoch, e.loss, e.validation_recall, e.seconds);
        }
        out
    }
}

/// Splits the seller-product edges of `graph` and returns the split with the
/// message-passing graph that hides validation and test edges.
pub fn prepare(graph: &HeteroGraph, config: &TrainConfig) -> Result<(EdgeSplit, HeteroGraph)> {
    let edges = graph.edges_of(EdgeType::SellerProduct);
    let split = split_edges(edges, config.split, config.seed)?;
    let hidden: HashSet<Pair> = split.validation.iter().chain(&split.test).copied().collect();
    Ok((split, graph.without_edges(EdgeType::SellerProduct, &hidden)))
}

/// Runs the training loop. `graph` supplies the retrieval pool, `encoder`
/// must be built on a graph without the validation and test edges.
pub fn train(
    encoder: &Encoder,
    graph: &HeteroGraph,
    split: &EdgeSplit,
    config: &TrainConfig,
    eval: &EvalConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut params = encoder.init_params(config.seed);
    let specs = params.specs(&encoder.config().head);
    let decay: Vec<bool> = specs.iter().map(|s| s.decay).collect();
    let mut state = OptimizerState::new(&params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7472_6169_6e00_0000);
    let fixed = if encoder.propagation_is_trainable() {
        None
    } else {
        Some(encoder.propagate(&params)?)
    };

    let mut best = (f64::NEG_INFINITY, 0usize, params.clone());
    let mut log = Vec::new();
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        let batches = epoch_batches(&split.train, config.batch_size.min(split.train.len()), &mut rng)?;
        let mut total = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let dropout_seed: u64 = rng.gen();
            let n = batch.len();
            let idx: Arc<[usize]> = batch.iter().map(|p| p.0).chain(batch.iter().map(|p| p.1)).collect();
            let mut tape = Tape::new();
            let bound = encoder.bind(&mut tape, &params, true);
            let step = (|| -> Result<f64> {
                let rows = match &fixed {
                    Some(hk) => tape.constant(hk.select_rows(&idx)?),
                    None => {
                        let h = encoder.propagate_var(&mut tape, &bound)?;
                        tape.gather_rows(h, idx.clone())?
                    }
                };
                let e = encoder.head_var(&mut tape, &bound, rows, Some(dropout_seed))?;
                let es = tape.gather_rows(e, (0..n).collect())?;
                let ep = tape.gather_rows(e, (n..2 * n).collect())?;
                let loss = match config.loss {
                    LossKind::Contrastive => contrastive_loss(&mut tape, es, ep, config.temperature, config.symmetric)?,
                    LossKind::Triplet => triplet_loss(&mut tape, es, ep, config.triplet_margin)?,
                };
                tape.backward(loss)?;
                Ok(tape.value(loss).item())
            })();
            let value = step.map_err(|e| match e {
                Error::Tensor(TensorError::NonFinite { op }) => {
                    Error::Numerical(format!("non-finite value in `{op}` at epoch {epoch}, batch {}", b + 1))
                }
                other => other,
            })?;
            let grads: Vec<Option<Tensor>> = bound
                .all
                .iter()
                .zip(&specs)
                .zip(params.tensors())
                .map(|((&v, spec), p)| {
                    spec.trainable
                        .then(|| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())))
                })
                .collect();
            if grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!("non-finite gradient at epoch {epoch}, batch {}", b + 1)));
            }
            adamw_step(&mut params.tensors_mut(), &grads, &decay, &mut state, &config.optimizer)?;
            total += value;
        }
        let table = encode_all(encoder, &params)?;
        let report = evaluate(&table, graph, &split.validation, &split.train, eval)?;
        log.push(EpochLog {
            epoch,
            loss: total / batches.len() as f64,
            validation_recall: report.recall,
            seconds: start.elapsed().as_secs_f64(),
        });
        if report.recall > best.0 {
            best = (report.recall, epoch, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best.2,
        best_epoch: best.1,
        log,
    })
}
