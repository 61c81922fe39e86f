//! Full encoder: `h0 -> convolution stack -> feed-forward head`, plus the
//! parameter set the optimizer updates.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::ffn::{self, FfnParams, FfnVars, HeadConfig};
use crate::graph::Csr;
use crate::tensor::{Tape, Tensor, Var};
use crate::waml::{Alpha, AlphaMode, Propagation, WamlConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub features: FeatureConfig,
    pub waml: WamlConfig,
    pub head: HeadConfig,
    /// Adds a trainable `|V| x d` table to h0.
    pub trainable_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            waml: WamlConfig::default(),
            head: HeadConfig::default(),
            trainable_embeddings: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.waml.validate()?;
        self.head.validate()
    }

    pub fn dim(&self) -> usize {
        self.features.dim
    }
}

/// Everything the optimizer may update.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub embeddings: Option<Tensor>,
    /// `1 x K` logits in trainable-logistic alpha mode.
    pub alpha_logits: Option<Tensor>,
    pub head: FfnParams,
}

/// How the optimizer treats one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub trainable: bool,
    pub decay: bool,
}

impl ModelParams {
    pub fn init(node_count: usize, config: &ModelConfig, seed: u64) -> Self {
        let d = config.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = config.trainable_embeddings.then(|| {
            // unit expected row norm, matching a hashed vector
            let bound = (3.0 / d as f64).sqrt();
            let data = (0..node_count * d).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::from_vec(node_count, d, data).expect("shape")
        });
        let alpha_logits = (config.waml.alpha_mode == AlphaMode::TrainableLogistic).then(|| config.waml.alpha_logits());
        Self {
            embeddings,
            alpha_logits,
            head: FfnParams::init(d, &config.head, &mut rng),
        }
    }

    /// Parameter tensors in canonical order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        out.extend(self.embeddings.as_ref());
        out.extend(self.alpha_logits.as_ref());
        for l in &self.head.layers {
            out.extend([&l.w1, &l.b1, &l.w2, &l.b2, &l.ln_gain, &l.ln_bias]);
        }
        out.extend(self.head.betas.iter());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.extend(self.embeddings.as_mut());
        out.extend(self.alpha_logits.as_mut());
        for l in &mut self.head.layers {
            out.extend([&mut l.w1, &mut l.b1, &mut l.w2, &mut l.b2, &mut l.ln_gain, &mut l.ln_bias]);
        }
        out.extend(self.head.betas.iter_mut());
        out
    }

    /// Names and optimizer flags in the order of [`ModelParams::tensors`].
    /// Only weight matrices and embeddings are decayed.
    pub fn specs(&self, head: &HeadConfig) -> Vec<ParamSpec> {
        let spec = |name: String, trainable: bool, decay: bool| ParamSpec { name, trainable, decay };
        let mut out = Vec::new();
        if self.embeddings.is_some() {
            out.push(spec("embeddings".into(), true, true));
        }
        if self.alpha_logits.is_some() {
            out.push(spec("alpha_logits".into(), true, false));
        }
        for j in 0..self.head.layers.len() {
            for (field, decay) in [
                ("w1", true),
                ("b1", false),
                ("w2", true),
                ("b2", false),
                ("ln_gain", false),
                ("ln_bias", false),
            ] {
                out.push(spec(format!("ffn.{j}.{field}"), true, decay));
            }
        }
        for j in 0..self.head.betas.len() {
            out.push(spec(format!("ffn.beta.{j}"), head.beta_trainable, false));
        }
        out
    }

    /// Rebuilds parameters from named tensors, checking every shape against `config`.
    pub fn from_named(named: Vec<(String, Tensor)>, node_count: usize, config: &ModelConfig) -> Result<Self> {
        let template = Self::init(node_count, config, 0);
        let specs = template.specs(&config.head);
        if named.len() != specs.len() {
            return Err(Error::data(format!(
                "checkpoint holds {} tensors, configuration expects {}",
                named.len(),
                specs.len()
            )));
        }
        let mut out = template;
        for ((slot, spec), (name, tensor)) in out.tensors_mut().into_iter().zip(&specs).zip(named) {
            if name != spec.name {
                return Err(Error::data(format!("checkpoint tensor `{name}` where `{}` was expected", spec.name)));
            }
            if tensor.shape() != slot.shape() {
                return Err(Error::data(format!(
                    "checkpoint tensor `{name}` has shape {:?}, expected {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            *slot = tensor;
        }
        Ok(out)
    }

    /// Effective per-layer alphas.
    pub fn alphas(&self, config: &WamlConfig) -> Vec<f64> {
        match &self.alpha_logits {
            Some(t) => t.data().iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect(),
            None => config.alphas.clone(),
        }
    }
}

/// Tape handles for a bound parameter set.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub embeddings: Option<Var>,
    pub alpha_logits: Option<Var>,
    pub head: FfnVars,
    /// One handle per tensor, in canonical order.
    pub all: Vec<Var>,
}

impl BoundParams {
    /// Rebuilds the structure from handles in the canonical order of
    /// [`ModelParams::tensors`].
    pub fn from_vars(vars: &[Var], params: &ModelParams) -> Result<Self> {
        let expected = params.tensors().len();
        if vars.len() != expected {
            return Err(Error::data(format!("{} handles for {expected} parameters", vars.len())));
        }
        let mut it = vars.iter().copied();
        let embeddings = params.embeddings.as_ref().and_then(|_| it.next());
        let alpha_logits = params.alpha_logits.as_ref().and_then(|_| it.next());
        let mut next = || it.next().expect("counted above");
        let layers = params
            .head
            .layers
            .iter()
            .map(|_| ffn::FfnLayerVars {
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
                ln_gain: next(),
                ln_bias: next(),
            })
            .collect();
        let betas = params.head.betas.iter().map(|_| next()).collect();
        Ok(Self {
            embeddings,
            alpha_logits,
            head: FfnVars { layers, betas },
            all: vars.to_vec(),
        })
    }
}

/// The encoder over one fixed message-passing graph.
#[derive(Clone, Debug)]
pub struct Encoder {
    prop: Propagation,
    h0: Tensor,
    config: ModelConfig,
}

impl Encoder {
    /// `h0` is the fixed part of the input features (hashes and content).
    pub fn new(adj: Arc<Csr>, h0: Tensor, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        if h0.rows() != adj.node_count() || h0.cols() != config.dim() {
            return Err(Error::data(format!(
                "h0 has shape {:?}, expected ({}, {})",
                h0.shape(),
                adj.node_count(),
                config.dim()
            )));
        }
        Ok(Self {
            prop: Propagation::new(adj),
            h0,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn node_count(&self) -> usize {
        self.h0.rows()
    }

    pub fn h0(&self) -> &Tensor {
        &self.h0
    }

    pub fn adjacency(&self) -> &Arc<Csr> {
        self.prop.adjacency()
    }

    pub fn init_params(&self, seed: u64) -> ModelParams {
        ModelParams::init(self.node_count(), &self.config, seed)
    }

    /// Whether the convolution output depends on trained values.
    pub fn propagation_is_trainable(&self) -> bool {
        self.config.trainable_embeddings || self.config.waml.alpha_mode == AlphaMode::TrainableLogistic
    }

    /// Registers `params`, as trainable leaves when `trainable` (frozen betas stay constant).
    pub fn bind(&self, tape: &mut Tape, params: &ModelParams, trainable: bool) -> BoundParams {
        let mut reg = |t: &Tensor| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
        let embeddings = params.embeddings.as_ref().map(&mut reg);
        let alpha_logits = params.alpha_logits.as_ref().map(&mut reg);
        let head = ffn::bind(tape, &params.head, trainable, self.config.head.beta_trainable);
        let mut all: Vec<Var> = Vec::new();
        all.extend(embeddings);
        all.extend(alpha_logits);
        for l in &head.layers {
            all.extend([l.w1, l.b1, l.w2, l.b2, l.ln_gain, l.ln_bias]);
        }
        all.extend(head.betas.iter().copied());
        BoundParams {
            embeddings,
            alpha_logits,
            head,
            all,
        }
    }

    /// Records `h^K` for every node.
    pub fn propagate_var(&self, tape: &mut Tape, bound: &BoundParams) -> Result<Var> {
        let mut h = tape.constant(self.h0.clone());
        if let Some(e) = bound.embeddings {
            h = tape.add(h, e)?;
        }
        let alphas = match bound.alpha_logits {
            Some(logits) => {
                let k = self.config.waml.layers();
                let sig = tape.sigmoid(logits)?;
                let t = tape.transpose(sig)?;
                let mut out = Vec::with_capacity(k);
                for i in 0..k {
                    out.push(Alpha::Var(tape.gather_rows(t, Arc::from([i]))?));
                }
                Some(out)
            }
            None => None,
        };
        self.prop.stack(tape, h, &self.config.waml, alphas.as_deref())
    }

    /// Records the head on the rows in `x`.
    pub fn head_var(&self, tape: &mut Tape, bound: &BoundParams, x: Var, dropout_seed: Option<u64>) -> Result<Var> {
        ffn::head_forward_var(tape, x, &bound.head, &self.config.head, dropout_seed)
    }

    /// `h^K` as a plain tensor.
    pub fn propagate(&self, params: &ModelParams) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, params, false);
        let h = self.propagate_var(&mut tape, &bound)?;
        Ok(tape.value(h).clone())
    }

    /// Inference-mode head over precomputed `h^K` rows, in chunks.
    pub fn head(&self, params: &ModelParams, hk: &Tensor) -> Result<Tensor> {
        const CHUNK: usize = 4096;
        let mut out = Tensor::zeros(hk.rows(), hk.cols());
        let mut start = 0;
        while start < hk.rows() {
            let end = (start + CHUNK).min(hk.rows());
            let idx: Vec<usize> = (start..end).collect();
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape, params, false);
            let x = tape.constant(hk.select_rows(&idx)?);
            let e = self.head_var(&mut tape, &bound, x, None)?;
            for (k, r) in (start..end).enumerate() {
                out.row_mut(r).copy_from_slice(tape.value(e).row(k));
            }
            start = end;
        }
        Ok(out)
    }

    /// Final embeddings of every node, without dropout.
    pub fn encode(&self, params: &ModelParams) -> Result<Tensor> {
        let hk = self.propagate(params)?;
        self.head(params, &hk)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ffn::head_forward;
    use crate::waml::{waml_stack, Aggregator};

    fn setup(config: ModelConfig) -> Encoder {
        let adj = Arc::new(Csr::from_undirected(5, [(0, 1), (1, 2), (2, 3)]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = config.dim();
        let h0 = Tensor::from_vec(5, d, (0..5 * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        Encoder::new(adj, h0, config).unwrap()
    }

    fn small() -> ModelConfig {
        ModelConfig {
            features: FeatureConfig {
                dim: 4,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn encode_composes_stack_and_head() {
        let enc = setup(small());
        let params = enc.init_params(3);
        let hk = waml_stack(enc.h0(), enc.adjacency(), &enc.config().waml).unwrap();
        let expect = head_forward(&hk, &params.head, &enc.config().head, None).unwrap();
        assert_eq!(enc.encode(&params).unwrap(), expect);
        assert_eq!(enc.encode(&params).unwrap(), enc.encode(&params).unwrap());
    }

    #[test]
    fn logistic_alphas_reproduce_fixed_values() {
        let mut cfg = small();
        cfg.waml.alpha_mode = AlphaMode::TrainableLogistic;
        let enc = setup(cfg.clone());
        let params = enc.init_params(3);
        let got = params.alphas(&cfg.waml);
        for (a, b) in got.iter().zip(&cfg.waml.alphas) {
            assert!((a - b).abs() < 1e-12);
        }
        let fixed = setup(small());
        let p2 = ModelParams {
            alpha_logits: None,
            ..params.clone()
        };
        assert!(enc.encode(&params).unwrap().max_abs_diff(&fixed.encode(&p2).unwrap()) < 1e-12);
    }

    #[test]
    fn specs_cover_every_tensor() {
        let mut cfg = small();
        cfg.trainable_embeddings = true;
        cfg.waml.alpha_mode = AlphaMode::TrainableLogistic;
        cfg.head.beta_trainable = false;
        let params = ModelParams::init(5, &cfg, 0);
        let specs = params.specs(&cfg.head);
        assert_eq!(specs.len(), params.tensors().len());
        assert_eq!(specs.len(), 2 + 18 + 3);
        assert!(!specs.last().unwrap().trainable);
        assert!(specs.iter().filter(|s| s.decay).all(|s| s.name.ends_with("w1") || s.name.ends_with("w2") || s.name == "embeddings"));

        let named: Vec<(String, Tensor)> = specs.iter().map(|s| s.name.clone()).zip(params.tensors().into_iter().cloned()).collect();
        assert_eq!(ModelParams::from_named(named.clone(), 5, &cfg).unwrap(), params);
        let mut bad = named;
        bad.swap(0, 1);
        assert!(ModelParams::from_named(bad, 5, &cfg).is_err());
    }

    #[test]
    fn lightgcn_and_plain_modes_run() {
        let mut cfg = small();
        cfg.waml.aggregator = Aggregator::LightgcnSum;
        let enc = setup(cfg);
        assert!(enc.encode(&enc.init_params(0)).unwrap().is_finite());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let adj = Arc::new(Csr::from_undirected(3, [(0, 1)]));
        assert!(Encoder::new(adj, Tensor::zeros(2, 4), small()).is_err());
    }
}
