//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment. Later assignments override
//! earlier ones, so command-line overrides are applied with [`RunConfig::set`]
//! after the file is read. [`RunConfig::echo`] prints every algorithmic
//! setting in a fixed order; file paths are not part of the echo so that
//! artifacts do not depend on where a run writes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::{EvalConfig, Pool};
use crate::features::ContentSource;
use crate::model::ModelConfig;
use crate::reduction::ReductionConfig;
use crate::synth::SynthConfig;
use crate::train::{LossKind, TrainConfig};
use crate::waml::{Aggregator, AlphaMode};

/// Input and output locations. Unset paths fall back to per-command defaults.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Paths {
    pub nodes: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub content: Option<PathBuf>,
    pub texts: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub threshold: u64,
    pub max_customer_degree: Option<usize>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        // the generator writes content vectors at the model width
        let synth = SynthConfig {
            dim: model.features.dim,
            hash_seed: model.features.hash_seed,
            ..SynthConfig::default()
        };
        Self {
            threshold: 2,
            max_customer_degree: None,
            model,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            synth,
            paths: Paths::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("`{key}`: expected {what}, got `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim(), "a comma-separated list of numbers")).collect()
}

fn parse_enum<T>(key: &str, value: &str, f: impl Fn(&str) -> Option<T>, options: &str) -> Result<T> {
    f(value).ok_or_else(|| Error::config(format!("`{key}`: expected one of {options}, got `{value}`")))
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let m = &mut self.model;
        let t = &mut self.train;
        let s = &mut self.synth;
        let path = || Some(PathBuf::from(value));
        match key {
            "threshold" => self.threshold = parse(key, value, "a positive integer")?,
            "max_customer_degree" => {
                self.max_customer_degree = match value {
                    "none" | "" => None,
                    v => Some(parse(key, v, "an integer or `none`")?),
                }
            }
            "dim" => {
                m.features.dim = parse(key, value, "an integer")?;
                s.dim = m.features.dim;
            }
            "hash_seed" => {
                m.features.hash_seed = parse(key, value, "an integer")?;
                s.hash_seed = m.features.hash_seed;
            }
            "content_source" => {
                m.features.content_source =
                    parse_enum(key, value, ContentSource::parse, "precomputed-file, text-stub, zeros")?
            }
            "id_hash" => m.features.id_hash = parse_bool(key, value)?,
            "type_hash" => m.features.type_hash = parse_bool(key, value)?,
            "trainable_embeddings" => m.trainable_embeddings = parse_bool(key, value)?,
            "alphas" => m.waml.alphas = parse_list(key, value)?,
            "alpha_mode" => m.waml.alpha_mode = parse_enum(key, value, AlphaMode::parse, "fixed, trainable-logistic")?,
            "aggregator" => m.waml.aggregator = parse_enum(key, value, Aggregator::parse, "waml, lightgcn-sum")?,
            "waml_l2" => m.waml.l2_normalize = parse_bool(key, value)?,
            "ffn_layers" => m.head.layers = parse(key, value, "an integer")?,
            "beta_init" => m.head.beta_init = parse(key, value, "a number")?,
            "beta_trainable" => m.head.beta_trainable = parse_bool(key, value)?,
            "shared_beta" => m.head.shared_beta = parse_bool(key, value)?,
            "dropout" => m.head.dropout = parse(key, value, "a number")?,
            "final_l2_norm" => m.head.final_l2_norm = parse_bool(key, value)?,
            "batch_size" => t.batch_size = parse(key, value, "an integer")?,
            "temperature" => t.temperature = parse(key, value, "a number")?,
            "learning_rate" => t.optimizer.learning_rate = parse(key, value, "a number")?,
            "weight_decay" => t.optimizer.weight_decay = parse(key, value, "a number")?,
            "adam_beta1" => t.optimizer.beta1 = parse(key, value, "a number")?,
            "adam_beta2" => t.optimizer.beta2 = parse(key, value, "a number")?,
            "adam_eps" => t.optimizer.eps = parse(key, value, "a number")?,
            "max_epochs" => t.max_epochs = parse(key, value, "an integer")?,
            "patience" => t.patience = parse(key, value, "an integer")?,
            "seed" => t.seed = parse(key, value, "an integer")?,
            "loss" => t.loss = parse_enum(key, value, LossKind::parse, "contrastive, triplet")?,
            "symmetric" => t.symmetric = parse_bool(key, value)?,
            "triplet_margin" => t.triplet_margin = parse(key, value, "a number")?,
            "split" => {
                let v = parse_list(key, value)?;
                if v.len() != 3 {
                    return Err(Error::config(format!("`split`: expected three ratios, got `{value}`")));
                }
                t.split = (v[0], v[1], v[2]);
            }
            "k" => self.eval.k = parse(key, value, "a positive integer")?,
            "pool" => self.eval.pool = parse_enum(key, value, Pool::parse, "candidates, products")?,
            "filter_seen" => self.eval.filter_seen = parse_bool(key, value)?,
            "synth.clusters" => s.clusters = parse(key, value, "an integer")?,
            "synth.sellers_per_cluster" => s.sellers_per_cluster = parse(key, value, "an integer")?,
            "synth.products_per_cluster" => s.products_per_cluster = parse(key, value, "an integer")?,
            "synth.candidates" => s.candidates = parse(key, value, "an integer")?,
            "synth.customers" => s.customers = parse(key, value, "an integer")?,
            "synth.basket_min" => s.basket_min = parse(key, value, "an integer")?,
            "synth.basket_max" => s.basket_max = parse(key, value, "an integer")?,
            "synth.noise_rate" => s.noise_rate = parse(key, value, "a number")?,
            "synth.popularity_skew" => s.popularity_skew = parse(key, value, "a number")?,
            "synth.profile" => {
                let v = parse_list(key, value)?;
                if v.len() != 3 {
                    return Err(Error::config(format!("`synth.profile`: expected three shares, got `{value}`")));
                }
                s.profile = [v[0], v[1], v[2]];
            }
            "synth.seller_extra_min" => s.seller_extra_min = parse(key, value, "an integer")?,
            "synth.seller_extra_max" => s.seller_extra_max = parse(key, value, "an integer")?,
            "synth.categories_per_cluster" => s.categories_per_cluster = parse(key, value, "an integer")?,
            "synth.category_noise" => s.category_noise = parse(key, value, "a number")?,
            "synth.vocab_per_cluster" => s.vocab_per_cluster = parse(key, value, "an integer")?,
            "synth.global_vocab" => s.global_vocab = parse(key, value, "an integer")?,
            "synth.tokens_per_product" => s.tokens_per_product = parse(key, value, "an integer")?,
            "synth.cluster_token_rate" => s.cluster_token_rate = parse(key, value, "a number")?,
            "synth.seed" => s.seed = parse(key, value, "an integer")?,
            "nodes" => self.paths.nodes = path(),
            "edges" => self.paths.edges = path(),
            "candidates" => self.paths.candidates = path(),
            "graph" => self.paths.graph = path(),
            "content" => self.paths.content = path(),
            "texts" => self.paths.texts = path(),
            "truth" => self.paths.truth = path(),
            "checkpoint" => self.paths.checkpoint = path(),
            "out" => self.paths.out = path(),
            _ => return Err(Error::config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::config(format!("expected key=value, got `{pair}`")))?;
        self.set(k.trim(), v)
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("{origin}:{}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{origin}:{}: {msg}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    /// Checks every numeric constraint.
    pub fn validate(&self) -> Result<()> {
        if self.threshold == 0 {
            return Err(Error::config("`threshold` must be at least 1"));
        }
        if self.eval.k == 0 {
            return Err(Error::config("`k` must be at least 1"));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()
    }

    pub fn reduction(&self, candidates: Vec<String>) -> ReductionConfig {
        ReductionConfig {
            cooccurrence_threshold: self.threshold,
            candidates,
            max_customer_degree: self.max_customer_degree,
        }
    }

    /// Every algorithmic setting as `key = value` lines in a fixed order.
    pub fn echo(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let s = &self.synth;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("threshold", self.threshold.to_string());
        put(
            "max_customer_degree",
            self.max_customer_degree.map_or("none".into(), |d| d.to_string()),
        );
        put("dim", m.features.dim.to_string());
        put("hash_seed", m.features.hash_seed.to_string());
        put("content_source", m.features.content_source.name().into());
        put("id_hash", m.features.id_hash.to_string());
        put("type_hash", m.features.type_hash.to_string());
        put("trainable_embeddings", m.trainable_embeddings.to_string());
        put("alphas", join(&m.waml.alphas));
        put("alpha_mode", m.waml.alpha_mode.name().into());
        put("aggregator", m.waml.aggregator.name().into());
        put("waml_l2", m.waml.l2_normalize.to_string());
        put("ffn_layers", m.head.layers.to_string());
        put("beta_init", m.head.beta_init.to_string());
        put("beta_trainable", m.head.beta_trainable.to_string());
        put("shared_beta", m.head.shared_beta.to_string());
        put("dropout", m.head.dropout.to_string());
        put("final_l2_norm", m.head.final_l2_norm.to_string());
        put("batch_size", t.batch_size.to_string());
        put("temperature", t.temperature.to_string());
        put("learning_rate", t.optimizer.learning_rate.to_string());
        put("weight_decay", t.optimizer.weight_decay.to_string());
        put("adam_beta1", t.optimizer.beta1.to_string());
        put("adam_beta2", t.optimizer.beta2.to_string());
        put("adam_eps", t.optimizer.eps.to_string());
        put("max_epochs", t.max_epochs.to_string());
        put("patience", t.patience.to_string());
        put("seed", t.seed.to_string());
        put("loss", t.loss.name().into());
        put("symmetric", t.symmetric.to_string());
        put("triplet_margin", t.triplet_margin.to_string());
        put("split", join(&[t.split.0, t.split.1, t.split.2]));
        put("k", self.eval.k.to_string());
        put("pool", self.eval.pool.name().into());
        put("filter_seen", self.eval.filter_seen.to_string());
        put("synth.clusters", s.clusters.to_string());
        put("synth.sellers_per_cluster", s.sellers_per_cluster.to_string());
        put("synth.products_per_cluster", s.products_per_cluster.to_string());
        put("synth.candidates", s.candidates.to_string());
        put("synth.customers", s.customers.to_string());
        put("synth.basket_min", s.basket_min.to_string());
        put("synth.basket_max", s.basket_max.to_string());
        put("synth.noise_rate", s.noise_rate.to_string());
        put("synth.popularity_skew", s.popularity_skew.to_string());
        put("synth.profile", join(&s.profile));
        put("synth.seller_extra_min", s.seller_extra_min.to_string());
        put("synth.seller_extra_max", s.seller_extra_max.to_string());
        put("synth.categories_per_cluster", s.categories_per_cluster.to_string());
        put("synth.category_noise", s.category_noise.to_string());
        put("synth.vocab_per_cluster", s.vocab_per_cluster.to_string());
        put("synth.global_vocab", s.global_vocab.to_string());
        put("synth.tokens_per_product", s.tokens_per_product.to_string());
        put("synth.cluster_token_rate", s.cluster_token_rate.to_string());
        put("synth.seed", s.seed.to_string());
        out
    }
}
