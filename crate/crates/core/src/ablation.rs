//! Component ablations: a cumulative ladder from a plain trainable-embedding
//! baseline up to the full model, and single-change variants of the full
//! model.

use std::fmt::Write as _;

use crate::config::RunConfig;
use crate::error::Result;
use crate::features::{ContentSource, ContentTable};
use crate::graph::HeteroGraph;
use crate::pipeline::{evaluate_split, train_model};
use crate::train::{LossKind, Pair};
use crate::waml::{Aggregator, AlphaMode};

/// A named edit applied to a run configuration.
#[derive(Clone, Copy)]
pub struct Step {
    pub name: &'static str,
    pub apply: fn(&mut RunConfig),
}

/// Reduces `config` to the ladder baseline: trainable embeddings, no hashes or
/// content, plain averaging with alpha 0.5, no head, triplet loss.
pub fn baseline(config: &mut RunConfig) {
    let m = &mut config.model;
    m.trainable_embeddings = true;
    m.features.id_hash = false;
    m.features.type_hash = false;
    m.features.content_source = ContentSource::Zeros;
    m.waml.aggregator = Aggregator::Waml;
    m.waml.alphas = vec![0.5; m.waml.layers().max(1)];
    m.waml.alpha_mode = AlphaMode::Fixed;
    m.waml.l2_normalize = false;
    m.head.layers = 0;
    m.head.final_l2_norm = false;
    config.train.loss = LossKind::Triplet;
}

/// Cumulative steps; each row adds one component to the previous row. The
/// first row is the baseline, the last equals the input configuration.
pub fn ladder(full: &RunConfig) -> Vec<(String, RunConfig)> {
    let f = full.clone();
    let mut cfg = full.clone();
    baseline(&mut cfg);
    let mut rows = vec![("base".to_string(), cfg.clone())];
    let mut push = |name: &str, edit: &dyn Fn(&mut RunConfig)| {
        edit(&mut cfg);
        rows.push((name.to_string(), cfg.clone()));
    };
    push("+content", &|c| c.model.features.content_source = f.model.features.content_source);
    push("+hash features", &|c| {
        c.model.features.id_hash = f.model.features.id_hash;
        c.model.features.type_hash = f.model.features.type_hash;
        c.model.trainable_embeddings = f.model.trainable_embeddings;
    });
    push("+normalized averaging", &|c| c.model.waml.l2_normalize = f.model.waml.l2_normalize);
    push("+layer alphas", &|c| {
        c.model.waml.alphas = f.model.waml.alphas.clone();
        c.model.waml.alpha_mode = f.model.waml.alpha_mode;
        c.model.waml.aggregator = f.model.waml.aggregator;
    });
    push("+ffn (beta 1, frozen)", &|c| {
        c.model.head = f.model.head.clone();
        c.model.head.beta_init = 1.0;
        c.model.head.beta_trainable = false;
        c.model.head.final_l2_norm = false;
    });
    push("+trainable beta", &|c| {
        c.model.head.beta_init = f.model.head.beta_init;
        c.model.head.beta_trainable = f.model.head.beta_trainable;
    });
    push("+contrastive loss", &|c| c.train = f.train.clone());
    push("+output l2", &|c| c.model.head.final_l2_norm = f.model.head.final_l2_norm);
    rows
}

/// Single-change variants of the full model.
pub const VARIANTS: [Step; 4] = [
    Step {
        name: "uniform alpha 0.5",
        apply: |c| {
            c.model.waml.alphas = vec![0.5; c.model.waml.layers()];
            c.model.waml.alpha_mode = AlphaMode::Fixed;
        },
    },
    Step {
        name: "lightgcn sum",
        apply: |c| c.model.waml.aggregator = Aggregator::LightgcnSum,
    },
    Step {
        name: "triplet loss",
        apply: |c| c.train.loss = LossKind::Triplet,
    },
    Step {
        name: "zero content",
        apply: |c| c.model.features.content_source = ContentSource::Zeros,
    },
];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub recall: f64,
    pub best_epoch: usize,
}

/// Trains and scores each configuration. `content` is the table for the
/// full configuration; rows with zero content get an empty table.
pub fn run(
    graph: &HeteroGraph,
    content: &ContentTable,
    truth: Option<&[Pair]>,
    rows: &[(String, RunConfig)],
) -> Result<Vec<AblationRow>> {
    let zeros = ContentTable::zeros(content.dim());
    rows.iter()
        .map(|(name, cfg)| {
            let table = match cfg.model.features.content_source {
                ContentSource::Zeros => &zeros,
                _ => content,
            };
            let trained = train_model(graph, table, cfg)?;
            let report = evaluate_split(&trained.embeddings()?, graph, &trained.split, truth, cfg)?;
            Ok(AblationRow {
                name: name.clone(),
                recall: report.recall,
                best_epoch: trained.outcome.best_epoch,
            })
        })
        .collect()
}

/// The full model followed by each variant.
pub fn variant_rows(full: &RunConfig) -> Vec<(String, RunConfig)> {
    let mut rows = vec![("full".to_string(), full.clone())];
    for step in VARIANTS {
        let mut cfg = full.clone();
        (step.apply)(&mut cfg);
        rows.push((step.name.to_string(), cfg));
    }
    rows
}

/// Tab-separated `name, recall, best epoch` lines with a header.
pub fn to_table(rows: &[AblationRow], k: usize) -> String {
    let mut out = format!("variant\trecall@{k}\tbest_epoch\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{:.6}\t{}", r.name, r.recall, r.best_epoch);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_ends_at_the_full_config() {
        let full = RunConfig::default();
        let rows = ladder(&full);
        assert_eq!(rows.len(), 9);
        assert_eq!(rows.last().unwrap().1, full);
        let base = &rows[0].1;
        assert!(base.model.trainable_embeddings && !base.model.features.id_hash);
        assert_eq!(base.model.head.layers, 0);
        assert_eq!(base.train.loss, LossKind::Triplet);
        for (_, cfg) in &rows {
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn variants_change_one_thing() {
        let full = RunConfig::default();
        let rows = variant_rows(&full);
        assert_eq!(rows.len(), 5);
        for (_, cfg) in &rows[1..] {
            assert_ne!(cfg, &full);
            cfg.validate().unwrap();
        }
    }
}
