//! End-to-end steps shared by the command-line tool, the benches and the
//! acceptance suite: load, reduce, build features, train, evaluate.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{encode_all, evaluate, EmbeddingTable, EvalReport};
use crate::features::{init_h0, read_embeddings, ContentSource, ContentTable};
use crate::graph::io::{read_edges, read_id_list, read_nodes};
use crate::graph::{HeteroGraph, NodeType, RawEdge};
use crate::model::{Encoder, ModelParams};
use crate::reduction::{reduce_pipeline, ReductionReport};
use crate::train::{prepare, train, Checkpoint, EdgeSplit, Pair, TrainOutcome};

/// Raw input lists before reduction.
#[derive(Clone, Debug, PartialEq)]
pub struct RawData {
    pub nodes: Vec<(String, NodeType)>,
    pub edges: Vec<RawEdge>,
    pub candidates: Vec<String>,
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::config(format!("`{key}` path is required")))
}

impl RawData {
    pub fn load(config: &RunConfig) -> Result<Self> {
        let p = &config.paths;
        Ok(Self {
            nodes: read_nodes(required(&p.nodes, "nodes")?)?,
            edges: read_edges(required(&p.edges, "edges")?)?,
            candidates: read_id_list(required(&p.candidates, "candidates")?)?,
        })
    }
}

pub fn reduce(raw: &RawData, config: &RunConfig) -> Result<(HeteroGraph, ReductionReport)> {
    reduce_pipeline(&raw.nodes, &raw.edges, &config.reduction(raw.candidates.clone()))
}

/// Reads `a<TAB>b` lines, skipping blanks and `#` comments.
pub fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next()) {
            (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => out.push((a.to_string(), b.to_string())),
            _ => return Err(Error::data(format!("{}:{}: expected `a<TAB>b`", path.display(), i + 1))),
        }
    }
    Ok(out)
}

/// Maps raw `(seller, product)` pairs onto node indices, dropping pairs with
/// an endpoint that is not in the graph.
pub fn index_pairs(graph: &HeteroGraph, pairs: &[(String, String)]) -> Vec<Pair> {
    pairs
        .iter()
        .filter_map(|(s, p)| {
            Some((
                graph.index_of(NodeType::Seller, s)?,
                graph.index_of(NodeType::Product, p)?,
            ))
        })
        .collect()
}

/// Product content vectors for the configured source.
pub fn content_table(graph: &HeteroGraph, config: &RunConfig) -> Result<ContentTable> {
    let f = &config.model.features;
    match f.content_source {
        ContentSource::Zeros => Ok(ContentTable::zeros(f.dim)),
        ContentSource::PrecomputedFile => {
            let (dim, records) = read_embeddings(required(&config.paths.content, "content")?)?;
            if dim != f.dim {
                return Err(Error::config(format!("content file has dimension {dim}, but dim = {}", f.dim)));
            }
            ContentTable::from_records(graph, dim, &records)
        }
        ContentSource::TextStub => {
            let texts: HashMap<String, String> =
                read_pairs(required(&config.paths.texts, "texts")?)?.into_iter().collect();
            ContentTable::from_texts(graph, &texts, f.dim, f.hash_seed)
        }
    }
}

pub fn build_encoder(graph: &HeteroGraph, content: &ContentTable, config: &RunConfig) -> Result<Encoder> {
    let h0 = init_h0(graph, &config.model.features, content)?;
    Encoder::new(graph.adjacency().clone(), h0, config.model.clone())
}

/// Everything produced by one training run.
pub struct TrainedModel {
    pub split: EdgeSplit,
    /// Graph without validation and test seller-product edges.
    pub message_graph: HeteroGraph,
    pub encoder: Encoder,
    pub outcome: TrainOutcome,
}

impl TrainedModel {
    pub fn checkpoint(&self, echo: &str) -> Checkpoint {
        Checkpoint::from_params(&self.outcome.params, self.encoder.config(), echo)
    }

    pub fn embeddings(&self) -> Result<EmbeddingTable> {
        encode_all(&self.encoder, &self.outcome.params)
    }
}

/// Splits, builds features on the message-passing graph and trains.
pub fn train_model(graph: &HeteroGraph, content: &ContentTable, config: &RunConfig) -> Result<TrainedModel> {
    config.validate()?;
    let (split, message_graph) = prepare(graph, &config.train)?;
    let encoder = build_encoder(&message_graph, content, config)?;
    let outcome = train(&encoder, graph, &split, &config.train, &config.eval)?;
    Ok(TrainedModel {
        split,
        message_graph,
        encoder,
        outcome,
    })
}

/// Rebuilds the encoder of a saved run. The split is recomputed from the
/// seed in `config`, so the message-passing graph matches training.
pub fn load_model(
    graph: &HeteroGraph,
    content: &ContentTable,
    config: &RunConfig,
    checkpoint: Checkpoint,
) -> Result<(EdgeSplit, Encoder, ModelParams)> {
    config.validate()?;
    let (split, message_graph) = prepare(graph, &config.train)?;
    let encoder = build_encoder(&message_graph, content, config)?;
    let params = checkpoint.into_params(encoder.node_count(), &config.model)?;
    Ok((split, encoder, params))
}

/// Test-split Recall@K, or Recall@K against `truth` when given.
pub fn evaluate_split(
    table: &EmbeddingTable,
    graph: &HeteroGraph,
    split: &EdgeSplit,
    truth: Option<&[Pair]>,
    config: &RunConfig,
) -> Result<EvalReport> {
    let heldout = truth.unwrap_or(&split.test);
    evaluate(table, graph, heldout, &split.train, &config.eval)
}

