//! Shrinks the customer/product/seller/category interaction graph to the
//! training graph: customers are projected away into weighted
//! product–product co-occurrence edges, weak pairs are thresholded out, only
//! pairs touching the candidate set survive, and seller/category edges are
//! restricted to the surviving products.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::error::{Error, Result};
use crate::graph::{EdgeType, HeteroGraph, NodeType, RawEdge};

/// Canonical `u < v` product pair with its co-occurrence count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WeightedEdge {
    pub u: usize,
    pub v: usize,
    pub count: u64,
}

impl WeightedEdge {
    pub fn new(a: usize, b: usize, count: u64) -> Self {
        Self {
            u: a.min(b),
            v: a.max(b),
            count,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReductionConfig {
    /// Minimum number of co-interacting customers for a product pair to survive.
    pub cooccurrence_threshold: u64,
    /// Raw ids of the candidate products.
    pub candidates: Vec<String>,
    /// Customers interacting with more distinct products than this are
    /// skipped during projection. `None` keeps everyone.
    pub max_customer_degree: Option<usize>,
}

impl ReductionConfig {
    pub fn new(cooccurrence_threshold: u64, candidates: Vec<String>) -> Self {
        Self {
            cooccurrence_threshold,
            candidates,
            max_customer_degree: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cooccurrence_threshold < 1 {
            return Err(Error::config("cooccurrence_threshold must be at least 1"));
        }
        if self.candidates.is_empty() {
            return Err(Error::config("candidate set must not be empty"));
        }
        Ok(())
    }
}

/// Node and edge counts before and after reduction.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReductionReport {
    pub sellers: u64,
    pub customers: u64,
    pub products: u64,
    pub categories: u64,
    pub candidate_products: u64,
    pub training_products: u64,
    pub customer_product_edges: u64,
    pub unfiltered_product_product_edges: u64,
    pub thresholded_product_product_edges: u64,
    pub filtered_product_product_edges: u64,
    pub seller_product_edges: u64,
    pub seller_candidate_edges: u64,
    pub seller_training_edges: u64,
    pub category_product_edges: u64,
    pub category_training_edges: u64,
    pub initial_nodes: u64,
    pub initial_edges: u64,
    pub final_nodes: u64,
    pub final_edges: u64,
}

impl ReductionReport {
    /// Flat `key -> count` view, in a stable order.
    pub fn to_map(&self) -> BTreeMap<&'static str, u64> {
        BTreeMap::from([
            ("sellers", self.sellers),
            ("customers", self.customers),
            ("products", self.products),
            ("categories", self.categories),
            ("candidate_products", self.candidate_products),
            ("training_products", self.training_products),
            ("customer_product_edges", self.customer_product_edges),
            ("unfiltered_product_product_edges", self.unfiltered_product_product_edges),
            ("thresholded_product_product_edges", self.thresholded_product_product_edges),
            ("filtered_product_product_edges", self.filtered_product_product_edges),
            ("seller_product_edges", self.seller_product_edges),
            ("seller_candidate_edges", self.seller_candidate_edges),
            ("seller_training_edges", self.seller_training_edges),
            ("category_product_edges", self.category_product_edges),
            ("category_training_edges", self.category_training_edges),
            ("initial_nodes", self.initial_nodes),
            ("initial_edges", self.initial_edges),
            ("final_nodes", self.final_nodes),
            ("final_edges", self.final_edges),
        ])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_map()).expect("integer map serializes")
    }

    /// The counts plus a `config` field holding the run's config echo.
    pub fn to_json_with_echo(&self, echo: &str) -> String {
        let mut value = serde_json::to_value(self.to_map()).expect("integer map serializes");
        value["config"] = serde_json::Value::String(echo.to_string());
        serde_json::to_string_pretty(&value).expect("json value serializes")
    }

    pub fn node_reduction_ratio(&self) -> f64 {
        self.initial_nodes as f64 / self.final_nodes.max(1) as f64
    }

    pub fn edge_reduction_ratio(&self) -> f64 {
        self.initial_edges as f64 / self.final_edges.max(1) as f64
    }
}

/// Replaces customers by product–product edges weighted by how many
/// distinct customers interacted with both products.
///
/// Repeated `(customer, product)` interactions count once. Output is sorted
/// by `(u, v)`.
pub fn project_copurchase(customer_product: &[(usize, usize)], max_customer_degree: Option<usize>) -> Vec<WeightedEdge> {
    let mut baskets: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &(c, p) in customer_product {
        baskets.entry(c).or_default().insert(p);
    }
    let mut counts: HashMap<(usize, usize), u64> = HashMap::new();
    for basket in baskets.values() {
        if max_customer_degree.is_some_and(|cap| basket.len() > cap) {
            continue;
        }
        let items: Vec<usize> = basket.iter().copied().collect();
        for (i, &a) in items.iter().enumerate() {
            for &b in &items[i + 1..] {
                *counts.entry((a, b)).or_insert(0) += 1;
            }
        }
    }
    let mut out: Vec<WeightedEdge> = counts.into_iter().map(|((u, v), count)| WeightedEdge { u, v, count }).collect();
    out.sort_unstable();
    out
}

/// Keeps pairs that co-occurred at least `threshold` times.
pub fn threshold_filter(pp: &[WeightedEdge], threshold: u64) -> Vec<WeightedEdge> {
    pp.iter().copied().filter(|e| e.count >= threshold).collect()
}

/// Keeps pairs with at least one candidate endpoint. Returns them with the
/// training product set: the candidates plus every endpoint of a kept pair.
pub fn candidate_filter(pp: &[WeightedEdge], candidates: &HashSet<usize>) -> (Vec<WeightedEdge>, BTreeSet<usize>) {
    let kept: Vec<WeightedEdge> = pp
        .iter()
        .copied()
        .filter(|e| candidates.contains(&e.u) || candidates.contains(&e.v))
        .collect();
    let mut training: BTreeSet<usize> = candidates.iter().copied().collect();
    for e in &kept {
        training.insert(e.u);
        training.insert(e.v);
    }
    (kept, training)
}

/// Keeps `(seller, product)` and `(category, product)` pairs whose product
/// is in the training set.
pub fn restrict_attached_edges(
    seller_product: &[(usize, usize)],
    category_product: &[(usize, usize)],
    training: &BTreeSet<usize>,
) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let keep = |edges: &[(usize, usize)]| edges.iter().copied().filter(|(_, p)| training.contains(p)).collect();
    (keep(seller_product), keep(category_product))
}

/// Runs projection, thresholding, candidate filtering and edge restriction
/// over a raw node/edge list and builds the resulting graph.
///
/// Product–product edges already present in the input (for example when
/// re-reducing a reduced graph) have no known count and always pass the
/// threshold. Surviving nodes keep their input order.
pub fn reduce_pipeline(
    nodes: &[(String, NodeType)],
    edges: &[RawEdge],
    config: &ReductionConfig,
) -> Result<(HeteroGraph, ReductionReport)> {
    config.validate()?;
    let raw = HeteroGraph::build(nodes, edges, &config.candidates)?;
    let count_of = |ty: NodeType| raw.node_types().iter().filter(|&&t| t == ty).count() as u64;

    let cp = raw.edges_of(EdgeType::CustomerProduct);
    let mut projected = project_copurchase(cp, config.max_customer_degree);
    let existing = raw.edges_of(EdgeType::ProductProduct);
    if !existing.is_empty() {
        let mut merged: BTreeMap<(usize, usize), u64> = projected.iter().map(|e| ((e.u, e.v), e.count)).collect();
        for &(a, b) in existing {
            merged.insert((a, b), u64::MAX);
        }
        projected = merged.into_iter().map(|((u, v), count)| WeightedEdge { u, v, count }).collect();
    }
    let thresholded = threshold_filter(&projected, config.cooccurrence_threshold);
    let candidates: HashSet<usize> = raw.candidates().into_iter().collect();
    let (kept, training) = candidate_filter(&thresholded, &candidates);
    let sp = raw.edges_of(EdgeType::SellerProduct);
    let ap = raw.edges_of(EdgeType::CategoryProduct);
    let (sp_kept, ap_kept) = restrict_attached_edges(sp, ap, &training);

    let retained: Vec<usize> = (0..raw.node_count())
        .filter(|&v| match raw.node_type(v) {
            NodeType::Customer => false,
            NodeType::Product => training.contains(&v),
            NodeType::Seller | NodeType::Category => true,
        })
        .collect();
    let out_nodes: Vec<(String, NodeType)> = retained
        .iter()
        .map(|&v| (raw.raw_id(v).to_string(), raw.node_type(v)))
        .collect();
    let id = |v: usize| raw.raw_id(v).to_string();
    let mut out_edges: Vec<RawEdge> = Vec::with_capacity(kept.len() + sp_kept.len() + ap_kept.len());
    out_edges.extend(kept.iter().map(|e| RawEdge::new(id(e.u), id(e.v), EdgeType::ProductProduct)));
    out_edges.extend(sp_kept.iter().map(|&(s, p)| RawEdge::new(id(s), id(p), EdgeType::SellerProduct)));
    out_edges.extend(ap_kept.iter().map(|&(a, p)| RawEdge::new(id(a), id(p), EdgeType::CategoryProduct)));
    let graph = HeteroGraph::build(&out_nodes, &out_edges, &config.candidates)?;

    let report = ReductionReport {
        sellers: count_of(NodeType::Seller),
        customers: count_of(NodeType::Customer),
        products: count_of(NodeType::Product),
        categories: count_of(NodeType::Category),
        candidate_products: candidates.len() as u64,
        training_products: training.len() as u64,
        customer_product_edges: cp.len() as u64,
        unfiltered_product_product_edges: projected.len() as u64,
        thresholded_product_product_edges: thresholded.len() as u64,
        filtered_product_product_edges: kept.len() as u64,
        seller_product_edges: sp.len() as u64,
        seller_candidate_edges: sp.iter().filter(|(_, p)| candidates.contains(p)).count() as u64,
        seller_training_edges: sp_kept.len() as u64,
        category_product_edges: ap.len() as u64,
        category_training_edges: ap_kept.len() as u64,
        initial_nodes: raw.node_count() as u64,
        initial_edges: raw.edge_count() as u64,
        final_nodes: graph.node_count() as u64,
        final_edges: graph.edge_count() as u64,
    };
    Ok((graph, report))
}
