//! Exact top-K retrieval of products for sellers and Recall@K.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::write_embeddings;
use crate::graph::{HeteroGraph, NodeType};
use crate::model::{Encoder, ModelParams};
use crate::tensor::{dot, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    /// Rows were L2-normalized by the head.
    pub normalized: bool,
}

impl EmbeddingTable {
    pub fn new(matrix: Tensor, normalized: bool) -> Self {
        Self { matrix, normalized }
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Writes every node's row as `f32`, keyed by raw id.
    pub fn export(&self, graph: &HeteroGraph, path: &Path) -> Result<()> {
        let records: Vec<(String, Vec<f32>)> = (0..graph.node_count())
            .map(|v| (graph.raw_id(v).to_string(), self.matrix.row(v).iter().map(|&x| x as f32).collect()))
            .collect();
        write_embeddings(path, self.dim(), &records)
    }
}

/// Inference-mode embeddings for every node.
pub fn encode_all(encoder: &Encoder, params: &ModelParams) -> Result<EmbeddingTable> {
    let matrix = encoder.encode(params)?;
    if !matrix.is_finite() {
        return Err(Error::Numerical("non-finite embedding".into()));
    }
    Ok(EmbeddingTable::new(matrix, encoder.config().head.final_l2_norm))
}

/// Products ranked by descending dot product with `seller`; ties go to the
/// smaller index. Returns all of `pool` when `k` exceeds its size.
pub fn topk_products(table: &EmbeddingTable, seller: usize, pool: &[usize], k: usize) -> Vec<usize> {
    let query = table.matrix.row(seller);
    let mut scored: Vec<(f64, usize)> = pool.iter().map(|&p| (dot(query, table.matrix.row(p)), p)).collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    let k = k.min(scored.len());
    if k == 0 {
        return Vec::new();
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(order);
    scored.into_iter().map(|(_, p)| p).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pool {
    /// The recommendation candidates.
    Candidates,
    /// Every product kept in the graph.
    Products,
}

impl Pool {
    pub fn name(self) -> &'static str {
        match self {
            Pool::Candidates => "candidates",
            Pool::Products => "products",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "candidates" => Some(Pool::Candidates),
            "products" | "all" => Some(Pool::Products),
            _ => None,
        }
    }

    pub fn members(self, graph: &HeteroGraph) -> Vec<usize> {
        match self {
            Pool::Candidates => graph.candidates(),
            Pool::Products => graph.nodes_of_type(NodeType::Product),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub k: usize,
    pub pool: Pool,
    /// Drop each seller's training products from its ranking.
    pub filter_seen: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 100,
            pool: Pool::Candidates,
            filter_seen: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SellerResult {
    pub seller: usize,
    pub hits: usize,
    pub relevant: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub k: usize,
    pub per_seller: Vec<SellerResult>,
    /// Mean over evaluated sellers of `hits / relevant`.
    pub recall: f64,
    pub pool: Pool,
    pub pool_size: usize,
    pub filter_seen: bool,
}

impl EvalReport {
    pub fn evaluated_sellers(&self) -> usize {
        self.per_seller.len()
    }

    /// Flat `key = value` lines followed by the config echo.
    pub fn to_text(&self, echo: &str) -> String {
        let mut out = String::new();
        let hits: usize = self.per_seller.iter().map(|s| s.hits).sum();
        let relevant: usize = self.per_seller.iter().map(|s| s.relevant).sum();
        let _ = writeln!(out, "k = {}", self.k);
        let _ = writeln!(out, "recall = {:.6}", self.recall);
        let _ = writeln!(out, "averaging = per-seller");
        let _ = writeln!(out, "evaluated_sellers = {}", self.evaluated_sellers());
        let _ = writeln!(out, "total_hits = {hits}");
        let _ = writeln!(out, "total_relevant = {relevant}");
        let _ = writeln!(out, "pool = {}", self.pool.name());
        let _ = writeln!(out, "pool_size = {}", self.pool_size);
        let _ = writeln!(out, "filter_seen = {}", self.filter_seen);
        for line in echo.lines() {
            let _ = writeln!(out, "config.{line}");
        }
        out
    }
}

/// Per-seller `|top-K ∩ relevant| / |relevant|`, averaged over sellers with at
/// least one relevant product. Sellers without a ranking count as zero hits.
pub fn recall_at_k(
    predictions: &BTreeMap<usize, Vec<usize>>,
    relevant: &BTreeMap<usize, BTreeSet<usize>>,
    k: usize,
) -> (f64, Vec<SellerResult>) {
    let mut per_seller = Vec::new();
    let mut total = 0.0;
    for (&seller, rel) in relevant {
        if rel.is_empty() {
            continue;
        }
        let hits = predictions
            .get(&seller)
            .map_or(0, |ranked| ranked.iter().take(k).filter(|p| rel.contains(p)).count());
        total += hits as f64 / rel.len() as f64;
        per_seller.push(SellerResult {
            seller,
            hits,
            relevant: rel.len(),
        });
    }
    let recall = if per_seller.is_empty() { 0.0 } else { total / per_seller.len() as f64 };
    (recall, per_seller)
}

/// Ranks the pool for every seller with a held-out edge and scores Recall@K.
/// Held-out edges whose product is outside the pool are ignored.
pub fn evaluate(
    table: &EmbeddingTable,
    graph: &HeteroGraph,
    heldout: &[(usize, usize)],
    seen: &[(usize, usize)],
    config: &EvalConfig,
) -> Result<EvalReport> {
    if config.k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    let pool = config.pool.members(graph);
    let in_pool: BTreeSet<usize> = pool.iter().copied().collect();
    let mut relevant: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &(s, p) in heldout {
        if in_pool.contains(&p) {
            relevant.entry(s).or_default().insert(p);
        }
    }
    let mut seen_by: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    if config.filter_seen {
        for &(s, p) in seen {
            seen_by.entry(s).or_default().insert(p);
        }
    }
    let empty = BTreeSet::new();
    let predictions: BTreeMap<usize, Vec<usize>> = relevant
        .keys()
        .map(|&s| {
            let skip = seen_by.get(&s).unwrap_or(&empty);
            let own: Vec<usize> = pool.iter().copied().filter(|p| !skip.contains(p)).collect();
            (s, topk_products(table, s, &own, config.k))
        })
        .collect();
    let (recall, per_seller) = recall_at_k(&predictions, &relevant, config.k);
    Ok(EvalReport {
        k: config.k,
        per_seller,
        recall,
        pool: config.pool,
        pool_size: pool.len(),
        filter_seen: config.filter_seen,
    })
}

/// Largest `| |row| - 1 |` over nonzero rows.
pub fn max_norm_deviation(table: &EmbeddingTable) -> f64 {
    (0..table.matrix.rows())
        .map(|r| table.matrix.row_norm(r))
        .filter(|&n| n > 0.0)
        .map(|n| (n - 1.0).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(rows: &[Vec<f64>]) -> EmbeddingTable {
        EmbeddingTable::new(Tensor::from_rows(rows).unwrap(), false)
    }

    fn full_sort(t: &EmbeddingTable, seller: usize, pool: &[usize], k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = pool.iter().map(|&p| (dot(t.matrix.row(seller), t.matrix.row(p)), p)).collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, p)| p).collect()
    }

    #[test]
    fn matching_product_ranks_first() {
        let t = table(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        assert_eq!(topk_products(&t, 0, &[1, 2, 3], 1), vec![2]);
        let full = topk_products(&t, 0, &[1, 2, 3], 10);
        assert_eq!(full, vec![2, 1, 3]);
    }

    #[test]
    fn ties_break_by_index() {
        let t = table(&[vec![1.0], vec![1.0], vec![1.0], vec![1.0]]);
        assert_eq!(topk_products(&t, 0, &[3, 1, 2], 2), vec![1, 2]);
        assert!(topk_products(&t, 0, &[3, 1, 2], 0).is_empty());
    }

    #[test]
    fn topk_agrees_with_full_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = 51;
            // coarse values force ties
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.gen_range(-2..=2) as f64).collect()).collect();
            let t = table(&rows);
            let pool: Vec<usize> = (1..n).collect();
            let k = rng.gen_range(1..=60);
            assert_eq!(topk_products(&t, 0, &pool, k), full_sort(&t, 0, &pool, k));
        }
    }

    #[test]
    fn recall_hand_examples() {
        let rel = |items: &[usize]| items.iter().copied().collect::<BTreeSet<usize>>();
        let relevant = BTreeMap::from([(0, rel(&[10, 11])), (1, rel(&[12])), (2, rel(&[13, 14, 15, 16]))]);
        let predictions = BTreeMap::from([(0, vec![10, 20]), (1, vec![20, 21]), (2, vec![13, 14])]);
        let (r, per) = recall_at_k(&predictions, &relevant, 2);
        assert!((r - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(per.iter().map(|s| s.hits).collect::<Vec<_>>(), vec![1, 0, 2]);

        let perfect = BTreeMap::from([(0, vec![11, 10]), (1, vec![12]), (2, vec![16, 15, 14, 13])]);
        assert_eq!(recall_at_k(&perfect, &relevant, 4).0, 1.0);
        let none = BTreeMap::from([(0, vec![1]), (1, vec![2]), (2, vec![3])]);
        assert_eq!(recall_at_k(&none, &relevant, 4).0, 0.0);
    }

    #[test]
    fn sellers_without_relevant_items_are_skipped() {
        let relevant = BTreeMap::from([(0, BTreeSet::from([1])), (5, BTreeSet::new())]);
        let predictions = BTreeMap::from([(0, vec![1])]);
        let (r, per) = recall_at_k(&predictions, &relevant, 1);
        assert_eq!((r, per.len()), (1.0, 1));
    }

    #[test]
    fn report_text_has_flat_keys() {
        let report = EvalReport {
            k: 5,
            per_seller: vec![SellerResult { seller: 0, hits: 1, relevant: 2 }],
            recall: 0.5,
            pool: Pool::Candidates,
            pool_size: 9,
            filter_seen: false,
        };
        let text = report.to_text("seed = 3");
        assert!(text.contains("k = 5\n") && text.contains("recall = 0.500000\n"));
        assert!(text.contains("filter_seen = false\n") && text.ends_with("config.seed = 3\n"));
    }

    proptest! {
        #[test]
        fn recall_is_monotone_in_k(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let t = table(&rows);
            let pool: Vec<usize> = (5..30).collect();
            let mut relevant = BTreeMap::new();
            for s in 0..5 {
                let set: BTreeSet<usize> = (0..4).map(|_| rng.gen_range(5..30)).collect();
                relevant.insert(s, set);
            }
            let mut last = 0.0;
            for k in 1..=25 {
                let preds = (0..5).map(|s| (s, topk_products(&t, s, &pool, k))).collect();
                let (r, _) = recall_at_k(&preds, &relevant, k);
                prop_assert!((0.0..=1.0).contains(&r));
                prop_assert!(r >= last);
                last = r;
            }
            prop_assert_eq!(last, 1.0);
        }

        #[test]
        fn rotation_preserves_topk_sets(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let theta: f64 = rng.gen_range(0.0..6.28);
            let (c, s) = (theta.cos(), theta.sin());
            let rotated: Vec<Vec<f64>> = rows.iter().map(|r| vec![c * r[0] - s * r[1], s * r[0] + c * r[1]]).collect();
            let pool: Vec<usize> = (1..20).collect();
            let a: BTreeSet<usize> = topk_products(&table(&rows), 0, &pool, 5).into_iter().collect();
            let b: BTreeSet<usize> = topk_products(&table(&rotated), 0, &pool, 5).into_iter().collect();
            prop_assert_eq!(a, b);
        }
    }
}
