//! Initial node representations: identifier hash + node-type hash + content.
//!
//! Hashed vectors are dense sign vectors with entries `±1/sqrt(d)`, so every
//! one has unit length. Content comes from a precomputed embedding file, a
//! deterministic bag-of-hashed-tokens stand-in for a text encoder, or zeros.
//! Sellers and categories always get zero content.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::io::Reader;
use crate::graph::{HeteroGraph, NodeType};
use crate::tensor::Tensor;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"WAMLEMB1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContentSource {
    /// Vectors read from a `WAMLEMB1` file keyed by product raw id.
    PrecomputedFile,
    /// [`text_stub_embed`] over each product's text.
    TextStub,
    Zeros,
}

impl ContentSource {
    pub fn name(self) -> &'static str {
        match self {
            ContentSource::PrecomputedFile => "precomputed-file",
            ContentSource::TextStub => "text-stub",
            ContentSource::Zeros => "zeros",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "precomputed-file" | "file" => Some(ContentSource::PrecomputedFile),
            "text-stub" => Some(ContentSource::TextStub),
            "zeros" | "none" => Some(ContentSource::Zeros),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureConfig {
    pub dim: usize,
    pub hash_seed: u64,
    pub content_source: ContentSource,
    /// Include the node-identifier hash in h0.
    pub id_hash: bool,
    /// Include the node-type hash in h0.
    pub type_hash: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            hash_seed: 0,
            content_source: ContentSource::PrecomputedFile,
            id_hash: true,
            type_hash: true,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::config("dim must be at least 2"));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over `seed` and `key`, finished with a splitmix64 mix. Stable
/// across platforms and compiler versions.
pub fn stable_hash(seed: u64, key: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes().iter().chain(key.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    splitmix64(h)
}

/// Unit-norm sign vector for `key`: coordinate `j` is `±1/sqrt(d)` with the
/// sign taken from a hash of `(seed, key, j)`.
pub fn hash_embed(key: &str, d: usize, seed: u64) -> Vec<f64> {
    let base = stable_hash(seed, key);
    let mag = 1.0 / (d as f64).sqrt();
    (0..d as u64)
        .map(|j| {
            if splitmix64(base ^ j.wrapping_mul(0x9e37_79b9_7f4a_7c15)) >> 63 == 0 {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

/// Lowercased whitespace tokens, summed as [`hash_embed`] vectors and
/// L2-normalized. Empty text maps to the zero vector.
pub fn text_stub_embed(text: &str, d: usize, seed: u64) -> Vec<f64> {
    let mut acc = vec![0.0; d];
    for token in text.split_whitespace() {
        let token = token.to_lowercase();
        for (a, v) in acc.iter_mut().zip(hash_embed(&token, d, seed)) {
            *a += v;
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        acc.iter_mut().for_each(|v| *v /= norm);
    }
    acc
}

/// Content vectors for product nodes; every other node reads as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentTable {
    dim: usize,
    vectors: HashMap<usize, Vec<f64>>,
}

impl ContentTable {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Attaches `vector` to node `v`. Non-product nodes are ignored.
    pub fn insert(&mut self, graph: &HeteroGraph, v: usize, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::data(format!(
                "content vector for `{}` has dimension {}, expected {}",
                graph.raw_id(v),
                vector.len(),
                self.dim
            )));
        }
        if graph.node_type(v) == NodeType::Product {
            self.vectors.insert(v, vector);
        }
        Ok(())
    }

    pub fn get(&self, v: usize) -> Option<&[f64]> {
        self.vectors.get(&v).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Products of `graph` found in `records` get their vector; others stay zero.
    pub fn from_records(graph: &HeteroGraph, dim: usize, records: &[(String, Vec<f32>)]) -> Result<Self> {
        let mut table = Self::zeros(dim);
        for (raw, vec) in records {
            if let Some(v) = graph.index_of(NodeType::Product, raw) {
                table.insert(graph, v, vec.iter().map(|&x| f64::from(x)).collect())?;
            }
        }
        Ok(table)
    }

    /// Stub-encodes the text of every product found in `texts`.
    pub fn from_texts(graph: &HeteroGraph, texts: &HashMap<String, String>, dim: usize, seed: u64) -> Result<Self> {
        let mut table = Self::zeros(dim);
        for v in graph.nodes_of_type(NodeType::Product) {
            if let Some(text) = texts.get(graph.raw_id(v)) {
                table.insert(graph, v, text_stub_embed(text, dim, seed))?;
            }
        }
        Ok(table)
    }
}

/// Row `v` is `HASH(raw id) + HASH(type name) + content_v`, with either hash
/// switched off by the config.
pub fn init_h0(graph: &HeteroGraph, config: &FeatureConfig, content: &ContentTable) -> Result<Tensor> {
    config.validate()?;
    let d = config.dim;
    if content.dim() != d {
        return Err(Error::data(format!(
            "content table dimension {} does not match dim {d}",
            content.dim()
        )));
    }
    let type_vectors: HashMap<NodeType, Vec<f64>> = NodeType::ALL
        .into_iter()
        .map(|t| (t, hash_embed(t.name(), d, config.hash_seed)))
        .collect();
    let mut h0 = Tensor::zeros(graph.node_count(), d);
    for v in 0..graph.node_count() {
        let row = h0.row_mut(v);
        if config.id_hash {
            for (o, x) in row.iter_mut().zip(hash_embed(graph.raw_id(v), d, config.hash_seed)) {
                *o += x;
            }
        }
        if config.type_hash {
            for (o, x) in row.iter_mut().zip(&type_vectors[&graph.node_type(v)]) {
                *o += x;
            }
        }
        if let Some(x) = content.get(v) {
            for (o, c) in row.iter_mut().zip(x) {
                *o += c;
            }
        }
    }
    Ok(h0)
}

/// Writes a `WAMLEMB1` file: magic, `u32 d`, then per record
/// `u32 id_len, id bytes, d x f32`, all little-endian.
pub fn write_embeddings(path: &Path, dim: usize, records: &[(String, Vec<f32>)]) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + records.len() * (8 + 4 * dim));
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    for (raw, vec) in records {
        if vec.len() != dim {
            return Err(Error::data(format!("embedding for `{raw}` has dimension {}", vec.len())));
        }
        buf.extend_from_slice(&(raw.len() as u32).to_le_bytes());
        buf.extend_from_slice(raw.as_bytes());
        for x in vec {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<(usize, Vec<(String, Vec<f32>)>)> {
    let bytes = fs::read(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let mut r = Reader::new(&bytes, "embedding file");
    r.expect_magic(EMBEDDING_MAGIC)?;
    let dim = r.u32()? as usize;
    let mut records = Vec::new();
    while !r.at_end() {
        let raw = r.string()?;
        let vec = (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        records.push((raw, vec));
    }
    Ok((dim, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EdgeType, RawEdge};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn hash_embed_is_deterministic_and_unit() {
        for d in [2, 3, 32, 256] {
            let a = hash_embed("seller-17", d, 5);
            assert_eq!(a, hash_embed("seller-17", d, 5));
            assert!((norm(&a) - 1.0).abs() < 1e-12);
            assert!(a.iter().all(|x| (x.abs() - 1.0 / (d as f64).sqrt()).abs() < 1e-15));
        }
        assert_ne!(hash_embed("k", 64, 1), hash_embed("k", 64, 2));
    }

    #[test]
    fn hashed_keys_are_nearly_orthogonal() {
        // independent sign vectors have |dot| of order 1/sqrt(d)
        let d = 256;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut total = 0.0;
        for _ in 0..1000 {
            let a = format!("k{}", rng.gen::<u64>());
            let b = format!("k{}", rng.gen::<u64>());
            total += dot(&hash_embed(&a, d, 0), &hash_embed(&b, d, 0)).abs();
        }
        let mean = total / 1000.0;
        assert!(mean < 3.0 / (d as f64).sqrt(), "mean |dot| = {mean}");
    }

    #[test]
    fn text_stub_edge_cases() {
        assert!(text_stub_embed("", 16, 0).iter().all(|&x| x == 0.0));
        assert!(text_stub_embed("   ", 16, 0).iter().all(|&x| x == 0.0));
        let single = text_stub_embed("Phone", 16, 3);
        let expect = hash_embed("phone", 16, 3);
        for (a, b) in single.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_tokens_raise_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 64;
        for _ in 0..100 {
            let base: Vec<String> = (0..10).map(|_| format!("w{}", rng.gen::<u32>())).collect();
            let mut near = base.clone();
            near[9] = format!("x{}", rng.gen::<u32>());
            let far: Vec<String> = (0..10).map(|_| format!("z{}", rng.gen::<u32>())).collect();
            let e = text_stub_embed(&base.join(" "), d, 0);
            let n = text_stub_embed(&near.join(" "), d, 0);
            let f = text_stub_embed(&far.join(" "), d, 0);
            assert!(dot(&e, &n) > dot(&e, &f));
        }
    }

    fn toy_graph() -> HeteroGraph {
        let nodes = vec![
            ("s1".to_string(), NodeType::Seller),
            ("s2".to_string(), NodeType::Seller),
            ("p1".to_string(), NodeType::Product),
            ("a1".to_string(), NodeType::Category),
        ];
        let edges = vec![
            RawEdge::new("s1", "p1", EdgeType::SellerProduct),
            RawEdge::new("a1", "p1", EdgeType::CategoryProduct),
        ];
        HeteroGraph::build(&nodes, &edges, &["p1"]).unwrap()
    }

    #[test]
    fn h0_rows_decompose_into_their_parts() {
        let g = toy_graph();
        let cfg = FeatureConfig {
            dim: 16,
            hash_seed: 9,
            content_source: ContentSource::TextStub,
            ..Default::default()
        };
        let texts = HashMap::from([("p1".to_string(), "red cotton shirt".to_string())]);
        let content = ContentTable::from_texts(&g, &texts, 16, 9).unwrap();
        let h0 = init_h0(&g, &cfg, &content).unwrap();

        let seller: Vec<f64> = hash_embed("s1", 16, 9).iter().zip(hash_embed("Seller", 16, 9)).map(|(a, b)| a + b).collect();
        assert_eq!(h0.row(0), seller.as_slice());

        let text = text_stub_embed("red cotton shirt", 16, 9);
        let id = hash_embed("p1", 16, 9);
        let ty = hash_embed("Product", 16, 9);
        for j in 0..16 {
            assert!((h0.get(2, j) - (id[j] + ty[j] + text[j])).abs() < 1e-15);
        }
        assert_ne!(h0.row(0), h0.row(1));
        for v in 0..g.node_count() {
            assert!(h0.row_norm(v) <= 3.0 + 1e-12);
        }
        assert_eq!(h0, init_h0(&g, &cfg, &content).unwrap());
    }

    #[test]
    fn seed_changes_vectors_not_norms() {
        let g = toy_graph();
        let content = ContentTable::zeros(16);
        let a = init_h0(&g, &FeatureConfig { dim: 16, hash_seed: 1, ..Default::default() }, &content).unwrap();
        let b = init_h0(&g, &FeatureConfig { dim: 16, hash_seed: 2, ..Default::default() }, &content).unwrap();
        assert_ne!(a, b);
        for v in 0..g.node_count() {
            // |id + type|^2 = 2 + 2<id,type>, so compare against the per-seed value
            let na = a.row_norm(v);
            assert!(na <= 2.0 + 1e-12 && b.row_norm(v) <= 2.0 + 1e-12);
        }
        let unit = init_h0(
            &g,
            &FeatureConfig { dim: 16, hash_seed: 3, type_hash: false, ..Default::default() },
            &content,
        )
        .unwrap();
        for v in 0..g.node_count() {
            assert!((unit.row_norm(v) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let g = toy_graph();
        assert!(init_h0(&g, &FeatureConfig { dim: 16, ..Default::default() }, &ContentTable::zeros(8)).is_err());
        let mut table = ContentTable::zeros(8);
        assert!(table.insert(&g, 2, vec![0.0; 4]).is_err());
        table.insert(&g, 0, vec![1.0; 8]).unwrap();
        assert!(table.get(0).is_none(), "sellers never carry content");
    }

    #[test]
    fn embedding_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.emb");
        let records = vec![("p1".to_string(), vec![0.5f32, -1.0, 2.0]), ("p2".to_string(), vec![0.0, 0.0, 1.0])];
        write_embeddings(&path, 3, &records).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], EMBEDDING_MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(read_embeddings(&path).unwrap(), (3, records.clone()));

        let g = toy_graph();
        let table = ContentTable::from_records(&g, 3, &records).unwrap();
        assert_eq!(table.get(2).unwrap(), &[0.5, -1.0, 2.0]);
        assert_eq!(table.len(), 1);

        fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(read_embeddings(&path).is_err());
    }
}
