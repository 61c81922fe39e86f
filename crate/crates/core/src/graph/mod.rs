//! Typed heterogeneous graph with undirected CSR adjacency.

pub(crate) mod io;

pub use io::{
    load_snapshot, read_edges, read_id_list, read_nodes, save_snapshot, write_edges, write_id_list,
    write_nodes, SNAPSHOT_MAGIC, SNAPSHOT_VERSION,
};

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::GraphError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeType {
    Customer,
    Product,
    Seller,
    Category,
}

impl NodeType {
    pub const ALL: [NodeType; 4] = [
        NodeType::Customer,
        NodeType::Product,
        NodeType::Seller,
        NodeType::Category,
    ];

    /// Canonical name; also the key hashed into the node-type feature.
    pub fn name(self) -> &'static str {
        match self {
            NodeType::Customer => "Customer",
            NodeType::Product => "Product",
            NodeType::Seller => "Seller",
            NodeType::Category => "Category",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            NodeType::Customer => 0,
            NodeType::Product => 1,
            NodeType::Seller => 2,
            NodeType::Category => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.code() == code)
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NodeType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "customer" => Ok(NodeType::Customer),
            "product" => Ok(NodeType::Product),
            "seller" => Ok(NodeType::Seller),
            "category" => Ok(NodeType::Category),
            other => Err(format!("unknown node type `{other}`")),
        }
    }
}

/// Edge type tag. The tag fixes the endpoint node types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeType {
    CustomerProduct,
    SellerProduct,
    CategoryProduct,
    ProductProduct,
}

impl EdgeType {
    pub const ALL: [EdgeType; 4] = [
        EdgeType::CustomerProduct,
        EdgeType::SellerProduct,
        EdgeType::CategoryProduct,
        EdgeType::ProductProduct,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            EdgeType::CustomerProduct => "CP",
            EdgeType::SellerProduct => "SP",
            EdgeType::CategoryProduct => "AP",
            EdgeType::ProductProduct => "PP",
        }
    }

    pub fn endpoints(self) -> (NodeType, NodeType) {
        match self {
            EdgeType::CustomerProduct => (NodeType::Customer, NodeType::Product),
            EdgeType::SellerProduct => (NodeType::Seller, NodeType::Product),
            EdgeType::CategoryProduct => (NodeType::Category, NodeType::Product),
            EdgeType::ProductProduct => (NodeType::Product, NodeType::Product),
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub(crate) fn code(self) -> u8 {
        Self::ALL.iter().position(|&t| t == self).expect("listed") as u8
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for EdgeType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "CP" => Ok(EdgeType::CustomerProduct),
            "SP" => Ok(EdgeType::SellerProduct),
            "AP" | "PA" => Ok(EdgeType::CategoryProduct),
            "PP" => Ok(EdgeType::ProductProduct),
            other => Err(format!("unknown edge type `{other}`")),
        }
    }
}

/// A raw edge as it appears in an edge-list file.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RawEdge {
    pub src: String,
    pub dst: String,
    pub kind: EdgeType,
}

impl RawEdge {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, kind: EdgeType) -> Self {
        Self {
            src: src.into(),
            dst: dst.into(),
            kind,
        }
    }
}

/// Compressed sparse row adjacency.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Csr {
    /// Builds symmetric adjacency from undirected pairs. Self-loops and
    /// repeated pairs are dropped; neighbor lists are sorted ascending.
    pub fn from_undirected(node_count: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut canon: Vec<(usize, usize)> = pairs
            .into_iter()
            .filter(|(u, v)| u != v)
            .map(|(u, v)| (u.min(v), u.max(v)))
            .collect();
        canon.sort_unstable();
        canon.dedup();
        let mut degree = vec![0usize; node_count];
        for &(u, v) in &canon {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = Vec::with_capacity(node_count + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..node_count].to_vec();
        let mut neighbors = vec![0usize; 2 * canon.len()];
        for &(u, v) in &canon {
            neighbors[fill[u]] = v;
            fill[u] += 1;
            neighbors[fill[v]] = u;
            fill[v] += 1;
        }
        for v in 0..node_count {
            neighbors[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        Self { offsets, neighbors }
    }

    pub(crate) fn from_parts(offsets: Vec<usize>, neighbors: Vec<usize>) -> Self {
        Self { offsets, neighbors }
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn neighbor_array(&self) -> &[usize] {
        &self.neighbors
    }
}

/// Typed edges of one kind, as dense index pairs.
///
/// Pairs are oriented by [`EdgeType::endpoints`]; product pairs are stored
/// as `(min, max)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeSet {
    pub kind: EdgeType,
    pub pairs: Vec<(usize, usize)>,
}

/// Immutable heterogeneous graph.
#[derive(Clone, Debug)]
pub struct HeteroGraph {
    raw_ids: Vec<String>,
    types: Vec<NodeType>,
    lookup: HashMap<(NodeType, String), usize>,
    adjacency: Arc<Csr>,
    edge_sets: Vec<EdgeSet>,
    candidate: Vec<bool>,
}

impl PartialEq for HeteroGraph {
    fn eq(&self, other: &Self) -> bool {
        self.raw_ids == other.raw_ids
            && self.types == other.types
            && self.adjacency == other.adjacency
            && self.edge_sets == other.edge_sets
            && self.candidate == other.candidate
    }
}

/// Builds a graph with no candidate products flagged.
pub fn build_graph(nodes: &[(String, NodeType)], edges: &[RawEdge]) -> Result<HeteroGraph, GraphError> {
    HeteroGraph::build(nodes, edges, &[] as &[String])
}

impl HeteroGraph {
    /// Assigns dense indices in input order, resolves edge endpoints by the
    /// types their edge tag implies, and builds deduplicated symmetric CSR.
    ///
    /// `candidates` names products to flag as recommendation candidates.
    pub fn build<S: AsRef<str>>(
        nodes: &[(String, NodeType)],
        edges: &[RawEdge],
        candidates: &[S],
    ) -> Result<Self, GraphError> {
        let mut lookup = HashMap::with_capacity(nodes.len());
        let mut raw_ids = Vec::with_capacity(nodes.len());
        let mut types = Vec::with_capacity(nodes.len());
        for (raw, ty) in nodes {
            if lookup.insert((*ty, raw.clone()), raw_ids.len()).is_some() {
                return Err(GraphError::DuplicateNode {
                    raw: raw.clone(),
                    kind: ty.name(),
                });
            }
            raw_ids.push(raw.clone());
            types.push(*ty);
        }

        let resolve = |raw: &str, ty: NodeType| lookup.get(&(ty, raw.to_string())).copied();
        let mut sets: Vec<EdgeSet> = Vec::new();
        let mut seen: HashSet<(EdgeType, usize, usize)> = HashSet::new();
        for e in edges {
            let (ta, tb) = e.kind.endpoints();
            let (a, b) = match (resolve(&e.src, ta), resolve(&e.dst, tb)) {
                (Some(a), Some(b)) => (a, b),
                _ => match (resolve(&e.dst, ta), resolve(&e.src, tb)) {
                    (Some(a), Some(b)) => (a, b),
                    _ => {
                        let (raw, kind) = if resolve(&e.src, ta).is_none() && resolve(&e.src, tb).is_none() {
                            (&e.src, ta)
                        } else {
                            (&e.dst, tb)
                        };
                        return Err(GraphError::UnknownNode {
                            raw: raw.clone(),
                            kind: kind.name(),
                        });
                    }
                },
            };
            if a == b {
                continue;
            }
            let (a, b) = if ta == tb { (a.min(b), a.max(b)) } else { (a, b) };
            if !seen.insert((e.kind, a, b)) {
                continue;
            }
            match sets.iter_mut().find(|s| s.kind == e.kind) {
                Some(set) => set.pairs.push((a, b)),
                None => sets.push(EdgeSet {
                    kind: e.kind,
                    pairs: vec![(a, b)],
                }),
            }
        }
        sets.sort_by_key(|s| s.kind);

        let mut candidate = vec![false; raw_ids.len()];
        for raw in candidates {
            let raw = raw.as_ref();
            let idx = resolve(raw, NodeType::Product).ok_or_else(|| GraphError::UnknownNode {
                raw: raw.to_string(),
                kind: NodeType::Product.name(),
            })?;
            candidate[idx] = true;
        }

        let adjacency = Csr::from_undirected(
            raw_ids.len(),
            sets.iter().flat_map(|s| s.pairs.iter().copied()),
        );
        Ok(Self {
            raw_ids,
            types,
            lookup,
            adjacency: Arc::new(adjacency),
            edge_sets: sets,
            candidate,
        })
    }

    pub(crate) fn from_parts(
        raw_ids: Vec<String>,
        types: Vec<NodeType>,
        adjacency: Csr,
        edge_sets: Vec<EdgeSet>,
        candidate: Vec<bool>,
    ) -> Self {
        let lookup = raw_ids
            .iter()
            .zip(&types)
            .enumerate()
            .map(|(i, (raw, ty))| ((*ty, raw.clone()), i))
            .collect();
        Self {
            raw_ids,
            types,
            lookup,
            adjacency: Arc::new(adjacency),
            edge_sets,
            candidate,
        }
    }

    pub fn node_count(&self) -> usize {
        self.raw_ids.len()
    }

    /// Number of distinct undirected edges.
    pub fn edge_count(&self) -> usize {
        self.adjacency.edge_count()
    }

    fn check(&self, v: usize) -> Result<(), GraphError> {
        if v >= self.node_count() {
            return Err(GraphError::OutOfRange {
                index: v,
                count: self.node_count(),
            });
        }
        Ok(())
    }

    /// Neighbors of `v` in ascending index order.
    pub fn neighbors(&self, v: usize) -> Result<&[usize], GraphError> {
        self.check(v)?;
        Ok(self.adjacency.neighbors(v))
    }

    pub fn degree(&self, v: usize) -> Result<usize, GraphError> {
        self.check(v)?;
        Ok(self.adjacency.degree(v))
    }

    pub fn adjacency(&self) -> &Arc<Csr> {
        &self.adjacency
    }

    pub fn raw_id(&self, v: usize) -> &str {
        &self.raw_ids[v]
    }

    pub fn raw_ids(&self) -> &[String] {
        &self.raw_ids
    }

    pub fn node_type(&self, v: usize) -> NodeType {
        self.types[v]
    }

    pub fn node_types(&self) -> &[NodeType] {
        &self.types
    }

    pub fn index_of(&self, ty: NodeType, raw: &str) -> Option<usize> {
        self.lookup.get(&(ty, raw.to_string())).copied()
    }

    pub fn nodes_of_type(&self, ty: NodeType) -> Vec<usize> {
        (0..self.node_count()).filter(|&v| self.types[v] == ty).collect()
    }

    pub fn is_candidate(&self, v: usize) -> bool {
        self.candidate[v]
    }

    pub fn candidate_flags(&self) -> &[bool] {
        &self.candidate
    }

    pub fn candidates(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&v| self.candidate[v]).collect()
    }

    pub fn edge_sets(&self) -> &[EdgeSet] {
        &self.edge_sets
    }

    pub fn edges_of(&self, kind: EdgeType) -> &[(usize, usize)] {
        self.edge_sets
            .iter()
            .find(|s| s.kind == kind)
            .map_or(&[], |s| s.pairs.as_slice())
    }

    /// `(node list, raw edges, candidate raw ids)` sufficient to rebuild this graph.
    pub fn to_raw(&self) -> (Vec<(String, NodeType)>, Vec<RawEdge>, Vec<String>) {
        let nodes = self.raw_ids.iter().cloned().zip(self.types.iter().copied()).collect();
        let edges = self
            .edge_sets
            .iter()
            .flat_map(|s| {
                s.pairs
                    .iter()
                    .map(move |&(a, b)| RawEdge::new(self.raw_ids[a].clone(), self.raw_ids[b].clone(), s.kind))
            })
            .collect();
        let candidates = self.candidates().into_iter().map(|v| self.raw_ids[v].clone()).collect();
        (nodes, edges, candidates)
    }

    /// Same nodes, with the given oriented pairs of `kind` dropped.
    pub fn without_edges(&self, kind: EdgeType, removed: &HashSet<(usize, usize)>) -> Self {
        let edge_sets: Vec<EdgeSet> = self
            .edge_sets
            .iter()
            .map(|s| EdgeSet {
                kind: s.kind,
                pairs: if s.kind == kind {
                    s.pairs.iter().copied().filter(|p| !removed.contains(p)).collect()
                } else {
                    s.pairs.clone()
                },
            })
            .collect();
        let adjacency = Csr::from_undirected(
            self.node_count(),
            edge_sets.iter().flat_map(|s| s.pairs.iter().copied()),
        );
        Self {
            raw_ids: self.raw_ids.clone(),
            types: self.types.clone(),
            lookup: self.lookup.clone(),
            adjacency: Arc::new(adjacency),
            edge_sets,
            candidate: self.candidate.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn products(n: usize) -> Vec<(String, NodeType)> {
        (0..n).map(|i| (format!("p{i}"), NodeType::Product)).collect()
    }

    fn pp(a: usize, b: usize) -> RawEdge {
        RawEdge::new(format!("p{a}"), format!("p{b}"), EdgeType::ProductProduct)
    }

    #[test]
    fn smallest_graph() {
        let nodes = vec![("s1".to_string(), NodeType::Seller), ("p1".to_string(), NodeType::Product)];
        let g = build_graph(&nodes, &[RawEdge::new("s1", "p1", EdgeType::SellerProduct)]).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.degree(0).unwrap(), 1);
        assert_eq!(g.degree(1).unwrap(), 1);
    }

    #[test]
    fn reversed_pair_collapses_to_one_edge() {
        let g = build_graph(&products(2), &[pp(0, 1), pp(1, 0)]).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.degree(0).unwrap(), 1);
        assert_eq!(g.edges_of(EdgeType::ProductProduct), &[(0, 1)]);
    }

    #[test]
    fn category_edge_accepts_either_orientation() {
        let nodes = vec![("a".to_string(), NodeType::Category), ("p".to_string(), NodeType::Product)];
        let g = build_graph(&nodes, &[RawEdge::new("p", "a", EdgeType::CategoryProduct)]).unwrap();
        assert_eq!(g.edges_of(EdgeType::CategoryProduct), &[(0, 1)]);
    }

    #[test]
    fn isolated_and_star() {
        let g = build_graph(&products(5), &[pp(0, 1), pp(0, 2), pp(0, 3)]).unwrap();
        assert_eq!(g.neighbors(4).unwrap(), &[] as &[usize]);
        assert_eq!(g.degree(4).unwrap(), 0);
        assert_eq!(g.neighbors(0).unwrap(), &[1, 2, 3]);
        assert_eq!(g.degree(0).unwrap(), 3);
    }

    #[test]
    fn unknown_endpoint_is_named() {
        let err = build_graph(&products(1), &[pp(0, 7)]).unwrap_err();
        assert_eq!(
            err,
            GraphError::UnknownNode {
                raw: "p7".into(),
                kind: "Product"
            }
        );
    }

    #[test]
    fn duplicate_node_rejected() {
        let mut nodes = products(2);
        nodes.push(("p1".into(), NodeType::Product));
        assert!(matches!(
            build_graph(&nodes, &[]),
            Err(GraphError::DuplicateNode { .. })
        ));
        // same raw id under a different type is a different node
        let nodes = vec![("x".to_string(), NodeType::Product), ("x".to_string(), NodeType::Seller)];
        assert!(build_graph(&nodes, &[]).is_ok());
    }

    #[test]
    fn out_of_range_index() {
        let g = build_graph(&products(2), &[]).unwrap();
        assert!(g.neighbors(2).is_err());
        assert!(g.degree(9).is_err());
    }

    #[test]
    fn self_loops_dropped() {
        let g = build_graph(&products(2), &[pp(1, 1), pp(0, 1)]).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.neighbors(1).unwrap(), &[0]);
    }

    #[test]
    fn random_graph_matches_dense_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10;
        let mut dense = vec![vec![false; n]; n];
        let mut edges = Vec::new();
        for _ in 0..25 {
            let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
            edges.push(pp(a, b));
            if a != b {
                dense[a][b] = true;
                dense[b][a] = true;
            }
        }
        let g = build_graph(&products(n), &edges).unwrap();
        for (v, row) in dense.iter().enumerate() {
            let expect: Vec<usize> = (0..n).filter(|&u| row[u]).collect();
            assert_eq!(g.neighbors(v).unwrap(), expect.as_slice());
            assert_eq!(g.degree(v).unwrap(), expect.len());
        }
    }

    proptest! {
        #[test]
        fn degree_sum_and_symmetry(pairs in proptest::collection::vec((0usize..12, 0usize..12), 0..60)) {
            let edges: Vec<RawEdge> = pairs.iter().map(|&(a, b)| pp(a, b)).collect();
            let g = build_graph(&products(12), &edges).unwrap();
            let distinct: HashSet<(usize, usize)> = pairs
                .iter()
                .filter(|(a, b)| a != b)
                .map(|&(a, b)| (a.min(b), a.max(b)))
                .collect();
            let total: usize = (0..12).map(|v| g.degree(v).unwrap()).sum();
            prop_assert_eq!(total, 2 * distinct.len());
            for v in 0..12 {
                for &u in g.neighbors(v).unwrap() {
                    prop_assert!(g.neighbors(u).unwrap().contains(&v));
                }
            }
            let offsets = g.adjacency().offsets();
            prop_assert!(offsets.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(*offsets.last().unwrap(), 2 * g.edge_count());
            let again = build_graph(&products(12), &edges).unwrap();
            prop_assert_eq!(again.adjacency(), g.adjacency());
        }
    }
}
