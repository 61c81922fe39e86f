#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waml::{EdgeType, NodeType, RawEdge};

pub fn node(raw: &str, ty: NodeType) -> (String, NodeType) {
    (raw.to_string(), ty)
}

/// Small worked example of the reduction: two candidates (p1, p2), six
/// customers, threshold 2.
///
/// Co-occurrence counts after projection: (p1,p3)=2, (p2,p6)=2, (p4,p8)=2 and
/// eleven pairs with count 1. Thresholding keeps the three count-2 pairs; the
/// candidate filter then drops (p4,p8), leaving the training products
/// {p1, p2, p3, p6}.
pub struct ToyInstance {
    pub nodes: Vec<(String, NodeType)>,
    pub edges: Vec<RawEdge>,
    pub candidates: Vec<String>,
    pub threshold: u64,
    pub expected_nodes: Vec<(String, NodeType)>,
    pub expected_pp: BTreeSet<(String, String)>,
    pub expected_sp: BTreeSet<(String, String)>,
    pub expected_ap: BTreeSet<(String, String)>,
}

pub fn toy_instance() -> ToyInstance {
    let mut nodes = Vec::new();
    for c in 1..=6 {
        nodes.push(node(&format!("c{c}"), NodeType::Customer));
    }
    for p in 1..=8 {
        nodes.push(node(&format!("p{p}"), NodeType::Product));
    }
    nodes.push(node("s1", NodeType::Seller));
    nodes.push(node("s2", NodeType::Seller));
    nodes.push(node("a1", NodeType::Category));
    nodes.push(node("a2", NodeType::Category));

    let baskets: [(&str, &[&str]); 6] = [
        ("c1", &["p1", "p3", "p4"]),
        ("c2", &["p1", "p3", "p5"]),
        ("c3", &["p2", "p4", "p6"]),
        ("c4", &["p2", "p6", "p7", "p3"]),
        ("c5", &["p4", "p8"]),
        ("c6", &["p4", "p8"]),
    ];
    let mut edges = Vec::new();
    for (c, items) in baskets {
        for p in items {
            edges.push(RawEdge::new(c, *p, EdgeType::CustomerProduct));
        }
    }
    for (s, p) in [("s1", "p1"), ("s1", "p5"), ("s2", "p6"), ("s2", "p8")] {
        edges.push(RawEdge::new(s, p, EdgeType::SellerProduct));
    }
    for (a, p) in [("a1", "p1"), ("a1", "p3"), ("a1", "p4"), ("a2", "p2"), ("a2", "p7"), ("a2", "p6")] {
        edges.push(RawEdge::new(a, p, EdgeType::CategoryProduct));
    }

    let pairs = |xs: &[(&str, &str)]| xs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
    ToyInstance {
        nodes,
        edges,
        candidates: vec!["p1".into(), "p2".into()],
        threshold: 2,
        expected_nodes: vec![
            node("p1", NodeType::Product),
            node("p2", NodeType::Product),
            node("p3", NodeType::Product),
            node("p6", NodeType::Product),
            node("s1", NodeType::Seller),
            node("s2", NodeType::Seller),
            node("a1", NodeType::Category),
            node("a2", NodeType::Category),
        ],
        expected_pp: pairs(&[("p1", "p3"), ("p2", "p6")]),
        expected_sp: pairs(&[("s1", "p1"), ("s2", "p6")]),
        expected_ap: pairs(&[("a1", "p1"), ("a1", "p3"), ("a2", "p2"), ("a2", "p6")]),
    }
}

/// Node set and typed edge sets, keyed by raw id, for set comparison.
#[derive(Debug, PartialEq, Eq)]
pub struct ReducedSets {
    pub nodes: BTreeSet<(String, NodeType)>,
    pub pp: BTreeSet<(String, String)>,
    pub sp: BTreeSet<(String, String)>,
    pub ap: BTreeSet<(String, String)>,
}

pub fn sets_of(g: &waml::HeteroGraph) -> ReducedSets {
    let named = |kind: EdgeType| {
        g.edges_of(kind)
            .iter()
            .map(|&(a, b)| {
                let (x, y) = (g.raw_id(a).to_string(), g.raw_id(b).to_string());
                if kind == EdgeType::ProductProduct && y < x {
                    (y, x)
                } else {
                    (x, y)
                }
            })
            .collect()
    };
    ReducedSets {
        nodes: (0..g.node_count()).map(|v| (g.raw_id(v).to_string(), g.node_type(v))).collect(),
        pp: named(EdgeType::ProductProduct),
        sp: named(EdgeType::SellerProduct),
        ap: named(EdgeType::CategoryProduct),
    }
}

/// Evaluates the reduction definition directly on raw ids: for every
/// unordered product pair count the customers that touched both, keep the
/// pair when the count reaches the threshold and one side is a candidate,
/// and keep seller/category edges into the resulting training products.
pub fn brute_force_reduce(
    nodes: &[(String, NodeType)],
    edges: &[RawEdge],
    candidates: &[String],
    threshold: u64,
) -> ReducedSets {
    let of_type = |ty: NodeType| -> Vec<String> {
        nodes.iter().filter(|(_, t)| *t == ty).map(|(r, _)| r.clone()).collect()
    };
    let products = of_type(NodeType::Product);
    let customers = of_type(NodeType::Customer);
    let touched: HashSet<(String, String)> = edges
        .iter()
        .filter(|e| e.kind == EdgeType::CustomerProduct)
        .map(|e| (e.src.clone(), e.dst.clone()))
        .collect();
    let cand: HashSet<&String> = candidates.iter().collect();
    let mut pp = BTreeSet::new();
    for (i, p) in products.iter().enumerate() {
        for q in &products[i + 1..] {
            let shared = customers
                .iter()
                .filter(|c| touched.contains(&((*c).clone(), p.clone())) && touched.contains(&((*c).clone(), q.clone())))
                .count() as u64;
            if shared >= threshold && (cand.contains(p) || cand.contains(q)) {
                pp.insert(if p < q { (p.clone(), q.clone()) } else { (q.clone(), p.clone()) });
            }
        }
    }
    let mut training: HashSet<String> = candidates.iter().cloned().collect();
    for (a, b) in &pp {
        training.insert(a.clone());
        training.insert(b.clone());
    }
    let attached = |kind: EdgeType| -> BTreeSet<(String, String)> {
        edges
            .iter()
            .filter(|e| e.kind == kind && training.contains(&e.dst))
            .map(|e| (e.src.clone(), e.dst.clone()))
            .collect()
    };
    let kept_nodes = nodes
        .iter()
        .filter(|(r, t)| match t {
            NodeType::Customer => false,
            NodeType::Product => training.contains(r),
            _ => true,
        })
        .cloned()
        .collect();
    ReducedSets {
        nodes: kept_nodes,
        pp,
        sp: attached(EdgeType::SellerProduct),
        ap: attached(EdgeType::CategoryProduct),
    }
}

/// A random raw instance with at most 12 nodes and 30 interactions.
pub struct RandomInstance {
    pub nodes: Vec<(String, NodeType)>,
    pub edges: Vec<RawEdge>,
    pub candidates: Vec<String>,
    pub threshold: u64,
}

pub fn random_instance(seed: u64) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_customers = rng.gen_range(0..=4);
    let n_products = rng.gen_range(1..=5);
    let n_sellers = rng.gen_range(0..=2);
    let n_categories = rng.gen_range(0..=1);
    let mut nodes = Vec::new();
    for i in 0..n_customers {
        nodes.push(node(&format!("c{i}"), NodeType::Customer));
    }
    for i in 0..n_products {
        nodes.push(node(&format!("p{i}"), NodeType::Product));
    }
    for i in 0..n_sellers {
        nodes.push(node(&format!("s{i}"), NodeType::Seller));
    }
    for i in 0..n_categories {
        nodes.push(node(&format!("a{i}"), NodeType::Category));
    }
    let mut edges = Vec::new();
    let budget = rng.gen_range(0..=30);
    for _ in 0..budget {
        let p = format!("p{}", rng.gen_range(0..n_products));
        match rng.gen_range(0..4) {
            0 | 1 if n_customers > 0 => {
                edges.push(RawEdge::new(format!("c{}", rng.gen_range(0..n_customers)), p, EdgeType::CustomerProduct))
            }
            2 if n_sellers > 0 => {
                edges.push(RawEdge::new(format!("s{}", rng.gen_range(0..n_sellers)), p, EdgeType::SellerProduct))
            }
            3 if n_categories > 0 => {
                edges.push(RawEdge::new(format!("a{}", rng.gen_range(0..n_categories)), p, EdgeType::CategoryProduct))
            }
            _ => {}
        }
    }
    let mut candidates: Vec<String> = (0..n_products).filter(|_| rng.gen_bool(0.4)).map(|i| format!("p{i}")).collect();
    if candidates.is_empty() {
        candidates.push(format!("p{}", rng.gen_range(0..n_products)));
    }
    RandomInstance {
        nodes,
        edges,
        candidates,
        threshold: rng.gen_range(1..=3),
    }
}
