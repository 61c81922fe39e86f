//! Seeded synthetic marketplace with planted seller/product clusters.
//!
//! Every seller and product belongs to one latent cluster. Candidate products
//! receive seller listings from their own cluster with a controlled
//! interaction-count profile; customers buy mostly inside a home cluster,
//! categories and product text are cluster-specific with some noise. The
//! held-out truth is every same-cluster seller/candidate pair not emitted as
//! an edge.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{text_stub_embed, write_embeddings};
use crate::graph::{write_edges, write_id_list, write_nodes, EdgeType, NodeType, RawEdge};

/// Interaction-count buckets for candidates: `0`, `1..=3` and `4..=9`.
pub const BUCKETS: [(usize, usize); 3] = [(0, 0), (1, 3), (4, 9)];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub clusters: usize,
    pub sellers_per_cluster: usize,
    pub products_per_cluster: usize,
    /// Total candidates, spread evenly over clusters.
    pub candidates: usize,
    pub customers: usize,
    pub basket_min: usize,
    pub basket_max: usize,
    /// Probability that a basket item comes from a foreign cluster.
    pub noise_rate: f64,
    /// Within-cluster popularity skew (Zipf exponent) of customer purchases.
    pub popularity_skew: f64,
    /// Share of candidates with 0, 1..=3 and 4..=9 seller listings.
    pub profile: [f64; 3],
    /// Non-candidate listings per seller, inclusive range.
    pub seller_extra_min: usize,
    pub seller_extra_max: usize,
    pub categories_per_cluster: usize,
    /// Probability that a product is filed under a foreign category.
    pub category_noise: f64,
    pub vocab_per_cluster: usize,
    pub global_vocab: usize,
    pub tokens_per_product: usize,
    /// Probability that a text token comes from the cluster vocabulary.
    pub cluster_token_rate: f64,
    /// Content vector width and hash seed for the emitted embedding file.
    pub dim: usize,
    pub hash_seed: u64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            clusters: 8,
            sellers_per_cluster: 25,
            products_per_cluster: 120,
            candidates: 500,
            customers: 600,
            basket_min: 3,
            basket_max: 6,
            noise_rate: 0.3,
            popularity_skew: 1.2,
            profile: [0.142, 0.479, 0.378],
            seller_extra_min: 2,
            seller_extra_max: 6,
            categories_per_cluster: 2,
            category_noise: 0.1,
            vocab_per_cluster: 8,
            global_vocab: 200,
            tokens_per_product: 10,
            cluster_token_rate: 0.3,
            dim: 32,
            hash_seed: 0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("clusters", self.clusters),
            ("sellers_per_cluster", self.sellers_per_cluster),
            ("products_per_cluster", self.products_per_cluster),
            ("categories_per_cluster", self.categories_per_cluster),
            ("vocab_per_cluster", self.vocab_per_cluster),
            ("global_vocab", self.global_vocab),
            ("basket_min", self.basket_min),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if self.basket_max < self.basket_min || self.basket_max > self.products_per_cluster {
            return Err(Error::config("basket_min <= basket_max <= products_per_cluster is required"));
        }
        if self.seller_extra_max < self.seller_extra_min {
            return Err(Error::config("seller_extra_min must not exceed seller_extra_max"));
        }
        for (name, p) in [
            ("noise_rate", self.noise_rate),
            ("category_noise", self.category_noise),
            ("cluster_token_rate", self.cluster_token_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        if self.profile.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (self.profile.iter().sum::<f64>() - 1.0).abs() > 0.01 {
            return Err(Error::config(format!(
                "profile {:?} must be non-negative and sum to 1",
                self.profile
            )));
        }
        if self.candidates > self.clusters * self.products_per_cluster {
            return Err(Error::config(format!(
                "{} candidates exceed the {} products",
                self.candidates,
                self.clusters * self.products_per_cluster
            )));
        }
        if self.noise_rate > 0.0 && self.clusters < 2 {
            return Err(Error::config("noise_rate needs at least two clusters"));
        }
        if self.dim < 2 {
            return Err(Error::config("dim must be at least 2"));
        }
        Ok(())
    }

    /// Candidates per bucket, by largest remainder over the normalized profile.
    pub fn bucket_quotas(&self) -> [usize; 3] {
        let total: f64 = self.profile.iter().sum();
        let exact: Vec<f64> = self.profile.iter().map(|p| p / total * self.candidates as f64).collect();
        let mut quotas = [0usize; 3];
        for i in 0..3 {
            quotas[i] = exact[i].floor() as usize;
        }
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        let missing = self.candidates - quotas.iter().sum::<usize>();
        for &i in order.iter().take(missing) {
            quotas[i] += 1;
        }
        quotas
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub nodes: Vec<(String, NodeType)>,
    pub edges: Vec<RawEdge>,
    pub candidates: Vec<String>,
    /// Held-out same-cluster `(seller, candidate)` pairs.
    pub ground_truth: Vec<(String, String)>,
    /// Latent cluster of every seller and product.
    pub clusters: BTreeMap<String, usize>,
    pub texts: Vec<(String, String)>,
    /// Seller listings received by each candidate.
    pub candidate_interactions: BTreeMap<String, usize>,
}

fn seller_id(i: usize) -> String {
    format!("s{i:05}")
}

fn product_id(i: usize) -> String {
    format!("p{i:06}")
}

/// Builds one instance. Errors when the profile needs more listings than a
/// cluster has sellers.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let (bucket_hi, k) = (BUCKETS[2].1, config.clusters);
    if config.sellers_per_cluster < bucket_hi && config.profile[2] > 0.0 {
        return Err(Error::config(format!(
            "the 4..=9 bucket needs up to {bucket_hi} sellers per cluster, only {} configured",
            config.sellers_per_cluster
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (spc, ppc) = (config.sellers_per_cluster, config.products_per_cluster);
    let n_sellers = k * spc;
    let n_products = k * ppc;

    // seller i and product j belong to cluster i / spc and j / ppc
    let seller_cluster = |s: usize| s / spc;
    let product_cluster = |p: usize| p / ppc;

    // candidates spread evenly, chosen at random within each cluster
    let mut is_candidate = vec![false; n_products];
    let mut candidates = Vec::with_capacity(config.candidates);
    for c in 0..k {
        let share = config.candidates / k + usize::from(c < config.candidates % k);
        if share > ppc {
            return Err(Error::config("candidates per cluster exceed products per cluster"));
        }
        let mut members: Vec<usize> = (c * ppc..(c + 1) * ppc).collect();
        members.shuffle(&mut rng);
        for &p in &members[..share] {
            is_candidate[p] = true;
            candidates.push(p);
        }
    }
    candidates.sort_unstable();

    // interaction counts by bucket quota
    let quotas = config.bucket_quotas();
    let mut counts: Vec<usize> = Vec::with_capacity(candidates.len());
    for (b, &q) in quotas.iter().enumerate() {
        let (lo, hi) = BUCKETS[b];
        counts.extend((0..q).map(|_| rng.gen_range(lo..=hi)));
    }
    counts.shuffle(&mut rng);

    let mut sp: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut interactions = BTreeMap::new();
    for (&p, &n) in candidates.iter().zip(&counts) {
        let c = product_cluster(p);
        let sellers: Vec<usize> = (c * spc..(c + 1) * spc).collect::<Vec<_>>().choose_multiple(&mut rng, n).copied().collect();
        for s in sellers {
            sp.insert((s, p));
        }
        interactions.insert(product_id(p), n);
    }
    for s in 0..n_sellers {
        let c = seller_cluster(s);
        let pool: Vec<usize> = (c * ppc..(c + 1) * ppc).filter(|&p| !is_candidate[p]).collect();
        let n = rng.gen_range(config.seller_extra_min..=config.seller_extra_max).min(pool.len());
        for &p in pool.choose_multiple(&mut rng, n) {
            sp.insert((s, p));
        }
    }

    // customers: Zipf popularity inside each cluster, random rank order
    let weights: Vec<f64> = (0..ppc).map(|r| 1.0 / ((r + 1) as f64).powf(config.popularity_skew)).collect();
    let cumulative: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let total_weight = *cumulative.last().expect("ppc >= 1");
    let rank_to_product: Vec<Vec<usize>> = (0..k)
        .map(|c| {
            let mut m: Vec<usize> = (c * ppc..(c + 1) * ppc).collect();
            m.shuffle(&mut rng);
            m
        })
        .collect();
    let draw = |rng: &mut ChaCha8Rng, c: usize| {
        let x = rng.gen::<f64>() * total_weight;
        let r = cumulative.partition_point(|&w| w <= x).min(ppc - 1);
        rank_to_product[c][r]
    };
    let mut cp: Vec<(usize, usize)> = Vec::new();
    for u in 0..config.customers {
        let home = rng.gen_range(0..k);
        let size = rng.gen_range(config.basket_min..=config.basket_max);
        let mut basket = BTreeSet::new();
        let mut guard = 0;
        while basket.len() < size && guard < 100 * size {
            guard += 1;
            let c = if rng.gen::<f64>() < config.noise_rate {
                let other = rng.gen_range(0..k - 1);
                if other >= home {
                    other + 1
                } else {
                    other
                }
            } else {
                home
            };
            basket.insert(draw(&mut rng, c));
        }
        cp.extend(basket.into_iter().map(|p| (u, p)));
    }

    // categories and text
    let n_categories = k * config.categories_per_cluster;
    let mut ap = Vec::with_capacity(n_products);
    let mut texts = Vec::with_capacity(n_products);
    for p in 0..n_products {
        let c = product_cluster(p);
        let cat = if rng.gen::<f64>() < config.category_noise {
            rng.gen_range(0..n_categories)
        } else {
            c * config.categories_per_cluster + rng.gen_range(0..config.categories_per_cluster)
        };
        ap.push((cat, p));
        let words: Vec<String> = (0..config.tokens_per_product)
            .map(|_| {
                if rng.gen::<f64>() < config.cluster_token_rate {
                    format!("k{c}w{}", rng.gen_range(0..config.vocab_per_cluster))
                } else {
                    format!("g{}", rng.gen_range(0..config.global_vocab))
                }
            })
            .collect();
        texts.push((product_id(p), words.join(" ")));
    }

    let mut nodes = Vec::with_capacity(n_sellers + n_products + n_categories + config.customers);
    nodes.extend((0..n_sellers).map(|s| (seller_id(s), NodeType::Seller)));
    nodes.extend((0..n_products).map(|p| (product_id(p), NodeType::Product)));
    nodes.extend((0..n_categories).map(|a| (format!("a{a:04}"), NodeType::Category)));
    nodes.extend((0..config.customers).map(|u| (format!("u{u:06}"), NodeType::Customer)));

    let mut edges = Vec::with_capacity(cp.len() + sp.len() + ap.len());
    edges.extend(cp.iter().map(|&(u, p)| RawEdge::new(format!("u{u:06}"), product_id(p), EdgeType::CustomerProduct)));
    edges.extend(sp.iter().map(|&(s, p)| RawEdge::new(seller_id(s), product_id(p), EdgeType::SellerProduct)));
    edges.extend(ap.iter().map(|&(a, p)| RawEdge::new(format!("a{a:04}"), product_id(p), EdgeType::CategoryProduct)));

    let mut ground_truth = Vec::new();
    for s in 0..n_sellers {
        let c = seller_cluster(s);
        for &p in candidates.iter().filter(|&&p| product_cluster(p) == c) {
            if !sp.contains(&(s, p)) {
                ground_truth.push((seller_id(s), product_id(p)));
            }
        }
    }
    let mut clusters = BTreeMap::new();
    for s in 0..n_sellers {
        clusters.insert(seller_id(s), seller_cluster(s));
    }
    for p in 0..n_products {
        clusters.insert(product_id(p), product_cluster(p));
    }

    Ok(SynthDataset {
        nodes,
        edges,
        candidates: candidates.iter().map(|&p| product_id(p)).collect(),
        ground_truth,
        clusters,
        texts,
        candidate_interactions: interactions,
    })
}

impl SynthDataset {
    /// Fraction of candidates per bucket (plus the `>= 10` bucket, always empty).
    pub fn bucket_fractions(&self) -> [f64; 4] {
        let mut counts = [0usize; 4];
        for &n in self.candidate_interactions.values() {
            let b = BUCKETS.iter().position(|&(lo, hi)| (lo..=hi).contains(&n)).unwrap_or(3);
            counts[b] += 1;
        }
        let total = self.candidate_interactions.len().max(1) as f64;
        counts.map(|c| c as f64 / total)
    }

    /// Seller listings per candidate counted from the emitted edges.
    pub fn counted_interactions(&self) -> BTreeMap<String, usize> {
        let mut out: BTreeMap<String, usize> = self.candidates.iter().map(|c| (c.clone(), 0)).collect();
        for e in &self.edges {
            if e.kind == EdgeType::SellerProduct {
                if let Some(n) = out.get_mut(&e.dst) {
                    *n += 1;
                }
            }
        }
        out
    }

    pub fn text_map(&self) -> std::collections::HashMap<String, String> {
        self.texts.iter().cloned().collect()
    }

    /// Writes `nodes.tsv`, `edges.tsv`, `candidates.txt`, `ground_truth.tsv`,
    /// `clusters.tsv`, `product_text.tsv`, `content.emb` and `manifest.txt`.
    /// Text files start with the config echo as `#` comments.
    pub fn write(&self, dir: &Path, config: &SynthConfig, echo: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let header: String = echo.lines().map(|l| format!("# {l}\n")).collect();
        let prepend = |path: &Path| -> Result<()> {
            let body = fs::read_to_string(path)?;
            fs::write(path, format!("{header}{body}"))?;
            Ok(())
        };
        write_nodes(&dir.join("nodes.tsv"), &self.nodes)?;
        prepend(&dir.join("nodes.tsv"))?;
        write_edges(&dir.join("edges.tsv"), &self.edges)?;
        prepend(&dir.join("edges.tsv"))?;
        write_id_list(&dir.join("candidates.txt"), &self.candidates)?;
        prepend(&dir.join("candidates.txt"))?;

        let mut truth = header.clone();
        for (s, p) in &self.ground_truth {
            let _ = writeln!(truth, "{s}\t{p}");
        }
        fs::write(dir.join("ground_truth.tsv"), truth)?;
        let mut clusters = header.clone();
        for (id, c) in &self.clusters {
            let _ = writeln!(clusters, "{id}\t{c}");
        }
        fs::write(dir.join("clusters.tsv"), clusters)?;
        let mut text = header.clone();
        for (id, t) in &self.texts {
            let _ = writeln!(text, "{id}\t{t}");
        }
        fs::write(dir.join("product_text.tsv"), text)?;

        let records: Vec<(String, Vec<f32>)> = self
            .texts
            .iter()
            .map(|(id, t)| {
                let v = text_stub_embed(t, config.dim, config.hash_seed);
                (id.clone(), v.into_iter().map(|x| x as f32).collect())
            })
            .collect();
        write_embeddings(&dir.join("content.emb"), config.dim, &records)?;
        fs::write(dir.join("manifest.txt"), echo)?;
        Ok(())
    }
}

/// Recall@K of the ranker that lists every same-cluster candidate first
/// (ascending raw id) and the rest after. Sellers with no truth are skipped.
pub fn oracle_recall(
    ground_truth: &[(String, String)],
    clusters: &BTreeMap<String, usize>,
    candidates: &[String],
    k: usize,
) -> f64 {
    let mut relevant: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (s, p) in ground_truth {
        relevant.entry(s.as_str()).or_default().insert(p.as_str());
    }
    let mut sorted: Vec<&str> = candidates.iter().map(String::as_str).collect();
    sorted.sort_unstable();
    let mut total = 0.0;
    for (seller, rel) in &relevant {
        let c = clusters.get(*seller).copied();
        let mut ranked: Vec<&str> = sorted.iter().copied().filter(|p| clusters.get(*p).copied() == c).collect();
        ranked.extend(sorted.iter().copied().filter(|p| clusters.get(*p).copied() != c));
        let hits = ranked.iter().take(k).filter(|p| rel.contains(*p)).count();
        total += hits as f64 / rel.len() as f64;
    }
    if relevant.is_empty() {
        0.0
    } else {
        total / relevant.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduction::{reduce_pipeline, ReductionConfig};

    fn small() -> SynthConfig {
        SynthConfig {
            clusters: 3,
            sellers_per_cluster: 10,
            products_per_cluster: 30,
            candidates: 45,
            customers: 200,
            ..Default::default()
        }
    }

    #[test]
    fn quotas_follow_largest_remainder() {
        let cfg = SynthConfig::default();
        assert_eq!(cfg.bucket_quotas(), [71, 240, 189]);
        assert_eq!(cfg.bucket_quotas().iter().sum::<usize>(), 500);
    }

    #[test]
    fn default_profile_matches_target_buckets() {
        let data = generate(&SynthConfig::default()).unwrap();
        assert_eq!(data.candidates.len(), 500);
        assert_eq!(data.counted_interactions(), data.candidate_interactions);
        let f = data.bucket_fractions();
        for (got, want) in f.iter().zip([0.142, 0.479, 0.378, 0.0]) {
            assert!((got - want).abs() <= 0.03, "{f:?}");
        }
        assert!(data.candidate_interactions.values().all(|&n| n < 10));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small()).unwrap();
        assert_eq!(a, generate(&small()).unwrap());
        let other = SynthConfig { seed: 1, ..small() };
        assert_ne!(a, generate(&other).unwrap());
    }

    #[test]
    fn written_files_are_byte_identical() {
        let data = generate(&small()).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        data.write(a.path(), &small(), "seed = 0").unwrap();
        generate(&small()).unwrap().write(b.path(), &small(), "seed = 0").unwrap();
        for name in ["nodes.tsv", "edges.tsv", "candidates.txt", "ground_truth.tsv", "clusters.tsv", "product_text.tsv", "content.emb"] {
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
        }
        let nodes = crate::graph::read_nodes(&a.path().join("nodes.tsv")).unwrap();
        assert_eq!(nodes, data.nodes);
    }

    #[test]
    fn truth_is_same_cluster_and_unlisted() {
        let data = generate(&small()).unwrap();
        let listed: BTreeSet<(String, String)> = data
            .edges
            .iter()
            .filter(|e| e.kind == EdgeType::SellerProduct)
            .map(|e| (e.src.clone(), e.dst.clone()))
            .collect();
        for (s, p) in &data.ground_truth {
            assert_eq!(data.clusters[s], data.clusters[p]);
            assert!(!listed.contains(&(s.clone(), p.clone())));
        }
        for (s, p) in &listed {
            assert_eq!(data.clusters[s], data.clusters[p]);
        }
    }

    #[test]
    fn single_cluster_without_noise_gives_perfect_oracle() {
        let cfg = SynthConfig {
            clusters: 1,
            candidates: 15,
            noise_rate: 0.0,
            category_noise: 0.0,
            ..small()
        };
        let data = generate(&cfg).unwrap();
        assert_eq!(oracle_recall(&data.ground_truth, &data.clusters, &data.candidates, 15), 1.0);
        assert_eq!(oracle_recall(&data.ground_truth, &data.clusters, &data.candidates, 0), 0.0);
    }

    #[test]
    fn oracle_matches_set_computation() {
        let data = generate(&small()).unwrap();
        for k in [1, 5, 15, 16, 100] {
            let got = oracle_recall(&data.ground_truth, &data.clusters, &data.candidates, k);
            // same-cluster candidates first in ascending id order
            let mut per: BTreeMap<&String, (usize, usize)> = BTreeMap::new();
            for (s, p) in &data.ground_truth {
                let c = data.clusters[s];
                let mut mine: Vec<&String> = data.candidates.iter().filter(|q| data.clusters[*q] == c).collect();
                mine.sort();
                let others: Vec<&String> = data.candidates.iter().filter(|q| data.clusters[*q] != c).collect();
                let top: BTreeSet<&String> = mine.into_iter().chain(others).take(k).collect();
                let e = per.entry(s).or_default();
                e.1 += 1;
                if top.contains(p) {
                    e.0 += 1;
                }
            }
            let expect = per.values().map(|(h, r)| *h as f64 / *r as f64).sum::<f64>() / per.len() as f64;
            assert!((got - expect).abs() < 1e-12, "k = {k}");
        }
    }

    #[test]
    fn reduction_of_generated_data_shrinks_edges() {
        let data = generate(&small()).unwrap();
        let cp = data.edges.iter().filter(|e| e.kind == EdgeType::CustomerProduct).count() as u64;
        for t in 2..=3 {
            let (g, report) = reduce_pipeline(&data.nodes, &data.edges, &ReductionConfig::new(t, data.candidates.clone())).unwrap();
            assert!(report.filtered_product_product_edges < cp);
            assert!(report.training_products >= report.candidate_products);
            assert_eq!(g.candidates().len(), data.candidates.len());
        }
    }

    #[test]
    fn infeasible_profiles_are_rejected() {
        let cfg = SynthConfig {
            sellers_per_cluster: 5,
            ..small()
        };
        assert!(generate(&cfg).is_err());
        let cfg = SynthConfig {
            profile: [0.5, 0.5, 0.5],
            ..small()
        };
        assert!(generate(&cfg).is_err());
        let cfg = SynthConfig {
            candidates: 1000,
            ..small()
        };
        assert!(generate(&cfg).is_err());
    }
}
