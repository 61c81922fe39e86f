//! Seeded edge partitioning and epoch-wise minibatch sampling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Pair = (usize, usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeSplit {
    pub train: Vec<Pair>,
    pub validation: Vec<Pair>,
    pub test: Vec<Pair>,
}

/// Shuffles `edges` with `seed` and cuts it into `round(n r_train)`,
/// `round(n r_val)` and the remainder.
pub fn split_edges(edges: &[Pair], ratios: (f64, f64, f64), seed: u64) -> Result<EdgeSplit> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !r.is_finite() || *r <= 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split ratios must be positive and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    let n = edges.len();
    let n_train = (n as f64 * a).round() as usize;
    let n_val = (n as f64 * b).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::data(format!(
            "{n} seller-product edges are too few to populate all three splits"
        )));
    }
    let mut shuffled = edges.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(n_train + n_val);
    let validation = shuffled.split_off(n_train);
    Ok(EdgeSplit {
        train: shuffled,
        validation,
        test,
    })
}

/// The first `n` edges of a fresh shuffle: `n` distinct training edges.
pub fn sample_minibatch(train: &[Pair], n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Pair>> {
    if n == 0 || n > train.len() {
        return Err(Error::config(format!(
            "batch size {n} must be between 1 and the {} training edges",
            train.len()
        )));
    }
    Ok(train.choose_multiple(rng, n).copied().collect())
}

/// One epoch: a shuffled pass over `train` cut into batches of `n`. The last
/// batch holds the remainder.
pub fn epoch_batches(train: &[Pair], n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<Pair>>> {
    if n == 0 || n > train.len() {
        return Err(Error::config(format!(
            "batch size {n} must be between 1 and the {} training edges",
            train.len()
        )));
    }
    let mut order = train.to_vec();
    order.shuffle(rng);
    Ok(order.chunks(n).map(<[Pair]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn edges(n: usize) -> Vec<Pair> {
        (0..n).map(|i| (i % 7, 100 + i)).collect()
    }

    #[test]
    fn ten_edges_split_eight_one_one() {
        let s = split_edges(&edges(10), (0.8, 0.1, 0.1), 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, split_edges(&edges(10), (0.8, 0.1, 0.1), 3).unwrap());
        let all: BTreeSet<Pair> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        assert_eq!(all, edges(10).into_iter().collect());
    }

    #[test]
    fn empirical_ratios_track_targets() {
        let e = edges(1000);
        for seed in 0..100 {
            let s = split_edges(&e, (0.7, 0.2, 0.1), seed).unwrap();
            assert!((s.train.len() as f64 / 1000.0 - 0.7).abs() <= 0.02);
            assert!((s.validation.len() as f64 / 1000.0 - 0.2).abs() <= 0.02);
            assert!((s.test.len() as f64 / 1000.0 - 0.1).abs() <= 0.02);
        }
    }

    #[test]
    fn split_errors() {
        assert!(split_edges(&edges(2), (0.8, 0.1, 0.1), 0).is_err());
        assert!(split_edges(&edges(10), (0.8, 0.3, 0.1), 0).is_err());
        assert!(split_edges(&edges(10), (1.0, 0.0, 0.0), 0).is_err());
    }

    #[test]
    fn full_batch_is_a_permutation() {
        let e = edges(20);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = sample_minibatch(&e, 20, &mut rng).unwrap();
        b.sort();
        let mut expect = e.clone();
        expect.sort();
        assert_eq!(b, expect);
        assert!(sample_minibatch(&e, 21, &mut rng).is_err());
        assert!(sample_minibatch(&e, 0, &mut rng).is_err());
    }

    #[test]
    fn batches_are_reproducible() {
        let e = edges(50);
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            assert_eq!(epoch_batches(&e, 8, &mut a).unwrap(), epoch_batches(&e, 8, &mut b).unwrap());
        }
        let batches = epoch_batches(&e, 8, &mut a).unwrap();
        assert_eq!(batches.len(), 7);
        assert_eq!(batches[6].len(), 2);
        let mut flat: Vec<Pair> = batches.concat();
        flat.sort();
        let mut expect = e.clone();
        expect.sort();
        assert_eq!(flat, expect);
    }

    #[test]
    fn batch_membership_is_uniform() {
        // each edge lands in the first batch with probability n / |train|
        let e = edges(40);
        let n = 10;
        let epochs = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = vec![0usize; e.len()];
        for _ in 0..epochs {
            for (_, p) in &epoch_batches(&e, n, &mut rng).unwrap()[0] {
                counts[p - 100] += 1;
            }
        }
        let prob = n as f64 / e.len() as f64;
        let mean = epochs as f64 * prob;
        let sd = (epochs as f64 * prob * (1.0 - prob)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sd + 1.0, "{c} vs {mean} +- {sd}");
        }
    }
}
