//! Seller-anchored in-batch contrastive loss and a margin-triplet stand-in.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Contrastive,
    Triplet,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Contrastive => "contrastive",
            LossKind::Triplet => "triplet",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "contrastive" => Some(LossKind::Contrastive),
            "triplet" => Some(LossKind::Triplet),
            _ => None,
        }
    }
}

/// For seller `i`, the logits are `e_si . [E_p; E_s]^T / tau`; the target is
/// product `i` and the seller's own column is left out, so the softmax runs
/// over the positive plus `2(N - 1)` in-batch negatives. Returns the mean over
/// sellers. With `symmetric`, the product-anchored mirror is averaged in.
pub fn contrastive_loss(tape: &mut Tape, sellers: Var, products: Var, tau: f64, symmetric: bool) -> Result<Var> {
    let n = check_pair(tape, sellers, products)?;
    if tau <= 0.0 {
        return Err(Error::config(format!("temperature must be positive, got {tau}")));
    }
    let all = tape.concat_rows(&[products, sellers])?;
    let all_t = tape.transpose(all)?;
    let logits = tape.matmul(sellers, all_t)?;
    let logits = tape.scale(logits, 1.0 / tau)?;
    let targets: Vec<usize> = (0..n).collect();
    let excluded: Vec<Option<usize>> = (0..n).map(|i| Some(n + i)).collect();
    let loss = tape.masked_cross_entropy(logits, &targets, &excluded)?;
    if !symmetric {
        return Ok(loss);
    }
    let logits = tape.matmul(products, all_t)?;
    let logits = tape.scale(logits, 1.0 / tau)?;
    let targets: Vec<usize> = (0..n).map(|i| n + i).collect();
    let excluded: Vec<Option<usize>> = (0..n).map(Some).collect();
    let mirror = tape.masked_cross_entropy(logits, &targets, &excluded)?;
    let both = tape.add(loss, mirror)?;
    Ok(tape.scale(both, 0.5)?)
}

/// `mean_i max(0, margin - e_si . e_pi + e_si . e_p(i+1 mod N))`: each seller's
/// negative is the next pair's product.
pub fn triplet_loss(tape: &mut Tape, sellers: Var, products: Var, margin: f64) -> Result<Var> {
    let n = check_pair(tape, sellers, products)?;
    let shifted: Arc<[usize]> = (0..n).map(|i| (i + 1) % n).collect();
    let negatives = tape.gather_rows(products, shifted)?;
    let pos = tape.row_dot(sellers, products)?;
    let neg = tape.row_dot(sellers, negatives)?;
    let gap = tape.sub(neg, pos)?;
    let gap = tape.add_const(gap, margin)?;
    let hinge = tape.relu(gap)?;
    Ok(tape.mean(hinge)?)
}

fn check_pair(tape: &Tape, sellers: Var, products: Var) -> Result<usize> {
    let (s, p) = (tape.value(sellers).shape(), tape.value(products).shape());
    if s != p {
        return Err(Error::data(format!("seller rows {s:?} and product rows {p:?} differ in shape")));
    }
    if s.0 == 0 {
        return Err(Error::data("empty batch"));
    }
    Ok(s.0)
}

/// Value of [`contrastive_loss`] on plain tensors.
pub fn contrastive_loss_value(sellers: &Tensor, products: &Tensor, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(sellers.clone());
    let p = tape.constant(products.clone());
    let loss = contrastive_loss(&mut tape, s, p, tau, false)?;
    Ok(tape.value(loss).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Direct evaluation of the per-anchor formula.
    fn scalar_loss(s: &Tensor, p: &Tensor, tau: f64) -> f64 {
        let n = s.rows();
        let mut total = 0.0;
        for i in 0..n {
            let pos = (dot(s.row(i), p.row(i)) / tau).exp();
            let mut denom = 0.0;
            for k in 0..n {
                denom += (dot(s.row(i), p.row(k)) / tau).exp();
                if k != i {
                    denom += (dot(s.row(i), s.row(k)) / tau).exp();
                }
            }
            total += -(pos / denom).ln();
        }
        total / n as f64
    }

    #[test]
    fn singleton_batch_is_zero() {
        let s = Tensor::from_rows(&[vec![0.6, 0.8]]).unwrap();
        let p = Tensor::from_rows(&[vec![-0.8, 0.6]]).unwrap();
        assert_eq!(contrastive_loss_value(&s, &p, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn identical_embeddings_give_log_of_denominator_size() {
        for n in [1usize, 2, 5, 64] {
            let row = vec![0.6, 0.8];
            let s = Tensor::from_rows(&vec![row.clone(); n]).unwrap();
            let loss = contrastive_loss_value(&s, &s, 0.1).unwrap();
            assert!((loss - ((2 * n - 1) as f64).ln()).abs() < 1e-9, "n = {n}: {loss}");
        }
    }

    #[test]
    fn two_pair_batch_matches_scalar_formula() {
        let s = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let p = Tensor::from_rows(&[vec![0.6, 0.8], vec![-0.8, 0.6]]).unwrap();
        let got = contrastive_loss_value(&s, &p, 0.1).unwrap();
        // anchor 0: logits p0 = 6, p1 = -8, s1 = 0; anchor 1: p0 = 8, p1 = 6, s0 = 0
        let l0 = -(6f64.exp() / (6f64.exp() + (-8f64).exp() + 1.0)).ln();
        let l1 = -(6f64.exp() / (8f64.exp() + 6f64.exp() + 1.0)).ln();
        assert!((got - (l0 + l1) / 2.0).abs() < 1e-12);
        assert!((got - scalar_loss(&s, &p, 0.1)).abs() < 1e-12);
    }

    #[test]
    fn random_batches_match_scalar_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = rng.gen_range(1..8);
            let s = random(n, 3, &mut rng);
            let p = random(n, 3, &mut rng);
            let tau = rng.gen_range(0.1..1.0);
            assert!((contrastive_loss_value(&s, &p, tau).unwrap() - scalar_loss(&s, &p, tau)).abs() < 1e-10);
        }
    }

    #[test]
    fn errors_on_bad_input() {
        assert!(contrastive_loss_value(&Tensor::zeros(0, 2), &Tensor::zeros(0, 2), 0.1).is_err());
        assert!(contrastive_loss_value(&Tensor::zeros(2, 2), &Tensor::zeros(3, 2), 0.1).is_err());
        assert!(contrastive_loss_value(&Tensor::zeros(2, 2), &Tensor::zeros(2, 2), 0.0).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = [random(4, 3, &mut rng), random(4, 3, &mut rng)];
        for symmetric in [false, true] {
            let report = check_gradients(&params, 1e-5, |tape, v| contrastive_loss(tape, v[0], v[1], 0.5, symmetric)).unwrap();
            assert!(report.passes(1e-6), "{report:?}");
        }
        let report = check_gradients(&params, 1e-5, |tape, v| triplet_loss(tape, v[0], v[1], 2.0)).unwrap();
        assert!(report.passes(1e-6), "{report:?}");
    }

    #[test]
    fn triplet_hand_value() {
        let s = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let p = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let mut tape = Tape::new();
        let (sv, pv) = (tape.constant(s), tape.constant(p));
        let loss = triplet_loss(&mut tape, sv, pv, 0.5).unwrap();
        // seller 0: 0.5 - 1 + 1 = 0.5; seller 1: 0.5 - 0 + 0 = 0.5
        assert!((tape.value(loss).item() - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn non_negative_and_permutation_invariant(seed in any::<u64>(), n in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random(n, 4, &mut rng);
            let p = random(n, 4, &mut rng);
            let loss = contrastive_loss_value(&s, &p, 0.1).unwrap();
            prop_assert!(loss >= -1e-9);
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let ps = s.select_rows(&perm).unwrap();
            let pp = p.select_rows(&perm).unwrap();
            prop_assert!((contrastive_loss_value(&ps, &pp, 0.1).unwrap() - loss).abs() < 1e-10);
        }

        #[test]
        fn rotation_invariant(seed in any::<u64>(), n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random(n, 3, &mut rng);
            let p = random(n, 3, &mut rng);
            // random orthogonal matrix from Gram-Schmidt
            let mut q: Vec<Vec<f64>> = Vec::new();
            while q.len() < 3 {
                let mut v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                for u in &q {
                    let c = dot(&v, u);
                    for j in 0..3 {
                        v[j] -= c * u[j];
                    }
                }
                let norm = dot(&v, &v).sqrt();
                if norm > 1e-3 {
                    q.push(v.iter().map(|x| x / norm).collect());
                }
            }
            let q = Tensor::from_rows(&q).unwrap();
            let base = contrastive_loss_value(&s, &p, 0.1).unwrap();
            let rotated = contrastive_loss_value(&s.matmul(&q).unwrap(), &p.matmul(&q).unwrap(), 0.1).unwrap();
            prop_assert!((base - rotated).abs() < 1e-8);
        }
    }
}
