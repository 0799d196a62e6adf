//! Exact and candidate-restricted softmax attention, the brute-force top-k
//! oracle, and recall.
//!
//! Scores are scaled by `1/√D` in both the exact and restricted forms.

use std::collections::HashSet;

use crate::error::{Error, Result};

/// Row-major keys and values for a set of tokens.
#[derive(Debug, Clone, Copy)]
pub struct KvView<'a> {
    pub keys: &'a [f32],
    pub values: &'a [f32],
    pub dim: usize,
    pub value_dim: usize,
}

impl<'a> KvView<'a> {
    pub fn new(keys: &'a [f32], values: &'a [f32], dim: usize, value_dim: usize) -> Self {
        assert_eq!(keys.len() % dim, 0);
        assert_eq!(keys.len() / dim, values.len() / value_dim);
        Self { keys, values, dim, value_dim }
    }

    pub fn len(&self) -> usize {
        self.keys.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn key(&self, i: usize) -> &'a [f32] {
        &self.keys[i * self.dim..(i + 1) * self.dim]
    }

    pub fn value(&self, i: usize) -> &'a [f32] {
        &self.values[i * self.value_dim..(i + 1) * self.value_dim]
    }
}

fn dot64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

/// Softmax weights over `scores` (already temperature-scaled), max-subtracted.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Attention output of `q` over the tokens at `indices` of `kv`.
pub fn approx_attention(q: &[f32], indices: &[usize], kv: &KvView<'_>) -> Result<Vec<f32>> {
    if indices.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let scale = 1.0 / (kv.dim as f64).sqrt();
    let scores: Vec<f64> = indices.iter().map(|&i| scale * dot64(q, kv.key(i))).collect();
    let weights = softmax(&scores);
    let mut out = vec![0f64; kv.value_dim];
    for (&i, w) in indices.iter().zip(&weights) {
        for (o, v) in out.iter_mut().zip(kv.value(i)) {
            *o += w * *v as f64;
        }
    }
    Ok(out.into_iter().map(|v| v as f32).collect())
}

pub fn full_attention(q: &[f32], kv: &KvView<'_>) -> Result<Vec<f32>> {
    let all: Vec<usize> = (0..kv.len()).collect();
    approx_attention(q, &all, kv)
}

/// Exact top-`k` indices by `⟨k_i, q⟩` in double precision, best first; equal
/// scores prefer the larger index.
pub fn brute_topk(q: &[f32], keys: &[f32], dim: usize, k: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = keys
        .chunks_exact(dim)
        .enumerate()
        .map(|(i, key)| (dot64(q, key), i))
        .collect();
    let better = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1));
    let k = k.min(scored.len());
    if k == 0 {
        return Vec::new();
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, better);
        scored.truncate(k);
    }
    scored.sort_by(better);
    scored.into_iter().map(|(_, i)| i).collect()
}

/// `|predicted ∩ oracle| / |oracle|`.
pub fn recall_at_k<T: Eq + std::hash::Hash + Copy>(predicted: &[T], oracle: &[T]) -> f64 {
    if oracle.is_empty() {
        return 1.0;
    }
    let truth: HashSet<T> = oracle.iter().copied().collect();
    let hits = predicted.iter().collect::<HashSet<_>>().into_iter().filter(|p| truth.contains(p)).count();
    hits as f64 / oracle.len() as f64
}

/// `‖a − b‖ / ‖b‖`.
pub fn relative_l2(a: &[f32], b: &[f32]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum();
    let den: f64 = b.iter().map(|y| (*y as f64).powi(2)).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn single_key_returns_its_value() {
        let kv = KvView::new(&[5.0, -3.0], &[1.0, 2.0, 3.0], 2, 3);
        assert_eq!(full_attention(&[1.0, 1.0], &kv).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn duplicate_keys_match_single_key() {
        let kv1 = KvView::new(&[0.3, 0.1], &[4.0, -1.0], 2, 2);
        let kv2 = KvView::new(&[0.3, 0.1, 0.3, 0.1], &[4.0, -1.0, 4.0, -1.0], 2, 2);
        let q = [0.7, 0.2];
        let a = full_attention(&q, &kv1).unwrap();
        let b = full_attention(&q, &kv2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn matches_naive_double_precision_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (n, d) = (1000, 64);
        let keys = gaussian(&mut rng, n * d);
        let values = gaussian(&mut rng, n * d);
        let q = gaussian(&mut rng, d);
        let kv = KvView::new(&keys, &values, d, d);
        let got = full_attention(&q, &kv).unwrap();
        // Naive two-pass reference without max subtraction.
        let scale = 1.0 / (d as f64).sqrt();
        let exps: Vec<f64> = (0..n).map(|i| (scale * dot64(&q, kv.key(i))).exp()).collect();
        let z: f64 = exps.iter().sum();
        for j in 0..d {
            let want: f64 = (0..n).map(|i| exps[i] / z * kv.value(i)[j] as f64).sum();
            assert!((got[j] as f64 - want).abs() < 1e-5);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let w = softmax(&[1000.0, 999.0, -5.0, 0.0]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn restricted_to_all_equals_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let keys = gaussian(&mut rng, 200 * 16);
        let values = gaussian(&mut rng, 200 * 8);
        let q = gaussian(&mut rng, 16);
        let kv = KvView::new(&keys, &values, 16, 8);
        let all: Vec<usize> = (0..200).collect();
        assert_eq!(approx_attention(&q, &all, &kv).unwrap(), full_attention(&q, &kv).unwrap());
        assert_eq!(approx_attention(&q, &[], &kv), Err(Error::EmptyCandidates));
    }

    #[test]
    fn peaked_distribution_is_dominated_by_argmax() {
        let d = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut keys = gaussian(&mut rng, 100 * d);
        keys.iter_mut().for_each(|k| *k *= 0.01);
        let q: Vec<f32> = vec![1.0; d];
        for v in &mut keys[42 * d..43 * d] {
            *v = 20.0;
        }
        let values = gaussian(&mut rng, 100 * d);
        let kv = KvView::new(&keys, &values, d, d);
        let out = approx_attention(&q, &[42], &kv).unwrap();
        assert_eq!(out, kv.value(42));
        let full = full_attention(&q, &kv).unwrap();
        assert!(relative_l2(&full, kv.value(42)) < 1e-6);
    }

    #[test]
    fn top_candidates_covering_most_mass_approximate_full() {
        // Strongly peaked scores: a few keys aligned with q carry ≥ 99% mass.
        let d = 32;
        let n = 2000;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = gaussian(&mut rng, d);
        let mut keys = gaussian(&mut rng, n * d);
        for i in 0..20 {
            for (k, qv) in keys[i * 97 * d % (n * d)..].iter_mut().zip(&q).take(d) {
                *k = 6.0 * qv;
            }
        }
        let values = gaussian(&mut rng, n * d);
        let kv = KvView::new(&keys, &values, d, d);
        let scale = 1.0 / (d as f64).sqrt();
        let scores: Vec<f64> = (0..n).map(|i| scale * dot64(&q, kv.key(i))).collect();
        let w = softmax(&scores);
        let top = brute_topk(&q, &keys, d, 50);
        let mass: f64 = top.iter().map(|&i| w[i]).sum();
        assert!(mass >= 0.99, "mass {mass}");
        let approx = approx_attention(&q, &top, &kv).unwrap();
        let full = full_attention(&q, &kv).unwrap();
        assert!(relative_l2(&approx, &full) < 0.02);
    }

    #[test]
    fn growing_candidates_in_score_order_never_hurts() {
        let d = 16;
        let n = 300;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let keys: Vec<f32> = gaussian(&mut rng, n * d).iter().map(|x| x * 2.0).collect();
        let values = gaussian(&mut rng, n * d);
        let q = gaussian(&mut rng, d);
        let kv = KvView::new(&keys, &values, d, d);
        let order = brute_topk(&q, &keys, d, n);
        let full = full_attention(&q, &kv).unwrap();
        let mut prev = f64::INFINITY;
        for size in [1usize, 5, 20, 60, 150, 300] {
            let err = relative_l2(&approx_attention(&q, &order[..size], &kv).unwrap(), &full);
            assert!(err <= prev + 1e-9, "size {size}: {err} > {prev}");
            prev = err;
        }
    }

    #[test]
    fn brute_topk_examples() {
        let q = [1.0f32, 2.0];
        let keys: Vec<f32> = [0.5f32, 3.0, 1.0, 2.0, 0.1].iter().flat_map(|s| [s * 1.0, s * 2.0]).collect();
        assert_eq!(brute_topk(&q, &keys, 2, 2), vec![1, 3]);
        let mut all = brute_topk(&q, &keys, 2, 5);
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        // ties prefer recency
        assert_eq!(brute_topk(&[1.0], &[1.0, 1.0, 1.0], 1, 2), vec![2, 1]);
    }

    #[test]
    fn brute_topk_matches_full_sort_and_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = 32;
        let n = 10_000;
        let keys = gaussian(&mut rng, n * d);
        let q = gaussian(&mut rng, d);
        let got = brute_topk(&q, &keys, d, 100);
        let mut all: Vec<(f64, usize)> = (0..n).map(|i| (dot64(&q, &keys[i * d..(i + 1) * d]), i)).collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let want: Vec<usize> = all[..100].iter().map(|x| x.1).collect();
        assert_eq!(got, want);
        let scaled: Vec<f32> = q.iter().map(|x| x * 3.5).collect();
        assert_eq!(brute_topk(&scaled, &keys, d, 100), got);
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&[1, 2, 3], &[3, 2, 1]), 1.0);
        assert_eq!(recall_at_k(&[4, 5], &[1, 2]), 0.0);
        let pred: Vec<u32> = (0..100).collect();
        let oracle: Vec<u32> = (50..150).collect();
        assert_eq!(recall_at_k(&pred, &oracle), 0.5);
    }
}
