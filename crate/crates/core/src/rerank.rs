//! Stage-II reranking: estimate `⟨k_i, q⟩` from 4-bit direction codes and the
//! cached weights, keep the best `k`.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::coarse::CandidateSet;
use crate::metadata::MetadataTable;
use crate::quantizer::{dequantize, KeyMetadata, MagnitudeLevels};
use crate::transform::{dot, TransformedVector};

/// `‖q‖ · Σ_b w_b ⟨v_b, q̃_b⟩` for one key, dequantizing each code. This is the
/// unfused reference path.
pub fn estimate_ip(q: &TransformedVector, meta: &KeyMetadata, levels: &MagnitudeLevels) -> f32 {
    let m = q.subspace_dim();
    let sum: f32 = (0..q.subspace_count())
        .map(|b| {
            let qb = q.subvector(b);
            let v = match &meta.exact_directions {
                Some(dirs) => dirs[b * m..(b + 1) * m].to_vec(),
                None => dequantize(meta.codes[b], m, levels),
            };
            meta.weights[b] * dot(&v, &qb)
        })
        .sum();
    q.original_norm * sum
}

/// Byte-indexed partial products for one query: for each subspace and each
/// code byte (two coordinates), the signed level × query sum for all 256 byte
/// values. Also a query-independent table of squared level sums for the
/// renormalization of `v`.
#[derive(Debug, Clone)]
pub struct QueryLut {
    subspace_count: usize,
    bytes_per_code: usize,
    dots: Vec<f32>,
    norms: Vec<f32>,
    query_norm: f32,
}

impl QueryLut {
    pub fn new(q: &TransformedVector, levels: &MagnitudeLevels) -> Self {
        let m = q.subspace_dim();
        assert!(m.is_multiple_of(2), "subspace dimension must be even for byte lookup");
        let bytes_per_code = m / 2;
        let signed = |nibble: u8| -> f32 {
            let mag = levels.levels()[(nibble & 0x7) as usize];
            if nibble & 0x8 != 0 {
                -mag
            } else {
                mag
            }
        };
        let mut dots = Vec::with_capacity(q.subspace_count() * bytes_per_code * 256);
        for b in 0..q.subspace_count() {
            let qb = q.subvector(b);
            for p in 0..bytes_per_code {
                let (q0, q1) = (qb[2 * p], qb[2 * p + 1]);
                for byte in 0..=255u8 {
                    dots.push(signed(byte & 0xf) * q0 + signed(byte >> 4) * q1);
                }
            }
        }
        let norms = (0..=255u8)
            .map(|byte| {
                let (a, b) = (signed(byte & 0xf), signed(byte >> 4));
                a * a + b * b
            })
            .collect();
        Self {
            subspace_count: q.subspace_count(),
            bytes_per_code,
            dots,
            norms,
            query_norm: q.original_norm,
        }
    }

    pub fn estimate(&self, table: &MetadataTable, i: usize) -> f32 {
        let codes = table.codes(i);
        let weights = table.weights(i);
        let mut sum = 0f32;
        for b in 0..self.subspace_count {
            let bytes = codes[b].bytes();
            let base = b * self.bytes_per_code * 256;
            let (mut d, mut n2) = (0f32, 0f32);
            for (p, &byte) in bytes[..self.bytes_per_code].iter().enumerate() {
                d += self.dots[base + p * 256 + byte as usize];
                n2 += self.norms[byte as usize];
            }
            if n2 > 0.0 {
                sum += weights[b] * d / n2.sqrt();
            }
        }
        self.query_norm * sum
    }
}

/// Estimator bound to one query, dispatching on the table's codec.
pub enum Scorer<'a> {
    Lut(QueryLut),
    Exact(&'a TransformedVector),
}

impl<'a> Scorer<'a> {
    pub fn new(q: &'a TransformedVector, table: &MetadataTable, levels: &MagnitudeLevels) -> Self {
        if table.is_exact() {
            Scorer::Exact(q)
        } else {
            Scorer::Lut(QueryLut::new(q, levels))
        }
    }

    pub fn estimate(&self, table: &MetadataTable, i: usize) -> f32 {
        match self {
            Scorer::Lut(lut) => lut.estimate(table, i),
            Scorer::Exact(q) => {
                let dirs = table.exact_directions(i).expect("exact table");
                let m = q.subspace_dim();
                let w = table.weights(i);
                let sum: f32 = (0..q.subspace_count())
                    .map(|b| w[b] * q.radii[b] * dot(&dirs[b * m..(b + 1) * m], q.direction(b)))
                    .sum();
                q.original_norm * sum
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ranked {
    estimate: f32,
    index: u32,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    /// Greater is better: higher estimate, then more recent index.
    fn cmp(&self, other: &Self) -> Ordering {
        self.estimate.total_cmp(&other.estimate).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankResult {
    /// Selected indices, best first.
    pub indices: Vec<u32>,
    pub estimates: Vec<f32>,
    /// Fewer candidates than `k` were available.
    pub short: bool,
}

/// Keeps the `k` candidates with the largest estimate in a bounded min-heap;
/// ties prefer larger indices. Estimates are produced on the fly and never
/// materialized for the whole pool.
pub fn rerank_topk(
    q: &TransformedVector,
    candidates: &CandidateSet,
    table: &MetadataTable,
    levels: &MagnitudeLevels,
    k: usize,
) -> RerankResult {
    if candidates.is_empty() || k == 0 {
        return RerankResult { indices: Vec::new(), estimates: Vec::new(), short: k > 0 };
    }
    let scorer = Scorer::new(q, table, levels);
    let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
    for &i in &candidates.indices {
        let r = Ranked { estimate: scorer.estimate(table, i as usize), index: i };
        if heap.len() < k {
            heap.push(Reverse(r));
        } else if let Some(Reverse(worst)) = heap.peek() {
            if r > *worst {
                heap.pop();
                heap.push(Reverse(r));
            }
        }
    }
    let mut best: Vec<Ranked> = heap.into_iter().map(|Reverse(r)| r).collect();
    best.sort_by(|a, b| b.cmp(a));
    RerankResult {
        short: best.len() < k,
        indices: best.iter().map(|r| r.index).collect(),
        estimates: best.iter().map(|r| r.estimate).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::AnalyticCodebook;
    use crate::config::{Codec, RetrievalConfig};
    use crate::quantizer::KeyEncoder;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
        (0..d).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn exact_dot(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
    }

    fn build(cfg: &RetrievalConfig, keys: &[Vec<f32>]) -> (KeyEncoder, MetadataTable) {
        let enc = KeyEncoder::new(cfg);
        let cb = AnalyticCodebook::new(cfg.subspace_dim());
        let mut table = MetadataTable::new(cfg.subspace_count, cfg.subspace_dim(), cfg.codec == Codec::Exact);
        for k in keys {
            table.push(enc.build_metadata(k, &cb).unwrap());
        }
        (enc, table)
    }

    #[test]
    fn exact_codec_estimate_is_exact_dot() {
        let cfg = RetrievalConfig { codec: Codec::Exact, ..RetrievalConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let keys: Vec<Vec<f32>> = (0..50).map(|_| gaussian(&mut rng, 128)).collect();
        let (enc, table) = build(&cfg, &keys);
        let q = gaussian(&mut rng, 128);
        let tq = enc.transformer().transform(&q).unwrap();
        let scorer = Scorer::new(&tq, &table, enc.levels());
        for (i, k) in keys.iter().enumerate() {
            let want = exact_dot(k, &q);
            let got = scorer.estimate(&table, i) as f64;
            assert!((got - want).abs() < 1e-4 * (1.0 + want.abs()), "{got} vs {want}");
            let reference = estimate_ip(&tq, &table.row(i), enc.levels()) as f64;
            assert!((reference - want).abs() < 1e-4 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn lut_estimate_matches_unfused_reference() {
        let cfg = RetrievalConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let keys: Vec<Vec<f32>> = (0..200).map(|_| gaussian(&mut rng, 128)).collect();
        let (enc, table) = build(&cfg, &keys);
        for _ in 0..10 {
            let tq = enc.transformer().transform(&gaussian(&mut rng, 128)).unwrap();
            let lut = QueryLut::new(&tq, enc.levels());
            for i in 0..keys.len() {
                let fused = lut.estimate(&table, i);
                let reference = estimate_ip(&tq, &table.row(i), enc.levels());
                assert!((fused - reference).abs() < 1e-5 * (1.0 + reference.abs()) * 10.0, "{fused} vs {reference}");
            }
        }
    }

    #[test]
    fn zero_weights_estimate_zero() {
        let cfg = RetrievalConfig::default();
        let enc = KeyEncoder::new(&cfg);
        let cb = AnalyticCodebook::new(8);
        let mut table = MetadataTable::new(16, 8, false);
        table.push(enc.build_metadata_lenient(&[0.0; 128], &cb).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tq = enc.transformer().transform(&gaussian(&mut rng, 128)).unwrap();
        assert_eq!(QueryLut::new(&tq, enc.levels()).estimate(&table, 0), 0.0);
    }

    #[test]
    fn alpha_correction_reduces_error() {
        let cfg = RetrievalConfig::default();
        let no_alpha = RetrievalConfig { alpha_correction: false, ..cfg.clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let keys: Vec<Vec<f32>> = (0..2000).map(|_| gaussian(&mut rng, 128)).collect();
        let (enc, with) = build(&cfg, &keys);
        let (_, without) = build(&no_alpha, &keys);
        let (mut err_with, mut err_without) = (0f64, 0f64);
        for (i, k) in keys.iter().enumerate() {
            // Queries aligned with their key: the regime where shrinkage bites.
            let q: Vec<f32> = k.iter().map(|x| x + 0.5 * Distribution::<f32>::sample(&StandardNormal, &mut rng)).collect();
            let tq = enc.transformer().transform(&q).unwrap();
            let lut = QueryLut::new(&tq, enc.levels());
            let exact = exact_dot(k, &q);
            err_with += (lut.estimate(&with, i) as f64 - exact).abs();
            err_without += (lut.estimate(&without, i) as f64 - exact).abs();
        }
        assert!(err_with < err_without, "{err_with} vs {err_without}");
    }

    #[test]
    fn rerank_with_exact_codes_equals_brute_force() {
        let cfg = RetrievalConfig { codec: Codec::Exact, ..RetrievalConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let keys: Vec<Vec<f32>> = (0..1000).map(|_| gaussian(&mut rng, 128)).collect();
        let (enc, table) = build(&cfg, &keys);
        let q = gaussian(&mut rng, 128);
        let tq = enc.transformer().transform(&q).unwrap();
        let got = rerank_topk(&tq, &CandidateSet::all(1000), &table, enc.levels(), 20);
        let mut oracle: Vec<(f64, usize)> = keys.iter().enumerate().map(|(i, k)| (exact_dot(k, &q), i)).collect();
        oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
        let want: Vec<u32> = oracle[..20].iter().map(|&(_, i)| i as u32).collect();
        assert_eq!(got.indices, want);
        assert!(!got.short);
    }

    #[test]
    fn rerank_returns_all_sorted_when_k_equals_pool() {
        let cfg = RetrievalConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let keys: Vec<Vec<f32>> = (0..30).map(|_| gaussian(&mut rng, 128)).collect();
        let (enc, table) = build(&cfg, &keys);
        let tq = enc.transformer().transform(&gaussian(&mut rng, 128)).unwrap();
        let pool = CandidateSet { indices: vec![1, 4, 9, 20, 29], threshold: 0, threshold_bucket_size: 0 };
        let got = rerank_topk(&tq, &pool, &table, enc.levels(), 5);
        let mut sorted = got.indices.clone();
        sorted.sort();
        assert_eq!(sorted, pool.indices);
        assert!(got.estimates.windows(2).all(|w| w[0] >= w[1]));

        let got = rerank_topk(&tq, &pool, &table, enc.levels(), 8);
        assert!(got.short);
        assert_eq!(got.indices.len(), 5);
    }

    #[test]
    fn selection_is_optimal_against_exhaustive_subsets() {
        let cfg = RetrievalConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let keys: Vec<Vec<f32>> = (0..20).map(|_| gaussian(&mut rng, 128)).collect();
        let (enc, table) = build(&cfg, &keys);
        let tq = enc.transformer().transform(&gaussian(&mut rng, 128)).unwrap();
        let lut = QueryLut::new(&tq, enc.levels());
        let est: Vec<f32> = (0..20).map(|i| lut.estimate(&table, i)).collect();
        for k in 1..=5 {
            let got = rerank_topk(&tq, &CandidateSet::all(20), &table, enc.levels(), k);
            let got_sum: f32 = got.indices.iter().map(|&i| est[i as usize]).sum();
            let mut best = f32::NEG_INFINITY;
            for mask in 0u32..(1 << 20) {
                if mask.count_ones() as usize == k {
                    let s: f32 = (0..20).filter(|i| mask & (1 << i) != 0).map(|i| est[i]).sum();
                    best = best.max(s);
                }
            }
            assert!((got_sum - best).abs() < 1e-4, "k={k}");
        }
    }

    #[test]
    fn permuting_candidates_does_not_change_selection() {
        let cfg = RetrievalConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let keys: Vec<Vec<f32>> = (0..300).map(|_| gaussian(&mut rng, 128)).collect();
        let (enc, table) = build(&cfg, &keys);
        let tq = enc.transformer().transform(&gaussian(&mut rng, 128)).unwrap();
        let forward = CandidateSet::all(300);
        let mut reversed = forward.clone();
        reversed.indices.reverse();
        let a = rerank_topk(&tq, &forward, &table, enc.levels(), 25);
        let b = rerank_topk(&tq, &reversed, &table, enc.levels(), 25);
        assert_eq!(a.indices, b.indices);
    }
}
