//! Learned-centroid baseline: spherical k-means per subspace, fitted once on
//! the prefill key directions and frozen afterwards.

use driftkv::codebook::probe_order;
use driftkv::transform::Transformer;
use driftkv::{CentroidId, DirectionCodebook, ProbeList, Result};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub const LLOYD_ITERATIONS: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansCodebook {
    subspace_dim: usize,
    k: usize,
    /// Per subspace, `k × m` unit centroids.
    centroids: Vec<Vec<f32>>,
}

impl KMeansCodebook {
    /// Fits `k` centroids per subspace on the transformed directions of `keys`.
    pub fn fit(transformer: &Transformer, keys: &[f32], dim: usize, k: usize, seed: u64) -> Result<Self> {
        let b_count = transformer.subspace_count();
        let tvs = keys
            .chunks_exact(dim)
            .map(|key| transformer.transform(key))
            .collect::<Result<Vec<_>>>()?;
        let m = tvs.first().map_or(transformer.rotation().output_dim() / b_count, |t| t.subspace_dim());
        let centroids = (0..b_count)
            .into_par_iter()
            .map(|b| {
                let points: Vec<f32> = tvs.iter().flat_map(|t| t.direction(b).iter().copied()).collect();
                spherical_kmeans(&points, m, k, seed.wrapping_add(b as u64))
            })
            .collect();
        Ok(Self { subspace_dim: m, k, centroids })
    }

    pub fn centroids(&self, subspace: usize) -> &[f32] {
        &self.centroids[subspace]
    }

    fn scores(&self, subspace: usize, x: &[f32]) -> impl Iterator<Item = f32> + '_ {
        let x = x.to_vec();
        self.centroids[subspace]
            .chunks_exact(self.subspace_dim)
            .map(move |c| c.iter().zip(&x).map(|(a, b)| a * b).sum())
    }
}

impl DirectionCodebook for KMeansCodebook {
    fn len(&self) -> usize {
        self.k
    }

    fn assign(&self, subspace: usize, u: &[f32]) -> CentroidId {
        let mut best = (0usize, f32::NEG_INFINITY);
        for (i, s) in self.scores(subspace, u).enumerate() {
            if s > best.1 {
                best = (i, s);
            }
        }
        CentroidId(best.0 as u16)
    }

    fn top_probes(&self, subspace: usize, q_b: &[f32], count: usize) -> ProbeList {
        let mut entries: Vec<(CentroidId, f32)> =
            self.scores(subspace, q_b).enumerate().map(|(i, s)| (CentroidId(i as u16), s)).collect();
        entries.sort_by(probe_order);
        entries.truncate(count);
        ProbeList { entries }
    }
}

/// Lloyd iterations on the unit sphere: assign by largest cosine, recenter by
/// the normalized mean. Empty clusters keep their previous centroid.
pub fn spherical_kmeans(points: &[f32], m: usize, k: usize, seed: u64) -> Vec<f32> {
    let n = points.len() / m;
    assert!(n > 0 && k > 0 && k <= u16::MAX as usize + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<f32> = if n >= k {
        sample(&mut rng, n, k).into_iter().flat_map(|i| points[i * m..(i + 1) * m].iter().copied()).collect()
    } else {
        (0..k).flat_map(|i| points[(i % n) * m..(i % n + 1) * m].iter().copied()).collect()
    };
    let mut labels = vec![0usize; n];
    for _ in 0..LLOYD_ITERATIONS {
        for (p, label) in points.chunks_exact(m).zip(labels.iter_mut()) {
            let mut best = (0usize, f32::NEG_INFINITY);
            for (c, cent) in centroids.chunks_exact(m).enumerate() {
                let s: f32 = cent.iter().zip(p).map(|(a, b)| a * b).sum();
                if s > best.1 {
                    best = (c, s);
                }
            }
            *label = best.0;
        }
        let mut sums = vec![0f64; k * m];
        for (p, &label) in points.chunks_exact(m).zip(&labels) {
            for (s, v) in sums[label * m..(label + 1) * m].iter_mut().zip(p) {
                *s += *v as f64;
            }
        }
        for (c, sum) in sums.chunks_exact(m).enumerate() {
            let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for (dst, v) in centroids[c * m..(c + 1) * m].iter_mut().zip(sum) {
                    *dst = (v / norm) as f32;
                }
            }
        }
    }
    centroids
}

#[cfg(test)]
mod tests {
    use super::*;
    use driftkv::RetrievalConfig;

    #[test]
    fn separated_clusters_are_recovered() {
        let dirs = [[1.0f32, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        let mut pts = Vec::new();
        for i in 0..300 {
            let d = dirs[i % 3];
            let eps = (i as f32 * 0.37).sin() * 0.05;
            let (x, y) = (d[0] - eps * d[1], d[1] + eps * d[0]);
            let n = (x * x + y * y).sqrt();
            pts.extend([x / n, y / n]);
        }
        let c = spherical_kmeans(&pts, 2, 3, 1);
        for d in dirs {
            let best = c.chunks_exact(2).map(|c| c[0] * d[0] + c[1] * d[1]).fold(f32::MIN, f32::max);
            assert!(best > 0.99);
        }
    }

    #[test]
    fn fit_is_deterministic_and_single_centroid_collides() {
        let cfg = RetrievalConfig::with_dim(16);
        let tr = Transformer::new(&cfg);
        let keys: Vec<f32> = (0..200 * 16).map(|i| ((i * 7919 % 211) as f32 - 105.0) / 50.0).collect();
        let a = KMeansCodebook::fit(&tr, &keys, 16, 8, 3).unwrap();
        assert_eq!(a, KMeansCodebook::fit(&tr, &keys, 16, 8, 3).unwrap());
        let one = KMeansCodebook::fit(&tr, &keys, 16, 1, 3).unwrap();
        for key in keys.chunks_exact(16) {
            let tv = tr.transform(key).unwrap();
            assert_eq!(one.assign(0, tv.direction(0)), CentroidId(0));
            assert_eq!(one.assign(1, tv.direction(1)), CentroidId(0));
        }
    }

    #[test]
    fn probes_are_sorted_by_cosine() {
        let cfg = RetrievalConfig::with_dim(16);
        let tr = Transformer::new(&cfg);
        let keys: Vec<f32> = (0..300 * 16).map(|i| ((i * 104729 % 307) as f32 - 153.0) / 80.0).collect();
        let cb = KMeansCodebook::fit(&tr, &keys, 16, 16, 5).unwrap();
        let q = tr.transform(&keys[..16]).unwrap();
        let p = cb.top_probes(0, q.direction(0), 16);
        assert!(p.entries.windows(2).all(|w| w[0].1 >= w[1].1));
        assert_eq!(p.entries[0].0, cb.assign(0, q.direction(0)));
    }
}
