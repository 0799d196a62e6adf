//! Shared key/query preprocessing: normalize, rotate, split into subspaces,
//! and take a radius/direction form per subspace.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RetrievalConfig;
use crate::error::{Error, Result};

/// Radii at or below this are treated as an empty subspace.
pub const ZERO_RADIUS: f32 = 1e-12;

pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(x: &[f32]) -> f32 {
    dot(x, x).sqrt()
}

/// Returns `x / ‖x‖` together with `‖x‖`.
pub fn normalize(x: &[f32]) -> Result<(Vec<f32>, f32)> {
    let norm = l2_norm(x);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    let inv = 1.0 / norm;
    Ok((x.iter().map(|v| v * inv).collect(), norm))
}

/// In-place unnormalized Walsh–Hadamard transform. `data.len()` must be a power of two.
pub fn fwht(data: &mut [f32]) {
    let n = data.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for chunk in data.chunks_exact_mut(2 * h) {
            let (lo, hi) = chunk.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
}

/// Seeded orthogonal rotation `R = H·S / √P`: a random ±1 diagonal followed by
/// the normalized Walsh–Hadamard transform over `P = next_pow2(D)` coordinates.
/// Inputs shorter than `P` are zero-padded and outputs keep all `P` coordinates.
#[derive(Debug, Clone)]
pub struct Rotation {
    signs: Vec<f32>,
    input_dim: usize,
    seed: u64,
}

impl Rotation {
    pub fn new(input_dim: usize, seed: u64) -> Self {
        let padded = input_dim.max(1).next_power_of_two();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let signs = (0..padded)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        Self { signs, input_dim, seed }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.signs.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn signs(&self) -> &[f32] {
        &self.signs
    }

    pub fn rotate(&self, x: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; self.output_dim()];
        self.rotate_into(x, &mut out);
        out
    }

    pub fn rotate_into(&self, x: &[f32], out: &mut [f32]) {
        assert!(x.len() <= out.len() && out.len() == self.output_dim());
        out.fill(0.0);
        for ((o, v), s) in out.iter_mut().zip(x).zip(&self.signs) {
            *o = v * s;
        }
        fwht(out);
        let scale = 1.0 / (self.output_dim() as f32).sqrt();
        out.iter_mut().for_each(|v| *v *= scale);
    }
}

/// A key or query after normalize → rotate → split → polar form.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedVector {
    pub original_norm: f32,
    /// One radius per subspace.
    pub radii: Vec<f32>,
    /// Unit directions, `subspace_count × subspace_dim`, row-major.
    pub directions: Vec<f32>,
    /// Set for subspaces whose radius was zero (direction is `e₁`).
    pub degenerate: Vec<bool>,
    pub rotated: Option<Vec<f32>>,
    subspace_dim: usize,
}

impl TransformedVector {
    pub fn subspace_count(&self) -> usize {
        self.radii.len()
    }

    pub fn subspace_dim(&self) -> usize {
        self.subspace_dim
    }

    pub fn direction(&self, b: usize) -> &[f32] {
        &self.directions[b * self.subspace_dim..(b + 1) * self.subspace_dim]
    }

    /// Rotated subvector `r_b · u_b`.
    pub fn subvector(&self, b: usize) -> Vec<f32> {
        self.direction(b).iter().map(|u| u * self.radii[b]).collect()
    }

    /// Concatenation of `r_b · u_b` over all subspaces.
    pub fn reassemble(&self) -> Vec<f32> {
        (0..self.subspace_count()).flat_map(|b| self.subvector(b)).collect()
    }
}

/// Splits a rotated unit vector into `subspace_count` contiguous blocks and takes
/// each block's radius and unit direction.
pub fn split_polar(rotated: &[f32], subspace_count: usize, original_norm: f32) -> TransformedVector {
    assert!(subspace_count > 0 && rotated.len().is_multiple_of(subspace_count));
    let m = rotated.len() / subspace_count;
    let mut radii = Vec::with_capacity(subspace_count);
    let mut directions = Vec::with_capacity(rotated.len());
    let mut degenerate = Vec::with_capacity(subspace_count);
    for block in rotated.chunks_exact(m) {
        let r = l2_norm(block);
        if r <= ZERO_RADIUS {
            radii.push(0.0);
            degenerate.push(true);
            directions.push(1.0);
            directions.extend(std::iter::repeat_n(0.0, m - 1));
        } else {
            radii.push(r);
            degenerate.push(false);
            let inv = 1.0 / r;
            directions.extend(block.iter().map(|v| v * inv));
        }
    }
    TransformedVector {
        original_norm,
        radii,
        directions,
        degenerate,
        rotated: None,
        subspace_dim: m,
    }
}

/// `Σ_b r^k_b r^q_b ⟨u^k_b, u^q_b⟩`, the rotated inner product of two unit vectors
/// written per subspace.
pub fn blockwise_ip(k: &TransformedVector, q: &TransformedVector) -> f32 {
    assert_eq!(k.subspace_count(), q.subspace_count());
    (0..k.subspace_count())
        .map(|b| k.radii[b] * q.radii[b] * dot(k.direction(b), q.direction(b)))
        .sum()
}

/// The full preprocessing pipeline for one index: shared rotation plus split.
#[derive(Debug, Clone)]
pub struct Transformer {
    rotation: Rotation,
    subspace_count: usize,
    keep_rotated: bool,
}

impl Transformer {
    pub fn new(cfg: &RetrievalConfig) -> Self {
        Self {
            rotation: Rotation::new(cfg.dim, cfg.rotation_seed),
            subspace_count: cfg.subspace_count,
            keep_rotated: false,
        }
    }

    /// Also keep the full rotated vector on each output.
    pub fn keep_rotated(mut self, keep: bool) -> Self {
        self.keep_rotated = keep;
        self
    }

    pub fn rotation(&self) -> &Rotation {
        &self.rotation
    }

    pub fn subspace_count(&self) -> usize {
        self.subspace_count
    }

    pub fn transform(&self, x: &[f32]) -> Result<TransformedVector> {
        if x.len() != self.rotation.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.rotation.input_dim(),
                actual: x.len(),
            });
        }
        let (unit, norm) = normalize(x)?;
        let rotated = self.rotation.rotate(&unit);
        let mut tv = split_polar(&rotated, self.subspace_count, norm);
        if self.keep_rotated {
            tv.rotated = Some(rotated);
        }
        Ok(tv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
        (0..d).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn normalize_examples() {
        let mut x = vec![0.0f32; 128];
        x[0] = 3.0;
        x[1] = 4.0;
        let (u, n) = normalize(&x).unwrap();
        assert_eq!(n, 5.0);
        assert!((u[0] - 0.6).abs() < 1e-7 && (u[1] - 0.8).abs() < 1e-7);

        let mut e1 = vec![0.0f32; 16];
        e1[0] = 1.0;
        assert_eq!(normalize(&e1).unwrap(), (e1.clone(), 1.0));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (u, _) = normalize(&gaussian(&mut rng, 128)).unwrap();
        let n: f64 = u.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn normalize_zero_is_error() {
        assert_eq!(normalize(&[0.0; 8]), Err(Error::ZeroVector));
    }

    // Oracle: explicit P×P matrix H_norm · diag(signs), built from the Sylvester
    // definition H[i][j] = (-1)^popcount(i & j).
    fn explicit_rotation_matrix(rot: &Rotation) -> Vec<Vec<f64>> {
        let p = rot.output_dim();
        let scale = 1.0 / (p as f64).sqrt();
        (0..p)
            .map(|i| {
                (0..p)
                    .map(|j| {
                        let h = if (i & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                        h * scale * rot.signs()[j] as f64
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn rotation_matches_explicit_matrix_seed_42() {
        let rot = Rotation::new(8, 42);
        let mat = explicit_rotation_matrix(&rot);
        let mut e1 = vec![0.0f32; 8];
        e1[0] = 1.0;
        let out = rot.rotate(&e1);
        for i in 0..8 {
            assert!((out[i] as f64 - mat[i][0]).abs() < 1e-6);
        }
        // Every column of a normalized Hadamard has entries ±1/√8.
        for v in &out {
            assert!((v.abs() - 1.0 / 8f32.sqrt()).abs() < 1e-6);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = gaussian(&mut rng, 8);
        let out = rot.rotate(&x);
        for i in 0..8 {
            let expect: f64 = (0..8).map(|j| mat[i][j] * x[j] as f64).sum();
            assert!((out[i] as f64 - expect).abs() < 1e-5);
        }
    }

    #[test]
    fn rotation_is_deterministic_and_seed_dependent() {
        let a = Rotation::new(64, 3);
        let b = Rotation::new(64, 3);
        let c = Rotation::new(64, 4);
        assert_eq!(a.signs(), b.signs());
        assert_ne!(a.signs(), c.signs());
    }

    #[test]
    fn rotation_preserves_inner_products_with_padding() {
        let rot = Rotation::new(96, 9);
        assert_eq!(rot.output_dim(), 128);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let (x, _) = normalize(&gaussian(&mut rng, 96)).unwrap();
            let (y, _) = normalize(&gaussian(&mut rng, 96)).unwrap();
            let want = dot(&x, &y);
            let got = dot(&rot.rotate(&x), &rot.rotate(&y));
            assert!((want - got).abs() < 1e-5);
            assert!((l2_norm(&rot.rotate(&x)) - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn rotation_preserves_half_cosine() {
        let rot = Rotation::new(32, 5);
        let mut x = vec![0.0f32; 32];
        let mut y = vec![0.0f32; 32];
        x[0] = 1.0;
        y[0] = 0.5;
        y[1] = 0.75f32.sqrt();
        assert!((dot(&rot.rotate(&x), &rot.rotate(&y)) - 0.5).abs() < 1e-4);
    }

    #[test]
    fn split_polar_examples() {
        let x = [0.3f32, 0.4, 0.0, -0.866];
        let tv = split_polar(&x, 2, 1.0);
        assert!((tv.radii[0] - 0.5).abs() < 1e-6);
        assert!((tv.radii[1] - 0.866).abs() < 1e-6);
        let expect = [0.6, 0.8, 0.0, -1.0];
        for (a, b) in tv.directions.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6);
        }

        let tv = split_polar(&[0.0, 0.0, 0.6, 0.8], 2, 1.0);
        assert_eq!(tv.radii[0], 0.0);
        assert!(tv.degenerate[0]);
        assert_eq!(tv.direction(0), &[1.0, 0.0]);
        assert!((tv.radii[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn transform_invariants() {
        let cfg = RetrievalConfig::default();
        let t = Transformer::new(&cfg).keep_rotated(true);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let tv = t.transform(&gaussian(&mut rng, 128)).unwrap();
            let energy: f32 = tv.radii.iter().map(|r| r * r).sum();
            assert!((energy - 1.0).abs() < 1e-4);
            for b in 0..tv.subspace_count() {
                assert!((l2_norm(tv.direction(b)) - 1.0).abs() < 1e-5);
            }
            let rotated = tv.rotated.as_ref().unwrap();
            for (a, b) in tv.reassemble().iter().zip(rotated) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn blockwise_ip_examples() {
        let cfg = RetrievalConfig::default();
        let t = Transformer::new(&cfg).keep_rotated(true);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = t.transform(&gaussian(&mut rng, 128)).unwrap();
        assert!((blockwise_ip(&k, &k) - 1.0).abs() < 1e-5);

        let mut a = vec![0.0f32; 128];
        let mut b = vec![0.0f32; 128];
        a[3] = 2.0;
        b[77] = -1.5;
        let (ta, tb) = (t.transform(&a).unwrap(), t.transform(&b).unwrap());
        assert!(blockwise_ip(&ta, &tb).abs() < 1e-4);

        for _ in 0..50 {
            let k = t.transform(&gaussian(&mut rng, 128)).unwrap();
            let q = t.transform(&gaussian(&mut rng, 128)).unwrap();
            let direct: f64 = k
                .rotated
                .as_ref()
                .unwrap()
                .iter()
                .zip(q.rotated.as_ref().unwrap())
                .map(|(x, y)| *x as f64 * *y as f64)
                .sum();
            assert!((blockwise_ip(&k, &q) as f64 - direct).abs() < 1e-4);
        }
    }

    #[test]
    fn transform_rejects_wrong_dim() {
        let t = Transformer::new(&RetrievalConfig::default());
        assert!(matches!(t.transform(&[1.0; 5]), Err(Error::DimensionMismatch { .. })));
    }
}
