//! Per-key rerank metadata: 4-bit direction codes, the alignment correction
//! and the cached per-subspace scale `w`.
//!
//! Each coordinate of a subspace direction is stored as a sign bit and a 3-bit
//! index into eight magnitude levels. The levels are fixed per subspace
//! dimension: after a random rotation every squared coordinate of a subspace
//! direction follows `Beta(1/2, (m−1)/2)`, so the levels are the conditional
//! means of `|u_j|` over the eight equal-probability bins of that prior.

use statrs::function::beta::{beta_reg, inv_beta_reg, ln_beta};

use crate::codebook::{CentroidId, DirectionCodebook};
use crate::config::{Codec, RetrievalConfig};
use crate::error::{Error, Result};
use crate::transform::{dot, TransformedVector, Transformer};

pub const LEVEL_COUNT: usize = 8;
/// Floor applied to the alignment `⟨v, u⟩` before dividing by it.
pub const ALPHA_FLOOR: f32 = 1e-3;

const SIGN_BIT: u8 = 0b1000;
const MAG_MASK: u8 = 0b0111;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagnitudeLevels {
    levels: [f32; LEVEL_COUNT],
    /// Midpoints between consecutive levels.
    cuts: [f32; LEVEL_COUNT - 1],
}

impl MagnitudeLevels {
    /// Levels for subspace dimension `m ≥ 2`, from the closed form
    /// `E[√X | X ∈ bin] = 8 · B(1,b)/B(½,b) · ((1−x_lo)^b − (1−x_hi)^b)` for
    /// `X ~ Beta(½, b)`, `b = (m−1)/2`, with bin edges at the prior's octiles.
    pub fn design(m: usize) -> Self {
        assert!(m >= 2, "magnitude levels need subspace dimension >= 2");
        let b = (m as f64 - 1.0) / 2.0;
        let edges: Vec<f64> = (0..=LEVEL_COUNT)
            .map(|i| match i {
                0 => 0.0,
                i if i == LEVEL_COUNT => 1.0,
                i => inv_beta_reg(0.5, b, i as f64 / LEVEL_COUNT as f64),
            })
            .collect();
        let ratio = (1.0 / b) / ln_beta(0.5, b).exp();
        let mut levels = [0f32; LEVEL_COUNT];
        for i in 0..LEVEL_COUNT {
            let mass = (1.0 - edges[i]).powf(b) - (1.0 - edges[i + 1]).powf(b);
            levels[i] = (LEVEL_COUNT as f64 * ratio * mass) as f32;
        }
        Self::from_levels(levels)
    }

    pub fn from_levels(levels: [f32; LEVEL_COUNT]) -> Self {
        let mut cuts = [0f32; LEVEL_COUNT - 1];
        for i in 0..LEVEL_COUNT - 1 {
            cuts[i] = 0.5 * (levels[i] + levels[i + 1]);
        }
        Self { levels, cuts }
    }

    pub fn levels(&self) -> &[f32; LEVEL_COUNT] {
        &self.levels
    }

    /// Index of the level nearest to `magnitude`.
    pub fn nearest(&self, magnitude: f32) -> u8 {
        self.cuts.iter().take_while(|&&c| magnitude > c).count() as u8
    }
}

/// Radius levels for the optional quantized-radius mode: Lloyd–Max levels on
/// `r = √z` with `z ~ Beta(m/2, (D−m)/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusLevels {
    levels: Vec<f32>,
}

impl RadiusLevels {
    pub fn design(m: usize, dim: usize, count: usize) -> Self {
        assert!(count >= 1 && m < dim);
        let a = m as f64 / 2.0;
        let b = (dim - m) as f64 / 2.0;
        // E[√z ; z ≤ x] = B(a+½,b)/B(a,b) · I_x(a+½,b)
        let half_ratio = (ln_beta(a + 0.5, b) - ln_beta(a, b)).exp();
        let cond_mean = |lo: f64, hi: f64| -> f64 {
            let mass = beta_reg(a, b, hi) - beta_reg(a, b, lo);
            if mass <= 1e-300 {
                return ((lo + hi) / 2.0).sqrt();
            }
            half_ratio * (beta_reg(a + 0.5, b, hi) - beta_reg(a + 0.5, b, lo)) / mass
        };
        let mut edges: Vec<f64> = (0..=count)
            .map(|i| match i {
                0 => 0.0,
                i if i == count => 1.0,
                i => inv_beta_reg(a, b, i as f64 / count as f64),
            })
            .collect();
        let mut levels = vec![0f64; count];
        for _ in 0..100 {
            for i in 0..count {
                levels[i] = cond_mean(edges[i], edges[i + 1]);
            }
            for i in 1..count {
                let cut = 0.5 * (levels[i - 1] + levels[i]);
                edges[i] = cut * cut;
            }
        }
        Self { levels: levels.into_iter().map(|v| v as f32).collect() }
    }

    pub fn levels(&self) -> &[f32] {
        &self.levels
    }

    pub fn quantize(&self, r: f32) -> f32 {
        self.levels
            .iter()
            .copied()
            .min_by(|a, b| (a - r).abs().total_cmp(&(b - r).abs()))
            .unwrap_or(r)
    }
}

/// Packed sign + magnitude nibbles for one subspace direction (up to 16
/// coordinates). Coordinate `j` occupies bits `4j..4j+4`; bit 3 of a nibble marks
/// a negative coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DirectionCode(pub u64);

impl DirectionCode {
    pub fn pack(nibbles: &[u8]) -> Self {
        assert!(nibbles.len() <= 16);
        let mut bits = 0u64;
        for (j, &n) in nibbles.iter().enumerate() {
            bits |= ((n & 0xf) as u64) << (4 * j);
        }
        Self(bits)
    }

    pub fn nibble(self, j: usize) -> u8 {
        ((self.0 >> (4 * j)) & 0xf) as u8
    }

    pub fn unpack(self, m: usize) -> Vec<u8> {
        (0..m).map(|j| self.nibble(j)).collect()
    }

    /// Little-endian bytes, two coordinates per byte, low nibble first.
    pub fn bytes(self) -> [u8; 8] {
        self.0.to_le_bytes()
    }
}

pub fn encode(u: &[f32], levels: &MagnitudeLevels) -> DirectionCode {
    let nibbles: Vec<u8> = u
        .iter()
        .map(|&v| {
            let sign = if v < 0.0 { SIGN_BIT } else { 0 };
            sign | levels.nearest(v.abs())
        })
        .collect();
    DirectionCode::pack(&nibbles)
}

/// Reconstructed unit direction. Returns `e₁` if every level is zero.
pub fn dequantize(code: DirectionCode, m: usize, levels: &MagnitudeLevels) -> Vec<f32> {
    let mut v: Vec<f32> = (0..m)
        .map(|j| {
            let n = code.nibble(j);
            let mag = levels.levels[(n & MAG_MASK) as usize];
            if n & SIGN_BIT != 0 {
                -mag
            } else {
                mag
            }
        })
        .collect();
    let norm = dot(&v, &v).sqrt();
    if norm == 0.0 {
        v.fill(0.0);
        v[0] = 1.0;
        return v;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// `⟨v, u⟩`, floored at [`ALPHA_FLOOR`].
pub fn alpha(u: &[f32], v: &[f32]) -> f32 {
    dot(u, v).max(ALPHA_FLOOR)
}

/// `w = ‖k‖ · r / α`; zero for an empty subspace.
pub fn scaling_factor(key_norm: f32, radius: f32, alpha: f32) -> f32 {
    if radius == 0.0 {
        0.0
    } else {
        key_norm * radius / alpha
    }
}

/// The hot summary of one key.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyMetadata {
    pub centroid_ids: Vec<CentroidId>,
    pub codes: Vec<DirectionCode>,
    pub weights: Vec<f32>,
    /// Full-precision unit directions, only under [`Codec::Exact`].
    pub exact_directions: Option<Vec<f32>>,
}

/// Builds [`KeyMetadata`] from raw keys: normalize → rotate → split → assign,
/// encode and weigh each subspace.
#[derive(Debug, Clone)]
pub struct KeyEncoder {
    transformer: Transformer,
    levels: MagnitudeLevels,
    radius_levels: Option<RadiusLevels>,
    codec: Codec,
    alpha_correction: bool,
    subspace_dim: usize,
}

impl KeyEncoder {
    pub fn new(cfg: &RetrievalConfig) -> Self {
        let m = cfg.subspace_dim();
        let radius_levels = (cfg.radius_centroid_count > 1 && cfg.subspace_count > 1)
            .then(|| RadiusLevels::design(m, cfg.padded_dim(), cfg.radius_centroid_count));
        Self {
            transformer: Transformer::new(cfg),
            levels: MagnitudeLevels::design(m),
            radius_levels,
            codec: cfg.codec,
            alpha_correction: cfg.alpha_correction,
            subspace_dim: m,
        }
    }

    pub fn transformer(&self) -> &Transformer {
        &self.transformer
    }

    pub fn levels(&self) -> &MagnitudeLevels {
        &self.levels
    }

    pub fn codec(&self) -> Codec {
        self.codec
    }

    pub fn subspace_dim(&self) -> usize {
        self.subspace_dim
    }

    /// Metadata for an already transformed key.
    pub fn metadata_for<C: DirectionCodebook + ?Sized>(
        &self,
        tv: &TransformedVector,
        codebook: &C,
    ) -> KeyMetadata {
        let b_count = tv.subspace_count();
        let mut centroid_ids = Vec::with_capacity(b_count);
        let mut codes = Vec::with_capacity(b_count);
        let mut weights = Vec::with_capacity(b_count);
        for b in 0..b_count {
            let u = tv.direction(b);
            centroid_ids.push(codebook.assign(b, u));
            let radius = match &self.radius_levels {
                Some(rl) if !tv.degenerate[b] => rl.quantize(tv.radii[b]),
                _ => tv.radii[b],
            };
            let (code, a) = match self.codec {
                Codec::FourBit => {
                    let code = encode(u, &self.levels);
                    let v = dequantize(code, self.subspace_dim, &self.levels);
                    let a = if self.alpha_correction { alpha(u, &v) } else { 1.0 };
                    (code, a)
                }
                Codec::Exact => (DirectionCode::default(), 1.0),
            };
            codes.push(code);
            weights.push(scaling_factor(tv.original_norm, radius, a));
        }
        let exact_directions = (self.codec == Codec::Exact).then(|| tv.directions.clone());
        KeyMetadata { centroid_ids, codes, weights, exact_directions }
    }

    pub fn build_metadata<C: DirectionCodebook + ?Sized>(
        &self,
        key: &[f32],
        codebook: &C,
    ) -> Result<KeyMetadata> {
        let tv = self.transformer.transform(key)?;
        Ok(self.metadata_for(&tv, codebook))
    }

    /// Like [`build_metadata`](Self::build_metadata) but maps an exact-zero key
    /// to `e₁` with zero norm, so every weight is 0 and it never outranks
    /// anything.
    pub fn build_metadata_lenient<C: DirectionCodebook + ?Sized>(
        &self,
        key: &[f32],
        codebook: &C,
    ) -> Result<KeyMetadata> {
        match self.transformer.transform(key) {
            Err(Error::ZeroVector) => {
                log::warn!("zero key replaced by a basis vector with zero weight");
                let mut e1 = vec![0.0; key.len()];
                e1[0] = 1.0;
                let mut tv = self.transformer.transform(&e1)?;
                tv.original_norm = 0.0;
                Ok(self.metadata_for(&tv, codebook))
            }
            other => Ok(self.metadata_for(&other?, codebook)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::AnalyticCodebook;
    use crate::transform::l2_norm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_unit(rng: &mut ChaCha8Rng, m: usize) -> Vec<f32> {
        let v: Vec<f32> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        let n = l2_norm(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn levels_m2_match_arcsine_monte_carlo() {
        // m = 2: |u_1| = |cos θ| with θ uniform. Monte Carlo oracle over 10^6
        // samples, binned at the analytic octiles of the arcsine law
        // (F(t) = 2/π · asin t for t = |cos θ|).
        let levels = MagnitudeLevels::design(2);
        let edges: Vec<f64> = (0..=8)
            .map(|i| (std::f64::consts::FRAC_PI_2 * i as f64 / 8.0).sin())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut sums = [0f64; 8];
        let mut counts = [0usize; 8];
        for _ in 0..1_000_000 {
            let theta: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            let t = theta.cos().abs();
            let bin = edges[1..8].iter().take_while(|&&e| t > e).count();
            sums[bin] += t;
            counts[bin] += 1;
        }
        for i in 0..8 {
            let mc = sums[i] / counts[i] as f64;
            assert!((levels.levels()[i] as f64 - mc).abs() < 2e-3, "bin {i}: {} vs {mc}", levels.levels()[i]);
        }
    }

    #[test]
    fn levels_monotone_and_mean_matches_prior() {
        for m in [2usize, 4, 8, 16] {
            let l = MagnitudeLevels::design(m);
            assert!(l.levels()[0] > 0.0);
            assert!(l.levels().windows(2).all(|w| w[0] < w[1]), "m={m}");
            assert!(l.levels()[7] < 1.0);

            // Monte Carlo E|u_j| over random unit m-vectors.
            let mut rng = ChaCha8Rng::seed_from_u64(m as u64);
            let n = 200_000;
            let mc: f64 = (0..n).map(|_| random_unit(&mut rng, m)[0].abs() as f64).sum::<f64>() / n as f64;
            let mean: f64 = l.levels().iter().map(|&v| v as f64).sum::<f64>() / 8.0;
            assert!((mean - mc).abs() < 0.01, "m={m}: {mean} vs {mc}");
        }
    }

    #[test]
    fn nibble_pack_round_trip_all_positions() {
        for pos in 0..16 {
            for value in 0..16u8 {
                let mut nibbles = [0u8; 16];
                nibbles[pos] = value;
                let code = DirectionCode::pack(&nibbles);
                assert_eq!(code.unpack(16), nibbles.to_vec());
                assert_eq!(DirectionCode::pack(&code.unpack(16)), code);
            }
        }
    }

    #[test]
    fn encode_examples() {
        let levels = MagnitudeLevels::design(8);
        let mut u = vec![0f32; 8];
        u[0] = levels.levels()[3];
        assert_eq!(encode(&u, &levels).nibble(0) & MAG_MASK, 3);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_unit(&mut rng, 8);
        let neg: Vec<f32> = u.iter().map(|x| -x).collect();
        let (a, b) = (encode(&u, &levels), encode(&neg, &levels));
        for j in 0..8 {
            assert_eq!(a.nibble(j) & MAG_MASK, b.nibble(j) & MAG_MASK);
            assert_eq!((a.nibble(j) ^ b.nibble(j)) & SIGN_BIT, SIGN_BIT);
        }
    }

    #[test]
    fn round_trip_cosine_regression_bound() {
        let levels = MagnitudeLevels::design(8);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut worst = 1f32;
        let mut total = 0f64;
        for _ in 0..10_000 {
            let u = random_unit(&mut rng, 8);
            let v = dequantize(encode(&u, &levels), 8, &levels);
            let c = dot(&u, &v);
            worst = worst.min(c);
            total += c as f64;
            assert!((l2_norm(&v) - 1.0).abs() < 1e-5);
        }
        assert!(worst > 0.9, "worst cosine {worst}");
        assert!(total / 10_000.0 > 0.98);
    }

    #[test]
    fn dequantize_centroid_pattern() {
        let levels = MagnitudeLevels::design(8);
        let c = 1.0 / 8f32.sqrt();
        let omega = [c, -c, c, c, -c, -c, c, -c];
        let v = dequantize(encode(&omega, &levels), 8, &levels);
        let mags: Vec<f32> = v.iter().map(|x| x.abs()).collect();
        assert!(mags.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-7));
        assert!((dot(&v, &omega) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn dequantize_is_deterministic() {
        let levels = MagnitudeLevels::design(8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = random_unit(&mut rng, 8);
        let a = dequantize(encode(&u, &levels), 8, &levels);
        let b = dequantize(encode(&u, &levels), 8, &levels);
        assert_eq!(a, b);
    }

    #[test]
    fn dequantize_all_zero_levels_is_basis_vector() {
        let levels = MagnitudeLevels::from_levels([0.0; 8]);
        assert_eq!(dequantize(DirectionCode(0), 4, &levels), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn alpha_examples() {
        let u = [0.6f32, 0.8];
        assert!((alpha(&u, &u) - 1.0).abs() < 1e-6);
        assert_eq!(alpha(&u, &[0.8, -0.6]), ALPHA_FLOOR);

        let levels = MagnitudeLevels::design(8);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10_000 {
            let u = random_unit(&mut rng, 8);
            let v = dequantize(encode(&u, &levels), 8, &levels);
            let a = alpha(&u, &v);
            assert!(a > 0.0 && a <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn scaling_factor_examples() {
        assert!((scaling_factor(2.0, 0.5, 0.8) - 1.25).abs() < 1e-7);
        assert_eq!(scaling_factor(3.0, 0.0, 0.5), 0.0);
        assert_eq!(scaling_factor(1.0, 1.0, 1.0), 1.0);
    }

    #[test]
    fn metadata_is_deterministic_and_complete() {
        let cfg = RetrievalConfig::default();
        let enc = KeyEncoder::new(&cfg);
        let cb = AnalyticCodebook::new(cfg.subspace_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let key: Vec<f32> = (0..128).map(|_| StandardNormal.sample(&mut rng)).collect();
        let a = enc.build_metadata(&key, &cb).unwrap();
        let b = enc.build_metadata(&key, &cb).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.centroid_ids.len(), 16);
        assert_eq!(a.codes.len(), 16);
        assert!(a.weights.iter().all(|&w| w > 0.0));
        assert!(enc.build_metadata(&[0.0; 128], &cb).is_err());
        let zero = enc.build_metadata_lenient(&[0.0; 128], &cb).unwrap();
        assert!(zero.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn centroid_aligned_key_has_maximal_alpha() {
        // A rotated key whose every subspace direction is a sign-pattern
        // centroid: build it in rotated space and rotate back (Hadamard with
        // signs is its own inverse up to the sign diagonal).
        let cfg = RetrievalConfig::default();
        let enc = KeyEncoder::new(&cfg);
        let cb = AnalyticCodebook::new(8);
        let rot = enc.transformer().rotation();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let c = 1.0 / 8f32.sqrt() / 4.0; // 16 subspaces of radius 1/4
        let rotated: Vec<f32> = (0..128).map(|_| if rng.random::<bool>() { c } else { -c }).collect();
        let mut back = rotated.clone();
        crate::transform::fwht(&mut back);
        let key: Vec<f32> = back
            .iter()
            .zip(rot.signs())
            .map(|(v, s)| 2.0 * v * s / (128f32).sqrt())
            .collect();
        let meta = enc.build_metadata(&key, &cb).unwrap();
        for w in &meta.weights {
            // ‖k‖ = 2, r = 1/4, α = 1
            assert!((w - 0.5).abs() < 1e-4, "{w}");
        }
    }

    #[test]
    fn radius_levels_are_sorted_and_inside_unit_interval() {
        let rl = RadiusLevels::design(8, 128, 4);
        assert_eq!(rl.levels().len(), 4);
        assert!(rl.levels().windows(2).all(|w| w[0] < w[1]));
        assert!(rl.levels()[0] > 0.0 && rl.levels()[3] < 1.0);
        // Beta(4, 60) has mean 1/16, so radii cluster around 0.25.
        assert!(rl.levels()[1] < 0.25 + 0.05 && rl.levels()[2] > 0.25 - 0.05);
    }
}
