//! Kolmogorov-Smirnov checks of the post-rotation subspace statistics: the
//! energy `z_b = r_b²` against `Beta(m/2, (D−m)/2)` and a squared direction
//! coordinate against `Beta(1/2, (m−1)/2)`.

use driftkv::transform::Rotation;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use statrs::distribution::{Beta, ContinuousCDF};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorReport {
    pub dim: usize,
    pub subspace_dim: usize,
    pub samples: usize,
    /// `None` when `m = D`: the energy is identically 1.
    pub ks_energy: Option<f64>,
    pub ks_coordinate: f64,
    pub degenerate: bool,
}

impl std::fmt::Display for PriorReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let m = self.subspace_dim as f64;
        match self.ks_energy {
            Some(ks) => writeln!(f, "KS(z_b, Beta({}, {})) = {ks:.5}", m / 2.0, (self.dim as f64 - m) / 2.0)?,
            None => writeln!(f, "z_b: degenerate (m = D, z_b = 1)")?,
        }
        write!(f, "KS(u_j^2, Beta(0.5, {})) = {:.5}", (m - 1.0) / 2.0, self.ks_coordinate)
    }
}

/// Two-sided KS distance between a sample and a continuous CDF.
pub fn ks_statistic(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Rotates `samples` random unit vectors of dimension `dim` (a power of two)
/// and pools `z_b` over all subspaces and `(u_b)_0²` over all subspaces.
pub fn check_priors(dim: usize, subspace_dim: usize, samples: usize, seed: u64) -> PriorReport {
    assert!(dim.is_power_of_two() && subspace_dim >= 2 && dim.is_multiple_of(subspace_dim));
    let m = subspace_dim;
    let b_count = dim / m;
    let rotation = Rotation::new(dim, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut energy = Vec::with_capacity(samples * b_count);
    let mut coord = Vec::with_capacity(samples * b_count);
    let mut x = vec![0f32; dim];
    let mut rx = vec![0f32; dim];
    for _ in 0..samples {
        for v in x.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        rotation.rotate_into(&x, &mut rx);
        let total: f64 = rx.iter().map(|v| (*v as f64).powi(2)).sum();
        for sub in rx.chunks_exact(m) {
            let e: f64 = sub.iter().map(|v| (*v as f64).powi(2)).sum();
            energy.push(e / total);
            coord.push((sub[0] as f64).powi(2) / e);
        }
    }
    let degenerate = m == dim;
    let ks_energy = (!degenerate).then(|| {
        let beta = Beta::new(m as f64 / 2.0, (dim - m) as f64 / 2.0).expect("valid shape");
        ks_statistic(energy, |z| beta.cdf(z))
    });
    let beta = Beta::new(0.5, (m as f64 - 1.0) / 2.0).expect("valid shape");
    let ks_coordinate = ks_statistic(coord, |z| beta.cdf(z));
    PriorReport { dim, subspace_dim: m, samples, ks_energy, ks_coordinate, degenerate }
}
