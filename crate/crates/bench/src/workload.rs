//! Synthetic key/value/query streams.

use std::io;
use std::path::Path;

use driftkv::VectorDump;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Parameters of a drifting stream. Prefill keys are drawn from `N(μ₀, I)`,
/// decode key `t` from `N(μ₀ + t·drift_rate·δ, I)` with a fixed random unit
/// direction `δ`, and the query at decode step `t` is a recent decode key plus
/// `N(0, query_noise²·I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftSpec {
    pub prefill_n: usize,
    pub decode_n: usize,
    pub dim: usize,
    pub drift_rate: f64,
    /// `‖μ₀‖`.
    pub mean_norm: f64,
    pub query_noise: f64,
    /// Queries copy one of the last `query_window` keys.
    pub query_window: usize,
    pub seed: u64,
}

impl DriftSpec {
    pub fn new(prefill_n: usize, decode_n: usize, drift_rate: f64, seed: u64) -> Self {
        Self {
            prefill_n,
            decode_n,
            dim: 128,
            drift_rate,
            mean_norm: 16.0,
            query_noise: 1.0,
            query_window: 64,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub dim: usize,
    pub prefill_keys: Vec<f32>,
    pub prefill_values: Vec<f32>,
    pub decode_keys: Vec<f32>,
    pub decode_values: Vec<f32>,
    /// For drifting streams, one query per decode step; otherwise a free batch.
    pub queries: Vec<f32>,
    pub seed: u64,
}

impl Workload {
    pub fn prefill_len(&self) -> usize {
        self.prefill_keys.len() / self.dim
    }

    pub fn decode_len(&self) -> usize {
        self.decode_keys.len() / self.dim
    }

    pub fn query_count(&self) -> usize {
        self.queries.len() / self.dim
    }

    pub fn query(&self, i: usize) -> &[f32] {
        &self.queries[i * self.dim..(i + 1) * self.dim]
    }

    pub fn decode_key(&self, t: usize) -> &[f32] {
        &self.decode_keys[t * self.dim..(t + 1) * self.dim]
    }

    pub fn decode_value(&self, t: usize) -> &[f32] {
        &self.decode_values[t * self.dim..(t + 1) * self.dim]
    }

    const FILES: [&'static str; 5] =
        ["prefill_keys.pkv", "prefill_values.pkv", "decode_keys.pkv", "decode_values.pkv", "queries.pkv"];

    /// Writes the five streams as PKV1 files into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> io::Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let parts = [
            &self.prefill_keys,
            &self.prefill_values,
            &self.decode_keys,
            &self.decode_values,
            &self.queries,
        ];
        for (name, data) in Self::FILES.iter().zip(parts) {
            VectorDump::new(self.dim, data.clone()).save(dir.join(name))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>, seed: u64) -> io::Result<Self> {
        let dir = dir.as_ref();
        let mut parts = Vec::with_capacity(5);
        let mut dim = None;
        for name in Self::FILES {
            let d = VectorDump::load(dir.join(name))?;
            if *dim.get_or_insert(d.dim) != d.dim {
                return Err(io::Error::new(io::ErrorKind::InvalidData, format!("{name}: dim {}", d.dim)));
            }
            parts.push(d.data);
        }
        let mut it = parts.into_iter();
        let mut next = || it.next().unwrap();
        Ok(Self {
            dim: dim.unwrap(),
            prefill_keys: next(),
            prefill_values: next(),
            decode_keys: next(),
            decode_values: next(),
            queries: next(),
            seed,
        })
    }
}

fn gaussian(rng: &mut ChaCha8Rng, len: usize) -> Vec<f32> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Standard-normal prefill keys, values and queries; no decode stream.
pub fn gen_isotropic(n: usize, dim: usize, query_count: usize, seed: u64) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prefill_keys = gaussian(&mut rng, n * dim);
    let prefill_values = gaussian(&mut rng, n * dim);
    let queries = gaussian(&mut rng, query_count * dim);
    Workload {
        dim,
        prefill_keys,
        prefill_values,
        decode_keys: Vec::new(),
        decode_values: Vec::new(),
        queries,
        seed,
    }
}

pub fn gen_drift(spec: &DriftSpec) -> Workload {
    let dim = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mu0: Vec<f64> = random_unit(&mut rng, dim).into_iter().map(|x| x * spec.mean_norm).collect();
    let delta = random_unit(&mut rng, dim);
    let draw = |rng: &mut ChaCha8Rng, mean: &[f64], out: &mut Vec<f32>| {
        out.extend(mean.iter().map(|m| (m + Distribution::<f64>::sample(&StandardNormal, rng)) as f32));
    };
    let mut prefill_keys = Vec::with_capacity(spec.prefill_n * dim);
    for _ in 0..spec.prefill_n {
        draw(&mut rng, &mu0, &mut prefill_keys);
    }
    let prefill_values = gaussian(&mut rng, spec.prefill_n * dim);
    let mut decode_keys = Vec::with_capacity(spec.decode_n * dim);
    for t in 0..spec.decode_n {
        let shift = t as f64 * spec.drift_rate;
        let mean: Vec<f64> = mu0.iter().zip(&delta).map(|(m, d)| m + shift * d).collect();
        draw(&mut rng, &mean, &mut decode_keys);
    }
    let decode_values = gaussian(&mut rng, spec.decode_n * dim);
    // Step t sees keys up to t-1 (the newest ones may still be buffered); the
    // first query falls back to the last prefill key.
    let mut queries = Vec::with_capacity(spec.decode_n * dim);
    for t in 0..spec.decode_n {
        let source: &[f32] = if t == 0 {
            if spec.prefill_n == 0 {
                queries.extend(gaussian(&mut rng, dim));
                continue;
            }
            &prefill_keys[(spec.prefill_n - 1) * dim..spec.prefill_n * dim]
        } else {
            let back = rng.random_range(1..=spec.query_window.clamp(1, t));
            &decode_keys[(t - back) * dim..(t - back + 1) * dim]
        };
        let noise = gaussian(&mut rng, dim);
        queries.extend(source.iter().zip(noise).map(|(k, e)| k + spec.query_noise as f32 * e));
    }
    Workload { dim, prefill_keys, prefill_values, decode_keys, decode_values, queries, seed: spec.seed }
}
