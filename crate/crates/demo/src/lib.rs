//! Browser demo: three small views over the retrieval engine, each returned
//! as JSON for the static page in `www/`.

use driftkv::codebook::{tier_of, top_probes};
use driftkv::coarse::probe_count;
use driftkv::{Engine, RetrievalConfig, Rotation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use statrs::distribution::{Beta, ContinuousCDF};
use wasm_bindgen::prelude::*;

fn gaussian(rng: &mut ChaCha8Rng, len: usize) -> Vec<f32> {
    (0..len).map(|_| Distribution::<f32>::sample(&StandardNormal, rng)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Probe {
    pub rank: usize,
    /// `+`/`-` per coordinate.
    pub signs: String,
    pub score: f32,
    pub bonus: u8,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeView {
    pub query: Vec<f32>,
    pub probe_count: usize,
    pub centroid_count: usize,
    pub probes: Vec<Probe>,
}

/// Probe list of a random unit query subvector of dimension `m` under the
/// default six tiers.
pub fn probes(m: usize, rho: f64, seed: u64) -> ProbeView {
    let m = m.clamp(2, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = gaussian(&mut rng, m);
    let norm = q.iter().map(|v| v * v).sum::<f32>().sqrt();
    q.iter_mut().for_each(|v| *v /= norm);
    let k = 1usize << m;
    let t = probe_count(rho, k);
    let tiers = RetrievalConfig::default().tier_bonuses;
    let probes = top_probes(&q, t)
        .entries
        .into_iter()
        .enumerate()
        .map(|(rank, (id, score))| Probe {
            rank,
            signs: (0..m).map(|j| if id.0 & (1 << j) != 0 { '+' } else { '-' }).collect(),
            score,
            bonus: tier_of(Some(rank), t, &tiers),
        })
        .collect();
    ProbeView { query: q, probe_count: t, centroid_count: k, probes }
}

#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    pub label: String,
    pub edges: Vec<f64>,
    /// Empirical density per bin.
    pub density: Vec<f64>,
    /// Beta density averaged over each bin.
    pub expected: Vec<f64>,
}

fn histogram(label: String, sample: &[f64], beta: &Beta, upper: f64, bins: usize) -> Histogram {
    let width = upper / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| i as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    for &x in sample {
        if x < upper {
            counts[((x / width) as usize).min(bins - 1)] += 1;
        }
    }
    let n = sample.len() as f64;
    let density = counts.iter().map(|&c| c as f64 / (n * width)).collect();
    let expected = edges.windows(2).map(|e| (beta.cdf(e[1]) - beta.cdf(e[0])) / width).collect();
    Histogram { label, edges, density, expected }
}

/// Subspace energy and squared direction coordinate of rotated random
/// vectors, against their Beta laws. `dim` is rounded up to a power of two.
pub fn priors(dim: usize, m: usize, samples: usize, bins: usize, seed: u64) -> Vec<Histogram> {
    let dim = dim.clamp(4, 1024).next_power_of_two();
    let m = m.clamp(2, dim / 2);
    let m = if dim.is_multiple_of(m) { m } else { 2 };
    let rot = Rotation::new(dim, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut energy, mut coord) = (Vec::new(), Vec::new());
    for _ in 0..samples.max(1) {
        let rx = rot.rotate(&gaussian(&mut rng, dim));
        let total: f64 = rx.iter().map(|v| (*v as f64).powi(2)).sum();
        for sub in rx.chunks_exact(m) {
            let e: f64 = sub.iter().map(|v| (*v as f64).powi(2)).sum();
            energy.push(e / total);
            coord.push((sub[0] as f64).powi(2) / e);
        }
    }
    let (mf, df) = (m as f64, dim as f64);
    let z = Beta::new(mf / 2.0, (df - mf) / 2.0).expect("valid shape");
    let u = Beta::new(0.5, (mf - 1.0) / 2.0).expect("valid shape");
    let z_upper = (z.inverse_cdf(0.999) * 1.05).min(1.0);
    let bins = bins.clamp(5, 200);
    vec![
        histogram(format!("z_b vs Beta({}, {})", mf / 2.0, (df - mf) / 2.0), &energy, &z, z_upper, bins),
        histogram(format!("u_j^2 vs Beta(0.5, {})", (mf - 1.0) / 2.0), &coord, &u, 1.0, bins),
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct RecallPoint {
    pub beta: f64,
    pub candidates: usize,
    pub coarse_recall: f64,
    pub final_recall: f64,
}

/// Mean coarse and final Recall@`top_k` on standard-normal keys as the
/// candidate ratio varies.
pub fn recall_curve(n: usize, dim: usize, top_k: usize, queries: usize, betas: &[f64], seed: u64) -> Vec<RecallPoint> {
    let n = n.clamp(500, 50_000);
    let mut base = RetrievalConfig::with_dim(dim.clamp(8, 256));
    base.top_k = top_k.clamp(1, n / 4);
    base.full_attention_threshold = base.full_attention_threshold.min(n / 2);
    let dim = base.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys = gaussian(&mut rng, n * dim);
    let values = gaussian(&mut rng, n * dim);
    let qs = gaussian(&mut rng, queries.max(1) * dim);
    betas
        .iter()
        .map(|&beta| {
            let beta = beta.clamp(1e-3, 1.0);
            let mut cfg = base.clone();
            cfg.beta_override = Some(beta);
            let mut probe = Engine::new(cfg).expect("valid config").with_oracle(true);
            probe.prefill(&keys, &values).expect("matching lengths");
            let (mut coarse, mut fin, mut cands) = (0.0, 0.0, 0);
            for q in qs.chunks_exact(dim) {
                let t = probe.attend(q).expect("dimension matches").trace;
                coarse += t.coarse_recall.unwrap_or(0.0);
                fin += t.final_recall.unwrap_or(0.0);
                cands = t.candidate_count;
            }
            let count = (qs.len() / dim) as f64;
            RecallPoint { beta, candidates: cands, coarse_recall: coarse / count, final_recall: fin / count }
        })
        .collect()
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

#[wasm_bindgen(js_name = probesJson)]
pub fn probes_json(m: usize, rho: f64, seed: u32) -> String {
    json(&probes(m, rho, seed as u64))
}

#[wasm_bindgen(js_name = priorsJson)]
pub fn priors_json(dim: usize, m: usize, samples: usize, bins: usize, seed: u32) -> String {
    json(&priors(dim, m, samples, bins, seed as u64))
}

/// `betas` is a comma-separated list.
#[wasm_bindgen(js_name = recallJson)]
pub fn recall_json(n: usize, dim: usize, top_k: usize, queries: usize, betas: &str, seed: u32) -> String {
    let betas: Vec<f64> = betas.split(',').filter_map(|b| b.trim().parse().ok()).collect();
    json(&recall_curve(n, dim, top_k, queries, &betas, seed as u64))
}
