//! Ablation runs. Each one toggles a single mechanism and records one
//! [`MetricsRow`] per measured query or decode step.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context};
use driftkv::rerank::estimate_ip;
use driftkv::transform::Transformer;
use driftkv::{relative_l2, AnalyticCodebook, DirectionCodebook, Engine, KeyEncoder, RetrievalConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::kmeans::KMeansCodebook;
use crate::metrics::{mean, save_csv, MetricsRow};
use crate::priors::{check_priors, PriorReport};
use crate::workload::{gen_drift, gen_isotropic, DriftSpec, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Drift,
    Alpha,
    Tiers,
    RatioVsLength,
    PriorCheck,
}

impl Ablation {
    pub const ALL: [Ablation; 5] =
        [Ablation::Drift, Ablation::Alpha, Ablation::Tiers, Ablation::RatioVsLength, Ablation::PriorCheck];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Drift => "drift",
            Ablation::Alpha => "alpha",
            Ablation::Tiers => "tiers",
            Ablation::RatioVsLength => "ratio_vs_length",
            Ablation::PriorCheck => "prior_check",
        }
    }
}

impl FromStr for Ablation {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .with_context(|| format!("unknown ablation {s:?}"))
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which coarse-stage codebook an engine uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoarseMethod {
    Analytic,
    KMeans,
}

impl CoarseMethod {
    pub fn name(self) -> &'static str {
        match self {
            CoarseMethod::Analytic => "analytic",
            CoarseMethod::KMeans => "kmeans",
        }
    }
}

/// Engine with the oracle enabled and `w`'s prefill stored.
pub fn prefilled<C: DirectionCodebook>(cfg: &RetrievalConfig, codebook: C, w: &Workload) -> driftkv::Result<Engine<C>> {
    let mut engine = Engine::with_codebook(cfg.clone(), codebook)?.with_oracle(true);
    engine.prefill(&w.prefill_keys, &w.prefill_values)?;
    Ok(engine)
}

/// Attends with every workload query against a fixed cache.
pub fn measure_queries<C: DirectionCodebook>(
    engine: &Engine<C>,
    w: &Workload,
    method: &str,
    with_error: bool,
) -> driftkv::Result<Vec<MetricsRow>> {
    (0..w.query_count())
        .map(|i| {
            let q = w.query(i);
            let start = Instant::now();
            let mut out = engine.attend(q)?;
            let wall = start.elapsed().as_secs_f64();
            out.trace.step = i as u64;
            let err = match with_error {
                true => Some(relative_l2(&out.output, &engine.oracle_attention(q).expect("oracle enabled")?)),
                false => None,
            };
            Ok(MetricsRow::from_trace(method, &out.trace, err, wall))
        })
        .collect()
}

/// Mean absolute error of the rerank estimate of `⟨k, q⟩` over `pairs`
/// independent standard-normal pairs, with and without α correction.
pub fn ip_error(cfg: &RetrievalConfig, pairs: usize, seed: u64) -> driftkv::Result<(f64, f64)> {
    let on = KeyEncoder::new(&RetrievalConfig { alpha_correction: true, ..cfg.clone() });
    let off = KeyEncoder::new(&RetrievalConfig { alpha_correction: false, ..cfg.clone() });
    let cb = AnalyticCodebook::new(cfg.subspace_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut err_on, mut err_off) = (0.0f64, 0.0f64);
    for _ in 0..pairs {
        let k: Vec<f32> = (0..cfg.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let q: Vec<f32> = (0..cfg.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let truth: f64 = k.iter().zip(&q).map(|(a, b)| *a as f64 * *b as f64).sum();
        let tq = on.transformer().transform(&q)?;
        err_on += (estimate_ip(&tq, &on.build_metadata(&k, &cb)?, on.levels()) as f64 - truth).abs();
        err_off += (estimate_ip(&tq, &off.build_metadata(&k, &cb)?, off.levels()) as f64 - truth).abs();
    }
    Ok((err_on / pairs as f64, err_off / pairs as f64))
}

#[derive(Debug, Clone)]
pub struct AlphaReport {
    pub mae_corrected: f64,
    pub mae_uncorrected: f64,
    pub recall_corrected: f64,
    pub recall_uncorrected: f64,
    pub rows: Vec<MetricsRow>,
}

pub fn alpha_ablation(
    cfg: &RetrievalConfig,
    n: usize,
    queries: usize,
    pairs: usize,
    seed: u64,
) -> anyhow::Result<AlphaReport> {
    let (mae_corrected, mae_uncorrected) = ip_error(cfg, pairs, seed)?;
    let w = gen_isotropic(n, cfg.dim, queries, seed);
    let runs: Vec<Vec<MetricsRow>> = [true, false]
        .into_par_iter()
        .map(|on| {
            let c = RetrievalConfig { alpha_correction: on, ..cfg.clone() };
            let engine = prefilled(&c, AnalyticCodebook::new(c.subspace_dim()), &w)?;
            measure_queries(&engine, &w, if on { "alpha" } else { "no_alpha" }, false)
        })
        .collect::<driftkv::Result<_>>()?;
    let recall = |rows: &[MetricsRow]| mean(rows.iter().map(|r| r.final_recall)).unwrap_or(0.0);
    Ok(AlphaReport {
        mae_corrected,
        mae_uncorrected,
        recall_corrected: recall(&runs[0]),
        recall_uncorrected: recall(&runs[1]),
        rows: runs.concat(),
    })
}

/// Decodes `w`'s stream; only the last `measure_last` steps attend (the
/// stored cache does not depend on retrieval results, so earlier steps just
/// append). Output error is computed every `error_stride` measured steps.
pub fn decode_run<C: DirectionCodebook>(
    cfg: &RetrievalConfig,
    codebook: C,
    w: &Workload,
    method: &str,
    measure_last: usize,
    error_stride: usize,
) -> driftkv::Result<Vec<MetricsRow>> {
    let mut engine = prefilled(cfg, codebook, w)?;
    let steps = w.decode_len();
    let first_measured = steps.saturating_sub(measure_last);
    let mut rows = Vec::with_capacity(measure_last.min(steps));
    for t in 0..steps {
        let (k, v) = (w.decode_key(t), w.decode_value(t));
        if t < first_measured {
            engine.append(k, v)?;
            continue;
        }
        let q = w.query(t);
        let err = match error_stride > 0 && (t - first_measured).is_multiple_of(error_stride) {
            true => Some(engine.oracle_attention(q).expect("oracle enabled")?),
            false => None,
        };
        let start = Instant::now();
        let out = engine.decode_step(q, k, v)?;
        let wall = start.elapsed().as_secs_f64();
        let err = err.map(|full| relative_l2(&out.output, &full));
        let mut row = MetricsRow::from_trace(method, &out.trace, err, wall);
        row.step = t as u64;
        rows.push(row);
    }
    Ok(rows)
}

pub fn decode_with(
    cfg: &RetrievalConfig,
    method: CoarseMethod,
    w: &Workload,
    label: &str,
    measure_last: usize,
    error_stride: usize,
) -> anyhow::Result<Vec<MetricsRow>> {
    Ok(match method {
        CoarseMethod::Analytic => {
            decode_run(cfg, AnalyticCodebook::new(cfg.subspace_dim()), w, label, measure_last, error_stride)?
        }
        CoarseMethod::KMeans => {
            let cb = KMeansCodebook::fit(
                &Transformer::new(cfg),
                &w.prefill_keys,
                cfg.dim,
                cfg.centroid_count(),
                w.seed,
            )?;
            decode_run(cfg, cb, w, label, measure_last, error_stride)?
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftCell {
    pub method: CoarseMethod,
    pub drifting: bool,
    pub final_recall: f64,
    pub coarse_recall: f64,
}

#[derive(Debug, Clone)]
pub struct DriftReport {
    pub cells: Vec<DriftCell>,
    pub rows: Vec<MetricsRow>,
}

impl DriftReport {
    pub fn cell(&self, method: CoarseMethod, drifting: bool) -> &DriftCell {
        self.cells.iter().find(|c| c.method == method && c.drifting == drifting).expect("all cells run")
    }

    /// Drifting recall as a fraction of the no-drift recall.
    pub fn retention(&self, method: CoarseMethod) -> f64 {
        self.cell(method, true).final_recall / self.cell(method, false).final_recall
    }
}

/// Analytic vs k-means coarse stage, each on the drifting stream and on the
/// same stream with zero drift rate.
pub fn drift_ablation(
    cfg: &RetrievalConfig,
    spec: &DriftSpec,
    measure_last: usize,
    error_stride: usize,
) -> anyhow::Result<DriftReport> {
    let still = DriftSpec { drift_rate: 0.0, ..spec.clone() };
    let workloads = [gen_drift(&still), gen_drift(spec)];
    let grid: Vec<(CoarseMethod, bool)> = [CoarseMethod::Analytic, CoarseMethod::KMeans]
        .into_iter()
        .flat_map(|m| [(m, false), (m, true)])
        .collect();
    let results: Vec<(DriftCell, Vec<MetricsRow>)> = grid
        .into_par_iter()
        .map(|(method, drifting)| {
            let label = format!("{}{}", method.name(), if drifting { "" } else { "_nodrift" });
            let rows = decode_with(cfg, method, &workloads[drifting as usize], &label, measure_last, error_stride)?;
            let cell = DriftCell {
                method,
                drifting,
                final_recall: mean(rows.iter().map(|r| r.final_recall)).unwrap_or(0.0),
                coarse_recall: mean(rows.iter().map(|r| r.coarse_recall)).unwrap_or(0.0),
            };
            Ok((cell, rows))
        })
        .collect::<anyhow::Result<_>>()?;
    let (cells, rows): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(DriftReport { cells, rows: rows.concat() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TierCell {
    pub tiers: usize,
    pub max_score: usize,
    pub coarse_recall: f64,
    pub final_recall: f64,
    /// Mean size of the threshold bucket.
    pub threshold_ties: f64,
}

#[derive(Debug, Clone)]
pub struct TierReport {
    pub six: TierCell,
    pub one: TierCell,
    pub rows: Vec<MetricsRow>,
}

pub fn tiers_ablation(
    cfg: &RetrievalConfig,
    n: usize,
    beta: f64,
    queries: usize,
    seed: u64,
) -> anyhow::Result<TierReport> {
    let w = gen_isotropic(n, cfg.dim, queries, seed);
    let variants = [vec![6u8, 5, 4, 3, 2, 1], vec![1u8]];
    let mut out: Vec<(TierCell, Vec<MetricsRow>)> = variants
        .into_par_iter()
        .map(|tiers| {
            let c = RetrievalConfig { tier_bonuses: tiers.clone(), beta_override: Some(beta), ..cfg.clone() };
            let engine = prefilled(&c, AnalyticCodebook::new(c.subspace_dim()), &w)?;
            let label = format!("tiers_{}", tiers.len());
            let mut ties = 0.0;
            let mut rows = Vec::with_capacity(w.query_count());
            for i in 0..w.query_count() {
                let start = Instant::now();
                let mut out = engine.attend(w.query(i))?;
                let wall = start.elapsed().as_secs_f64();
                out.trace.step = i as u64;
                ties += out.trace.threshold_ties as f64;
                rows.push(MetricsRow::from_trace(&label, &out.trace, None, wall));
            }
            let cell = TierCell {
                tiers: tiers.len(),
                max_score: c.max_score(),
                coarse_recall: mean(rows.iter().map(|r| r.coarse_recall)).unwrap_or(0.0),
                final_recall: mean(rows.iter().map(|r| r.final_recall)).unwrap_or(0.0),
                threshold_ties: ties / w.query_count().max(1) as f64,
            };
            Ok((cell, rows))
        })
        .collect::<driftkv::Result<_>>()?;
    let (one, one_rows) = out.pop().unwrap();
    let (six, six_rows) = out.pop().unwrap();
    Ok(TierReport { six, one, rows: [six_rows, one_rows].concat() })
}

#[derive(Debug, Clone)]
pub struct RatioReport {
    /// `(n, mean final recall)` in the order run.
    pub recall: Vec<(usize, f64)>,
    pub rows: Vec<MetricsRow>,
}

pub fn ratio_vs_length(
    cfg: &RetrievalConfig,
    lengths: &[usize],
    beta: f64,
    queries: usize,
    seed: u64,
) -> anyhow::Result<RatioReport> {
    let c = RetrievalConfig { beta_override: Some(beta), ..cfg.clone() };
    let runs: Vec<(usize, Vec<MetricsRow>)> = lengths
        .par_iter()
        .map(|&n| {
            let w = gen_isotropic(n, c.dim, queries, seed.wrapping_add(n as u64));
            let engine = prefilled(&c, AnalyticCodebook::new(c.subspace_dim()), &w)?;
            Ok((n, measure_queries(&engine, &w, &format!("ratio_{beta}"), false)?))
        })
        .collect::<driftkv::Result<_>>()?;
    let recall = runs.iter().map(|(n, rows)| (*n, mean(rows.iter().map(|r| r.final_recall)).unwrap_or(0.0))).collect();
    Ok(RatioReport { recall, rows: runs.into_iter().flat_map(|(_, r)| r).collect() })
}

/// Sizes used by [`run_ablation`].
#[derive(Debug, Clone, PartialEq)]
pub struct AblationPlan {
    pub seed: u64,
    pub queries: usize,
    pub ip_pairs: usize,
    pub static_n: usize,
    pub tier_beta: f64,
    pub ratio_beta: f64,
    pub ratio_lengths: Vec<usize>,
    pub drift: DriftSpec,
    pub measure_last: usize,
    pub error_stride: usize,
    pub prior_samples: usize,
}

impl AblationPlan {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            queries: 200,
            ip_pairs: 10_000,
            static_n: 30_000,
            tier_beta: 0.05,
            ratio_beta: 0.10,
            ratio_lengths: vec![5_000, 10_000, 30_000, 100_000],
            drift: DriftSpec::new(20_000, 20_000, DEFAULT_DRIFT_RATE, seed),
            measure_last: 5_000,
            error_stride: 50,
            prior_samples: 100_000,
        }
    }
}

/// Over a 20K-step decode the mean travels twice the default `‖μ₀‖`.
pub const DEFAULT_DRIFT_RATE: f64 = 1.6e-3;

/// Runs one ablation, writes its CSV to `out` and returns a text summary.
pub fn run_ablation(
    ablation: Ablation,
    cfg: &RetrievalConfig,
    plan: &AblationPlan,
    out: &Path,
) -> anyhow::Result<String> {
    let summary = match ablation {
        Ablation::Alpha => {
            let r = alpha_ablation(cfg, plan.static_n, plan.queries, plan.ip_pairs, plan.seed)?;
            save_csv(&r.rows, out)?;
            format!(
                "ip mae: alpha {:.5} / none {:.5}\nrecall@{}: alpha {:.4} / none {:.4}",
                r.mae_corrected, r.mae_uncorrected, cfg.top_k, r.recall_corrected, r.recall_uncorrected
            )
        }
        Ablation::Drift => {
            let spec = DriftSpec { dim: cfg.dim, seed: plan.seed, ..plan.drift.clone() };
            let r = drift_ablation(cfg, &spec, plan.measure_last, plan.error_stride)?;
            save_csv(&r.rows, out)?;
            let mut s = String::new();
            for c in &r.cells {
                s += &format!(
                    "{:<8} drift={:<5} coarse {:.4} final {:.4}\n",
                    c.method.name(),
                    c.drifting,
                    c.coarse_recall,
                    c.final_recall
                );
            }
            s += &format!(
                "retention: analytic {:.3} kmeans {:.3}",
                r.retention(CoarseMethod::Analytic),
                r.retention(CoarseMethod::KMeans)
            );
            s
        }
        Ablation::Tiers => {
            let r = tiers_ablation(cfg, plan.static_n, plan.tier_beta, plan.queries, plan.seed)?;
            save_csv(&r.rows, out)?;
            let line = |c: &TierCell| {
                format!(
                    "{} tier(s), max score {}: coarse {:.4} final {:.4} ties {:.1}",
                    c.tiers, c.max_score, c.coarse_recall, c.final_recall, c.threshold_ties
                )
            };
            format!("{}\n{}", line(&r.six), line(&r.one))
        }
        Ablation::RatioVsLength => {
            let r = ratio_vs_length(cfg, &plan.ratio_lengths, plan.ratio_beta, plan.queries, plan.seed)?;
            save_csv(&r.rows, out)?;
            r.recall.iter().map(|(n, rec)| format!("n={n}: recall {rec:.4}")).collect::<Vec<_>>().join("\n")
        }
        Ablation::PriorCheck => {
            let m = cfg.subspace_dim();
            let d = cfg.padded_dim();
            if m < 2 {
                bail!("subspace dimension must be at least 2");
            }
            let r = check_priors(d, m, plan.prior_samples, plan.seed);
            save_prior_csv(&r, out)?;
            r.to_string()
        }
    };
    Ok(summary)
}

pub fn save_prior_csv(report: &PriorReport, path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.serialize(report)?;
    w.flush()?;
    Ok(())
}
