use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use driftkv::{Engine, RetrievalConfig, VectorDump};
use driftkv_bench::ablation::{
    decode_with, measure_queries, run_ablation, Ablation, AblationPlan, CoarseMethod, DEFAULT_DRIFT_RATE,
};
use driftkv_bench::metrics::{mean, write_csv};
use driftkv_bench::priors::check_priors;
use driftkv_bench::workload::{gen_drift, gen_isotropic, DriftSpec, Workload};

#[derive(Parser, Debug)]
#[command(name = "driftkv", version, about = "Top-k KV retrieval engine and benchmark harness")]
struct Cli {
    /// Flat key=value config file; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// Output file or directory (stdout when omitted, where that makes sense).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(flatten)]
    overrides: ConfigArgs,

    #[command(subcommand)]
    command: Command,
}

/// One flag per configuration field.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    #[arg(long, global = true)]
    dim: Option<String>,
    #[arg(long, global = true)]
    value_dim: Option<String>,
    #[arg(long, global = true)]
    subspace_count: Option<String>,
    #[arg(long, global = true)]
    radius_centroid_count: Option<String>,
    /// Comma-separated, strictly decreasing, e.g. `6,5,4,3,2,1`.
    #[arg(long, global = true)]
    tier_bonuses: Option<String>,
    /// `len:rho:beta,...`
    #[arg(long, global = true)]
    schedule: Option<String>,
    #[arg(long, global = true)]
    sink_size: Option<String>,
    #[arg(long, global = true)]
    local_size: Option<String>,
    #[arg(long, global = true)]
    update_granularity: Option<String>,
    #[arg(long, global = true)]
    full_attention_threshold: Option<String>,
    #[arg(long, global = true)]
    top_k: Option<String>,
    #[arg(long, global = true)]
    rotation_seed: Option<String>,
    /// `four_bit` or `exact`.
    #[arg(long, global = true)]
    codec: Option<String>,
    #[arg(long, global = true)]
    alpha_correction: Option<String>,
    /// Fixed candidate ratio, or `none` to follow the schedule.
    #[arg(long, global = true)]
    beta_override: Option<String>,
}

impl ConfigArgs {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        let fields = [
            ("dim", &self.dim),
            ("value_dim", &self.value_dim),
            ("subspace_count", &self.subspace_count),
            ("radius_centroid_count", &self.radius_centroid_count),
            ("tier_bonuses", &self.tier_bonuses),
            ("schedule", &self.schedule),
            ("sink_size", &self.sink_size),
            ("local_size", &self.local_size),
            ("update_granularity", &self.update_granularity),
            ("full_attention_threshold", &self.full_attention_threshold),
            ("top_k", &self.top_k),
            ("rotation_seed", &self.rotation_seed),
            ("codec", &self.codec),
            ("alpha_correction", &self.alpha_correction),
            ("beta_override", &self.beta_override),
        ];
        fields.into_iter().filter_map(|(k, v)| v.as_deref().map(|v| (k, v))).collect()
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encode a key dump (or a generated isotropic set) and report the index layout.
    Build {
        /// PKV1 key dump; values default to the keys.
        #[arg(long)]
        keys: Option<PathBuf>,
        #[arg(long)]
        values: Option<PathBuf>,
        /// Keys to generate when no dump is given.
        #[arg(long, default_value_t = 30_000)]
        n: usize,
    },
    /// Run a query batch against a fixed cache and emit per-query metrics.
    Query {
        #[arg(long)]
        keys: Option<PathBuf>,
        #[arg(long)]
        values: Option<PathBuf>,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long, default_value_t = 30_000)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        query_count: usize,
        /// Also compare each output against full attention.
        #[arg(long)]
        output_error: bool,
    },
    /// Run one ablation and write its metrics CSV.
    Bench {
        #[arg(value_parser = parse_ablation)]
        ablation: Ablation,
        #[arg(long)]
        queries: Option<usize>,
        /// Context length for the alpha and tiers ablations.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        drift_rate: Option<f64>,
        #[arg(long)]
        prefill: Option<usize>,
        #[arg(long)]
        decode: Option<usize>,
        #[arg(long)]
        measure_last: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Kolmogorov-Smirnov check of the post-rotation subspace statistics.
    CheckPriors {
        #[arg(long, default_value_t = 128)]
        d: usize,
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Prefill then decode a (possibly drifting) stream, one metrics row per step.
    SimulateDecode {
        #[arg(long, default_value_t = 20_000)]
        prefill: usize,
        #[arg(long, default_value_t = 2_000)]
        decode: usize,
        #[arg(long, default_value_t = 0.0)]
        drift_rate: f64,
        #[arg(long, value_enum, default_value_t = Method::Analytic)]
        method: Method,
        /// Compare with full attention every this many steps (0 disables).
        #[arg(long, default_value_t = 50)]
        error_stride: usize,
        /// Load the stream from a directory written by `gen-workload`.
        #[arg(long)]
        workload: Option<PathBuf>,
    },
    /// Write a synthetic workload as PKV1 files into `--out`.
    GenWorkload {
        #[arg(long, value_enum, default_value_t = Kind::Drift)]
        kind: Kind,
        #[arg(long, default_value_t = 20_000)]
        prefill: usize,
        #[arg(long, default_value_t = 20_000)]
        decode: usize,
        #[arg(long, default_value_t = DEFAULT_DRIFT_RATE)]
        drift_rate: f64,
        #[arg(long, default_value_t = 100)]
        query_count: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Analytic,
    Kmeans,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Isotropic,
    Drift,
}

fn parse_ablation(s: &str) -> Result<Ablation> {
    s.parse()
}

fn load_config(cli: &Cli) -> Result<RetrievalConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RetrievalConfig::from_kv_str(&text)?
        }
        None => RetrievalConfig::default(),
    };
    let mut pairs = cli.overrides.pairs();
    pairs.sort_by_key(|(k, _)| *k != "dim");
    for (k, v) in pairs {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn load_dump(path: &Path, dim: usize) -> Result<Vec<f32>> {
    let d = VectorDump::load(path).with_context(|| format!("reading {}", path.display()))?;
    if d.dim != dim {
        bail!("{} has dim {}, config expects {dim}", path.display(), d.dim);
    }
    Ok(d.data)
}

/// Keys, values and queries from dumps, falling back to a generated isotropic set.
fn static_workload(
    cfg: &RetrievalConfig,
    keys: &Option<PathBuf>,
    values: &Option<PathBuf>,
    queries: &Option<PathBuf>,
    n: usize,
    query_count: usize,
    seed: u64,
) -> Result<Workload> {
    let mut w = gen_isotropic(if keys.is_some() { 0 } else { n }, cfg.dim, query_count, seed);
    if let Some(k) = keys {
        w.prefill_keys = load_dump(k, cfg.dim)?;
        w.prefill_values = w.prefill_keys.clone();
    }
    if let Some(v) = values {
        w.prefill_values = load_dump(v, cfg.value_dim)?;
    }
    if let Some(q) = queries {
        w.queries = load_dump(q, cfg.dim)?;
    }
    Ok(w)
}

fn main() -> Result<()> {
    env_logger::init();
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Build { keys, values, n } => {
            let w = static_workload(&cfg, keys, values, &None, *n, 0, cli.seed)?;
            let start = Instant::now();
            let engine = Engine::from_prefill(cfg.clone(), &w.prefill_keys, &w.prefill_values)?;
            let elapsed = start.elapsed().as_secs_f64();
            let r = engine.regions();
            let meta = engine.store().metadata();
            let mut out = output(&cli.out)?;
            writeln!(out, "{cfg}")?;
            writeln!(out, "tokens={}", engine.total_len())?;
            writeln!(out, "sink={:?} retrieval={:?} local={:?}", r.sink, r.retrieval, r.local)?;
            writeln!(out, "metadata_rows={}", meta.len())?;
            writeln!(out, "metadata_bytes_per_key={}", meta.bytes_per_key())?;
            writeln!(out, "full_kv_bytes_per_key={}", (cfg.dim + cfg.value_dim) * 4)?;
            writeln!(out, "dense_mode={}", engine.is_dense())?;
            writeln!(out, "build_seconds={elapsed:.3}")?;
        }
        Command::Query { keys, values, queries, n, query_count, output_error } => {
            let w = static_workload(&cfg, keys, values, queries, *n, *query_count, cli.seed)?;
            let mut engine = Engine::new(cfg.clone())?.with_oracle(true);
            engine.prefill(&w.prefill_keys, &w.prefill_values)?;
            let rows = measure_queries(&engine, &w, "analytic", *output_error)?;
            write_csv(&rows, output(&cli.out)?)?;
            eprintln!(
                "queries={} mean_final_recall={:.4} mean_coarse_recall={:.4}",
                rows.len(),
                mean(rows.iter().map(|r| r.final_recall)).unwrap_or(f64::NAN),
                mean(rows.iter().map(|r| r.coarse_recall)).unwrap_or(f64::NAN),
            );
        }
        Command::Bench { ablation, queries, n, drift_rate, prefill, decode, measure_last, samples } => {
            let mut plan = AblationPlan::new(cli.seed);
            if let Some(q) = queries {
                plan.queries = *q;
            }
            if let Some(n) = n {
                plan.static_n = *n;
            }
            if let Some(r) = drift_rate {
                plan.drift.drift_rate = *r;
            }
            if let Some(p) = prefill {
                plan.drift.prefill_n = *p;
            }
            if let Some(d) = decode {
                plan.drift.decode_n = *d;
            }
            if let Some(m) = measure_last {
                plan.measure_last = *m;
            }
            if let Some(s) = samples {
                plan.prior_samples = *s;
            }
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(format!("{ablation}.csv")));
            let summary = run_ablation(*ablation, &cfg, &plan, &out)?;
            println!("{summary}");
            eprintln!("wrote {}", out.display());
        }
        Command::CheckPriors { d, m, samples } => {
            if !d.is_power_of_two() || *m < 2 || d % m != 0 {
                bail!("need a power-of-two D divisible by m >= 2");
            }
            let start = Instant::now();
            let report = check_priors(*d, *m, *samples, cli.seed);
            println!("{report}");
            println!("seconds={:.2}", start.elapsed().as_secs_f64());
            if let Some(out) = &cli.out {
                driftkv_bench::ablation::save_prior_csv(&report, out)?;
            }
        }
        Command::SimulateDecode { prefill, decode, drift_rate, method, error_stride, workload } => {
            let w = match workload {
                Some(dir) => Workload::load(dir, cli.seed)?,
                None => gen_drift(&DriftSpec { dim: cfg.dim, ..DriftSpec::new(*prefill, *decode, *drift_rate, cli.seed) }),
            };
            let method = match method {
                Method::Analytic => CoarseMethod::Analytic,
                Method::Kmeans => CoarseMethod::KMeans,
            };
            let rows = decode_with(&cfg, method, &w, method.name(), w.decode_len(), *error_stride)?;
            write_csv(&rows, output(&cli.out)?)?;
            eprintln!(
                "steps={} mean_final_recall={:.4} mean_output_rel_error={:.5} cold_fetches={}",
                rows.len(),
                mean(rows.iter().map(|r| r.final_recall)).unwrap_or(f64::NAN),
                mean(rows.iter().map(|r| r.output_rel_error)).unwrap_or(f64::NAN),
                rows.iter().map(|r| r.cold_fetches).sum::<usize>(),
            );
        }
        Command::GenWorkload { kind, prefill, decode, drift_rate, query_count } => {
            let Some(dir) = &cli.out else { bail!("gen-workload needs --out <dir>") };
            let w = match kind {
                Kind::Isotropic => gen_isotropic(*prefill, cfg.dim, *query_count, cli.seed),
                Kind::Drift => gen_drift(&DriftSpec { dim: cfg.dim, ..DriftSpec::new(*prefill, *decode, *drift_rate, cli.seed) }),
            };
            w.save(dir)?;
            eprintln!("wrote {} prefill / {} decode rows to {}", w.prefill_len(), w.decode_len(), dir.display());
        }
    }
    Ok(())
}
