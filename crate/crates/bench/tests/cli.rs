use std::path::PathBuf;
use std::process::{Command, Output};

use driftkv::VectorDump;
use driftkv_bench::metrics::{read_csv, HEADER};

fn driftkv(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_driftkv")).args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "driftkv {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("driftkv-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn check_priors_reports_both_statistics() {
    let dir = scratch("priors");
    let csv = dir.join("priors.csv");
    let out = driftkv(&["check-priors", "--d", "64", "--m", "8", "--samples", "2000", "--out", csv.to_str().unwrap()]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("Beta(4, 28)"), "{text}");
    assert!(text.contains("Beta(0.5, 3.5)"), "{text}");
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("dim,subspace_dim,samples"));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn query_writes_metrics_csv_with_exact_header() {
    let dir = scratch("query");
    let csv = dir.join("q.csv");
    driftkv(&[
        "query", "--n", "3000", "--query-count", "5", "--dim", "32", "--output-error", "--out",
        csv.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), HEADER);
    let rows = read_csv(std::fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.k == 100 && r.cold_fetches == 100 && r.output_rel_error.is_some()));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn generated_workload_feeds_build_and_simulate_decode() {
    let dir = scratch("workload");
    let wl = dir.join("wl");
    driftkv(&[
        "gen-workload", "--kind", "drift", "--prefill", "2500", "--decode", "40", "--dim", "16", "--out",
        wl.to_str().unwrap(),
    ]);
    let keys = VectorDump::load(wl.join("prefill_keys.pkv")).unwrap();
    assert_eq!((keys.dim, keys.data.len()), (16, 2500 * 16));
    let bytes = std::fs::read(wl.join("queries.pkv")).unwrap();
    assert_eq!(&bytes[..4], b"PKV1");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 40);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 16);

    let out = driftkv(&["build", "--keys", wl.join("prefill_keys.pkv").to_str().unwrap(), "--dim", "16"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("tokens=2500"), "{text}");
    assert!(text.contains("dense_mode=false"), "{text}");

    let csv = dir.join("decode.csv");
    driftkv(&[
        "simulate-decode", "--workload", wl.to_str().unwrap(), "--dim", "16", "--method", "kmeans", "--out",
        csv.to_str().unwrap(),
    ]);
    let rows = read_csv(std::fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 40);
    assert!(rows.iter().all(|r| r.method == "kmeans" && r.final_recall.is_some()));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn config_file_and_flags_combine() {
    let dir = scratch("config");
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, "# small run\ndim = 32\ntop_k = 20\n").unwrap();
    let out = driftkv(&["build", "--config", cfg.to_str().unwrap(), "--n", "3000", "--sink-size", "8"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("top_k=20"), "{text}");
    assert!(text.contains("sink=0..8"), "{text}");
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn tiers_bench_writes_both_variants() {
    let dir = scratch("tiers");
    let csv = dir.join("tiers.csv");
    let out = driftkv(&["bench", "tiers", "--n", "4000", "--queries", "4", "--dim", "32", "--out", csv.to_str().unwrap()]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("6 tier(s), max score 24"), "{text}");
    assert!(text.contains("1 tier(s), max score 4"), "{text}");
    let rows = read_csv(std::fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.iter().filter(|r| r.method == "tiers_6").count(), 4);
    assert_eq!(rows.iter().filter(|r| r.method == "tiers_1").count(), 4);
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn invalid_config_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_driftkv"))
        .args(["build", "--n", "10", "--tier-bonuses", "1,2"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
