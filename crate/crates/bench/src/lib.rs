//! Benchmark harness for `driftkv`: synthetic workloads, a learned-centroid
//! baseline, prior checks and ablation runs that emit per-step metrics.

pub mod ablation;
pub mod kmeans;
pub mod metrics;
pub mod priors;
pub mod workload;
