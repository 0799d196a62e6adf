//! Per-step metric records and their CSV form.

use std::io;
use std::path::Path;

use driftkv::StepTrace;
use serde::{Deserialize, Serialize};

pub const HEADER: &str =
    "method,n,step,rho,beta,C,k,coarse_recall@k,final_recall@k,output_rel_error,cold_fetches,wall_time";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub n: usize,
    pub step: u64,
    pub rho: f64,
    pub beta: f64,
    #[serde(rename = "C")]
    pub candidates: usize,
    pub k: usize,
    #[serde(rename = "coarse_recall@k")]
    pub coarse_recall: Option<f64>,
    #[serde(rename = "final_recall@k")]
    pub final_recall: Option<f64>,
    pub output_rel_error: Option<f64>,
    pub cold_fetches: usize,
    /// Seconds.
    pub wall_time: f64,
}

impl MetricsRow {
    pub fn from_trace(method: &str, trace: &StepTrace, output_rel_error: Option<f64>, wall_time: f64) -> Self {
        Self {
            method: method.to_string(),
            n: trace.total_len,
            step: trace.step,
            rho: trace.rho,
            beta: trace.beta,
            candidates: trace.candidate_count,
            k: trace.k,
            coarse_recall: trace.coarse_recall,
            final_recall: trace.final_recall,
            output_rel_error,
            cold_fetches: trace.fetched,
            wall_time,
        }
    }
}

pub fn write_csv<W: io::Write>(rows: &[MetricsRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(HEADER.split(','))?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(rows: &[MetricsRow], path: impl AsRef<Path>) -> csv::Result<()> {
    write_csv(rows, std::fs::File::create(path)?)
}

pub fn read_csv<R: io::Read>(input: R) -> csv::Result<Vec<MetricsRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

/// Mean of the present values, `None` when there are none.
pub fn mean(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, count) = values.into_iter().flatten().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}
