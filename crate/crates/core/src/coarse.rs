//! Stage-I candidate generation: tiered collision voting over per-key centroid
//! ids followed by a counting-histogram top-β selection.

use crate::codebook::{tier_of, CentroidId, DirectionCodebook};
use crate::config::RetrievalConfig;
use crate::transform::TransformedVector;

/// `(ρ, β)` for a retrieval zone of `n` keys.
///
/// Picks the band with the largest `min_length ≤ n` (or the first band), raises
/// `β` so that `⌈βn⌉ ≥ top_k`, and raises `ρ` to keep `ρ ≥ β`.
pub fn schedule(n: usize, cfg: &RetrievalConfig) -> (f64, f64) {
    let entry = cfg
        .schedule
        .iter()
        .rev()
        .find(|e| e.min_length <= n)
        .or_else(|| cfg.schedule.first())
        .expect("validated config has a non-empty schedule");
    let (mut rho, mut beta) = (entry.rho, entry.beta);
    if let Some(b) = cfg.beta_override {
        beta = b;
    }
    if n > 0 && (beta * n as f64).ceil() < cfg.top_k.min(n) as f64 {
        beta = (cfg.top_k as f64 / n as f64).min(1.0);
    }
    if rho < beta {
        rho = beta;
    }
    (rho, beta)
}

/// Candidate pool size `⌈βn⌉`, never below `min(top_k, n)`.
pub fn candidate_count(n: usize, beta: f64, top_k: usize) -> usize {
    let c = (beta * n as f64).ceil() as usize;
    c.max(top_k.min(n)).min(n)
}

/// Probes per subspace, `⌈ρ·K⌉`, at least one.
pub fn probe_count(rho: f64, codebook_len: usize) -> usize {
    ((rho * codebook_len as f64).ceil() as usize).clamp(1, codebook_len)
}

/// Column-major table of centroid ids: one column per subspace, one row per
/// retrieval-zone key.
#[derive(Debug, Clone, Default)]
pub struct CentroidTable {
    columns: Vec<Vec<CentroidId>>,
}

impl CentroidTable {
    pub fn new(subspace_count: usize) -> Self {
        Self { columns: vec![Vec::new(); subspace_count] }
    }

    pub fn push(&mut self, ids: &[CentroidId]) {
        assert_eq!(ids.len(), self.columns.len());
        for (col, id) in self.columns.iter_mut().zip(ids) {
            col.push(*id);
        }
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subspace_count(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, b: usize) -> &[CentroidId] {
        &self.columns[b]
    }

    pub fn row(&self, i: usize) -> Vec<CentroidId> {
        self.columns.iter().map(|c| c[i]).collect()
    }
}

/// Work done by one [`accumulate`] call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CoarseCounters {
    /// Centroid-id gathers (one per key per subspace).
    pub gathers: u64,
    /// Probed centroids across all subspaces.
    pub probes: u64,
    /// Coordinate operations spent on probing (`probes × m`).
    pub probe_work: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollisionScores {
    pub scores: Vec<u8>,
    pub counters: CoarseCounters,
}

/// Per-subspace bonus lookup tables for one query: entry `c` of table `b` is
/// the bonus of centroid `c` in subspace `b`.
pub fn bonus_tables<C: DirectionCodebook + ?Sized>(
    q: &TransformedVector,
    codebook: &C,
    rho: f64,
    tier_bonuses: &[u8],
) -> (Vec<Vec<u8>>, CoarseCounters) {
    let k = codebook.len();
    let t = probe_count(rho, k);
    let m = q.subspace_dim() as u64;
    let mut counters = CoarseCounters::default();
    let tables = (0..q.subspace_count())
        .map(|b| {
            let probes = codebook.top_probes(b, q.direction(b), t);
            counters.probes += probes.len() as u64;
            counters.probe_work += probes.len() as u64 * m;
            let mut table = vec![0u8; k];
            for (rank, id) in probes.ids().enumerate() {
                table[id.index()] = tier_of(Some(rank), t, tier_bonuses);
            }
            table
        })
        .collect();
    (tables, counters)
}

/// Collision score of every key in `ids`: the sum over subspaces of the tier
/// bonus of the key's centroid in the query's probe list.
pub fn accumulate<C: DirectionCodebook + ?Sized>(
    q: &TransformedVector,
    ids: &CentroidTable,
    codebook: &C,
    rho: f64,
    tier_bonuses: &[u8],
) -> CollisionScores {
    let (tables, mut counters) = bonus_tables(q, codebook, rho, tier_bonuses);
    let n = ids.len();
    let mut scores = vec![0u8; n];
    for (b, table) in tables.iter().enumerate() {
        gather_add(&mut scores, ids.column(b), table);
    }
    counters.gathers = (n * ids.subspace_count()) as u64;
    CollisionScores { scores, counters }
}

#[cfg(feature = "parallel")]
fn gather_add(scores: &mut [u8], column: &[CentroidId], table: &[u8]) {
    use rayon::prelude::*;
    const CHUNK: usize = 1 << 14;
    scores
        .par_chunks_mut(CHUNK)
        .zip(column.par_chunks(CHUNK))
        .for_each(|(s, c)| gather_add_serial(s, c, table));
}

#[cfg(not(feature = "parallel"))]
fn gather_add(scores: &mut [u8], column: &[CentroidId], table: &[u8]) {
    gather_add_serial(scores, column, table)
}

fn gather_add_serial(scores: &mut [u8], column: &[CentroidId], table: &[u8]) {
    for (s, id) in scores.iter_mut().zip(column) {
        *s += table[id.index()];
    }
}

/// Surviving retrieval-zone indices after pruning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    /// Ascending key indices.
    pub indices: Vec<u32>,
    /// Score of the lowest admitted bucket.
    pub threshold: u8,
    /// Keys in the threshold bucket (admitted or not).
    pub threshold_bucket_size: usize,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn all(n: usize) -> Self {
        Self { indices: (0..n as u32).collect(), threshold: 0, threshold_bucket_size: n }
    }
}

/// The `count` highest-scoring keys by counting histogram; inside the threshold
/// bucket larger (more recent) indices win.
pub fn bucket_topk(scores: &[u8], count: usize) -> CandidateSet {
    let n = scores.len();
    let count = count.min(n);
    let mut hist = [0usize; 256];
    for &s in scores {
        hist[s as usize] += 1;
    }
    let mut above = 0usize;
    let mut threshold = 0u8;
    for s in (0..256).rev() {
        if above + hist[s] >= count {
            threshold = s as u8;
            break;
        }
        above += hist[s];
    }
    if count == 0 {
        return CandidateSet { indices: Vec::new(), threshold: u8::MAX, threshold_bucket_size: 0 };
    }
    let mut quota = count - above;
    let mut take = vec![false; n];
    for i in (0..n).rev() {
        let s = scores[i];
        if s > threshold {
            take[i] = true;
        } else if s == threshold && quota > 0 {
            take[i] = true;
            quota -= 1;
        }
    }
    let indices = take
        .iter()
        .enumerate()
        .filter_map(|(i, &t)| t.then_some(i as u32))
        .collect();
    CandidateSet { indices, threshold, threshold_bucket_size: hist[threshold as usize] }
}
