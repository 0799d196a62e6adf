//! Prefill/decode facade over one attention head's KV stream.

use std::path::Path;

use crate::attention::{approx_attention, brute_topk, full_attention, recall_at_k, KvView};
use crate::codebook::{AnalyticCodebook, DirectionCodebook};
use crate::coarse::{accumulate, bucket_topk, candidate_count, schedule, CandidateSet, CoarseCounters};
use crate::config::RetrievalConfig;
use crate::error::{Error, Result};
use crate::quantizer::KeyEncoder;
use crate::rerank::{rerank_topk, RerankResult};
use crate::store::{FetchedKv, FlushEvent, RegionMap, TieredStore};

/// Outcome of the two retrieval stages for one query, before any fetch.
#[derive(Debug, Clone)]
pub struct Retrieval {
    pub rho: f64,
    pub beta: f64,
    pub candidates: CandidateSet,
    pub reranked: RerankResult,
    pub coarse: CoarseCounters,
}

impl Retrieval {
    /// Selected retrieval-zone indices, best first.
    pub fn selected(&self) -> Vec<usize> {
        self.reranked.indices.iter().map(|&i| i as usize).collect()
    }
}

/// Per-step record of what the engine did.
#[derive(Debug, Clone, Default)]
pub struct StepTrace {
    pub step: u64,
    /// Context length seen by the query (before the new token is appended).
    pub total_len: usize,
    pub retrieval_len: usize,
    pub dense: bool,
    pub rho: f64,
    pub beta: f64,
    pub candidate_count: usize,
    pub k: usize,
    pub fetched: usize,
    pub threshold_score: Option<u8>,
    pub threshold_ties: usize,
    /// Retrieval-zone indices whose full KV was fetched, best first.
    pub selected: Vec<usize>,
    pub coarse_recall: Option<f64>,
    pub final_recall: Option<f64>,
    pub flush: Option<FlushEvent>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub output: Vec<f32>,
    pub trace: StepTrace,
}

/// Unmetered full-precision copy of every token, kept only when the oracle
/// is enabled.
#[derive(Debug, Clone, Default)]
struct Shadow {
    keys: Vec<f32>,
    values: Vec<f32>,
}

#[derive(Debug)]
pub struct Engine<C: DirectionCodebook = AnalyticCodebook> {
    cfg: RetrievalConfig,
    encoder: KeyEncoder,
    codebook: C,
    store: TieredStore,
    shadow: Option<Shadow>,
    step: u64,
}

impl Engine<AnalyticCodebook> {
    pub fn new(cfg: RetrievalConfig) -> Result<Self> {
        let cb = AnalyticCodebook::new(cfg.subspace_dim());
        Self::with_codebook(cfg, cb)
    }

    /// Builds an engine and stores a prefill sequence.
    pub fn from_prefill(cfg: RetrievalConfig, keys: &[f32], values: &[f32]) -> Result<Self> {
        let mut engine = Self::new(cfg)?;
        engine.prefill(keys, values)?;
        Ok(engine)
    }
}

impl<C: DirectionCodebook> Engine<C> {
    pub fn with_codebook(cfg: RetrievalConfig, codebook: C) -> Result<Self> {
        cfg.validate()?;
        let encoder = KeyEncoder::new(&cfg);
        let store = TieredStore::new(&cfg);
        Ok(Self { cfg, encoder, codebook, store, shadow: None, step: 0 })
    }

    /// Keeps an unmetered copy of all tokens so each step can report recall
    /// against exact top-k.
    pub fn with_oracle(mut self, enabled: bool) -> Self {
        assert_eq!(self.store.total_len(), 0, "enable the oracle before storing tokens");
        self.shadow = enabled.then(Shadow::default);
        self
    }

    pub fn with_file_arena(mut self, dir: impl AsRef<Path>) -> Result<Self> {
        self.store = self.store.with_file_arena(dir)?;
        Ok(self)
    }

    pub fn set_deferred_flush(&mut self, deferred: bool) {
        self.store.set_deferred_flush(deferred);
    }

    pub fn prefill(&mut self, keys: &[f32], values: &[f32]) -> Result<()> {
        self.store.prefill(keys, values, &self.encoder, &self.codebook)?;
        if let Some(s) = &mut self.shadow {
            s.keys.extend_from_slice(keys);
            s.values.extend_from_slice(values);
        }
        Ok(())
    }

    pub fn config(&self) -> &RetrievalConfig {
        &self.cfg
    }

    pub fn encoder(&self) -> &KeyEncoder {
        &self.encoder
    }

    pub fn codebook(&self) -> &C {
        &self.codebook
    }

    pub fn store(&self) -> &TieredStore {
        &self.store
    }

    pub fn regions(&self) -> RegionMap {
        self.store.regions()
    }

    pub fn total_len(&self) -> usize {
        self.store.total_len()
    }

    /// Dense attention is used while the context is below the threshold.
    pub fn is_dense(&self) -> bool {
        self.store.total_len() < self.cfg.full_attention_threshold
    }

    pub fn has_oracle(&self) -> bool {
        self.shadow.is_some()
    }

    /// Coarse voting and reranking over the current retrieval zone.
    pub fn retrieve(&self, q: &[f32]) -> Result<Retrieval> {
        let tq = self.encoder.transformer().transform(q)?;
        let table = self.store.metadata();
        let n = table.len();
        let (rho, beta) = schedule(n, &self.cfg);
        let scores = accumulate(&tq, table.centroids(), &self.codebook, rho, &self.cfg.tier_bonuses);
        let candidates = bucket_topk(&scores.scores, candidate_count(n, beta, self.cfg.top_k));
        let reranked = rerank_topk(&tq, &candidates, table, self.encoder.levels(), self.cfg.top_k);
        Ok(Retrieval { rho, beta, candidates, reranked, coarse: scores.counters })
    }

    /// Exact top-k over the retrieval zone from the oracle copy.
    pub fn oracle_topk(&self, q: &[f32], k: usize) -> Option<Vec<usize>> {
        let shadow = self.shadow.as_ref()?;
        let r = self.store.regions().retrieval;
        let keys = &shadow.keys[r.start * self.cfg.dim..r.end * self.cfg.dim];
        Some(brute_topk(q, keys, self.cfg.dim, k.min(r.len())))
    }

    /// Exact attention over every token from the oracle copy.
    pub fn oracle_attention(&self, q: &[f32]) -> Option<Result<Vec<f32>>> {
        let s = self.shadow.as_ref()?;
        Some(full_attention(q, &KvView::new(&s.keys, &s.values, self.cfg.dim, self.cfg.value_dim)))
    }

    /// Attends with `q` over the current cache, then appends `(key, value)`.
    pub fn decode_step(&mut self, q: &[f32], key: &[f32], value: &[f32]) -> Result<StepOutput> {
        let mut out = self.attend(q)?;
        out.trace.flush = self.append(key, value)?;
        self.step += 1;
        Ok(out)
    }

    /// One attention read without changing the cache (apart from fetch counters).
    pub fn attend(&self, q: &[f32]) -> Result<StepOutput> {
        if q.len() != self.cfg.dim {
            return Err(Error::DimensionMismatch { expected: self.cfg.dim, actual: q.len() });
        }
        let mut trace = StepTrace {
            step: self.step,
            total_len: self.store.total_len(),
            retrieval_len: self.store.retrieval_len(),
            ..StepTrace::default()
        };
        if self.is_dense() || self.store.retrieval_len() == 0 {
            trace.dense = self.is_dense();
            return Ok(StepOutput { output: self.dense_output(q)?, trace });
        }
        let retrieval = self.retrieve(q)?;
        let selected = retrieval.selected();
        let fetched = self.store.fetch_topk(&selected)?;
        trace.rho = retrieval.rho;
        trace.beta = retrieval.beta;
        trace.candidate_count = retrieval.candidates.len();
        trace.k = self.cfg.top_k;
        trace.fetched = selected.len();
        trace.threshold_score = Some(retrieval.candidates.threshold);
        trace.threshold_ties = retrieval.candidates.threshold_bucket_size;
        if let Some(oracle) = self.oracle_topk(q, self.cfg.top_k) {
            let coarse: Vec<usize> = retrieval.candidates.indices.iter().map(|&i| i as usize).collect();
            trace.coarse_recall = Some(recall_at_k(&coarse, &oracle));
            trace.final_recall = Some(recall_at_k(&selected, &oracle));
        }
        trace.selected = selected;
        Ok(StepOutput { output: self.hot_output(q, &fetched)?, trace })
    }

    /// Appends a token without attending.
    pub fn append(&mut self, key: &[f32], value: &[f32]) -> Result<Option<FlushEvent>> {
        let ev = self.store.append(key, value, &self.encoder, &self.codebook)?;
        if let Some(s) = &mut self.shadow {
            s.keys.extend_from_slice(key);
            s.values.extend_from_slice(value);
        }
        Ok(ev)
    }

    pub fn flush(&mut self) -> Result<FlushEvent> {
        self.store.flush(&self.encoder, &self.codebook)
    }

    fn dense_output(&self, q: &[f32]) -> Result<Vec<f32>> {
        let (mut keys, mut values) = self.store.hot_kv();
        if self.store.retrieval_len() > 0 {
            let cold = self.store.resident_retrieval()?;
            keys.extend_from_slice(cold.keys);
            values.extend_from_slice(cold.values);
        }
        full_attention(q, &KvView::new(&keys, &values, self.cfg.dim, self.cfg.value_dim))
    }

    fn hot_output(&self, q: &[f32], fetched: &FetchedKv) -> Result<Vec<f32>> {
        let (mut keys, mut values) = self.store.hot_kv();
        keys.extend_from_slice(&fetched.keys);
        values.extend_from_slice(&fetched.values);
        let kv = KvView::new(&keys, &values, self.cfg.dim, self.cfg.value_dim);
        let all: Vec<usize> = (0..kv.len()).collect();
        approx_attention(q, &all, &kv)
    }
}
