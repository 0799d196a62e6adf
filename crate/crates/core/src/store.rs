//! Tiered KV storage with the four-region sliding window.
//!
//! Token positions are laid out as `sink | retrieval | local | update buffer`.
//! Sink, local and buffer tokens are hot (full precision, always readable).
//! Retrieval-zone tokens keep only their metadata hot; their full-precision
//! KV lives in a cold arena that can be read only through [`TieredStore::fetch_topk`],
//! which is metered. Until the context reaches the full-attention threshold the
//! arena stays resident and may be scanned densely.

use std::ops::Range;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::attention::KvView;
use crate::codebook::DirectionCodebook;
use crate::config::{Codec, RetrievalConfig};
use crate::dump::DumpFile;
use crate::error::{Error, Result};
use crate::metadata::MetadataTable;
use crate::quantizer::{KeyEncoder, KeyMetadata};

#[derive(Debug, Clone, Default, PartialEq)]
struct HotBlock {
    keys: Vec<f32>,
    values: Vec<f32>,
    len: usize,
}

impl HotBlock {
    fn push(&mut self, key: &[f32], value: &[f32]) {
        self.keys.extend_from_slice(key);
        self.values.extend_from_slice(value);
        self.len += 1;
    }

    fn extend(&mut self, other: &HotBlock) {
        self.keys.extend_from_slice(&other.keys);
        self.values.extend_from_slice(&other.values);
        self.len += other.len;
    }

    /// Removes and returns the oldest `count` tokens.
    fn drain_front(&mut self, count: usize, dim: usize, value_dim: usize) -> HotBlock {
        let keys = self.keys.drain(..count * dim).collect();
        let values = self.values.drain(..count * value_dim).collect();
        self.len -= count;
        HotBlock { keys, values, len: count }
    }

    fn clear(&mut self) {
        self.keys.clear();
        self.values.clear();
        self.len = 0;
    }
}

#[derive(Debug)]
enum ColdBackend {
    Memory { keys: Vec<f32>, values: Vec<f32> },
    File { keys: Mutex<DumpFile>, values: Mutex<DumpFile> },
}

/// Append-only full-precision storage for retrieval-zone tokens.
#[derive(Debug)]
struct ColdArena {
    backend: ColdBackend,
    dim: usize,
    value_dim: usize,
    len: usize,
    resident: bool,
}

impl ColdArena {
    fn append(&mut self, block: &HotBlock) -> Result<()> {
        match &mut self.backend {
            ColdBackend::Memory { keys, values } => {
                keys.extend_from_slice(&block.keys);
                values.extend_from_slice(&block.values);
            }
            ColdBackend::File { keys, values } => {
                let (kf, vf) = (keys.get_mut().unwrap(), values.get_mut().unwrap());
                for i in 0..block.len {
                    kf.append(&block.keys[i * self.dim..(i + 1) * self.dim]).map_err(io_err)?;
                    vf.append(&block.values[i * self.value_dim..(i + 1) * self.value_dim])
                        .map_err(io_err)?;
                }
            }
        }
        self.len += block.len;
        Ok(())
    }

    fn read_into(&self, i: usize, key: &mut [f32], value: &mut [f32]) -> Result<()> {
        match &self.backend {
            ColdBackend::Memory { keys, values } => {
                key.copy_from_slice(&keys[i * self.dim..(i + 1) * self.dim]);
                value.copy_from_slice(&values[i * self.value_dim..(i + 1) * self.value_dim]);
            }
            ColdBackend::File { keys, values } => {
                keys.lock().unwrap().read_row(i, key).map_err(io_err)?;
                values.lock().unwrap().read_row(i, value).map_err(io_err)?;
            }
        }
        Ok(())
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Config(format!("cold arena I/O: {e}"))
}

/// Full-precision records returned by a metered fetch.
#[derive(Debug, Clone, PartialEq)]
pub struct FetchedKv {
    pub indices: Vec<usize>,
    pub keys: Vec<f32>,
    pub values: Vec<f32>,
}

/// Cumulative store counters.
#[derive(Debug, Default)]
pub struct StoreCounters {
    cold_fetch_count: AtomicU64,
    bytes_fetched: AtomicU64,
    eviction_count: AtomicU64,
    fetch_calls: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CounterSnapshot {
    pub cold_fetch_count: u64,
    pub bytes_fetched: u64,
    pub eviction_count: u64,
    pub fetch_calls: u64,
}

impl StoreCounters {
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            cold_fetch_count: self.cold_fetch_count.load(Ordering::Relaxed),
            bytes_fetched: self.bytes_fetched.load(Ordering::Relaxed),
            eviction_count: self.eviction_count.load(Ordering::Relaxed),
            fetch_calls: self.fetch_calls.load(Ordering::Relaxed),
        }
    }
}

/// Token-position ranges of the four regions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMap {
    pub sink: Range<usize>,
    pub retrieval: Range<usize>,
    pub local: Range<usize>,
    pub update_buffer: Range<usize>,
}

impl RegionMap {
    pub fn total(&self) -> usize {
        self.update_buffer.end
    }

    /// Contiguous, ordered, starting at 0.
    pub fn is_partition(&self) -> bool {
        self.sink.start == 0
            && self.sink.end == self.retrieval.start
            && self.retrieval.end == self.local.start
            && self.local.end == self.update_buffer.start
            && [&self.sink, &self.retrieval, &self.local, &self.update_buffer]
                .iter()
                .all(|r| r.start <= r.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlushEvent {
    /// Buffered tokens promoted out of the update buffer.
    pub flushed: usize,
    /// Retrieval-zone indices created by this flush.
    pub evicted: Range<usize>,
    /// Tokens that went to the sink because it was not yet full.
    pub to_sink: usize,
}

#[derive(Debug)]
pub struct TieredStore {
    dim: usize,
    value_dim: usize,
    sink_size: usize,
    local_size: usize,
    update_granularity: usize,
    full_attention_threshold: usize,
    deferred_flush: bool,
    sink: HotBlock,
    local: HotBlock,
    buffer: HotBlock,
    meta: MetadataTable,
    cold: ColdArena,
    counters: StoreCounters,
}

impl TieredStore {
    pub fn new(cfg: &RetrievalConfig) -> Self {
        Self {
            dim: cfg.dim,
            value_dim: cfg.value_dim,
            sink_size: cfg.sink_size,
            local_size: cfg.local_size,
            update_granularity: cfg.update_granularity,
            full_attention_threshold: cfg.full_attention_threshold,
            deferred_flush: false,
            sink: HotBlock::default(),
            local: HotBlock::default(),
            buffer: HotBlock::default(),
            meta: MetadataTable::new(cfg.subspace_count, cfg.subspace_dim(), cfg.codec == Codec::Exact),
            cold: ColdArena {
                backend: ColdBackend::Memory { keys: Vec::new(), values: Vec::new() },
                dim: cfg.dim,
                value_dim: cfg.value_dim,
                len: 0,
                resident: true,
            },
            counters: StoreCounters::default(),
        }
    }

    /// Backs the cold arena by two PKV1 files (`keys.pkv`, `values.pkv`) in `dir`.
    /// Must be called before any token is stored.
    pub fn with_file_arena(mut self, dir: impl AsRef<Path>) -> Result<Self> {
        assert_eq!(self.cold.len, 0, "file arena must be attached to an empty store");
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(io_err)?;
        self.cold.backend = ColdBackend::File {
            keys: Mutex::new(DumpFile::create(dir.join("keys.pkv"), self.dim).map_err(io_err)?),
            values: Mutex::new(DumpFile::create(dir.join("values.pkv"), self.value_dim).map_err(io_err)?),
        };
        Ok(self)
    }

    /// When set, a full update buffer waits for an explicit [`flush`](Self::flush).
    pub fn set_deferred_flush(&mut self, deferred: bool) {
        self.deferred_flush = deferred;
    }

    /// Stores a prefill sequence: the first `sink_size` tokens go to the sink,
    /// the last `local_size` to the local window, and the rest to the retrieval
    /// zone with metadata.
    pub fn prefill<C: DirectionCodebook + ?Sized>(
        &mut self,
        keys: &[f32],
        values: &[f32],
        encoder: &KeyEncoder,
        codebook: &C,
    ) -> Result<()> {
        check_len(keys.len(), self.dim)?;
        check_len(values.len(), self.value_dim)?;
        let n = keys.len() / self.dim;
        if values.len() / self.value_dim != n {
            return Err(Error::DimensionMismatch { expected: n, actual: values.len() / self.value_dim });
        }
        let block = HotBlock { keys: keys.to_vec(), values: values.to_vec(), len: n };
        self.local.extend(&block);
        self.rebalance(encoder, codebook)?;
        Ok(())
    }

    /// Buffers one token; flushes when the buffer reaches the update granularity
    /// (unless flushing is deferred).
    pub fn append<C: DirectionCodebook + ?Sized>(
        &mut self,
        key: &[f32],
        value: &[f32],
        encoder: &KeyEncoder,
        codebook: &C,
    ) -> Result<Option<FlushEvent>> {
        if key.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: key.len() });
        }
        if value.len() != self.value_dim {
            return Err(Error::DimensionMismatch { expected: self.value_dim, actual: value.len() });
        }
        self.buffer.push(key, value);
        if !self.deferred_flush && self.buffer.len >= self.update_granularity {
            return self.flush(encoder, codebook).map(Some);
        }
        Ok(None)
    }

    /// Sliding-window update: buffered tokens join the local window, the oldest
    /// local tokens beyond `local_size` are encoded into the retrieval zone and
    /// moved to the cold arena.
    pub fn flush<C: DirectionCodebook + ?Sized>(
        &mut self,
        encoder: &KeyEncoder,
        codebook: &C,
    ) -> Result<FlushEvent> {
        let flushed = self.buffer.len;
        let buffered = std::mem::take(&mut self.buffer);
        self.local.extend(&buffered);
        self.buffer.clear();
        let (to_sink, evicted) = self.rebalance(encoder, codebook)?;
        Ok(FlushEvent { flushed, evicted, to_sink })
    }

    fn rebalance<C: DirectionCodebook + ?Sized>(
        &mut self,
        encoder: &KeyEncoder,
        codebook: &C,
    ) -> Result<(usize, Range<usize>)> {
        let to_sink = self.sink_size.saturating_sub(self.sink.len).min(self.local.len);
        if to_sink > 0 {
            let moved = self.local.drain_front(to_sink, self.dim, self.value_dim);
            self.sink.extend(&moved);
        }
        let start = self.cold.len;
        let overflow = self.local.len.saturating_sub(self.local_size);
        if overflow > 0 {
            let evicted = self.local.drain_front(overflow, self.dim, self.value_dim);
            for meta in encode_block(&evicted.keys, self.dim, encoder, codebook)? {
                self.meta.push(meta);
            }
            self.cold.append(&evicted)?;
            self.counters.eviction_count.fetch_add(overflow as u64, Ordering::Relaxed);
        }
        if self.total_len() >= self.full_attention_threshold {
            self.cold.resident = false;
        }
        Ok((to_sink, start..self.cold.len))
    }

    pub fn total_len(&self) -> usize {
        self.sink.len + self.cold.len + self.local.len + self.buffer.len
    }

    pub fn retrieval_len(&self) -> usize {
        self.cold.len
    }

    pub fn regions(&self) -> RegionMap {
        let s = self.sink.len;
        let r = s + self.cold.len;
        let l = r + self.local.len;
        RegionMap { sink: 0..s, retrieval: s..r, local: r..l, update_buffer: l..l + self.buffer.len }
    }

    pub fn metadata(&self) -> &MetadataTable {
        &self.meta
    }

    pub fn counters(&self) -> CounterSnapshot {
        self.counters.snapshot()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value_dim(&self) -> usize {
        self.value_dim
    }

    /// Whether the retrieval zone is still readable without fetching.
    pub fn is_resident(&self) -> bool {
        self.cold.resident
    }

    /// Hot tokens (sink, then local, then buffer) as one contiguous copy.
    pub fn hot_kv(&self) -> (Vec<f32>, Vec<f32>) {
        let mut keys = Vec::with_capacity((self.sink.len + self.local.len + self.buffer.len) * self.dim);
        let mut values = Vec::with_capacity(keys.capacity() / self.dim * self.value_dim);
        for block in [&self.sink, &self.local, &self.buffer] {
            keys.extend_from_slice(&block.keys);
            values.extend_from_slice(&block.values);
        }
        (keys, values)
    }

    /// Dense view of the retrieval zone, available only while resident.
    pub fn resident_retrieval(&self) -> Result<KvView<'_>> {
        match (&self.cold.backend, self.cold.resident) {
            (ColdBackend::Memory { keys, values }, true) => {
                Ok(KvView::new(keys, values, self.dim, self.value_dim))
            }
            _ => Err(Error::ColdRead),
        }
    }

    /// Metered read of retrieval-zone records.
    pub fn fetch_topk(&self, indices: &[usize]) -> Result<FetchedKv> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.cold.len) {
            return Err(Error::OutOfRange { index: bad, len: self.cold.len });
        }
        let mut keys = vec![0f32; indices.len() * self.dim];
        let mut values = vec![0f32; indices.len() * self.value_dim];
        for (slot, &i) in indices.iter().enumerate() {
            self.cold.read_into(
                i,
                &mut keys[slot * self.dim..(slot + 1) * self.dim],
                &mut values[slot * self.value_dim..(slot + 1) * self.value_dim],
            )?;
        }
        let n = indices.len() as u64;
        self.counters.fetch_calls.fetch_add(1, Ordering::Relaxed);
        self.counters.cold_fetch_count.fetch_add(n, Ordering::Relaxed);
        self.counters
            .bytes_fetched
            .fetch_add(n * ((self.dim + self.value_dim) * 4) as u64, Ordering::Relaxed);
        Ok(FetchedKv { indices: indices.to_vec(), keys, values })
    }
}

fn check_len(len: usize, dim: usize) -> Result<()> {
    if dim == 0 || !len.is_multiple_of(dim) {
        return Err(Error::DimensionMismatch { expected: dim, actual: len % dim.max(1) });
    }
    Ok(())
}

#[cfg(feature = "parallel")]
fn encode_block<C: DirectionCodebook + ?Sized>(
    keys: &[f32],
    dim: usize,
    encoder: &KeyEncoder,
    codebook: &C,
) -> Result<Vec<KeyMetadata>> {
    use rayon::prelude::*;
    keys.par_chunks_exact(dim)
        .map(|k| encoder.build_metadata_lenient(k, codebook))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn encode_block<C: DirectionCodebook + ?Sized>(
    keys: &[f32],
    dim: usize,
    encoder: &KeyEncoder,
    codebook: &C,
) -> Result<Vec<KeyMetadata>> {
    keys.chunks_exact(dim)
        .map(|k| encoder.build_metadata_lenient(k, codebook))
        .collect()
}
