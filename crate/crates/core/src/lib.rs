//! Drift-robust top-k key retrieval for long-context KV caches.
//!
//! Keys are normalized, rotated by a seeded randomized Hadamard transform and
//! split into low-dimensional subspaces. Each subspace direction is assigned to
//! a fixed sign-pattern centroid and quantized to 4 bits per coordinate. A
//! query first votes over centroid collisions to keep a small candidate pool,
//! then reranks that pool with the quantized inner-product estimator, and only
//! the final top-k full-precision records are fetched from the cold tier.
//!
//! ```
//! use driftkv::{Engine, RetrievalConfig};
//!
//! let mut cfg = RetrievalConfig::with_dim(16);
//! cfg.full_attention_threshold = 0;
//! cfg.top_k = 4;
//! let keys: Vec<f32> = (0..400 * 16).map(|i| ((i * 37 % 101) as f32 - 50.0) / 25.0).collect();
//! let mut engine = Engine::from_prefill(cfg, &keys, &keys).unwrap();
//! let out = engine.decode_step(&keys[..16], &keys[16..32], &keys[32..48]).unwrap();
//! assert_eq!(out.trace.fetched, 4);
//! ```

pub mod attention;
pub mod coarse;
pub mod codebook;
pub mod config;
pub mod dump;
pub mod engine;
pub mod error;
pub mod metadata;
pub mod quantizer;
pub mod rerank;
pub mod store;
pub mod transform;

pub use attention::{brute_topk, full_attention, recall_at_k, relative_l2, KvView};
pub use codebook::{AnalyticCodebook, CentroidId, DirectionCodebook, ProbeList};
pub use config::{Codec, RetrievalConfig, ScheduleEntry};
pub use dump::VectorDump;
pub use engine::{Engine, Retrieval, StepOutput, StepTrace};
pub use error::{Error, Result};
pub use metadata::MetadataTable;
pub use quantizer::{KeyEncoder, KeyMetadata, MagnitudeLevels};
pub use store::{FlushEvent, RegionMap, TieredStore};
pub use transform::{Rotation, TransformedVector, Transformer};
