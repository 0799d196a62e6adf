//! Retrieval configuration and its flat `key=value` text form.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// One band of the adaptive candidate schedule: from `min_length` retrieval-zone
/// keys upward, probe the top `rho` fraction of centroids per subspace and keep
/// the top `beta` fraction of keys as candidates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleEntry {
    pub min_length: usize,
    pub rho: f64,
    pub beta: f64,
}

impl ScheduleEntry {
    pub const fn new(min_length: usize, rho: f64, beta: f64) -> Self {
        Self { min_length, rho, beta }
    }
}

/// How per-subspace key directions are stored for reranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Codec {
    /// 1 sign bit + 3 magnitude bits per coordinate.
    #[default]
    FourBit,
    /// Full-precision directions. Turns the reranker into an exact scorer; used
    /// as a correctness limit in tests and ablations.
    Exact,
}

impl FromStr for Codec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "four_bit" | "4bit" | "fourbit" => Ok(Codec::FourBit),
            "exact" | "identity" => Ok(Codec::Exact),
            other => Err(Error::Config(format!("unknown codec `{other}`"))),
        }
    }
}

impl fmt::Display for Codec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Codec::FourBit => "four_bit",
            Codec::Exact => "exact",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalConfig {
    /// Input key/query dimension. Rotation runs at the next power of two.
    pub dim: usize,
    /// Value vector dimension.
    pub value_dim: usize,
    pub subspace_count: usize,
    /// Radius codebook size. 1 keeps radii exact inside the rerank weight.
    pub radius_centroid_count: usize,
    /// Strictly decreasing per-tier collision bonuses.
    pub tier_bonuses: Vec<u8>,
    pub schedule: Vec<ScheduleEntry>,
    pub sink_size: usize,
    pub local_size: usize,
    pub update_granularity: usize,
    /// Total context length below which every step uses dense attention.
    pub full_attention_threshold: usize,
    pub top_k: usize,
    pub rotation_seed: u64,
    pub codec: Codec,
    pub alpha_correction: bool,
    /// Forces a fixed candidate fraction instead of the schedule's.
    pub beta_override: Option<f64>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self::with_dim(128)
    }
}

impl RetrievalConfig {
    pub fn default_schedule() -> Vec<ScheduleEntry> {
        vec![
            ScheduleEntry::new(0, 0.15, 0.10),
            ScheduleEntry::new(20_000, 0.12, 0.08),
            ScheduleEntry::new(60_000, 0.10, 0.06),
            ScheduleEntry::new(200_000, 0.08, 0.05),
        ]
    }

    /// Defaults for a given input dimension: 8-dimensional subspaces, six
    /// collision tiers, top-100 retrieval. Above 256 padded dimensions the
    /// subspaces widen to 16 so the collision score still fits in a byte.
    pub fn with_dim(dim: usize) -> Self {
        let padded = dim.max(1).next_power_of_two();
        let m = if padded > 256 { 16 } else { 8 };
        let subspace_count = (padded / m).max(1);
        Self {
            dim,
            value_dim: dim,
            subspace_count,
            radius_centroid_count: 1,
            tier_bonuses: vec![6, 5, 4, 3, 2, 1],
            schedule: Self::default_schedule(),
            sink_size: 16,
            local_size: 256,
            update_granularity: 512,
            full_attention_threshold: 2048,
            top_k: 100,
            rotation_seed: 0x5eed,
            codec: Codec::FourBit,
            alpha_correction: true,
            beta_override: None,
        }
    }

    pub fn padded_dim(&self) -> usize {
        self.dim.max(1).next_power_of_two()
    }

    pub fn subspace_dim(&self) -> usize {
        self.padded_dim() / self.subspace_count.max(1)
    }

    pub fn centroid_count(&self) -> usize {
        1 << self.subspace_dim()
    }

    pub fn tier_count(&self) -> usize {
        self.tier_bonuses.len()
    }

    pub fn max_bonus(&self) -> u8 {
        self.tier_bonuses.first().copied().unwrap_or(0)
    }

    /// Largest attainable collision score.
    pub fn max_score(&self) -> usize {
        self.subspace_count * self.max_bonus() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        if self.dim == 0 || self.value_dim == 0 {
            return err("dim and value_dim must be positive".into());
        }
        if self.subspace_count == 0 {
            return err("subspace_count must be positive".into());
        }
        let padded = self.padded_dim();
        let m = self.subspace_dim();
        if self.subspace_count * m != padded {
            return err(format!(
                "subspace_count {} does not divide rotated dimension {padded}",
                self.subspace_count
            ));
        }
        if !(2..=16).contains(&m) {
            return err(format!("subspace dimension {m} outside [2, 16]"));
        }
        if self.radius_centroid_count == 0 {
            return err("radius_centroid_count must be positive".into());
        }
        if self.tier_bonuses.is_empty() {
            return err("tier_bonuses must not be empty".into());
        }
        if self.tier_bonuses.windows(2).any(|w| w[0] <= w[1]) {
            return err("tier_bonuses must be strictly decreasing".into());
        }
        if self.max_score() > u8::MAX as usize {
            return err(format!("max collision score {} exceeds 255", self.max_score()));
        }
        if self.schedule.is_empty() {
            return err("rho/beta schedule must not be empty".into());
        }
        for e in &self.schedule {
            if !(e.beta > 0.0 && e.beta <= 1.0 && e.rho > 0.0 && e.rho <= 1.0) {
                return err(format!("schedule fractions out of (0, 1]: {e:?}"));
            }
            if e.rho < e.beta {
                return err(format!("schedule entry violates rho >= beta: {e:?}"));
            }
        }
        if self.schedule.windows(2).any(|w| w[0].min_length >= w[1].min_length) {
            return err("schedule min_length values must be strictly increasing".into());
        }
        if let Some(b) = self.beta_override {
            if !(b > 0.0 && b <= 1.0) {
                return err(format!("beta_override {b} outside (0, 1]"));
            }
        }
        if self.top_k == 0 || self.update_granularity == 0 {
            return err("top_k and update_granularity must be positive".into());
        }
        Ok(())
    }

    /// Applies a single `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = |what: &str| Error::Config(format!("invalid value `{value}` for {what}"));
        macro_rules! parse {
            ($what:expr) => {
                value.parse().map_err(|_| bad($what))?
            };
        }
        match key.trim() {
            "dim" => {
                let d: usize = parse!("dim");
                if self.value_dim == self.dim {
                    self.value_dim = d;
                }
                self.dim = d;
                self.subspace_count = Self::with_dim(d).subspace_count;
            }
            "value_dim" => self.value_dim = parse!("value_dim"),
            "subspace_count" => self.subspace_count = parse!("subspace_count"),
            "radius_centroid_count" => self.radius_centroid_count = parse!("radius_centroid_count"),
            "tier_bonuses" => {
                self.tier_bonuses = value
                    .split(',')
                    .map(|t| t.trim().parse::<u8>().map_err(|_| bad("tier_bonuses")))
                    .collect::<Result<_>>()?
            }
            "schedule" | "rho_beta_schedule" => self.schedule = parse_schedule(value)?,
            "sink_size" => self.sink_size = parse!("sink_size"),
            "local_size" => self.local_size = parse!("local_size"),
            "update_granularity" => self.update_granularity = parse!("update_granularity"),
            "full_attention_threshold" => {
                self.full_attention_threshold = parse!("full_attention_threshold")
            }
            "top_k" => self.top_k = parse!("top_k"),
            "rotation_seed" => self.rotation_seed = parse!("rotation_seed"),
            "codec" => self.codec = value.parse()?,
            "alpha_correction" => self.alpha_correction = parse!("alpha_correction"),
            "beta_override" => {
                self.beta_override = match value {
                    "" | "none" => None,
                    v => Some(v.parse().map_err(|_| bad("beta_override"))?),
                }
            }
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses a flat `key=value` file. Blank lines and `#` comments are skipped;
    /// unspecified keys keep their defaults. `dim` is applied first since it
    /// resets the subspace count.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            pairs.push((k.trim(), v.trim()));
        }
        pairs.sort_by_key(|(k, _)| *k != "dim");
        let mut cfg = Self::default();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_schedule(value: &str) -> Result<Vec<ScheduleEntry>> {
    let mut entries = value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let parts: Vec<&str> = item.trim().split(':').collect();
            let bad = || Error::Config(format!("bad schedule entry `{item}` (want len:rho:beta)"));
            if parts.len() != 3 {
                return Err(bad());
            }
            Ok(ScheduleEntry {
                min_length: parts[0].trim().parse().map_err(|_| bad())?,
                rho: parts[1].trim().parse().map_err(|_| bad())?,
                beta: parts[2].trim().parse().map_err(|_| bad())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by_key(|e| e.min_length);
    Ok(entries)
}

impl fmt::Display for RetrievalConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tiers: Vec<String> = self.tier_bonuses.iter().map(|b| b.to_string()).collect();
        let sched: Vec<String> = self
            .schedule
            .iter()
            .map(|e| format!("{}:{}:{}", e.min_length, e.rho, e.beta))
            .collect();
        writeln!(f, "dim={}", self.dim)?;
        writeln!(f, "value_dim={}", self.value_dim)?;
        writeln!(f, "subspace_count={}", self.subspace_count)?;
        writeln!(f, "radius_centroid_count={}", self.radius_centroid_count)?;
        writeln!(f, "tier_bonuses={}", tiers.join(","))?;
        writeln!(f, "schedule={}", sched.join(","))?;
        writeln!(f, "sink_size={}", self.sink_size)?;
        writeln!(f, "local_size={}", self.local_size)?;
        writeln!(f, "update_granularity={}", self.update_granularity)?;
        writeln!(f, "full_attention_threshold={}", self.full_attention_threshold)?;
        writeln!(f, "top_k={}", self.top_k)?;
        writeln!(f, "rotation_seed={}", self.rotation_seed)?;
        writeln!(f, "codec={}", self.codec)?;
        writeln!(f, "alpha_correction={}", self.alpha_correction)?;
        match self.beta_override {
            Some(b) => writeln!(f, "beta_override={b}"),
            None => writeln!(f, "beta_override=none"),
        }
    }
}
