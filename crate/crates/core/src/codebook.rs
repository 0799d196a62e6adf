//! Analytic direction centroids `{±1/√m}^m` per subspace and query-side probing.
//!
//! A centroid is identified by its sign pattern: bit `j` of the id is set when
//! coordinate `j` is positive. The nearest centroid of a direction is therefore
//! just its sign pattern, and the best probes for a query are found by flipping
//! the cheapest coordinates first, without storing or scanning the codebook.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Index of a direction centroid within one subspace's codebook.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct CentroidId(pub u16);

impl CentroidId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Probed centroids for one query subspace, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeList {
    pub entries: Vec<(CentroidId, f32)>,
}

impl ProbeList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = CentroidId> + '_ {
        self.entries.iter().map(|(id, _)| *id)
    }
}

/// Orders probe candidates: higher score first, then ascending id.
pub fn probe_order(a: &(CentroidId, f32), b: &(CentroidId, f32)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// A per-subspace set of direction centroids usable by the coarse stage.
pub trait DirectionCodebook: Send + Sync {
    /// Number of centroids in each subspace.
    fn len(&self) -> usize;

    /// Nearest centroid of unit direction `u` in subspace `subspace`.
    fn assign(&self, subspace: usize, u: &[f32]) -> CentroidId;

    /// The `count` centroids with the highest `⟨q_b, c⟩`, best first.
    fn top_probes(&self, subspace: usize, q_b: &[f32], count: usize) -> ProbeList;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The data-independent sign-pattern codebook.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalyticCodebook {
    subspace_dim: usize,
}

impl AnalyticCodebook {
    pub fn new(subspace_dim: usize) -> Self {
        assert!((1..=16).contains(&subspace_dim));
        Self { subspace_dim }
    }

    pub fn subspace_dim(&self) -> usize {
        self.subspace_dim
    }
}

impl DirectionCodebook for AnalyticCodebook {
    fn len(&self) -> usize {
        1 << self.subspace_dim
    }

    fn assign(&self, _subspace: usize, u: &[f32]) -> CentroidId {
        assign(u)
    }

    fn top_probes(&self, _subspace: usize, q_b: &[f32], count: usize) -> ProbeList {
        top_probes(q_b, count)
    }
}

/// Sign pattern of `u`; zero coordinates count as positive.
pub fn assign(u: &[f32]) -> CentroidId {
    debug_assert!(u.len() <= 16);
    let mut id = 0u16;
    for (j, &v) in u.iter().enumerate() {
        if v >= 0.0 {
            id |= 1 << j;
        }
    }
    CentroidId(id)
}

/// Unit vector with coordinates `±1/√m` given by the bits of `id`.
pub fn decode(id: CentroidId, m: usize) -> Vec<f32> {
    let c = 1.0 / (m as f32).sqrt();
    (0..m)
        .map(|j| if id.0 & (1 << j) != 0 { c } else { -c })
        .collect()
}

/// `⟨q_b, decode(id)⟩`.
pub fn centroid_score(q_b: &[f32], id: CentroidId) -> f32 {
    let s: f32 = q_b
        .iter()
        .enumerate()
        .map(|(j, &q)| if id.0 & (1 << j) != 0 { q } else { -q })
        .sum();
    s / (q_b.len() as f32).sqrt()
}

#[derive(Debug, PartialEq)]
struct FlipSet {
    cost: f32,
    /// Bit `p` set means the coordinate at sorted position `p` is flipped.
    positions: u32,
    last: u8,
}

impl Eq for FlipSet {}

impl Ord for FlipSet {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost
        other.cost.total_cmp(&self.cost).then(other.positions.cmp(&self.positions))
    }
}

impl PartialOrd for FlipSet {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The `count` centroids with the largest `⟨q_b, ω⟩`, in descending order with
/// ties by ascending id.
///
/// Starts at `sign(q_b)` and enumerates flip sets in non-decreasing total cost
/// (`2|q_j|/√m` per flipped coordinate) using the standard subset-sum successor
/// rule over coordinates sorted by cost. Sets whose cost ties the boundary are
/// all generated so the final tie-break is exact.
pub fn top_probes(q_b: &[f32], count: usize) -> ProbeList {
    let m = q_b.len();
    assert!(m <= 16);
    let total = 1usize << m;
    let count = count.min(total);
    if count == 0 {
        return ProbeList { entries: Vec::new() };
    }
    let base = assign(q_b);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| q_b[a].abs().total_cmp(&q_b[b].abs()).then(a.cmp(&b)));
    let scale = 2.0 / (m as f32).sqrt();
    let costs: Vec<f32> = order.iter().map(|&j| scale * q_b[j].abs()).collect();

    let id_of = |positions: u32| -> CentroidId {
        let mut id = base.0;
        for (p, &j) in order.iter().enumerate() {
            if positions & (1 << p) != 0 {
                id ^= 1 << j;
            }
        }
        CentroidId(id)
    };

    let mut found: Vec<(CentroidId, f32)> = vec![(base, centroid_score(q_b, base))];
    let mut heap = BinaryHeap::new();
    if m > 0 {
        heap.push(FlipSet { cost: costs[0], positions: 1, last: 0 });
    }
    // Cost of the `count`-th generated set; later sets within float slack of it
    // may still tie on score and must be considered.
    let mut boundary = if count == 1 { 0.0 } else { f32::INFINITY };
    while let Some(set) = heap.pop() {
        if found.len() >= count && set.cost > boundary + 1e-6 * (1.0 + boundary) {
            break;
        }
        let last = set.last as usize;
        if last + 1 < m {
            let next = last + 1;
            heap.push(FlipSet {
                cost: set.cost + costs[next],
                positions: set.positions | (1 << next),
                last: next as u8,
            });
            heap.push(FlipSet {
                cost: set.cost - costs[last] + costs[next],
                positions: (set.positions & !(1 << last)) | (1 << next),
                last: next as u8,
            });
        }
        let id = id_of(set.positions);
        found.push((id, centroid_score(q_b, id)));
        if found.len() == count {
            boundary = set.cost;
        }
    }
    found.sort_by(probe_order);
    found.truncate(count);
    ProbeList { entries: found }
}

/// Collision bonus for the centroid at position `rank` of a probe list of
/// length `probe_count`; `None` (not probed) maps to 0.
///
/// The probe list is cut into `tier_bonuses.len()` equal contiguous chunks, the
/// last absorbing the remainder.
pub fn tier_of(rank: Option<usize>, probe_count: usize, tier_bonuses: &[u8]) -> u8 {
    let Some(rank) = rank else { return 0 };
    if rank >= probe_count || tier_bonuses.is_empty() {
        return 0;
    }
    let chunk = (probe_count / tier_bonuses.len()).max(1);
    let tier = (rank / chunk).min(tier_bonuses.len() - 1);
    tier_bonuses[tier]
}
