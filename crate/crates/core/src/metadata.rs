use crate::coarse::CentroidTable;
use crate::quantizer::{DirectionCode, KeyMetadata};

/// Hot per-key summaries for the retrieval zone, row `i` describing key `i`.
#[derive(Debug, Clone, Default)]
pub struct MetadataTable {
    subspace_count: usize,
    subspace_dim: usize,
    ids: CentroidTable,
    /// `n × B`, row-major.
    codes: Vec<DirectionCode>,
    /// `n × B`, row-major.
    weights: Vec<f32>,
    /// `n × B·m`, only under the exact codec.
    exact: Option<Vec<f32>>,
}

impl MetadataTable {
    pub fn new(subspace_count: usize, subspace_dim: usize, exact: bool) -> Self {
        Self {
            subspace_count,
            subspace_dim,
            ids: CentroidTable::new(subspace_count),
            codes: Vec::new(),
            weights: Vec::new(),
            exact: exact.then(Vec::new),
        }
    }

    pub fn push(&mut self, meta: KeyMetadata) {
        assert_eq!(meta.weights.len(), self.subspace_count);
        self.ids.push(&meta.centroid_ids);
        self.codes.extend_from_slice(&meta.codes);
        self.weights.extend_from_slice(&meta.weights);
        if let Some(exact) = &mut self.exact {
            let dirs = meta.exact_directions.expect("exact codec requires exact directions");
            exact.extend_from_slice(&dirs);
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subspace_count(&self) -> usize {
        self.subspace_count
    }

    pub fn subspace_dim(&self) -> usize {
        self.subspace_dim
    }

    pub fn is_exact(&self) -> bool {
        self.exact.is_some()
    }

    pub fn centroids(&self) -> &CentroidTable {
        &self.ids
    }

    pub fn codes(&self, i: usize) -> &[DirectionCode] {
        &self.codes[i * self.subspace_count..(i + 1) * self.subspace_count]
    }

    pub fn weights(&self, i: usize) -> &[f32] {
        &self.weights[i * self.subspace_count..(i + 1) * self.subspace_count]
    }

    pub fn exact_directions(&self, i: usize) -> Option<&[f32]> {
        let stride = self.subspace_count * self.subspace_dim;
        self.exact.as_ref().map(|e| &e[i * stride..(i + 1) * stride])
    }

    pub fn row(&self, i: usize) -> KeyMetadata {
        KeyMetadata {
            centroid_ids: self.ids.row(i),
            codes: self.codes(i).to_vec(),
            weights: self.weights(i).to_vec(),
            exact_directions: self.exact_directions(i).map(<[f32]>::to_vec),
        }
    }

    /// Bytes held per key by the hot summary (ids + codes + weights).
    pub fn bytes_per_key(&self) -> usize {
        let code_bytes = (self.subspace_dim * 4).div_ceil(8);
        self.subspace_count * (2 + code_bytes + 4)
    }
}
