//! Per-layer key/value cache over graph nodes. Rows are appended in place
//! as the sequence grows; a snapshot is a cheap copy of node ids.

use crate::numerics::graph::VarId;

#[derive(Debug, Clone, Default)]
struct LayerKv {
    k_parts: Vec<VarId>,
    v_parts: Vec<VarId>,
}

#[derive(Debug, Clone)]
pub struct KvCache {
    layers: Vec<LayerKv>,
    len: usize,
    max_positions: usize,
}

impl KvCache {
    pub fn new(n_layers: usize, max_positions: usize) -> Self {
        Self {
            layers: vec![LayerKv::default(); n_layers],
            len: 0,
            max_positions,
        }
    }

    /// Sequence length currently cached (equal across layers).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Position index the next appended row will occupy.
    pub fn next_pos(&self) -> usize {
        self.len
    }

    pub fn max_positions(&self) -> usize {
        self.max_positions
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn snapshot(&self) -> Self {
        self.clone()
    }

    pub(crate) fn push_layer_rows(&mut self, layer: usize, k: VarId, v: VarId) {
        self.layers[layer].k_parts.push(k);
        self.layers[layer].v_parts.push(v);
    }

    pub(crate) fn k_parts(&self, layer: usize) -> &[VarId] {
        &self.layers[layer].k_parts
    }

    pub(crate) fn v_parts(&self, layer: usize) -> &[VarId] {
        &self.layers[layer].v_parts
    }

    /// Called once per block append, after every layer received its rows.
    pub(crate) fn advance(&mut self, rows: usize) {
        self.len += rows;
        debug_assert!(
            self.layers
                .iter()
                .all(|l| l.k_parts.len() == self.layers[0].k_parts.len()
                    && l.v_parts.len() == l.k_parts.len()),
            "cache layers out of sync"
        );
    }
}
