use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::env::{ContextKey, ACTION_COUNT};
use crate::numeric::{log_softmax, softmax};

/// Tabular softmax policy. Unseen contexts read as all-zero rows; a row is
/// stored once an update touches it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    rows: BTreeMap<ContextKey, [f64; ACTION_COUNT]>,
}

impl PolicyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn row(&self, key: &ContextKey) -> [f64; ACTION_COUNT] {
        self.rows.get(key).copied().unwrap_or([0.0; ACTION_COUNT])
    }

    pub fn row_mut(&mut self, key: ContextKey) -> &mut [f64; ACTION_COUNT] {
        self.rows.entry(key).or_insert([0.0; ACTION_COUNT])
    }

    pub fn set_row(&mut self, key: ContextKey, logits: [f64; ACTION_COUNT]) {
        self.rows.insert(key, logits);
    }

    pub fn probs(&self, key: &ContextKey) -> Vec<f64> {
        softmax(&self.row(key))
    }

    pub fn log_probs(&self, key: &ContextKey) -> Vec<f64> {
        log_softmax(&self.row(key))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Stored rows in key order.
    pub fn rows(&self) -> impl Iterator<Item = (&ContextKey, &[f64; ACTION_COUNT])> {
        self.rows.iter()
    }
}
