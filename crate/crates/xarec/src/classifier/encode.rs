use serde::{Deserialize, Serialize};

use super::ContractError;
use crate::ingest::{ActivityLabel, ActivityWindow, Category, SensorKind, SensorRegistry};

/// Model-side description of the input space: the column order the model was
/// trained with, each column's sensor kind (hence its category vocabulary),
/// and the registry it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub labels: Vec<ActivityLabel>,
    pub columns: Vec<String>,
    pub kinds: Vec<SensorKind>,
    pub registry_hash: String,
}

impl ModelMeta {
    pub fn from_registry(registry: &SensorRegistry, registry_hash: String) -> Self {
        ModelMeta {
            labels: ActivityLabel::ALL.to_vec(),
            columns: registry.columns(),
            kinds: registry.sensors.values().map(|s| s.kind).collect(),
            registry_hash,
        }
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    /// Offset of column `m`'s one-hot block inside the flattened input row.
    pub fn vocab_offset(&self, m: usize) -> usize {
        self.kinds[..m].iter().map(|k| Category::vocab(*k).len()).sum()
    }

    /// Total one-hot width of one timestep row.
    pub fn input_dim(&self) -> usize {
        self.kinds.iter().map(|k| Category::vocab(*k).len()).sum()
    }

    /// Active one-hot index per column for row `t` of a window: exactly one
    /// index fires inside each column's vocabulary block.
    pub fn active_indices(&self, window: &ActivityWindow, t: usize, out: &mut Vec<usize>) -> Result<(), ContractError> {
        out.clear();
        let mut offset = 0;
        for (m, kind) in self.kinds.iter().enumerate() {
            let code = window.cell(t, m).code(*kind).ok_or(ContractError::InvalidCell { t, m })?;
            out.push(offset + code);
            offset += Category::vocab(*kind).len();
        }
        Ok(())
    }

    pub fn check_shape(&self, window: &ActivityWindow) -> Result<(), ContractError> {
        if window.columns != self.n_columns() {
            return Err(ContractError::ShapeMismatch { got: window.columns, want: self.n_columns() });
        }
        Ok(())
    }
}
