//! The black-box activity classifier: a probabilistic prediction contract
//! plus a reference recurrent implementation.
//!
//! Everything downstream (explainers, benchmark) talks to [`Classifier`],
//! which maps a 30-row activity window to a probability distribution over
//! the 10 activity classes. The reference implementation is [`LstmModel`]:
//! per-timestep one-hot sensor states, a learned embedding, a single
//! uni-directional LSTM layer of hidden size 64, and a softmax head, all in
//! double precision with hand-written backpropagation (so gradients can be
//! checked against finite differences).

mod encode;
mod gradcheck;
mod lstm;
mod metrics;
mod store;
mod train;

pub use encode::ModelMeta;
pub use gradcheck::{gradient_check, GradCheckError};
pub use lstm::{Dims, LstmModel};
pub use metrics::{evaluate, ClassMetrics, EvalReport, MetricsError};
pub use store::{load_model, save_model, StoreError, MODEL_SCHEMA};
pub use train::{train, EpochRecord, TrainConfig, TrainError, TrainLog};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ActivityLabel, ActivityWindow};

#[derive(Debug, Error)]
pub enum ContractError {
    #[error("window has {got} columns, model expects {want}")]
    ShapeMismatch { got: usize, want: usize },
    #[error("window cell ({t},{m}) holds a category invalid for the model's column kind")]
    InvalidCell { t: usize, m: usize },
    #[error("probabilities must be non-negative and sum to 1 (got sum {0})")]
    NotADistribution(f64),
}

/// A probability distribution over the 10 activity classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityDistribution {
    probs: Vec<f64>,
}

impl ProbabilityDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, ContractError> {
        let sum: f64 = probs.iter().sum();
        if probs.len() != ActivityLabel::COUNT || probs.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(ContractError::NotADistribution(sum));
        }
        Ok(ProbabilityDistribution { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob_of(&self, label: ActivityLabel) -> f64 {
        self.probs[label.index()]
    }

    /// The predicted label: argmax, first index on exact ties.
    pub fn argmax(&self) -> ActivityLabel {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        ActivityLabel::from_index(best).unwrap()
    }

    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }
}

/// The prediction contract every explainer consumes. Implementations must be
/// deterministic and reentrant: concurrent calls on an immutable model
/// return identical results.
pub trait Classifier: Sync {
    fn meta(&self) -> &ModelMeta;

    fn predict(&self, window: &ActivityWindow) -> Result<ProbabilityDistribution, ContractError>;

    /// Batch prediction. Each window is processed independently, so the
    /// result for a window never depends on its batch neighbours.
    fn predict_batch(&self, windows: &[ActivityWindow]) -> Result<Vec<ProbabilityDistribution>, ContractError> {
        windows.par_iter().map(|w| self.predict(w)).collect()
    }
}
