//! Model-agnostic explainers over the sensor-time feature grid.
//!
//! A feature of an activity window is one cell of the 30 x M grid: sensor
//! `m` held categorical value `v` at timestep `t`. All four explainers work
//! by perturbing cells of the explained window and watching the classifier's
//! predicted-class probability:
//!
//! - [`lime::explain_lime`] fits a weighted linear surrogate on random
//!   keep/replace masks and reports the top-3 cells by Lasso selection.
//! - [`lime::explain_lime_plus`] fits the surrogate over every cell, picks
//!   the top cell of each of the 3 strongest distinct sensors, and attaches
//!   a duration: the contiguous run of above-mean timesteps around the pick.
//! - [`anchors::explain_anchors`] searches for a high-precision rule (a set
//!   of cell equalities) with a KL-confidence-bound bandit.
//! - [`shap::explain_shap`] estimates Shapley values with the kernel-weighted
//!   least-squares estimator; [`shap::exact_shapley`] enumerates coalitions
//!   outright for small games and anchors the test oracles.
//!
//! Replaced cells fall back either to the sensor's baseline category or to
//! draws from the training set's per-cell marginals ([`MaskPolicy`]).

pub mod anchors;
pub mod lime;
pub mod shap;
mod wls;

pub use wls::{weighted_lasso_path, weighted_least_squares};

use chrono::NaiveDateTime;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{Classifier, ContractError};
use crate::ingest::{ActivityLabel, ActivityWindow, Category, SensorKind, SensorRegistry, WINDOW_MINUTES};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("model columns do not match the registry")]
    RegistryMismatch,
    #[error("mask shape {got} does not match window cells {want}")]
    MaskShape { got: usize, want: usize },
    #[error("config invalid: {0}")]
    BadConfig(String),
    #[error("at most {limit} active features are allowed, got {got}")]
    Budget { got: usize, limit: usize },
    #[error("regression system stayed singular after {0} retries")]
    Singular(usize),
    #[error(transparent)]
    Contract(#[from] ContractError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lime,
    LimePlus,
    Anchors,
    Shap,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Lime, Method::LimePlus, Method::Anchors, Method::Shap];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lime => "lime",
            Method::LimePlus => "lime_plus",
            Method::Anchors => "anchors",
            Method::Shap => "shap",
        }
    }

    pub fn from_name(name: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == name)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// One cell of the explained window: which sensor, at which timestep, and
/// the value it actually held there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureCoordinate {
    pub sensor_id: String,
    pub timestep: usize,
    pub value: Category,
}

/// A ranked feature with its contribution weight and, for LIME+, the
/// duration in minutes of the surrounding high-contribution run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    #[serde(flatten)]
    pub coord: FeatureCoordinate,
    pub weight: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration: Option<usize>,
}

/// A high-precision rule: the explained window satisfies every predicate,
/// and perturbations that keep the predicates keep the prediction with
/// probability `precision`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorRule {
    pub predicates: Vec<FeatureCoordinate>,
    pub precision: f64,
    pub coverage: f64,
    /// Whether the KL lower confidence bound reached the precision threshold.
    pub qualifying: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub samples: usize,
    pub seed: u64,
    pub elapsed_ms: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    /// Full per-cell contributions (row-major 30 x M), kept by LIME+ and SHAP.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contribution_matrix: Option<Vec<f64>>,
    /// Per-coordinate standard errors of sampled Shapley estimates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standard_errors: Option<Vec<f64>>,
}

pub const NO_LOCAL_SIGNAL: &str = "no local signal";
pub const BELOW_PRECISION_THRESHOLD: &str = "below precision threshold";

/// The output of one explainer run on one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionSet {
    pub method: Method,
    pub target_class: ActivityLabel,
    /// Model probability of the target class on the unperturbed window.
    pub predicted_prob: f64,
    pub window_start: NaiveDateTime,
    /// At most 3 features for rendering, strongest first.
    pub features: Vec<Attribution>,
    /// The Shapley base value (expected output with every cell absent).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor: Option<AnchorRule>,
    pub diagnostics: Diagnostics,
}

/// The number of features rendered into natural language.
pub const TOP_FEATURES: usize = 3;

/// Binary keep/replace grid over a window: 1 keeps the original cell, 0
/// replaces it with the masking policy's value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterpretableMask {
    pub columns: usize,
    pub bits: Vec<bool>,
}

impl InterpretableMask {
    pub fn ones(columns: usize) -> Self {
        InterpretableMask { columns, bits: vec![true; WINDOW_MINUTES * columns] }
    }

    pub fn zeros(columns: usize) -> Self {
        InterpretableMask { columns, bits: vec![false; WINDOW_MINUTES * columns] }
    }

    pub fn set(&mut self, t: usize, m: usize, keep: bool) {
        self.bits[t * self.columns + m] = keep;
    }

    pub fn get(&self, t: usize, m: usize) -> bool {
        self.bits[t * self.columns + m]
    }
}

/// Baseline category of every column, in column order.
pub fn column_baselines(registry: &SensorRegistry) -> Vec<Category> {
    registry.sensors.values().map(|s| s.baseline).collect()
}

/// Apply a mask to a window: kept cells stay, replaced cells take their
/// sensor's baseline category. Pure; the all-ones mask is the identity.
pub fn perturb(
    window: &ActivityWindow,
    mask: &InterpretableMask,
    registry: &SensorRegistry,
) -> Result<ActivityWindow, ExplainError> {
    if mask.bits.len() != window.cells.len() {
        return Err(ExplainError::MaskShape { got: mask.bits.len(), want: window.cells.len() });
    }
    let baselines = column_baselines(registry);
    let mut out = window.clone();
    for (i, keep) in mask.bits.iter().enumerate() {
        if !keep {
            out.cells[i] = baselines[i % window.columns];
        }
    }
    Ok(out)
}

/// Per-cell empirical category distribution of a window collection,
/// the perturbation population for Anchors and background-style masking.
#[derive(Debug, Clone)]
pub struct CellMarginals {
    pub columns: usize,
    kinds: Vec<SensorKind>,
    /// Per cell `(t, m)`: counts over the column's category vocabulary.
    counts: Vec<Vec<u32>>,
    totals: Vec<u32>,
}

impl CellMarginals {
    pub fn from_windows(windows: &[&ActivityWindow], kinds: &[SensorKind]) -> Self {
        let columns = kinds.len();
        let cells = WINDOW_MINUTES * columns;
        let mut counts: Vec<Vec<u32>> =
            (0..cells).map(|i| vec![0; Category::vocab(kinds[i % columns]).len()]).collect();
        let mut totals = vec![0u32; cells];
        for w in windows {
            for (i, cat) in w.cells.iter().enumerate() {
                let code = cat.code(kinds[i % columns]).expect("cell valid for kind");
                counts[i][code] += 1;
                totals[i] += 1;
            }
        }
        CellMarginals { columns, kinds: kinds.to_vec(), counts, totals }
    }

    pub fn prob(&self, t: usize, m: usize, value: Category) -> f64 {
        let i = t * self.columns + m;
        let Some(code) = value.code(self.kinds[m]) else { return 0.0 };
        if self.totals[i] == 0 {
            return 0.0;
        }
        f64::from(self.counts[i][code]) / f64::from(self.totals[i])
    }

    pub fn sample<R: Rng>(&self, t: usize, m: usize, rng: &mut R) -> Category {
        let i = t * self.columns + m;
        let total = self.totals[i];
        let vocab = Category::vocab(self.kinds[m]);
        if total == 0 {
            return vocab[0];
        }
        let mut pick = rng.gen_range(0..total);
        for (code, &c) in self.counts[i].iter().enumerate() {
            if pick < c {
                return vocab[code];
            }
            pick -= c;
        }
        vocab[vocab.len() - 1]
    }
}

/// What a replaced cell turns into.
#[derive(Debug, Clone)]
pub enum MaskPolicy<'a> {
    /// The sensor's baseline category — the feature is simply "absent".
    Baseline,
    /// Values taken from each background window in turn; model outputs are
    /// averaged over the background set. Under this policy a masked quiet
    /// cell can flip to an active state, so Shapley attributions cover the
    /// absence of events as well as their presence.
    Background(&'a [ActivityWindow]),
}

/// Evaluate the model's probability of `target` on the window induced by
/// each mask under `policy`. Masks index into `cells`; batched and
/// order-preserving.
pub(crate) fn eval_masks(
    model: &dyn Classifier,
    window: &ActivityWindow,
    masks: &[Vec<bool>],
    cells: &[(usize, usize)],
    target: ActivityLabel,
    baselines: &[Category],
    policy: &MaskPolicy<'_>,
) -> Result<Vec<f64>, ExplainError> {
    let per_mask = match policy {
        MaskPolicy::Baseline => 1,
        MaskPolicy::Background(b) => b.len().max(1),
    };
    let mut out = Vec::with_capacity(masks.len());
    // Chunk so the materialized window batch stays small.
    let chunk = (4096 / per_mask).max(1) * per_mask;
    let mut batch: Vec<ActivityWindow> = Vec::with_capacity(chunk);
    let flush = |batch: &mut Vec<ActivityWindow>, out: &mut Vec<f64>| -> Result<(), ExplainError> {
        if batch.is_empty() {
            return Ok(());
        }
        let preds = model.predict_batch(batch)?;
        for group in preds.chunks(per_mask) {
            out.push(group.iter().map(|p| p.prob_of(target)).sum::<f64>() / per_mask as f64);
        }
        batch.clear();
        Ok(())
    };
    for mask in masks {
        debug_assert_eq!(mask.len(), cells.len());
        match policy {
            MaskPolicy::Baseline => {
                let mut w = window.clone();
                for (bit, &(t, m)) in mask.iter().zip(cells) {
                    if !bit {
                        w.set_cell(t, m, baselines[m]);
                    }
                }
                batch.push(w);
            }
            MaskPolicy::Background(bgs) => {
                for bg in *bgs {
                    let mut w = window.clone();
                    for (bit, &(t, m)) in mask.iter().zip(cells) {
                        if !bit {
                            w.set_cell(t, m, bg.cell(t, m));
                        }
                    }
                    batch.push(w);
                }
            }
        }
        if batch.len() >= chunk {
            flush(&mut batch, &mut out)?;
        }
    }
    flush(&mut batch, &mut out)?;
    Ok(out)
}

/// All grid coordinates in row-major order.
pub(crate) fn all_cells(columns: usize) -> Vec<(usize, usize)> {
    (0..WINDOW_MINUTES).flat_map(|t| (0..columns).map(move |m| (t, m))).collect()
}

/// Deterministic feature ordering: |weight| desc, then sensor id asc, then
/// timestep asc. Entries are `(timestep, column, weight)`.
pub(crate) fn rank_features(features: &mut [(usize, usize, f64)], columns: &[String]) {
    features.sort_by(|a, b| {
        b.2.abs()
            .partial_cmp(&a.2.abs())
            .unwrap()
            .then_with(|| columns[a.1].cmp(&columns[b.1]))
            .then_with(|| a.0.cmp(&b.0))
    });
}

pub(crate) fn check_alignment(model: &dyn Classifier, registry: &SensorRegistry) -> Result<(), ExplainError> {
    if model.meta().columns != registry.columns() {
        return Err(ExplainError::RegistryMismatch);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synth;
    use rand::SeedableRng;

    #[test]
    fn all_ones_mask_is_identity_and_zeros_hits_baseline() {
        let ds = synth::dataset_with_counts(&[(ActivityLabel::Sleep, 1)], 8, 3);
        let w = &ds.windows[0];
        let reg = &ds.registry;
        let same = perturb(w, &InterpretableMask::ones(w.columns), reg).unwrap();
        assert_eq!(&same, w);
        let blank = perturb(w, &InterpretableMask::zeros(w.columns), reg).unwrap();
        let baselines = column_baselines(reg);
        for t in 0..WINDOW_MINUTES {
            for m in 0..w.columns {
                assert_eq!(blank.cell(t, m), baselines[m]);
            }
        }
    }

    #[test]
    fn single_zero_mask_changes_exactly_one_cell() {
        let ds = synth::dataset_with_counts(&[(ActivityLabel::Cook, 1)], 8, 4);
        let w = &ds.windows[0];
        let mut mask = InterpretableMask::ones(w.columns);
        // pick an active motion cell so the flip is visible
        let (t, m) = (0..WINDOW_MINUTES)
            .flat_map(|t| (0..w.columns).map(move |m| (t, m)))
            .find(|&(t, m)| w.cell(t, m) == Category::Detected)
            .expect("signature cell exists");
        mask.set(t, m, false);
        let out = perturb(w, &mask, &ds.registry).unwrap();
        let diffs: Vec<_> = (0..w.cells.len()).filter(|&i| out.cells[i] != w.cells[i]).collect();
        assert_eq!(diffs, vec![t * w.columns + m]);
        assert_eq!(out.cell(t, m), Category::NotDetected);
    }

    #[test]
    fn marginals_count_and_sample_consistently() {
        let ds = synth::dataset_with_counts(&[(ActivityLabel::Sleep, 40), (ActivityLabel::Cook, 40)], 8, 5);
        let kinds: Vec<SensorKind> = ds.registry.sensors.values().map(|s| s.kind).collect();
        let refs: Vec<&ActivityWindow> = ds.windows.iter().collect();
        let marg = CellMarginals::from_windows(&refs, &kinds);
        let sig = ds.registry.column_index("M004").unwrap();
        let p = marg.prob(10, sig, Category::Detected);
        assert!(p > 0.1 && p < 0.9, "p = {p}");
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let hits = (0..2000).filter(|_| marg.sample(10, sig, &mut rng) == Category::Detected).count();
        let freq = hits as f64 / 2000.0;
        assert!((freq - p).abs() < 0.05, "freq {freq} vs p {p}");
    }
}
