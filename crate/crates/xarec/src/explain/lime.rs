//! LIME and LIME+: local linear surrogates on keep/replace masks.
//!
//! Around the explained window `x`, both explainers sample mask grids
//! (every bit kept with probability 0.5), replace masked cells with their
//! sensor baselines, and regress the model's predicted-class probability on
//! the mask bits, weighting each sample by an exponential kernel on the
//! number of replaced cells. LIME caps the surrogate at the 3 features that
//! survive the Lasso path and refits them by weighted least squares; LIME+
//! fits the unrestricted surrogate over every cell, keeps the full
//! contribution matrix, and reports the strongest cell of each of the 3
//! strongest distinct sensors together with a duration in minutes.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::wls::{weighted_lasso_path, weighted_least_squares};
use super::{
    all_cells, check_alignment, column_baselines, eval_masks, rank_features, Attribution, AttributionSet,
    Diagnostics, ExplainError, FeatureCoordinate, MaskPolicy, Method, NO_LOCAL_SIGNAL, TOP_FEATURES,
};
use crate::classifier::Classifier;
use crate::ingest::{ActivityWindow, SensorRegistry, WINDOW_MINUTES};

/// Sampling parameters of the LIME surrogate neighbourhood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    /// Number of sampled masks.
    pub samples: usize,
    /// Probability of keeping a cell.
    pub keep_prob: f64,
    /// Kernel width of the proximity weight `exp(-(changed/width)^2)`;
    /// `None` picks `0.75 * sqrt(T * M)`, infinity disables the kernel.
    pub kernel_width: Option<f64>,
    pub seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig { samples: 5000, keep_prob: 0.5, kernel_width: None, seed: 7 }
    }
}

impl PerturbationConfig {
    fn validate(&self) -> Result<(), ExplainError> {
        if self.samples < 100 {
            return Err(ExplainError::BadConfig(format!("need at least 100 samples, got {}", self.samples)));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob < 1.0) {
            return Err(ExplainError::BadConfig("keep_prob must be inside (0, 1)".to_string()));
        }
        if let Some(w) = self.kernel_width {
            if !(w > 0.0) {
                return Err(ExplainError::BadConfig("kernel_width must be positive".to_string()));
            }
        }
        Ok(())
    }

    fn width_for(&self, grid_cells: usize) -> f64 {
        self.kernel_width.unwrap_or(0.75 * (grid_cells as f64).sqrt())
    }
}

struct SampledNeighbourhood {
    masks: Vec<Vec<bool>>,
    weights: Vec<f64>,
    values: Vec<f64>,
}

fn sample_neighbourhood(
    model: &dyn Classifier,
    window: &ActivityWindow,
    cells: &[(usize, usize)],
    config: &PerturbationConfig,
    registry: &SensorRegistry,
    target: crate::ingest::ActivityLabel,
) -> Result<SampledNeighbourhood, ExplainError> {
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let width = config.width_for(WINDOW_MINUTES * window.columns);
    let mut masks = Vec::with_capacity(config.samples);
    let mut weights = Vec::with_capacity(config.samples);
    for _ in 0..config.samples {
        let mask: Vec<bool> = (0..cells.len()).map(|_| rng.gen_bool(config.keep_prob)).collect();
        let changed = mask.iter().filter(|b| !**b).count() as f64;
        weights.push((-(changed / width).powi(2)).exp());
        masks.push(mask);
    }
    let baselines = column_baselines(registry);
    let values = eval_masks(model, window, &masks, cells, target, &baselines, &MaskPolicy::Baseline)?;
    Ok(SampledNeighbourhood { masks, weights, values })
}

fn mask_design(masks: &[Vec<bool>], columns: &[usize]) -> Vec<Vec<f64>> {
    masks
        .iter()
        .map(|m| columns.iter().map(|&j| if m[j] { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn response_is_flat(values: &[f64]) -> bool {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max - min < 1e-12
}

/// Cells whose observed value differs from the sensor baseline. Masking any
/// other cell cannot change the window, so only these carry local signal.
fn informative_cells(window: &ActivityWindow, registry: &SensorRegistry) -> Vec<(usize, usize)> {
    let baselines = column_baselines(registry);
    all_cells(window.columns)
        .into_iter()
        .filter(|&(t, m)| window.cell(t, m) != baselines[m])
        .collect()
}

fn empty_result(
    method: Method,
    window: &ActivityWindow,
    target: crate::ingest::ActivityLabel,
    predicted_prob: f64,
    config: &PerturbationConfig,
    elapsed_ms: u64,
    samples: usize,
) -> AttributionSet {
    AttributionSet {
        method,
        target_class: target,
        predicted_prob,
        window_start: window.start,
        features: Vec::new(),
        base_value: None,
        anchor: None,
        diagnostics: Diagnostics {
            samples,
            seed: config.seed,
            elapsed_ms,
            flags: vec![NO_LOCAL_SIGNAL.to_string()],
            ..Default::default()
        },
    }
}

/// LIME: top-`b` features by Lasso path, weights by weighted least-squares
/// refit on the selected features, ordered by |weight| descending.
pub fn explain_lime(
    model: &dyn Classifier,
    window: &ActivityWindow,
    b: usize,
    config: &PerturbationConfig,
    registry: &SensorRegistry,
) -> Result<AttributionSet, ExplainError> {
    config.validate()?;
    check_alignment(model, registry)?;
    let started = Instant::now();
    let prediction = model.predict(window)?;
    let target = prediction.argmax();
    let predicted_prob = prediction.prob_of(target);

    let cells = informative_cells(window, registry);
    if cells.is_empty() {
        let ms = started.elapsed().as_millis() as u64;
        return Ok(empty_result(Method::Lime, window, target, predicted_prob, config, ms, 0));
    }
    let hood = sample_neighbourhood(model, window, &cells, config, registry, target)?;
    if response_is_flat(&hood.values) {
        let ms = started.elapsed().as_millis() as u64;
        return Ok(empty_result(Method::Lime, window, target, predicted_prob, config, ms, config.samples));
    }

    let all: Vec<usize> = (0..cells.len()).collect();
    let design = mask_design(&hood.masks, &all);
    let selected = if cells.len() <= b {
        all.clone()
    } else {
        weighted_lasso_path(&design, &hood.values, &hood.weights, b)
    };
    if selected.is_empty() {
        let ms = started.elapsed().as_millis() as u64;
        return Ok(empty_result(Method::Lime, window, target, predicted_prob, config, ms, config.samples));
    }
    let sub_design = mask_design(&hood.masks, &selected);
    let (_, coefs) = weighted_least_squares(&sub_design, &hood.values, &hood.weights)
        .ok_or(ExplainError::Singular(0))?;

    let columns = registry.columns();
    let mut ranked: Vec<(usize, usize, f64)> =
        selected.iter().zip(&coefs).map(|(&j, &c)| (cells[j].0, cells[j].1, c)).collect();
    rank_features(&mut ranked, &columns);
    let features = ranked
        .into_iter()
        .take(b)
        .map(|(t, m, weight)| Attribution {
            coord: FeatureCoordinate { sensor_id: columns[m].clone(), timestep: t, value: window.cell(t, m) },
            weight,
            duration: None,
        })
        .collect();

    Ok(AttributionSet {
        method: Method::Lime,
        target_class: target,
        predicted_prob,
        window_start: window.start,
        features,
        base_value: None,
        anchor: None,
        diagnostics: Diagnostics {
            samples: config.samples,
            seed: config.seed,
            elapsed_ms: started.elapsed().as_millis() as u64,
            ..Default::default()
        },
    })
}

/// Duration of a contribution peak: the maximal contiguous run of timesteps
/// containing `k` whose contribution stays at or above the sensor's mean and
/// within two (sample) standard deviations of it. With zero deviation the
/// run extends over equal values instead. Always at least 1.
pub fn compute_duration(contributions: &[f64], k: usize) -> usize {
    let t = contributions.len();
    assert!(k < t, "timestep out of range");
    let mean = contributions.iter().sum::<f64>() / t as f64;
    let var = if t < 2 {
        0.0
    } else {
        contributions.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (t - 1) as f64
    };
    let sd = var.sqrt();
    let in_run: Box<dyn Fn(usize) -> bool + '_> = if sd == 0.0 {
        let v = contributions[k];
        Box::new(move |i: usize| contributions[i] == v)
    } else {
        Box::new(move |i: usize| contributions[i] >= mean && contributions[i] <= mean + 2.0 * sd)
    };
    if !in_run(k) {
        return 1;
    }
    let mut lo = k;
    while lo > 0 && in_run(lo - 1) {
        lo -= 1;
    }
    let mut hi = k;
    while hi + 1 < t && in_run(hi + 1) {
        hi += 1;
    }
    hi - lo + 1
}

/// LIME+: the unrestricted surrogate over all `T x M` cells. Candidates are
/// ranked by contribution strength and thinned to one cell per sensor
/// ("sensor uniqueness"), the top 3 sensors are reported, and each carries
/// the duration of its contribution run.
pub fn explain_lime_plus(
    model: &dyn Classifier,
    window: &ActivityWindow,
    config: &PerturbationConfig,
    registry: &SensorRegistry,
) -> Result<AttributionSet, ExplainError> {
    config.validate()?;
    check_alignment(model, registry)?;
    let started = Instant::now();
    let prediction = model.predict(window)?;
    let target = prediction.argmax();
    let predicted_prob = prediction.prob_of(target);

    let grid = all_cells(window.columns);
    let hood = sample_neighbourhood(model, window, &grid, config, registry, target)?;
    if response_is_flat(&hood.values) {
        let ms = started.elapsed().as_millis() as u64;
        return Ok(empty_result(Method::LimePlus, window, target, predicted_prob, config, ms, config.samples));
    }

    let all: Vec<usize> = (0..grid.len()).collect();
    let design = mask_design(&hood.masks, &all);
    let (_, coefs) =
        weighted_least_squares(&design, &hood.values, &hood.weights).ok_or(ExplainError::Singular(0))?;

    // Selection candidates: only cells whose observed state differs from the
    // baseline. Coefficients of baseline-valued cells are regression noise
    // (masking them cannot change the window), so they stay in the matrix
    // for duration statistics but are never reported as features.
    let baselines = column_baselines(registry);
    let columns = registry.columns();
    let mut ranked: Vec<(usize, usize, f64)> = grid
        .iter()
        .zip(&coefs)
        .filter(|(&(t, m), _)| window.cell(t, m) != baselines[m])
        .map(|(&(t, m), &c)| (t, m, c))
        .collect();
    if ranked.is_empty() {
        let ms = started.elapsed().as_millis() as u64;
        return Ok(empty_result(Method::LimePlus, window, target, predicted_prob, config, ms, config.samples));
    }
    rank_features(&mut ranked, &columns);

    let mut chosen: Vec<(usize, usize, f64)> = Vec::new();
    for (t, m, c) in ranked {
        if chosen.iter().any(|(_, cm, _)| *cm == m) {
            continue;
        }
        chosen.push((t, m, c));
        if chosen.len() == TOP_FEATURES {
            break;
        }
    }

    let features = chosen
        .into_iter()
        .map(|(t, m, weight)| {
            let sensor_row: Vec<f64> = (0..WINDOW_MINUTES).map(|row| coefs[row * window.columns + m]).collect();
            Attribution {
                coord: FeatureCoordinate { sensor_id: columns[m].clone(), timestep: t, value: window.cell(t, m) },
                weight,
                duration: Some(compute_duration(&sensor_row, t)),
            }
        })
        .collect();

    Ok(AttributionSet {
        method: Method::LimePlus,
        target_class: target,
        predicted_prob,
        window_start: window.start,
        features,
        base_value: None,
        anchor: None,
        diagnostics: Diagnostics {
            samples: config.samples,
            seed: config.seed,
            elapsed_ms: started.elapsed().as_millis() as u64,
            contribution_matrix: Some(coefs),
            ..Default::default()
        },
    })
}
