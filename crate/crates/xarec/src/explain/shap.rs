//! Shapley-value attribution: the kernel-weighted least-squares estimator
//! (KernelSHAP) plus an exact enumerator for small coalition games.
//!
//! The coalition game over cells: keeping a coalition `S` of cells at their
//! observed values (masked cells replaced per [`MaskPolicy`]) yields value
//! `v(S)`, the model's predicted-class probability. KernelSHAP regresses
//! `v` on coalition indicators under the Shapley kernel
//! `pi(s) = (d-1) / (C(d,s) * s * (d-s))` with the efficiency constraint
//! `phi_0 + sum(phi) = v(full)` eliminated into the design, so local
//! accuracy holds by construction. With every interior coalition enumerated
//! the estimate equals the exact Shapley value.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::wls::solve_spd;
use super::{
    all_cells, check_alignment, column_baselines, eval_masks, rank_features, Attribution, AttributionSet,
    Diagnostics, ExplainError, FeatureCoordinate, MaskPolicy, Method, TOP_FEATURES,
};
use crate::classifier::Classifier;
use crate::ingest::{ActivityWindow, SensorRegistry};

/// Hard cap on exact enumeration: 2^15 coalitions.
pub const EXACT_FEATURE_LIMIT: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapConfig {
    /// Sampled coalitions; `None` picks `2 * d + 2048`.
    pub samples: Option<usize>,
    /// Enumerate every interior coalition instead of sampling (small `d`).
    pub exhaustive: bool,
    /// Attach sandwich standard errors to the diagnostics.
    pub estimate_se: bool,
    pub seed: u64,
}

impl Default for ShapConfig {
    fn default() -> Self {
        ShapConfig { samples: None, exhaustive: false, estimate_se: false, seed: 7 }
    }
}

/// Shapley kernel weight for coalition size `s` out of `d` features.
fn shapley_kernel(d: usize, s: usize) -> f64 {
    (d as f64 - 1.0) / (binomial(d, s) * s as f64 * (d - s) as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

struct Estimate {
    phi: Vec<f64>,
    se: Option<Vec<f64>>,
}

/// Constrained weighted least squares on interior coalitions. The last
/// feature is eliminated through the efficiency constraint
/// `sum(phi) = vx - v0`, which therefore holds exactly in the output.
fn solve_constrained(
    masks: &[Vec<bool>],
    values: &[f64],
    weights: &[f64],
    v0: f64,
    vx: f64,
    estimate_se: bool,
) -> Option<Estimate> {
    let d = masks.first().map(|m| m.len()).unwrap_or(0);
    if d == 0 {
        return Some(Estimate { phi: Vec::new(), se: None });
    }
    if d == 1 {
        return Some(Estimate { phi: vec![vx - v0], se: Some(vec![0.0]) });
    }
    let n = masks.len();
    let p = d - 1;
    let mut design = DMatrix::zeros(n, p);
    let mut resp = DVector::zeros(n);
    for (i, mask) in masks.iter().enumerate() {
        let sw = weights[i].sqrt();
        let last = if mask[d - 1] { 1.0 } else { 0.0 };
        for j in 0..p {
            let zj = if mask[j] { 1.0 } else { 0.0 };
            design[(i, j)] = sw * (zj - last);
        }
        resp[i] = sw * (values[i] - v0 - last * (vx - v0));
    }
    let a = design.tr_mul(&design);
    let rhs = design.tr_mul(&resp);
    let beta = solve_spd(a.clone(), DVector::from_column_slice(rhs.as_slice()))?;
    let mut phi: Vec<f64> = beta.as_slice().to_vec();
    let last_phi = (vx - v0) - phi.iter().sum::<f64>();
    phi.push(last_phi);

    let se = if estimate_se {
        // heteroskedasticity-robust sandwich on the reduced system
        let resid = &resp - &design * &beta;
        let mut meat = DMatrix::zeros(p, p);
        for i in 0..n {
            let r2 = resid[i] * resid[i];
            for j in 0..p {
                for k in 0..p {
                    meat[(j, k)] += r2 * design[(i, j)] * design[(i, k)];
                }
            }
        }
        let a_inv = a.try_inverse()?;
        let cov = &a_inv * meat * &a_inv;
        let mut se: Vec<f64> = (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
        let ones = DVector::from_element(p, 1.0);
        let var_last = (ones.transpose() * &cov * &ones)[(0, 0)];
        se.push(var_last.max(0.0).sqrt());
        Some(se)
    } else {
        None
    };
    Some(Estimate { phi, se })
}

fn enumerate_interior_masks(d: usize) -> (Vec<Vec<bool>>, Vec<f64>) {
    let mut masks = Vec::with_capacity((1usize << d) - 2);
    let mut weights = Vec::with_capacity(masks.capacity());
    for code in 1..(1usize << d) - 1 {
        let mask: Vec<bool> = (0..d).map(|j| code >> j & 1 == 1).collect();
        let s = mask.iter().filter(|b| **b).count();
        weights.push(shapley_kernel(d, s));
        masks.push(mask);
    }
    (masks, weights)
}

/// Draw paired coalitions with sizes distributed as the Shapley kernel mass
/// per size, subsets uniform within a size. Samples drawn this way carry
/// unit regression weight.
fn sample_masks(d: usize, n: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<bool>> {
    // P(s) proportional to (d-1)/(s(d-s)) for s in 1..=d-1
    let size_mass: Vec<f64> = (1..d).map(|s| (d as f64 - 1.0) / (s as f64 * (d - s) as f64)).collect();
    let total: f64 = size_mass.iter().sum();
    let mut masks = Vec::with_capacity(n);
    let mut indices: Vec<usize> = (0..d).collect();
    while masks.len() < n {
        let mut pick = rng.gen_range(0.0..total);
        let mut s = 1usize;
        for (i, mass) in size_mass.iter().enumerate() {
            if pick < *mass {
                s = i + 1;
                break;
            }
            pick -= mass;
        }
        // partial Fisher-Yates for a uniform s-subset
        for i in 0..s {
            let j = rng.gen_range(i..d);
            indices.swap(i, j);
        }
        let mut mask = vec![false; d];
        for &idx in &indices[..s] {
            mask[idx] = true;
        }
        let complement: Vec<bool> = mask.iter().map(|b| !b).collect();
        masks.push(mask);
        if masks.len() < n {
            masks.push(complement);
        }
    }
    masks
}

fn expand_to_grid(code: usize, active: &[(usize, usize)], columns: usize) -> Vec<bool> {
    let mut grid_mask = vec![false; crate::ingest::WINDOW_MINUTES * columns];
    for (j, &(t, m)) in active.iter().enumerate() {
        if code >> j & 1 == 1 {
            grid_mask[t * columns + m] = true;
        }
    }
    grid_mask
}

fn expand_mask_to_grid(mask: &[bool], active: &[(usize, usize)], columns: usize) -> Vec<bool> {
    let mut grid_mask = vec![false; crate::ingest::WINDOW_MINUTES * columns];
    for (j, &(t, m)) in active.iter().enumerate() {
        if mask[j] {
            grid_mask[t * columns + m] = true;
        }
    }
    grid_mask
}

/// Exact Shapley values of the coalition game over `active` cells; every
/// other cell stays replaced under `policy` throughout. `2^k` model
/// evaluations, capped at [`EXACT_FEATURE_LIMIT`] features.
#[derive(Debug, Clone)]
pub struct ExactShapley {
    pub phi: Vec<f64>,
    /// `v(empty)`: every active cell replaced.
    pub base_value: f64,
    /// `v(full)`: every active cell kept (non-active cells still replaced).
    pub full_value: f64,
}

pub fn exact_shapley(
    model: &dyn Classifier,
    window: &ActivityWindow,
    active: &[(usize, usize)],
    registry: &SensorRegistry,
    policy: &MaskPolicy<'_>,
) -> Result<ExactShapley, ExplainError> {
    check_alignment(model, registry)?;
    let k = active.len();
    if k > EXACT_FEATURE_LIMIT {
        return Err(ExplainError::Budget { got: k, limit: EXACT_FEATURE_LIMIT });
    }
    let target = model.predict(window)?.argmax();
    let baselines = column_baselines(registry);

    // Coalitions toggle only the active cells; every other cell stays
    // replaced, so masks are expanded onto the full grid.
    let grid = all_cells(window.columns);
    let total = 1usize << k;
    let masks: Vec<Vec<bool>> = (0..total).map(|code| expand_to_grid(code, active, window.columns)).collect();
    let values = eval_masks(model, window, &masks, &grid, target, &baselines, policy)?;

    // factorial weights are exact in f64 for k <= 15
    let fact: Vec<f64> = (0..=k).scan(1.0, |acc, i| {
        if i > 0 {
            *acc *= i as f64;
        }
        Some(*acc)
    })
    .collect();
    let mut phi = vec![0.0; k];
    for (j, phi_j) in phi.iter_mut().enumerate() {
        let bit = 1usize << j;
        for code in 0..total {
            if code & bit != 0 {
                continue;
            }
            let s = (code as u32).count_ones() as usize;
            let w = fact[s] * fact[k - s - 1] / fact[k];
            *phi_j += w * (values[code | bit] - values[code]);
        }
    }
    Ok(ExactShapley { phi, base_value: values[0], full_value: values[total - 1] })
}

/// KernelSHAP estimate of the same game, sampled or exhaustive. Returns
/// `(phi, base_value, full_value, se, samples_used)`.
pub fn kernel_shap_game(
    model: &dyn Classifier,
    window: &ActivityWindow,
    active: &[(usize, usize)],
    registry: &SensorRegistry,
    policy: &MaskPolicy<'_>,
    config: &ShapConfig,
) -> Result<(Vec<f64>, f64, f64, Option<Vec<f64>>, usize), ExplainError> {
    check_alignment(model, registry)?;
    let d = active.len();
    let target = model.predict(window)?.argmax();
    let baselines = column_baselines(registry);
    let grid = all_cells(window.columns);
    let expand = |masks: &[Vec<bool>]| -> Vec<Vec<bool>> {
        masks.iter().map(|m| expand_mask_to_grid(m, active, window.columns)).collect()
    };

    let endpoints = expand(&[vec![false; d], vec![true; d]]);
    let endpoint_vals = eval_masks(model, window, &endpoints, &grid, target, &baselines, policy)?;
    let (v0, vx) = (endpoint_vals[0], endpoint_vals[1]);
    if d == 0 {
        return Ok((Vec::new(), v0, vx, None, 2));
    }

    if config.exhaustive {
        if d > 20 {
            return Err(ExplainError::BadConfig(format!("exhaustive enumeration over {d} features is too large")));
        }
        let (masks, weights) = enumerate_interior_masks(d);
        let values = eval_masks(model, window, &expand(&masks), &grid, target, &baselines, policy)?;
        let est = solve_constrained(&masks, &values, &weights, v0, vx, false).ok_or(ExplainError::Singular(0))?;
        let used = masks.len() + 2;
        return Ok((est.phi, v0, vx, est.se, used));
    }

    let base_n = config.samples.unwrap_or(2 * d + 2048).max(100);
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut n = base_n;
    for _retry in 0..3 {
        let masks = sample_masks(d, n, &mut rng);
        let values = eval_masks(model, window, &expand(&masks), &grid, target, &baselines, policy)?;
        let weights = vec![1.0; masks.len()];
        if let Some(est) = solve_constrained(&masks, &values, &weights, v0, vx, config.estimate_se) {
            return Ok((est.phi, v0, vx, est.se, masks.len() + 2));
        }
        n *= 2;
    }
    Err(ExplainError::Singular(3))
}

/// SHAP over the full sensor-time grid: Shapley values for every cell, the
/// top 3 by |phi| reported, the full vector kept in the diagnostics.
pub fn explain_shap(
    model: &dyn Classifier,
    window: &ActivityWindow,
    config: &ShapConfig,
    registry: &SensorRegistry,
    policy: &MaskPolicy<'_>,
) -> Result<AttributionSet, ExplainError> {
    let started = Instant::now();
    let prediction = model.predict(window)?;
    let target = prediction.argmax();
    let predicted_prob = prediction.prob_of(target);

    let grid = all_cells(window.columns);
    let (phi, v0, _vx, se, used) = kernel_shap_game(model, window, &grid, registry, policy, config)?;

    let columns = registry.columns();
    let mut ranked: Vec<(usize, usize, f64)> =
        grid.iter().zip(&phi).map(|(&(t, m), &p)| (t, m, p)).collect();
    rank_features(&mut ranked, &columns);
    let features = ranked
        .into_iter()
        .take(TOP_FEATURES)
        .map(|(t, m, weight)| Attribution {
            coord: FeatureCoordinate { sensor_id: columns[m].clone(), timestep: t, value: window.cell(t, m) },
            weight,
            duration: None,
        })
        .collect();

    Ok(AttributionSet {
        method: Method::Shap,
        target_class: target,
        predicted_prob,
        window_start: window.start,
        features,
        base_value: Some(v0),
        anchor: None,
        diagnostics: Diagnostics {
            samples: used,
            seed: config.seed,
            elapsed_ms: started.elapsed().as_millis() as u64,
            contribution_matrix: Some(phi),
            standard_errors: se,
            ..Default::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{ContractError, ModelMeta, ProbabilityDistribution};
    use crate::ingest::{synth, ActivityLabel, Category};

    /// Arbitrary bounded game over designated cells, driven by a per-subset
    /// lookup built from a seed.
    struct TableModel {
        meta: ModelMeta,
        cells: Vec<(usize, usize, Category)>,
        table: Vec<f64>,
    }

    impl TableModel {
        fn random(ds: &crate::ingest::LabeledDataset, w: &ActivityWindow, k: usize, seed: u64) -> Self {
            use rand::Rng;
            let baselines = column_baselines(&ds.registry);
            let cells: Vec<(usize, usize, Category)> = all_cells(w.columns)
                .into_iter()
                .filter(|&(t, m)| w.cell(t, m) != baselines[m])
                .take(k)
                .map(|(t, m)| (t, m, w.cell(t, m)))
                .collect();
            assert_eq!(cells.len(), k);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let table: Vec<f64> = (0..1usize << k).map(|_| rng.gen_range(0.05..0.95)).collect();
            TableModel { meta: ModelMeta::from_registry(&ds.registry, ds.registry_hash.clone()), cells, table }
        }
    }

    impl Classifier for TableModel {
        fn meta(&self) -> &ModelMeta {
            &self.meta
        }
        fn predict(&self, window: &ActivityWindow) -> Result<ProbabilityDistribution, ContractError> {
            let mut code = 0usize;
            for (j, &(t, m, v)) in self.cells.iter().enumerate() {
                if window.cell(t, m) == v {
                    code |= 1 << j;
                }
            }
            let p = self.table[code];
            let mut probs = vec![(1.0 - p) / 9.0; ActivityLabel::COUNT];
            probs[ActivityLabel::Sleep.index()] = p;
            ProbabilityDistribution::new(probs)
        }
    }

    fn fixture() -> (crate::ingest::LabeledDataset, ActivityWindow) {
        let ds = synth::dataset_with_counts(&[(ActivityLabel::Sleep, 3)], 8, 77);
        let w = ds.windows[0].clone();
        (ds, w)
    }

    #[test]
    fn exhaustive_kernel_shap_equals_exact_enumeration() {
        let (ds, w) = fixture();
        for seed in [1u64, 2, 3] {
            let model = TableModel::random(&ds, &w, 8, seed);
            let active: Vec<(usize, usize)> = model.cells.iter().map(|&(t, m, _)| (t, m)).collect();
            let exact = exact_shapley(&model, &w, &active, &ds.registry, &MaskPolicy::Baseline).unwrap();
            let cfg = ShapConfig { exhaustive: true, ..Default::default() };
            let (phi, v0, vx, _, _) =
                kernel_shap_game(&model, &w, &active, &ds.registry, &MaskPolicy::Baseline, &cfg).unwrap();
            assert!((v0 - exact.base_value).abs() < 1e-12);
            assert!((vx - exact.full_value).abs() < 1e-12);
            for (a, b) in phi.iter().zip(&exact.phi) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
            // efficiency holds exactly in both
            let sum: f64 = exact.phi.iter().sum();
            assert!((sum - (exact.full_value - exact.base_value)).abs() < 1e-12);
        }
    }

    #[test]
    fn dummy_feature_gets_zero_phi() {
        let (ds, w) = fixture();
        let model = TableModel::random(&ds, &w, 6, 9);
        let mut active: Vec<(usize, usize)> = model.cells.iter().map(|&(t, m, _)| (t, m)).collect();
        // an extra cell the model never reads
        let baselines = column_baselines(&ds.registry);
        let extra = all_cells(w.columns)
            .into_iter()
            .find(|&(t, m)| w.cell(t, m) != baselines[m] && !active.contains(&(t, m)))
            .unwrap();
        active.push(extra);
        let exact = exact_shapley(&model, &w, &active, &ds.registry, &MaskPolicy::Baseline).unwrap();
        assert!(exact.phi[6].abs() < 1e-12, "dummy phi = {}", exact.phi[6]);
        let cfg = ShapConfig { exhaustive: true, ..Default::default() };
        let (phi, ..) = kernel_shap_game(&model, &w, &active, &ds.registry, &MaskPolicy::Baseline, &cfg).unwrap();
        assert!(phi[6].abs() < 1e-9, "dummy kernel phi = {}", phi[6]);
    }

    #[test]
    fn symmetry_and_additivity_axioms() {
        let (ds, w) = fixture();
        let baselines = column_baselines(&ds.registry);
        let cells: Vec<(usize, usize, Category)> = all_cells(w.columns)
            .into_iter()
            .filter(|&(t, m)| w.cell(t, m) != baselines[m])
            .take(2)
            .map(|(t, m)| (t, m, w.cell(t, m)))
            .collect();
        // AND-like symmetric game: 0.8 when both present, 0.2 otherwise
        let table = vec![0.2, 0.2, 0.2, 0.8];
        let model = TableModel {
            meta: ModelMeta::from_registry(&ds.registry, ds.registry_hash.clone()),
            cells: cells.clone(),
            table,
        };
        let active: Vec<(usize, usize)> = cells.iter().map(|&(t, m, _)| (t, m)).collect();
        let exact = exact_shapley(&model, &w, &active, &ds.registry, &MaskPolicy::Baseline).unwrap();
        assert!((exact.phi[0] - exact.phi[1]).abs() < 1e-12, "symmetry violated: {:?}", exact.phi);

        // additive game: independent per-feature contributions
        let table_add: Vec<f64> = (0..4u32)
            .map(|c| 0.1 + 0.3 * f64::from(c & 1) + 0.2 * f64::from(c >> 1 & 1))
            .collect();
        let model_add = TableModel {
            meta: ModelMeta::from_registry(&ds.registry, ds.registry_hash.clone()),
            cells,
            table: table_add,
        };
        let exact = exact_shapley(&model_add, &w, &active, &ds.registry, &MaskPolicy::Baseline).unwrap();
        assert!((exact.phi[0] - 0.3).abs() < 1e-12);
        assert!((exact.phi[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn six_feature_efficiency_residual_is_tiny() {
        let (ds, w) = fixture();
        let model = TableModel::random(&ds, &w, 6, 4);
        let active: Vec<(usize, usize)> = model.cells.iter().map(|&(t, m, _)| (t, m)).collect();
        let exact = exact_shapley(&model, &w, &active, &ds.registry, &MaskPolicy::Baseline).unwrap();
        let residual = (exact.phi.iter().sum::<f64>() - (exact.full_value - exact.base_value)).abs();
        assert!(residual < 1e-12, "residual {residual}");
    }

    #[test]
    fn sixteen_features_exceed_the_exact_budget() {
        let (ds, w) = fixture();
        let model = TableModel::random(&ds, &w, 8, 4);
        let active: Vec<(usize, usize)> = all_cells(w.columns).into_iter().take(16).collect();
        let err = exact_shapley(&model, &w, &active, &ds.registry, &MaskPolicy::Baseline).unwrap_err();
        assert!(matches!(err, ExplainError::Budget { got: 16, limit: 15 }));
    }

    #[test]
    fn sampled_estimate_tracks_exact_within_three_se() {
        let (ds, w) = fixture();
        let model = TableModel::random(&ds, &w, 9, 12);
        let active: Vec<(usize, usize)> = model.cells.iter().map(|&(t, m, _)| (t, m)).collect();
        let exact = exact_shapley(&model, &w, &active, &ds.registry, &MaskPolicy::Baseline).unwrap();
        let cfg = ShapConfig { estimate_se: true, seed: 5, ..Default::default() };
        let (phi, _, _, se, _) =
            kernel_shap_game(&model, &w, &active, &ds.registry, &MaskPolicy::Baseline, &cfg).unwrap();
        let se = se.unwrap();
        for j in 0..active.len() {
            let diff = (phi[j] - exact.phi[j]).abs();
            assert!(diff <= 3.0 * se[j] + 1e-9, "phi[{j}]: diff {diff} vs 3se {}", 3.0 * se[j]);
        }
    }
}
