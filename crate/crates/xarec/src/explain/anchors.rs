//! Anchors: high-precision rules found by beam search with a
//! Kullback-Leibler confidence-bound bandit.
//!
//! A candidate rule fixes a set of cells to their observed values; pulling
//! the rule's arm samples a window where every other cell is redrawn from
//! the training set's per-cell marginals, and the pull succeeds when the
//! model keeps its prediction. Beam search extends the best rules one
//! predicate at a time; a rule qualifies once the KL lower confidence bound
//! on its precision reaches the threshold `tau` at confidence `1 - delta`.
//! Among qualifying rules the one with the highest coverage (the marginal
//! probability of satisfying the rule) wins.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{
    all_cells, check_alignment, AnchorRule, Attribution, AttributionSet, CellMarginals, Diagnostics,
    ExplainError, FeatureCoordinate, Method, BELOW_PRECISION_THRESHOLD, TOP_FEATURES,
};
use crate::classifier::Classifier;
use crate::ingest::{ActivityLabel, ActivityWindow, SensorRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorsConfig {
    /// Precision threshold a rule must clear.
    pub tau: f64,
    /// Confidence parameter: a qualifying rule has precision >= tau with
    /// probability at least 1 - delta.
    pub delta: f64,
    pub beam_width: usize,
    /// Pulls given to every fresh candidate before bound-driven sampling.
    pub init_samples: usize,
    /// Pulls per bound-refinement round.
    pub batch: usize,
    /// Total model-call budget for one explanation.
    pub budget: usize,
    pub max_predicates: usize,
    pub seed: u64,
}

impl Default for AnchorsConfig {
    fn default() -> Self {
        AnchorsConfig {
            tau: 0.95,
            delta: 0.1,
            beam_width: 4,
            init_samples: 16,
            batch: 64,
            budget: 100_000,
            max_predicates: 5,
            seed: 7,
        }
    }
}

impl AnchorsConfig {
    fn validate(&self) -> Result<(), ExplainError> {
        if !(self.tau > 0.0 && self.tau <= 1.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(ExplainError::BadConfig("tau must be in (0,1], delta in (0,1)".into()));
        }
        if self.beam_width == 0 || self.init_samples == 0 || self.batch == 0 || self.max_predicates == 0 {
            return Err(ExplainError::BadConfig("beam, init, batch, and rule length must be positive".into()));
        }
        Ok(())
    }
}

fn kl_bernoulli(p: f64, q: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    let q = q.clamp(1e-12, 1.0 - 1e-12);
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

/// Largest `q >= p` with `n * kl(p, q) <= beta`.
fn kl_upper(p: f64, n: f64, beta: f64) -> f64 {
    let mut lo = p;
    let mut hi = 1.0;
    for _ in 0..40 {
        let mid = (lo + hi) / 2.0;
        if n * kl_bernoulli(p, mid) > beta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (lo + hi) / 2.0
}

/// Smallest `q <= p` with `n * kl(p, q) <= beta`.
fn kl_lower(p: f64, n: f64, beta: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = p;
    for _ in 0..40 {
        let mid = (lo + hi) / 2.0;
        if n * kl_bernoulli(p, mid) > beta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) / 2.0
}

/// One candidate rule and its sampling state.
struct Arm {
    /// Predicates in the order they were added to the rule.
    cells: Vec<(usize, usize)>,
    /// Canonical identity, independent of insertion order.
    key: Vec<(usize, usize)>,
    pulls: u64,
    successes: u64,
    rng: ChaCha20Rng,
}

impl Arm {
    fn new(cells: Vec<(usize, usize)>, seed: u64) -> Self {
        let mut key = cells.clone();
        key.sort_unstable();
        // stream derived from the predicate set so results do not depend on
        // the order candidates happen to be explored in
        let mut hash = seed ^ 0x9e37_79b9_7f4a_7c15;
        for &(t, m) in &key {
            hash = hash.wrapping_mul(0x100_0000_01b3).wrapping_add((t * 8191 + m) as u64);
        }
        Arm { cells, key, pulls: 0, successes: 0, rng: ChaCha20Rng::seed_from_u64(hash) }
    }

    fn mean(&self) -> f64 {
        if self.pulls == 0 {
            0.5
        } else {
            self.successes as f64 / self.pulls as f64
        }
    }
}

struct Bandit<'a> {
    model: &'a dyn Classifier,
    window: &'a ActivityWindow,
    target: ActivityLabel,
    marginals: &'a CellMarginals,
    calls_left: usize,
    calls_used: usize,
}

impl Bandit<'_> {
    /// Draw `n` perturbations satisfying the rule and count kept predictions.
    fn pull(&mut self, arm: &mut Arm, n: usize) -> Result<(), ExplainError> {
        let n = n.min(self.calls_left);
        if n == 0 {
            return Ok(());
        }
        let columns = self.window.columns;
        let fixed: BTreeSet<usize> = arm.cells.iter().map(|&(t, m)| t * columns + m).collect();
        let mut batch = Vec::with_capacity(n);
        for _ in 0..n {
            let mut w = self.window.clone();
            for t in 0..w.rows() {
                for m in 0..columns {
                    if !fixed.contains(&(t * columns + m)) {
                        w.set_cell(t, m, self.marginals.sample(t, m, &mut arm.rng));
                    }
                }
            }
            batch.push(w);
        }
        let preds = self.model.predict_batch(&batch)?;
        arm.pulls += n as u64;
        arm.successes += preds.iter().filter(|p| p.argmax() == self.target).count() as u64;
        self.calls_left -= n;
        self.calls_used += n;
        Ok(())
    }
}

/// Exploration rate; grows with the round and the number of arms so the
/// union bound over all confidence intervals stays at delta.
fn beta(arms: usize, round: u64, delta: f64) -> f64 {
    ((arms.max(1) as f64) * (round.max(1) as f64).powf(1.1) / delta).ln()
}

/// Closed-form coverage under independent per-cell marginals.
fn coverage_of(cells: &[(usize, usize)], window: &ActivityWindow, marginals: &CellMarginals) -> f64 {
    cells.iter().map(|&(t, m)| marginals.prob(t, m, window.cell(t, m))).product()
}

/// Best-arm identification: keep sampling the weakest member of the current
/// top set and the strongest outsider until the sets separate.
fn select_beam(
    bandit: &mut Bandit<'_>,
    arms: &mut [Arm],
    width: usize,
    cfg: &AnchorsConfig,
    level_budget: usize,
) -> Result<Vec<usize>, ExplainError> {
    let n_arms = arms.len();
    let width = width.min(n_arms);
    let mut round = 0u64;
    let mut spent = 0usize;
    loop {
        round += 1;
        let b = beta(n_arms, round, cfg.delta);
        let mut order: Vec<usize> = (0..n_arms).collect();
        order.sort_by(|&x, &y| {
            arms[y].mean().partial_cmp(&arms[x].mean()).unwrap().then_with(|| arms[x].key.cmp(&arms[y].key))
        });
        let (top, rest) = order.split_at(width);
        if rest.is_empty() {
            return Ok(top.to_vec());
        }
        let weakest = *top
            .iter()
            .min_by(|&&x, &&y| {
                let lx = kl_lower(arms[x].mean(), arms[x].pulls as f64, b);
                let ly = kl_lower(arms[y].mean(), arms[y].pulls as f64, b);
                lx.partial_cmp(&ly).unwrap()
            })
            .unwrap();
        let strongest = *rest
            .iter()
            .max_by(|&&x, &&y| {
                let ux = kl_upper(arms[x].mean(), arms[x].pulls as f64, b);
                let uy = kl_upper(arms[y].mean(), arms[y].pulls as f64, b);
                ux.partial_cmp(&uy).unwrap()
            })
            .unwrap();
        let lb = kl_lower(arms[weakest].mean(), arms[weakest].pulls as f64, b);
        let ub = kl_upper(arms[strongest].mean(), arms[strongest].pulls as f64, b);
        if ub <= lb + 0.05 || bandit.calls_left == 0 || spent >= level_budget {
            return Ok(top.to_vec());
        }
        bandit.pull(&mut arms[weakest], cfg.batch)?;
        bandit.pull(&mut arms[strongest], cfg.batch)?;
        spent += 2 * cfg.batch;
    }
}

/// Sample a rule until its precision bound settles on one side of `tau`.
/// Returns whether it qualifies.
fn test_qualification(bandit: &mut Bandit<'_>, arm: &mut Arm, cfg: &AnchorsConfig) -> Result<bool, ExplainError> {
    let mut round = 0u64;
    loop {
        round += 1;
        let b = beta(1, round, cfg.delta);
        let n = arm.pulls as f64;
        let lb = kl_lower(arm.mean(), n, b);
        let ub = kl_upper(arm.mean(), n, b);
        if lb >= cfg.tau {
            return Ok(true);
        }
        if ub < cfg.tau {
            return Ok(false);
        }
        if bandit.calls_left == 0 {
            return Ok(false);
        }
        bandit.pull(arm, cfg.batch)?;
    }
}

/// Search for the highest-coverage rule whose precision clears `tau` with
/// confidence `1 - delta`. Falls back to the best-precision rule, flagged,
/// when the budget runs out first.
pub fn explain_anchors(
    model: &dyn Classifier,
    window: &ActivityWindow,
    config: &AnchorsConfig,
    registry: &SensorRegistry,
    marginals: &CellMarginals,
) -> Result<(AnchorRule, AttributionSet), ExplainError> {
    config.validate()?;
    check_alignment(model, registry)?;
    let started = Instant::now();
    let prediction = model.predict(window)?;
    let target = prediction.argmax();
    let predicted_prob = prediction.prob_of(target);
    let columns = registry.columns();

    let mut bandit = Bandit {
        model,
        window,
        target,
        marginals,
        calls_left: config.budget,
        calls_used: 0,
    };

    let grid = all_cells(window.columns);
    let mut beam: Vec<Arm> = Vec::new();
    let mut qualified: Vec<(Arm, f64)> = Vec::new();
    let mut best_overall: Option<Arm> = None;
    let level_budget = config.budget / config.max_predicates.max(1);

    for level in 1..=config.max_predicates {
        // extend every beam rule (or start from single predicates)
        let mut seen: BTreeSet<Vec<(usize, usize)>> = BTreeSet::new();
        let mut candidates: Vec<Arm> = Vec::new();
        let parents: Vec<Vec<(usize, usize)>> =
            if level == 1 { vec![Vec::new()] } else { beam.iter().map(|a| a.cells.clone()).collect() };
        for parent in &parents {
            for &cell in &grid {
                if parent.contains(&cell) {
                    continue;
                }
                let mut cells = parent.clone();
                cells.push(cell);
                let arm = Arm::new(cells, config.seed);
                if seen.insert(arm.key.clone()) {
                    candidates.push(arm);
                }
            }
        }
        if candidates.is_empty() || bandit.calls_left == 0 {
            break;
        }
        for arm in &mut candidates {
            bandit.pull(arm, config.init_samples)?;
        }
        let top = select_beam(&mut bandit, &mut candidates, config.beam_width, config, level_budget)?;
        beam = Vec::new();
        for &i in &top {
            beam.push(Arm {
                cells: candidates[i].cells.clone(),
                key: candidates[i].key.clone(),
                pulls: candidates[i].pulls,
                successes: candidates[i].successes,
                rng: candidates[i].rng.clone(),
            });
        }

        for arm in &mut beam {
            let ok = test_qualification(&mut bandit, arm, config)?;
            match &best_overall {
                Some(b) if b.mean() >= arm.mean() => {}
                _ => {
                    best_overall = Some(Arm {
                        cells: arm.cells.clone(),
                        key: arm.key.clone(),
                        pulls: arm.pulls,
                        successes: arm.successes,
                        rng: arm.rng.clone(),
                    })
                }
            }
            if ok {
                let cov = coverage_of(&arm.cells, window, marginals);
                qualified.push((
                    Arm {
                        cells: arm.cells.clone(),
                        key: arm.key.clone(),
                        pulls: arm.pulls,
                        successes: arm.successes,
                        rng: arm.rng.clone(),
                    },
                    cov,
                ));
            }
        }
        if !qualified.is_empty() {
            break;
        }
    }

    let (arm, coverage, qualifying) = if let Some((best, cov)) = qualified
        .into_iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| b.0.key.cmp(&a.0.key)))
    {
        (best, cov, true)
    } else {
        let arm = best_overall.ok_or_else(|| ExplainError::BadConfig("no candidate rules".into()))?;
        let cov = coverage_of(&arm.cells, window, marginals);
        (arm, cov, false)
    };

    let predicates: Vec<FeatureCoordinate> = arm
        .cells
        .iter()
        .map(|&(t, m)| FeatureCoordinate {
            sensor_id: columns[m].clone(),
            timestep: t,
            value: window.cell(t, m),
        })
        .collect();
    let rule = AnchorRule { predicates: predicates.clone(), precision: arm.mean(), coverage, qualifying };

    let mut flags = Vec::new();
    if !qualifying {
        flags.push(BELOW_PRECISION_THRESHOLD.to_string());
    }
    // first predicates in order of appearance
    let features = predicates
        .into_iter()
        .take(TOP_FEATURES)
        .map(|coord| Attribution { coord, weight: rule.precision, duration: None })
        .collect();

    let set = AttributionSet {
        method: Method::Anchors,
        target_class: target,
        predicted_prob,
        window_start: window.start,
        features,
        base_value: None,
        anchor: Some(rule.clone()),
        diagnostics: Diagnostics {
            samples: bandit.calls_used,
            seed: config.seed,
            elapsed_ms: started.elapsed().as_millis() as u64,
            flags,
            ..Default::default()
        },
    };
    Ok((rule, set))
}

/// Re-estimate a rule's precision on a fresh sample, outside the bandit's
/// sampling stream.
pub fn estimate_precision(
    model: &dyn Classifier,
    window: &ActivityWindow,
    cells: &[(usize, usize)],
    marginals: &CellMarginals,
    samples: usize,
    seed: u64,
) -> Result<f64, ExplainError> {
    let target = model.predict(window)?.argmax();
    let mut arm = Arm::new(cells.to_vec(), seed ^ 0xdead_beef);
    let mut bandit = Bandit { model, window, target, marginals, calls_left: samples, calls_used: 0 };
    bandit.pull(&mut arm, samples)?;
    Ok(arm.mean())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{ContractError, ModelMeta, ProbabilityDistribution};
    use crate::ingest::{synth, ActivityWindow, Category, SensorKind};

    /// Predicts Sleep iff one specific cell holds a specific value.
    struct OneCellModel {
        meta: ModelMeta,
        cell: (usize, usize),
        value: Category,
    }

    impl Classifier for OneCellModel {
        fn meta(&self) -> &ModelMeta {
            &self.meta
        }
        fn predict(&self, window: &ActivityWindow) -> Result<ProbabilityDistribution, ContractError> {
            let hit = window.cell(self.cell.0, self.cell.1) == self.value;
            let mut probs = vec![if hit { 0.0 } else { 1.0 / 9.0 }; ActivityLabel::COUNT];
            probs[ActivityLabel::Sleep.index()] = if hit { 1.0 } else { 0.0 };
            ProbabilityDistribution::new(probs)
        }
    }

    #[test]
    fn kl_bounds_bracket_the_mean() {
        for &(p, n, b) in &[(0.5, 100.0, 3.0), (0.9, 30.0, 2.0), (1.0, 200.0, 5.0), (0.0, 50.0, 2.0)] {
            let lb = kl_lower(p, n, b);
            let ub = kl_upper(p, n, b);
            assert!(lb <= p + 1e-9 && p <= ub + 1e-9, "p={p} lb={lb} ub={ub}");
            assert!((0.0..=1.0).contains(&lb) && (0.0..=1.0).contains(&ub));
        }
        // more data tightens the bound
        assert!(kl_lower(0.9, 400.0, 3.0) > kl_lower(0.9, 40.0, 3.0));
    }

    #[test]
    fn sufficient_single_cell_becomes_the_anchor() {
        let ds = synth::dataset_with_counts(&[(ActivityLabel::Sleep, 30), (ActivityLabel::Cook, 30)], 8, 51);
        let w = ds.windows[0].clone();
        let kinds: Vec<SensorKind> = ds.registry.sensors.values().map(|s| s.kind).collect();
        let refs: Vec<&ActivityWindow> = ds.windows.iter().collect();
        let marginals = CellMarginals::from_windows(&refs, &kinds);
        // pick a cell whose observed value is not overwhelmingly likely
        let cell = (10, ds.registry.column_index("M004").unwrap());
        let model = OneCellModel {
            meta: ModelMeta::from_registry(&ds.registry, ds.registry_hash.clone()),
            cell,
            value: w.cell(cell.0, cell.1),
        };
        let cfg = AnchorsConfig { budget: 30_000, seed: 3, ..Default::default() };
        let (rule, set) = explain_anchors(&model, &w, &cfg, &ds.registry, &marginals).unwrap();
        assert!(rule.qualifying);
        assert_eq!(rule.predicates.len(), 1, "rule: {:?}", rule.predicates);
        assert_eq!(rule.predicates[0].timestep, cell.0);
        assert_eq!(ds.registry.column_index(&rule.predicates[0].sensor_id), Some(cell.1));
        assert!(rule.precision > 0.99);
        assert_eq!(set.features.len(), 1);
        // the explained window satisfies its own anchor by construction
        for p in &rule.predicates {
            let m = ds.registry.column_index(&p.sensor_id).unwrap();
            assert_eq!(w.cell(p.timestep, m), p.value);
        }
    }

    #[test]
    fn anchors_are_seed_deterministic() {
        let ds = synth::dataset_with_counts(&[(ActivityLabel::Sleep, 20), (ActivityLabel::Cook, 20)], 8, 52);
        let w = ds.windows[2].clone();
        let kinds: Vec<SensorKind> = ds.registry.sensors.values().map(|s| s.kind).collect();
        let refs: Vec<&ActivityWindow> = ds.windows.iter().collect();
        let marginals = CellMarginals::from_windows(&refs, &kinds);
        let cell = (5, ds.registry.column_index("M001").unwrap());
        let model = OneCellModel {
            meta: ModelMeta::from_registry(&ds.registry, ds.registry_hash.clone()),
            cell,
            value: w.cell(cell.0, cell.1),
        };
        let cfg = AnchorsConfig { budget: 20_000, seed: 9, ..Default::default() };
        let (r1, s1) = explain_anchors(&model, &w, &cfg, &ds.registry, &marginals).unwrap();
        let (r2, s2) = explain_anchors(&model, &w, &cfg, &ds.registry, &marginals).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(s1.features, s2.features);
    }
}
