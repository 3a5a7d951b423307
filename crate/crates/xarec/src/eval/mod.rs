//! Scoring explanations against the activity-to-sensor credibility rules,
//! plus the aggregate analyses of a benchmark run: explanation accuracy
//! percentages, per-method wall-clock, and explanation-content
//! distributions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::RunManifest;
use crate::explain::{AttributionSet, Method};
use crate::ingest::{ActivityLabel, ActivityWindow, Category, SensorKind, SensorRegistry};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("label '{0}' has no entry in the credibility rule set")]
    MissingLabel(ActivityLabel),
    #[error("credibility rule for '{label}' names unregistered sensor '{sensor}'")]
    UnknownSensor { label: String, sensor: String },
    #[error("no verdicts to aggregate")]
    NoVerdicts,
    #[error("no instances to time")]
    NoInstances,
    #[error("explainer failed during timing: {0}")]
    Explain(String),
    #[error("rule file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("rule file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Hand-curated map from each activity to the sensors whose home location
/// is proximal to the activity's region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredibilityRuleSet {
    pub rules: BTreeMap<ActivityLabel, BTreeSet<String>>,
}

impl CredibilityRuleSet {
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self, registry: &SensorRegistry) -> Result<(), EvalError> {
        for label in ActivityLabel::ALL {
            if !self.rules.contains_key(&label) {
                return Err(EvalError::MissingLabel(label));
            }
        }
        for (label, sensors) in &self.rules {
            for s in sensors {
                if !registry.sensors.contains_key(s) {
                    return Err(EvalError::UnknownSensor { label: label.name().to_string(), sensor: s.clone() });
                }
            }
        }
        Ok(())
    }
}

/// Whether an explanation's features touch any sensor credible for the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyVerdict {
    pub accurate: bool,
    pub matched_sensors: Vec<String>,
}

/// An explanation is accurate when at least one of its features names a
/// sensor from the label's credible set. Only sensor identities matter;
/// weights, timesteps, and durations never enter the verdict.
pub fn classify_explanation(
    attribution: &AttributionSet,
    label: ActivityLabel,
    rules: &CredibilityRuleSet,
) -> Result<AccuracyVerdict, EvalError> {
    let credible = rules.rules.get(&label).ok_or(EvalError::MissingLabel(label))?;
    let mut matched: Vec<String> = attribution
        .features
        .iter()
        .filter(|f| credible.contains(&f.coord.sensor_id))
        .map(|f| f.coord.sensor_id.clone())
        .collect();
    matched.sort();
    matched.dedup();
    Ok(AccuracyVerdict { accurate: !matched.is_empty(), matched_sensors: matched })
}

/// Percentage of verdicts marked accurate.
pub fn compute_eacc(verdicts: &[AccuracyVerdict]) -> Result<f64, EvalError> {
    if verdicts.is_empty() {
        return Err(EvalError::NoVerdicts);
    }
    let accurate = verdicts.iter().filter(|v| v.accurate).count();
    Ok(100.0 * accurate as f64 / verdicts.len() as f64)
}

/// What one method's explanations talk about.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContentStats {
    /// Share of features per sensor type; sums to 100 over the three types.
    pub feature_type_pct: BTreeMap<SensorKind, f64>,
    /// Share of explanations using at least one feature of each type.
    pub explanation_usage_pct: BTreeMap<SensorKind, f64>,
    /// Among motion features: the share reporting detected movement...
    pub motion_presence_pct: f64,
    /// ...versus the share reporting its absence. The two sum to 100.
    pub motion_absence_pct: f64,
    pub explanations: usize,
    pub features: usize,
}

pub fn content_distribution(sets: &[&AttributionSet], registry: &SensorRegistry) -> ContentStats {
    let mut per_type: BTreeMap<SensorKind, usize> = BTreeMap::new();
    let mut usage: BTreeMap<SensorKind, usize> = BTreeMap::new();
    let mut motion_presence = 0usize;
    let mut motion_absence = 0usize;
    let mut features = 0usize;
    for set in sets {
        let mut kinds_here: BTreeSet<SensorKind> = BTreeSet::new();
        for f in &set.features {
            let Ok(spec) = registry.get(&f.coord.sensor_id) else { continue };
            features += 1;
            *per_type.entry(spec.kind).or_insert(0) += 1;
            kinds_here.insert(spec.kind);
            if spec.kind == SensorKind::Motion {
                match f.coord.value {
                    Category::Detected => motion_presence += 1,
                    Category::NotDetected => motion_absence += 1,
                    _ => {}
                }
            }
        }
        for k in kinds_here {
            *usage.entry(k).or_insert(0) += 1;
        }
    }
    let pct = |count: usize, total: usize| if total == 0 { 0.0 } else { 100.0 * count as f64 / total as f64 };
    let motion_total = motion_presence + motion_absence;
    let mut stats = ContentStats {
        explanations: sets.len(),
        features,
        motion_presence_pct: pct(motion_presence, motion_total),
        motion_absence_pct: pct(motion_absence, motion_total),
        ..Default::default()
    };
    for kind in [SensorKind::Door, SensorKind::Motion, SensorKind::Temperature] {
        stats.feature_type_pct.insert(kind, pct(per_type.get(&kind).copied().unwrap_or(0), features));
        stats
            .explanation_usage_pct
            .insert(kind, pct(usage.get(&kind).copied().unwrap_or(0), sets.len()));
    }
    stats
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingStats {
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub instances: usize,
}

impl TimingStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return TimingStats::default();
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n < 2 {
            0.0
        } else {
            samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64
        };
        TimingStats { mean_seconds: mean, std_seconds: var.sqrt(), instances: n }
    }
}

/// Wall-clock per explanation, measured in isolation against a warm model:
/// one instance at a time, methods interleaved per instance.
pub fn time_explainers<F>(
    instances: &[&ActivityWindow],
    methods: &[Method],
    mut run: F,
) -> Result<BTreeMap<Method, TimingStats>, EvalError>
where
    F: FnMut(Method, &ActivityWindow) -> Result<AttributionSet, crate::explain::ExplainError>,
{
    if instances.is_empty() {
        return Err(EvalError::NoInstances);
    }
    let mut samples: BTreeMap<Method, Vec<f64>> = BTreeMap::new();
    for w in instances {
        for &m in methods {
            let start = Instant::now();
            run(m, w).map_err(|e| EvalError::Explain(e.to_string()))?;
            samples.entry(m).or_default().push(start.elapsed().as_secs_f64());
        }
    }
    Ok(samples.into_iter().map(|(m, s)| (m, TimingStats::from_samples(&s))).collect())
}

/// Instances on which every method produced an accurate explanation, the
/// export that seeds user-study material.
pub fn select_all_accurate(verdicts: &BTreeMap<usize, BTreeMap<Method, AccuracyVerdict>>) -> Vec<usize> {
    verdicts
        .iter()
        .filter(|(_, per_method)| !per_method.is_empty() && per_method.values().all(|v| v.accurate))
        .map(|(i, _)| *i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub eacc_pct: f64,
    pub classified: usize,
    pub accurate: usize,
    pub timing: TimingStats,
    pub content: ContentStats,
}

/// The full benchmark artifact: per-method accuracy, timing, and content,
/// plus the all-methods-accurate instance subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema: String,
    pub per_method: BTreeMap<Method, MethodReport>,
    pub all_accurate_instances: Vec<usize>,
    pub instances: usize,
    pub manifest: RunManifest,
}

pub const BENCHMARK_SCHEMA: &str = "xarec.benchmark/1";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::{Attribution, Diagnostics, FeatureCoordinate};
    use chrono::NaiveDate;

    fn rules() -> CredibilityRuleSet {
        let mut rules = BTreeMap::new();
        for label in ActivityLabel::ALL {
            rules.insert(label, BTreeSet::new());
        }
        rules.get_mut(&ActivityLabel::Bathing).unwrap().extend(["M013".to_string(), "M004".to_string()]);
        rules.get_mut(&ActivityLabel::Sleep).unwrap().extend(["M001".to_string()]);
        CredibilityRuleSet { rules }
    }

    fn set_with(features: Vec<(&str, Category)>) -> AttributionSet {
        AttributionSet {
            method: Method::Shap,
            target_class: ActivityLabel::Bathing,
            predicted_prob: 0.8,
            window_start: NaiveDate::from_ymd_opt(2026, 1, 1).unwrap().and_hms_opt(8, 0, 0).unwrap(),
            features: features
                .into_iter()
                .enumerate()
                .map(|(t, (s, v))| Attribution {
                    coord: FeatureCoordinate { sensor_id: s.to_string(), timestep: t, value: v },
                    weight: 0.5,
                    duration: None,
                })
                .collect(),
            base_value: None,
            anchor: None,
            diagnostics: Diagnostics::default(),
        }
    }

    #[test]
    fn credible_sensor_makes_accurate() {
        let o = set_with(vec![("M013", Category::Detected), ("T001", Category::Low)]);
        let v = classify_explanation(&o, ActivityLabel::Bathing, &rules()).unwrap();
        assert!(v.accurate);
        assert_eq!(v.matched_sensors, vec!["M013"]);
    }

    #[test]
    fn only_remote_sensors_make_inaccurate() {
        let o = set_with(vec![("T001", Category::Low), ("T002", Category::Low)]);
        let v = classify_explanation(&o, ActivityLabel::Sleep, &rules()).unwrap();
        assert!(!v.accurate);
    }

    #[test]
    fn empty_attribution_is_inaccurate() {
        let o = set_with(vec![]);
        let v = classify_explanation(&o, ActivityLabel::Bathing, &rules()).unwrap();
        assert!(!v.accurate);
    }

    #[test]
    fn adding_a_credible_sensor_never_flips_to_inaccurate() {
        let base = set_with(vec![("T001", Category::Low), ("M013", Category::Detected)]);
        let before = classify_explanation(&base, ActivityLabel::Bathing, &rules()).unwrap();
        let more = set_with(vec![("T001", Category::Low), ("M013", Category::Detected), ("M004", Category::Detected)]);
        let after = classify_explanation(&more, ActivityLabel::Bathing, &rules()).unwrap();
        assert!(before.accurate && after.accurate);
    }

    #[test]
    fn eacc_percentages() {
        let yes = AccuracyVerdict { accurate: true, matched_sensors: vec![] };
        let no = AccuracyVerdict { accurate: false, matched_sensors: vec![] };
        assert_eq!(compute_eacc(&[yes.clone(), yes.clone()]).unwrap(), 100.0);
        assert_eq!(compute_eacc(&vec![no.clone(); 10]).unwrap(), 0.0);
        let mixed = vec![yes.clone(), no.clone(), yes.clone(), no.clone()];
        assert_eq!(compute_eacc(&mixed).unwrap(), 50.0);
        // permutation invariance
        let perm = vec![no.clone(), no, yes.clone(), yes];
        assert_eq!(compute_eacc(&perm).unwrap(), 50.0);
        assert!(compute_eacc(&[]).is_err());
    }

    #[test]
    fn select_all_accurate_requires_every_method() {
        let yes = AccuracyVerdict { accurate: true, matched_sensors: vec![] };
        let no = AccuracyVerdict { accurate: false, matched_sensors: vec![] };
        let mut verdicts: BTreeMap<usize, BTreeMap<Method, AccuracyVerdict>> = BTreeMap::new();
        verdicts.insert(0, Method::ALL.into_iter().map(|m| (m, yes.clone())).collect());
        let mut one_off: BTreeMap<Method, AccuracyVerdict> = Method::ALL.into_iter().map(|m| (m, yes.clone())).collect();
        one_off.insert(Method::Lime, no);
        verdicts.insert(1, one_off);
        assert_eq!(select_all_accurate(&verdicts), vec![0]);
    }

    #[test]
    fn content_distribution_sums_and_splits() {
        let ds = crate::ingest::synth::dataset_with_counts(&[(ActivityLabel::Sleep, 1)], 8, 1);
        let reg = &ds.registry;
        let a = set_with(vec![("D001", Category::Open), ("D002", Category::Closed)]);
        let stats = content_distribution(&[&a], reg);
        assert_eq!(stats.feature_type_pct[&SensorKind::Door], 100.0);
        assert_eq!(stats.feature_type_pct[&SensorKind::Motion], 0.0);
        assert_eq!(stats.explanation_usage_pct[&SensorKind::Door], 100.0);

        let b = set_with(vec![
            ("M001", Category::Detected),
            ("M002", Category::NotDetected),
            ("M003", Category::NotDetected),
        ]);
        let stats = content_distribution(&[&b], reg);
        assert!((stats.motion_presence_pct - 100.0 / 3.0).abs() < 1e-9);
        assert!((stats.motion_absence_pct - 200.0 / 3.0).abs() < 1e-9);
        let total: f64 = stats.feature_type_pct.values().sum();
        assert!((total - 100.0).abs() < 1e-9);
    }

    #[test]
    fn timing_single_instance_has_zero_std() {
        let ds = crate::ingest::synth::dataset_with_counts(&[(ActivityLabel::Sleep, 1)], 8, 1);
        let w = &ds.windows[0];
        let stats = time_explainers(&[w], &[Method::Lime], |_m, _win| Ok(set_with(vec![]))).unwrap();
        let lime = &stats[&Method::Lime];
        assert_eq!(lime.instances, 1);
        assert_eq!(lime.std_seconds, 0.0);
    }
}
