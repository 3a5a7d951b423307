use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Classifier, ContractError};
use crate::ingest::{ActivityLabel, ActivityWindow};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("test set is empty")]
    Empty,
    #[error("test window {0} has no label")]
    Unlabeled(usize),
    #[error(transparent)]
    Contract(#[from] ContractError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: ActivityLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// Set when no test window carried this label; its scores read 0.
    pub zero_support: bool,
}

/// Confusion matrix and per-class precision/recall/F1 with macro averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub samples: usize,
}

impl EvalReport {
    /// Derive every metric from a `true x predicted` confusion matrix.
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let n = ActivityLabel::COUNT;
        assert_eq!(confusion.len(), n);
        let mut per_class = Vec::with_capacity(n);
        let mut correct = 0usize;
        let mut samples = 0usize;
        for (i, label) in ActivityLabel::ALL.iter().enumerate() {
            let support: usize = confusion[i].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[i]).sum();
            let hit = confusion[i][i];
            correct += hit;
            samples += support;
            let precision = if predicted == 0 { 0.0 } else { hit as f64 / predicted as f64 };
            let recall = if support == 0 { 0.0 } else { hit as f64 / support as f64 };
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            per_class.push(ClassMetrics { label: *label, precision, recall, f1, support, zero_support: support == 0 });
        }
        let k = n as f64;
        EvalReport {
            macro_precision: per_class.iter().map(|c| c.precision).sum::<f64>() / k,
            macro_recall: per_class.iter().map(|c| c.recall).sum::<f64>() / k,
            macro_f1: per_class.iter().map(|c| c.f1).sum::<f64>() / k,
            accuracy: if samples == 0 { 0.0 } else { correct as f64 / samples as f64 },
            samples,
            confusion,
            per_class,
        }
    }

    /// Pool several reports by summing their confusion matrices.
    pub fn merge(reports: &[EvalReport]) -> Self {
        let n = ActivityLabel::COUNT;
        let mut confusion = vec![vec![0usize; n]; n];
        for r in reports {
            for i in 0..n {
                for j in 0..n {
                    confusion[i][j] += r.confusion[i][j];
                }
            }
        }
        EvalReport::from_confusion(confusion)
    }
}

/// Evaluate a classifier on labelled windows.
pub fn evaluate(model: &dyn Classifier, windows: &[&ActivityWindow]) -> Result<EvalReport, MetricsError> {
    if windows.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = ActivityLabel::COUNT;
    let mut confusion = vec![vec![0usize; n]; n];
    for (i, w) in windows.iter().enumerate() {
        let truth = w.label.ok_or(MetricsError::Unlabeled(i))?;
        let pred = model.predict(w)?.argmax();
        confusion[truth.index()][pred.index()] += 1;
    }
    Ok(EvalReport::from_confusion(confusion))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{ModelMeta, ProbabilityDistribution};
    use crate::ingest::synth;

    struct Fixed {
        meta: ModelMeta,
        mode: Mode,
    }

    enum Mode {
        Perfect,
        Always(ActivityLabel),
    }

    impl Classifier for Fixed {
        fn meta(&self) -> &ModelMeta {
            &self.meta
        }
        fn predict(&self, window: &ActivityWindow) -> Result<ProbabilityDistribution, ContractError> {
            let winner = match self.mode {
                Mode::Perfect => window.label.unwrap(),
                Mode::Always(l) => l,
            };
            let mut probs = vec![0.0; ActivityLabel::COUNT];
            probs[winner.index()] = 1.0;
            ProbabilityDistribution::new(probs)
        }
    }

    fn balanced_dataset() -> crate::ingest::LabeledDataset {
        synth::dataset_with_counts(&ActivityLabel::ALL.map(|l| (l, 4)), 10, 8)
    }

    #[test]
    fn perfect_predictor_scores_ones_on_the_diagonal() {
        let ds = balanced_dataset();
        let meta = ModelMeta::from_registry(&ds.registry, ds.registry_hash.clone());
        let model = Fixed { meta, mode: Mode::Perfect };
        let refs: Vec<&ActivityWindow> = ds.windows.iter().collect();
        let report = evaluate(&model, &refs).unwrap();
        for (i, row) in report.confusion.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                assert_eq!(c, if i == j { 4 } else { 0 });
            }
        }
        assert!((report.macro_f1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_predictor_on_balanced_set_has_macro_recall_point_one() {
        let ds = balanced_dataset();
        let meta = ModelMeta::from_registry(&ds.registry, ds.registry_hash.clone());
        let model = Fixed { meta, mode: Mode::Always(ActivityLabel::Sleep) };
        let refs: Vec<&ActivityWindow> = ds.windows.iter().collect();
        let report = evaluate(&model, &refs).unwrap();
        assert!((report.macro_recall - 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_support_class_is_flagged() {
        let ds = synth::dataset_with_counts(&[(ActivityLabel::Sleep, 3)], 10, 8);
        let meta = ModelMeta::from_registry(&ds.registry, ds.registry_hash.clone());
        let model = Fixed { meta, mode: Mode::Perfect };
        let refs: Vec<&ActivityWindow> = ds.windows.iter().collect();
        let report = evaluate(&model, &refs).unwrap();
        let eat = &report.per_class[ActivityLabel::Eat.index()];
        assert!(eat.zero_support);
        assert_eq!(eat.f1, 0.0);
        assert!(!report.per_class[ActivityLabel::Sleep.index()].zero_support);
    }

    #[test]
    fn empty_test_set_is_rejected() {
        let ds = balanced_dataset();
        let meta = ModelMeta::from_registry(&ds.registry, ds.registry_hash.clone());
        let model = Fixed { meta, mode: Mode::Perfect };
        assert!(matches!(evaluate(&model, &[]), Err(MetricsError::Empty)));
    }
}
