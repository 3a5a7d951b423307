use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::encode::ModelMeta;
use super::lstm::LstmModel;
use super::ContractError;
use crate::ingest::LabeledDataset;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training index {0} is out of range")]
    BadIndex(usize),
    #[error("training window {0} has no label")]
    Unlabeled(usize),
    #[error("loss diverged to NaN at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Contract(#[from] ContractError),
}

/// Training hyperparameters. Defaults follow the reference protocol: batch
/// size 64, Adam at 0.001 on sparse categorical cross-entropy, early
/// stopping with patience 5 on validation loss, at most 100 epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// `None` disables early stopping.
    pub patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch_size: 64, learning_rate: 0.001, max_epochs: 100, patience: Some(5), seed: 7 }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(TrainError::BadConfig("batch_size and max_epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::BadConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Per-epoch record of the run, kept inside the model file for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let c2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for k in 0..params.len() {
            self.m[k] = Self::BETA1 * self.m[k] + (1.0 - Self::BETA1) * grad[k];
            self.v[k] = Self::BETA2 * self.v[k] + (1.0 - Self::BETA2) * grad[k] * grad[k];
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

fn mean_loss(model: &LstmModel, dataset: &LabeledDataset, indices: &[usize]) -> Result<f64, TrainError> {
    // Per-window losses are computed in parallel but reduced in index order.
    let losses: Result<Vec<f64>, TrainError> = indices
        .par_iter()
        .map(|&i| {
            let w = dataset.windows.get(i).ok_or(TrainError::BadIndex(i))?;
            let label = w.label.ok_or(TrainError::Unlabeled(i))?;
            Ok(model.loss(w, label)?)
        })
        .collect();
    Ok(losses?.iter().sum::<f64>() / indices.len() as f64)
}

/// Train an LSTM on `train_idx`, early-stopping on `val_idx` loss, and
/// return the parameter snapshot with the best validation loss.
///
/// The run is deterministic in `config.seed`: initialization, epoch
/// shuffles, and the fixed-order gradient reduction do not depend on worker
/// count.
pub fn train(
    dataset: &LabeledDataset,
    train_idx: &[usize],
    val_idx: &[usize],
    config: &TrainConfig,
) -> Result<(LstmModel, TrainLog), TrainError> {
    config.validate()?;
    if train_idx.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    for &i in train_idx.iter().chain(val_idx) {
        let w = dataset.windows.get(i).ok_or(TrainError::BadIndex(i))?;
        w.label.ok_or(TrainError::Unlabeled(i))?;
    }

    let meta = ModelMeta::from_registry(&dataset.registry, dataset.registry_hash.clone());
    let mut model = LstmModel::new(meta, config.seed);
    let mut adam = Adam::new(model.params.len(), config.learning_rate);
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed ^ 0x5851_f42d_4c95_7f2d);

    let mut order: Vec<usize> = train_idx.to_vec();
    let mut epochs = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut best_params = model.params.clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Result<Vec<(f64, Vec<f64>)>, TrainError> = batch
                .par_iter()
                .map(|&i| {
                    let w = &dataset.windows[i];
                    Ok(model.loss_and_gradient(w, w.label.unwrap())?)
                })
                .collect();
            let results = results?;
            let scale = 1.0 / batch.len() as f64;
            let mut grad = vec![0.0; model.params.len()];
            let mut batch_loss = 0.0;
            for (loss, g) in &results {
                batch_loss += loss;
                for (acc, &gk) in grad.iter_mut().zip(g) {
                    *acc += gk;
                }
            }
            batch_loss *= scale;
            if batch_loss.is_nan() {
                return Err(TrainError::Diverged { epoch });
            }
            for g in &mut grad {
                *g *= scale;
            }
            adam.step(&mut model.params, &grad);
            epoch_loss += batch_loss * batch.len() as f64;
        }
        let train_loss = epoch_loss / order.len() as f64;
        let val_loss = if val_idx.is_empty() { None } else { Some(mean_loss(&model, dataset, val_idx)?) };
        epochs.push(EpochRecord { epoch, train_loss, val_loss });

        let monitored = val_loss.unwrap_or(train_loss);
        if monitored.is_nan() {
            return Err(TrainError::Diverged { epoch });
        }
        if monitored < best_loss {
            best_loss = monitored;
            best_params = model.params.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if let Some(patience) = config.patience {
                if since_best > patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    model.params = best_params;
    let log = TrainLog { config: config.clone(), epochs, best_epoch, stopped_early };
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Classifier;
    use crate::ingest::{synth, ActivityLabel};

    #[test]
    fn empty_training_set_is_rejected() {
        let ds = synth::dataset_with_counts(&[(ActivityLabel::Sleep, 3)], 8, 1);
        let err = train(&ds, &[], &[], &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, TrainError::EmptyTrainingSet));
    }

    #[test]
    fn overfits_a_small_synthetic_dataset() {
        let ds = synth::dataset_with_counts(
            &[
                (ActivityLabel::Sleep, 10),
                (ActivityLabel::Cook, 10),
                (ActivityLabel::Work, 10),
                (ActivityLabel::Relax, 10),
                (ActivityLabel::Eat, 10),
            ],
            12,
            11,
        );
        let idx: Vec<usize> = (0..ds.windows.len()).collect();
        let config = TrainConfig { max_epochs: 200, patience: None, batch_size: 16, seed: 3, ..Default::default() };
        let (model, log) = train(&ds, &idx, &[], &config).unwrap();
        let correct = idx
            .iter()
            .filter(|&&i| model.predict(&ds.windows[i]).unwrap().argmax() == ds.windows[i].label.unwrap())
            .count();
        let acc = correct as f64 / idx.len() as f64;
        assert!(acc >= 0.95, "train accuracy {acc}, log tail {:?}", log.epochs.last());
    }

    #[test]
    fn training_is_seed_deterministic() {
        let ds = synth::dataset_with_counts(&[(ActivityLabel::Sleep, 6), (ActivityLabel::Cook, 6)], 8, 2);
        let idx: Vec<usize> = (0..ds.windows.len()).collect();
        let config = TrainConfig { max_epochs: 3, batch_size: 4, ..Default::default() };
        let (a, _) = train(&ds, &idx, &[], &config).unwrap();
        let (b, _) = train(&ds, &idx, &[], &config).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn best_so_far_loss_keeps_improving() {
        let ds = synth::dataset_with_counts(&[(ActivityLabel::Sleep, 5), (ActivityLabel::Cook, 5)], 8, 9);
        let idx: Vec<usize> = (0..10).collect();
        let config = TrainConfig { max_epochs: 150, patience: None, batch_size: 10, seed: 1, ..Default::default() };
        let (_, log) = train(&ds, &idx, &[], &config).unwrap();
        let losses: Vec<f64> = log.epochs.iter().map(|e| e.train_loss).collect();
        // best-so-far sequence must strictly improve at least once per
        // 50-epoch stretch until the final improvement
        let mut best = f64::INFINITY;
        let mut improvements = Vec::new();
        for (i, l) in losses.iter().enumerate() {
            if *l < best {
                best = *l;
                improvements.push(i);
            }
        }
        let last = *improvements.last().unwrap();
        for window_start in (0..last).step_by(50) {
            let window_end = (window_start + 50).min(last + 1);
            assert!(
                improvements.iter().any(|&i| i >= window_start && i < window_end),
                "no improvement in epochs {window_start}..{window_end}"
            );
        }
    }
}
