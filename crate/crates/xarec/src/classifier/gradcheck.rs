use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use super::lstm::LstmModel;
use super::ContractError;
use crate::ingest::{ActivityLabel, ActivityWindow};

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("epsilon must lie in [1e-7, 1e-3], got {0}")]
    BadEpsilon(f64),
    #[error(transparent)]
    Contract(#[from] ContractError),
}

/// Compare the analytic gradient against central finite differences on a
/// random subsample of parameter coordinates (at least 200, or every
/// coordinate for tiny models). Returns the maximum guarded relative error
/// `|a - fd| / max(|a| + |fd|, 1e-4)` across the sampled coordinates.
pub fn gradient_check(
    model: &LstmModel,
    window: &ActivityWindow,
    label: ActivityLabel,
    epsilon: f64,
    coords: usize,
    seed: u64,
) -> Result<f64, GradCheckError> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(GradCheckError::BadEpsilon(epsilon));
    }
    let coords = coords.max(200).min(model.params.len());
    let (_, analytic) = model.loss_and_gradient(window, label)?;

    let mut idx: Vec<usize> = (0..model.params.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx.truncate(coords);

    let mut probe = model.clone();
    let mut max_rel = 0.0f64;
    for &k in &idx {
        let orig = probe.params[k];
        probe.params[k] = orig + epsilon;
        let plus = probe.loss(window, label)?;
        probe.params[k] = orig - epsilon;
        let minus = probe.loss(window, label)?;
        probe.params[k] = orig;
        let fd = (plus - minus) / (2.0 * epsilon);
        let a = analytic[k];
        let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-4);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::train::{train, TrainConfig};
    use crate::ingest::synth;

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let ds = synth::dataset_with_counts(&[(ActivityLabel::Sleep, 4), (ActivityLabel::Cook, 4)], 8, 21);
        let idx: Vec<usize> = (0..ds.windows.len()).collect();
        let config = TrainConfig { max_epochs: 15, patience: None, batch_size: 8, seed: 4, ..Default::default() };
        let (model, _) = train(&ds, &idx, &[], &config).unwrap();
        let max_rel =
            gradient_check(&model, &ds.windows[1], ds.windows[1].label.unwrap(), 1e-5, 250, 17).unwrap();
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn epsilon_outside_range_is_rejected() {
        let ds = synth::dataset_with_counts(&[(ActivityLabel::Sleep, 1)], 8, 21);
        let meta = crate::classifier::ModelMeta::from_registry(&ds.registry, ds.registry_hash.clone());
        let model = LstmModel::new(meta, 1);
        let err = gradient_check(&model, &ds.windows[0], ActivityLabel::Sleep, 1.0, 200, 1).unwrap_err();
        assert!(matches!(err, GradCheckError::BadEpsilon(_)));
    }
}
