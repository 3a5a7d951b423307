use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::encode::ModelMeta;
use super::lstm::{Dims, LstmModel};
use super::train::TrainLog;
use crate::artifact;

pub const MODEL_SCHEMA: &str = "xarec.model/1";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("model file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file is corrupt or truncated: {0}")]
    Corrupt(#[from] serde_json::Error),
    #[error("model schema '{got}' is not supported (this build reads '{want}')")]
    Schema { got: String, want: String },
    #[error("model checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: String, computed: String },
    #[error("parameter vector has {got} entries, dims require {want}")]
    ParamCount { got: usize, want: usize },
    #[error("model contains a non-finite parameter at index {0}")]
    NonFinite(usize),
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema: String,
    meta: ModelMeta,
    dims: Dims,
    params: Vec<f64>,
    train_log: Option<TrainLog>,
    #[serde(default)]
    checksum: String,
}

/// The checksum covers everything except itself.
fn checksum_of(file: &ModelFile) -> String {
    #[derive(Serialize)]
    struct View<'a> {
        schema: &'a str,
        meta: &'a ModelMeta,
        dims: &'a Dims,
        params: &'a [f64],
        train_log: &'a Option<TrainLog>,
    }
    artifact::sha256_canonical(&View {
        schema: &file.schema,
        meta: &file.meta,
        dims: &file.dims,
        params: &file.params,
        train_log: &file.train_log,
    })
}

/// Write the model as a versioned, checksummed JSON container. Parameters
/// are serialized with shortest round-trip float formatting, so
/// `load_model(save_model(m))` restores them bit for bit.
pub fn save_model(model: &LstmModel, train_log: Option<&TrainLog>, path: &Path) -> Result<(), StoreError> {
    if let Some(i) = model.params.iter().position(|p| !p.is_finite()) {
        return Err(StoreError::NonFinite(i));
    }
    let mut file = ModelFile {
        schema: MODEL_SCHEMA.to_string(),
        meta: model.meta.clone(),
        dims: model.dims,
        params: model.params.clone(),
        train_log: train_log.cloned(),
        checksum: String::new(),
    };
    file.checksum = checksum_of(&file);
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(LstmModel, Option<TrainLog>), StoreError> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.schema != MODEL_SCHEMA {
        return Err(StoreError::Schema { got: file.schema, want: MODEL_SCHEMA.to_string() });
    }
    let computed = checksum_of(&file);
    if computed != file.checksum {
        return Err(StoreError::Checksum { stored: file.checksum, computed });
    }
    let want = file.dims.param_count();
    if file.params.len() != want {
        return Err(StoreError::ParamCount { got: file.params.len(), want });
    }
    let model = LstmModel { meta: file.meta, dims: file.dims, params: file.params };
    Ok((model, file.train_log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{Classifier, ModelMeta};
    use crate::ingest::{synth, ActivityLabel};
    use tempfile::tempdir;

    fn toy_model() -> (LstmModel, crate::ingest::LabeledDataset) {
        let ds = synth::dataset_with_counts(&[(ActivityLabel::Sleep, 30), (ActivityLabel::Cook, 30)], 8, 6);
        let meta = ModelMeta::from_registry(&ds.registry, ds.registry_hash.clone());
        (LstmModel::new(meta, 42), ds)
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let (model, ds) = toy_model();
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&model, None, &path).unwrap();
        let (loaded, _) = load_model(&path).unwrap();
        assert_eq!(model.params, loaded.params);
        assert_eq!(model.meta, loaded.meta);
        for w in ds.windows.iter().take(60) {
            assert_eq!(model.predict(w).unwrap().probs(), loaded.predict(w).unwrap().probs());
        }
    }

    #[test]
    fn truncated_file_fails_checksum_or_parse() {
        let (model, _) = toy_model();
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&model, None, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_model(&path), Err(StoreError::Corrupt(_))));
        // valid JSON but doctored params must fail the checksum
        let doctored = text.replace("\"params\":[", "\"params\":[0.25,");
        std::fs::write(&path, doctored).unwrap();
        assert!(matches!(load_model(&path), Err(StoreError::Checksum { .. })));
    }

    #[test]
    fn newer_schema_is_refused_by_name() {
        let (model, _) = toy_model();
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&model, None, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace(MODEL_SCHEMA, "xarec.model/9")).unwrap();
        match load_model(&path) {
            Err(StoreError::Schema { got, want }) => {
                assert_eq!(got, "xarec.model/9");
                assert_eq!(want, MODEL_SCHEMA);
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }
}
