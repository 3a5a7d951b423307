use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::discretize::{discretize_range, DiscretizeError};
use super::event::{EventValue, ParsedLog};
use super::label::{ActivityLabel, LabelMapping, MappingError};
use super::registry::{Category, SensorKind, SensorRegistry};
use super::window::{build_window, ActivityWindow, WindowError, WINDOW_MINUTES};
use crate::artifact;

pub const DATASET_SCHEMA: &str = "xarec.dataset/1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error("log contains no labelled activity spans")]
    NoSpans,
    #[error("dataset file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("dataset file checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: String, computed: String },
    #[error("dataset schema '{got}' is not supported (this build reads '{want}')")]
    Schema { got: String, want: String },
    #[error("window {index} has a cell code {code} outside its column vocabulary")]
    BadCode { index: usize, code: u8 },
}

/// The windowed dataset: every labelled activity span of the log as a
/// 30-row categorical matrix, plus the resolved registry it was built with.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub windows: Vec<ActivityWindow>,
    pub registry: SensorRegistry,
    pub registry_hash: String,
    pub mapping_hash: String,
    pub class_counts: BTreeMap<ActivityLabel, usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub events: usize,
    pub spans: usize,
    pub windows: usize,
    pub class_counts: BTreeMap<String, usize>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    fn recount(windows: &[ActivityWindow]) -> BTreeMap<ActivityLabel, usize> {
        let mut counts = BTreeMap::new();
        for w in windows {
            if let Some(l) = w.label {
                *counts.entry(l).or_insert(0) += 1;
            }
        }
        counts
    }
}

/// Resolve `auto` thresholds against the observed readings: temperature
/// level cuts at the per-sensor tertiles, numeric door thresholds at the
/// midpoint of the observed range.
fn resolve_thresholds(parsed: &ParsedLog, registry: &mut SensorRegistry) {
    let mut temp_readings: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut door_readings: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for e in &parsed.events {
        let Some(spec) = registry.sensors.get(&e.sensor_id) else { continue };
        match (spec.kind, e.value) {
            (SensorKind::Temperature, EventValue::Numeric(v)) => {
                temp_readings.entry(e.sensor_id.clone()).or_default().push(v);
            }
            (SensorKind::Door, EventValue::Numeric(v)) => {
                let entry = door_readings.entry(e.sensor_id.clone()).or_insert((v, v));
                entry.0 = entry.0.min(v);
                entry.1 = entry.1.max(v);
            }
            _ => {}
        }
    }
    for (id, mut readings) in temp_readings {
        if registry.thresholds.temp_levels.contains_key(&id) {
            continue;
        }
        readings.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |frac: f64| readings[((readings.len() - 1) as f64 * frac).round() as usize];
        registry.thresholds.temp_levels.insert(id, (q(1.0 / 3.0), q(2.0 / 3.0)));
    }
    for (id, (lo, hi)) in door_readings {
        registry.thresholds.door_open.entry(id).or_insert((lo + hi) / 2.0);
    }
}

/// Build the windowed dataset from a parsed log.
///
/// The whole log is discretized once onto a minute grid extended 30 minutes
/// past the last span, then one window is sliced per labelled span starting
/// at the span's begin minute. Temperature baselines resolve to the modal
/// observed category so perturbation falls back to a typical reading.
pub fn build_dataset(
    parsed: &ParsedLog,
    registry: &SensorRegistry,
    mapping: &LabelMapping,
) -> Result<(LabeledDataset, IngestSummary), DatasetError> {
    if parsed.spans.is_empty() {
        return Err(DatasetError::NoSpans);
    }
    let mut registry = registry.clone();
    resolve_thresholds(parsed, &mut registry);

    let first = parsed.events.first().map(|e| e.timestamp).unwrap_or(parsed.spans[0].begin);
    let last_event = parsed.events.last().map(|e| e.timestamp).unwrap_or(first);
    let last_needed = parsed
        .spans
        .iter()
        .map(|s| s.begin + Duration::minutes(WINDOW_MINUTES as i64 + 1))
        .max()
        .unwrap_or(last_event);
    let series = discretize_range(&parsed.events, &registry, Duration::minutes(1), first, last_event.max(last_needed))?;

    // Modal observed category becomes the resolved temperature baseline.
    for (m, id) in registry.columns().iter().enumerate() {
        if registry.sensors[id].kind != SensorKind::Temperature {
            continue;
        }
        let mut counts: BTreeMap<Category, usize> = BTreeMap::new();
        for i in 0..series.minutes {
            *counts.entry(series.cell(i, m)).or_insert(0) += 1;
        }
        if let Some((&modal, _)) = counts.iter().max_by_key(|(_, c)| **c) {
            registry.sensors.get_mut(id).unwrap().baseline = modal;
        }
    }

    let mut windows = Vec::with_capacity(parsed.spans.len());
    for span in &parsed.spans {
        let label = mapping.apply(&span.raw_activity)?;
        let mut w = build_window(&series, span.begin, &registry)?;
        w.label = Some(label);
        windows.push(w);
    }

    let class_counts = LabeledDataset::recount(&windows);
    let summary = IngestSummary {
        events: parsed.events.len(),
        spans: parsed.spans.len(),
        windows: windows.len(),
        class_counts: class_counts.iter().map(|(k, v)| (k.name().to_string(), *v)).collect(),
    };
    let registry_hash = artifact::sha256_canonical(&registry);
    let mapping_hash = artifact::sha256_canonical(mapping);
    Ok((LabeledDataset { windows, registry, registry_hash, mapping_hash, class_counts }, summary))
}

#[derive(Serialize, Deserialize)]
struct WindowRecord {
    start: NaiveDateTime,
    label: Option<ActivityLabel>,
    codes: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    schema: String,
    registry: SensorRegistry,
    registry_hash: String,
    mapping_hash: String,
    columns: Vec<String>,
    windows: Vec<WindowRecord>,
    class_counts: BTreeMap<String, usize>,
    #[serde(default)]
    checksum: String,
}

impl LabeledDataset {
    fn to_file(&self) -> DatasetFile {
        let kinds: Vec<SensorKind> = self.registry.sensors.values().map(|s| s.kind).collect();
        let windows = self
            .windows
            .iter()
            .map(|w| WindowRecord {
                start: w.start,
                label: w.label,
                codes: w
                    .cells
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c.code(kinds[i % kinds.len()]).expect("cell valid for column kind") as u8)
                    .collect(),
            })
            .collect();
        let mut file = DatasetFile {
            schema: DATASET_SCHEMA.to_string(),
            registry: self.registry.clone(),
            registry_hash: self.registry_hash.clone(),
            mapping_hash: self.mapping_hash.clone(),
            columns: self.registry.columns(),
            windows,
            class_counts: self.class_counts.iter().map(|(k, v)| (k.name().to_string(), *v)).collect(),
            checksum: String::new(),
        };
        file.checksum = artifact::sha256_canonical(&ChecksumView(&file));
        file
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let file = self.to_file();
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path)?;
        let file: DatasetFile = serde_json::from_str(&text)?;
        if file.schema != DATASET_SCHEMA {
            return Err(DatasetError::Schema { got: file.schema, want: DATASET_SCHEMA.to_string() });
        }
        let computed = artifact::sha256_canonical(&ChecksumView(&file));
        if computed != file.checksum {
            return Err(DatasetError::Checksum { stored: file.checksum, computed });
        }
        let kinds: Vec<SensorKind> = file.registry.sensors.values().map(|s| s.kind).collect();
        let columns = kinds.len();
        let mut windows = Vec::with_capacity(file.windows.len());
        for (index, rec) in file.windows.iter().enumerate() {
            let mut cells = Vec::with_capacity(rec.codes.len());
            for (i, &code) in rec.codes.iter().enumerate() {
                let cat = Category::from_code(kinds[i % columns], code as usize)
                    .ok_or(DatasetError::BadCode { index, code })?;
                cells.push(cat);
            }
            windows.push(ActivityWindow::new(rec.start, rec.label, columns, cells));
        }
        let class_counts = LabeledDataset::recount(&windows);
        Ok(LabeledDataset {
            windows,
            registry: file.registry,
            registry_hash: file.registry_hash,
            mapping_hash: file.mapping_hash,
            class_counts,
        })
    }
}

/// Serializes a dataset file without its checksum field, for hashing.
struct ChecksumView<'a>(&'a DatasetFile);

impl serde::Serialize for ChecksumView<'_> {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let f = self.0;
        let mut s = serializer.serialize_struct("DatasetFile", 6)?;
        s.serialize_field("schema", &f.schema)?;
        s.serialize_field("registry", &f.registry)?;
        s.serialize_field("registry_hash", &f.registry_hash)?;
        s.serialize_field("mapping_hash", &f.mapping_hash)?;
        s.serialize_field("columns", &f.columns)?;
        s.serialize_field("windows", &f.windows)?;
        s.end()
    }
}
