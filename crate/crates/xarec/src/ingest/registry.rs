use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("unknown sensor id '{0}'")]
    UnknownSensor(String),
    #[error("sensor id '{0}' does not match letter+digits pattern")]
    BadSensorId(String),
    #[error("category '{got}' is not valid for {kind} sensor '{sensor}'")]
    InvalidCategory { sensor: String, kind: SensorKind, got: Category },
    #[error("registry file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("registry file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// The three sensor families of a CASAS-style installation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Door,
    Motion,
    Temperature,
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SensorKind::Door => write!(f, "door"),
            SensorKind::Motion => write!(f, "motion"),
            SensorKind::Temperature => write!(f, "temperature"),
        }
    }
}

/// A discretized sensor state for one one-minute interval.
///
/// The enumeration is closed per sensor kind: motion sensors take
/// `Detected`/`NotDetected`, doors `Open`/`Closed`, and temperature sensors
/// one of the three level categories or a within-interval trend category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Detected,
    NotDetected,
    Open,
    Closed,
    Low,
    Moderate,
    High,
    Increased,
    Decreased,
}

impl Category {
    /// The closed category vocabulary of a sensor kind, in code order.
    pub fn vocab(kind: SensorKind) -> &'static [Category] {
        match kind {
            SensorKind::Motion => &[Category::NotDetected, Category::Detected],
            SensorKind::Door => &[Category::Closed, Category::Open],
            SensorKind::Temperature => &[
                Category::Low,
                Category::Moderate,
                Category::High,
                Category::Increased,
                Category::Decreased,
            ],
        }
    }

    pub fn valid_for(self, kind: SensorKind) -> bool {
        Category::vocab(kind).contains(&self)
    }

    /// Position of this category inside its kind's vocabulary.
    pub fn code(self, kind: SensorKind) -> Option<usize> {
        Category::vocab(kind).iter().position(|c| *c == self)
    }

    pub fn from_code(kind: SensorKind, code: usize) -> Option<Category> {
        Category::vocab(kind).get(code).copied()
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::Detected => "detected",
            Category::NotDetected => "not_detected",
            Category::Open => "open",
            Category::Closed => "closed",
            Category::Low => "low",
            Category::Moderate => "moderate",
            Category::High => "high",
            Category::Increased => "increased",
            Category::Decreased => "decreased",
        };
        write!(f, "{s}")
    }
}

/// One registered sensor: its kind, the "absent" state perturbations fall
/// back to, and the location phrase the lexicon builds sentences from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub kind: SensorKind,
    pub baseline: Category,
    /// Location phrase with its preposition, e.g. `"in the shower area"`,
    /// `"the front door"`, `"near the kitchen"`.
    pub location: String,
}

/// Resolved discretization thresholds.
///
/// Temperature levels are split at `[low, high)` cut points per sensor;
/// a within-interval net change beyond `temp_trend` becomes a trend category.
/// Numeric door readings count as open above `door_open`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    #[serde(default)]
    pub temp_levels: BTreeMap<String, (f64, f64)>,
    pub temp_trend: f64,
    #[serde(default)]
    pub door_open: BTreeMap<String, f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { temp_levels: BTreeMap::new(), temp_trend: 1.0, door_open: BTreeMap::new() }
    }
}

/// The sensor registry: every sensor a log may mention, with resolved
/// baselines and thresholds. Column order everywhere in the toolkit is the
/// lexicographic sensor-id order this map iterates in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorRegistry {
    pub sensors: BTreeMap<String, SensorSpec>,
    #[serde(default)]
    pub thresholds: Thresholds,
}

/// On-disk registry config. Baselines and thresholds may be omitted; they
/// are resolved against the data at ingest time (temperature baselines take
/// the modal observed category, door thresholds the observed midpoint).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistryConfig {
    pub sensors: BTreeMap<String, SensorConfigEntry>,
    #[serde(default)]
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensorConfigEntry {
    pub kind: SensorKind,
    #[serde(default)]
    pub baseline: Option<Category>,
    #[serde(default)]
    pub location: Option<String>,
}

fn valid_sensor_id(id: &str) -> bool {
    let mut chars = id.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.clone().next().is_some()
        && chars.all(|c| c.is_ascii_digit())
}

impl RegistryConfig {
    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Turn the config into a usable registry with provisional defaults for
    /// anything left unspecified. Temperature baselines default to
    /// `Moderate` until `LabeledDataset` resolution replaces them with the
    /// modal observed category.
    pub fn resolve_provisional(&self) -> Result<SensorRegistry, RegistryError> {
        let mut sensors = BTreeMap::new();
        for (id, entry) in &self.sensors {
            if !valid_sensor_id(id) {
                return Err(RegistryError::BadSensorId(id.clone()));
            }
            let baseline = entry.baseline.unwrap_or(match entry.kind {
                SensorKind::Motion => Category::NotDetected,
                SensorKind::Door => Category::Closed,
                SensorKind::Temperature => Category::Moderate,
            });
            if !baseline.valid_for(entry.kind) {
                return Err(RegistryError::InvalidCategory {
                    sensor: id.clone(),
                    kind: entry.kind,
                    got: baseline,
                });
            }
            let location = entry.location.clone().unwrap_or_else(|| format!("near zone {id}"));
            sensors.insert(id.clone(), SensorSpec { kind: entry.kind, baseline, location });
        }
        Ok(SensorRegistry { sensors, thresholds: self.thresholds.clone() })
    }
}

impl SensorRegistry {
    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        RegistryConfig::load(path)?.resolve_provisional()
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    /// Column order of the activity-window matrix: sorted sensor ids.
    pub fn columns(&self) -> Vec<String> {
        self.sensors.keys().cloned().collect()
    }

    pub fn column_index(&self, sensor_id: &str) -> Option<usize> {
        self.sensors.keys().position(|k| k == sensor_id)
    }

    pub fn get(&self, sensor_id: &str) -> Result<&SensorSpec, RegistryError> {
        self.sensors
            .get(sensor_id)
            .ok_or_else(|| RegistryError::UnknownSensor(sensor_id.to_string()))
    }

    pub fn kind_counts(&self) -> BTreeMap<SensorKind, usize> {
        let mut counts = BTreeMap::new();
        for spec in self.sensors.values() {
            *counts.entry(spec.kind).or_insert(0) += 1;
        }
        counts
    }

    pub fn temp_levels(&self, sensor_id: &str) -> (f64, f64) {
        self.thresholds.temp_levels.get(sensor_id).copied().unwrap_or((f64::NEG_INFINITY, f64::INFINITY))
    }

    pub fn door_open_threshold(&self, sensor_id: &str) -> f64 {
        self.thresholds.door_open.get(sensor_id).copied().unwrap_or(0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_codes_round_trip() {
        for kind in [SensorKind::Door, SensorKind::Motion, SensorKind::Temperature] {
            for (i, cat) in Category::vocab(kind).iter().enumerate() {
                assert_eq!(cat.code(kind), Some(i));
                assert_eq!(Category::from_code(kind, i), Some(*cat));
                assert!(cat.valid_for(kind));
            }
        }
        assert!(!Category::Open.valid_for(SensorKind::Motion));
        assert!(Category::Detected.code(SensorKind::Door).is_none());
    }

    #[test]
    fn sensor_id_pattern() {
        assert!(valid_sensor_id("M024"));
        assert!(valid_sensor_id("T1"));
        assert!(!valid_sensor_id("024"));
        assert!(!valid_sensor_id("M"));
        assert!(!valid_sensor_id("M0a4"));
    }

    #[test]
    fn columns_are_sorted() {
        let mut cfg = RegistryConfig { sensors: BTreeMap::new(), thresholds: Thresholds::default() };
        for id in ["M002", "D001", "M001", "T001"] {
            cfg.sensors.insert(
                id.to_string(),
                SensorConfigEntry {
                    kind: match id.chars().next().unwrap() {
                        'M' => SensorKind::Motion,
                        'D' => SensorKind::Door,
                        _ => SensorKind::Temperature,
                    },
                    baseline: None,
                    location: None,
                },
            );
        }
        let reg = cfg.resolve_provisional().unwrap();
        assert_eq!(reg.columns(), vec!["D001", "M001", "M002", "T001"]);
        assert_eq!(reg.column_index("M002"), Some(2));
    }
}
