use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ActivityLabel, Category, SensorKind, SensorRegistry};

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("no phrase for sensor '{sensor}' with category '{category}'")]
    MissingPhrase { sensor: String, category: Category },
    #[error("no display string for label '{0}'")]
    MissingLabel(ActivityLabel),
    #[error("lexicon file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("lexicon file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Phrases for every (sensor, category) pair plus the display form of each
/// activity label. Mechanical phrases are derived from each sensor's
/// registry location; a lexicon file may override any of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorLexicon {
    /// `sensor -> category -> full verb phrase`.
    pub phrases: BTreeMap<String, BTreeMap<Category, String>>,
    /// e.g. `Leave home -> "leaving home"`.
    pub display_labels: BTreeMap<ActivityLabel, String>,
}

fn mechanical_phrase(kind: SensorKind, location: &str, category: Category) -> String {
    match (kind, category) {
        (SensorKind::Motion, Category::Detected) => format!("movement {location} was detected"),
        (SensorKind::Motion, Category::NotDetected) => format!("movement {location} was not detected"),
        (SensorKind::Door, Category::Open) => format!("{location} was open"),
        (SensorKind::Door, Category::Closed) => format!("{location} was closed"),
        (SensorKind::Temperature, Category::Low) => format!("the thermostat {location} read low temperatures"),
        (SensorKind::Temperature, Category::Moderate) => {
            format!("the thermostat {location} read moderate temperatures")
        }
        (SensorKind::Temperature, Category::High) => format!("the thermostat {location} read high temperatures"),
        (SensorKind::Temperature, Category::Increased) => {
            format!("the thermostat {location} read increasing temperatures")
        }
        (SensorKind::Temperature, Category::Decreased) => {
            format!("the thermostat {location} read decreasing temperatures")
        }
        // unreachable for well-kinded categories; keep total anyway
        (kind, category) => format!("sensor {location} ({kind}) was {category}"),
    }
}

fn default_display_labels() -> BTreeMap<ActivityLabel, String> {
    use ActivityLabel::*;
    [
        (Other, "other"),
        (Work, "working"),
        (TakeMedicine, "taking medicine"),
        (Sleep, "sleep"),
        (Relax, "relaxing"),
        (LeaveHome, "leaving home"),
        (Eat, "eating"),
        (Cook, "cooking"),
        (BedToToilet, "bed to toilet"),
        (Bathing, "bathing"),
    ]
    .into_iter()
    .map(|(l, s)| (l, s.to_string()))
    .collect()
}

impl SensorLexicon {
    /// Derive a total lexicon from the registry's location phrases.
    pub fn from_registry(registry: &SensorRegistry) -> Self {
        let mut phrases = BTreeMap::new();
        for (id, spec) in &registry.sensors {
            let mut per_cat = BTreeMap::new();
            for &cat in Category::vocab(spec.kind) {
                per_cat.insert(cat, mechanical_phrase(spec.kind, &spec.location, cat));
            }
            phrases.insert(id.clone(), per_cat);
        }
        SensorLexicon { phrases, display_labels: default_display_labels() }
    }

    /// Load a lexicon file and overlay it on the registry-derived defaults.
    pub fn from_registry_with_overrides(registry: &SensorRegistry, path: &Path) -> Result<Self, LexiconError> {
        #[derive(Deserialize)]
        struct Overrides {
            #[serde(default)]
            phrases: BTreeMap<String, BTreeMap<Category, String>>,
            #[serde(default)]
            display_labels: BTreeMap<ActivityLabel, String>,
        }
        let text = std::fs::read_to_string(path)?;
        let over: Overrides = serde_json::from_str(&text)?;
        let mut lex = SensorLexicon::from_registry(registry);
        for (sensor, cats) in over.phrases {
            let entry = lex.phrases.entry(sensor).or_default();
            for (cat, phrase) in cats {
                entry.insert(cat, phrase);
            }
        }
        for (label, s) in over.display_labels {
            lex.display_labels.insert(label, s);
        }
        Ok(lex)
    }

    pub fn phrase(&self, sensor: &str, category: Category) -> Result<&str, LexiconError> {
        self.phrases
            .get(sensor)
            .and_then(|cats| cats.get(&category))
            .map(String::as_str)
            .ok_or_else(|| LexiconError::MissingPhrase { sensor: sensor.to_string(), category })
    }

    pub fn display_label(&self, label: ActivityLabel) -> Result<&str, LexiconError> {
        self.display_labels.get(&label).map(String::as_str).ok_or(LexiconError::MissingLabel(label))
    }

    /// Every registered (sensor, category) pair has a non-empty phrase.
    pub fn validate_total(&self, registry: &SensorRegistry) -> Result<(), LexiconError> {
        for (id, spec) in &registry.sensors {
            for &cat in Category::vocab(spec.kind) {
                let p = self.phrase(id, cat)?;
                if p.is_empty() {
                    return Err(LexiconError::MissingPhrase { sensor: id.clone(), category: cat });
                }
            }
        }
        for label in ActivityLabel::ALL {
            self.display_label(label)?;
        }
        Ok(())
    }
}
