//! Raw sensor logs in, labelled activity windows out.
//!
//! A smart-home log is a line-oriented stream of `(sensor, value, time)`
//! events with optional `<Activity> begin|end` markers. This module parses
//! such logs, discretizes every sensor onto a one-minute grid of categorical
//! states, slices a 30-row window out of the grid for each labelled activity
//! span, and packages the windows into a dataset with stratified
//! cross-validation folds.

mod dataset;
mod discretize;
mod event;
mod folds;
mod label;
mod registry;
pub mod synth;
mod window;

pub use dataset::{build_dataset, DatasetError, IngestSummary, LabeledDataset};
pub use discretize::{discretize, discretize_range, DiscretizeError, MinuteSeries};
pub use event::{parse_event_log, serialize_events, BinaryState, EventValue, ParseError, ParsedLog, RawSpan, SensorEvent};
pub use folds::{stratified_folds, FoldError, FoldPlan, FoldSplit};
pub use label::{ActivityLabel, LabelMapping, MappingError};
pub use registry::{Category, RegistryConfig, RegistryError, SensorKind, SensorRegistry, SensorSpec, Thresholds};
pub use window::{build_window, ActivityWindow, WindowError, WINDOW_MINUTES};
