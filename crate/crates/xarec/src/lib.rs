//! Explainable activity recognition for smart-home sensor logs.
//!
//! The pipeline turns a raw event log into per-activity sensor-state windows,
//! classifies each window with a recurrent network, attributes every
//! prediction to the sensor readings that drove it (LIME, LIME+, Anchors,
//! SHAP), renders the attributions as plain-English sentences, and scores the
//! sentences against a per-activity credibility rule set.
//!
//! The crate is organised along that pipeline:
//!
//! - [`ingest`] — log parsing, discretization, windowing, folds, synthetic data
//! - [`classifier`] — the LSTM classifier and its training/evaluation harness
//! - [`explain`] — the four model-agnostic explainers and their oracles
//! - [`nlg`] — sensor lexicon and sentence templates
//! - [`eval`] — explanation credibility scoring and benchmark reports
//! - [`artifact`] — JSON artifact hashing and run manifests
//!
//! The `xarec` binary wires the stages into subcommands; see the book under
//! `book/` for a guided tour.

pub mod artifact;
pub mod classifier;
pub mod eval;
pub mod explain;
pub mod ingest;
pub mod nlg;
pub mod pipeline;
