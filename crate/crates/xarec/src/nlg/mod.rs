//! Templated natural-language rendering of attribution sets.
//!
//! Three templates cover everything the toolkit says:
//!
//! - ET1 (baseline): `The activity is '<label>'` — no features.
//! - ET2: `The activity is '<label>' because <clauses>` for LIME, Anchors,
//!   and SHAP output.
//! - ET3: ET2 with `for <d> minutes` appended per clause, for LIME+.
//!
//! Clauses walk the features in clock order. The first group is prefixed
//! `at HH:MM`; later groups join with `N minutes later` (`a minute later`
//! for 1); features sharing a minute join with `and`, or an Oxford-comma
//! list for three. The final temporal jump reads `and then N minutes later`.

mod lexicon;
mod render;

pub use lexicon::{LexiconError, SensorLexicon};
pub use render::{describe_feature, render_attribution, render_baseline, render_rt1, render_rt2, NlgError, TemplateId};

use serde::{Deserialize, Serialize};

use crate::ingest::ActivityLabel;

/// A rendered explanation with provenance back to its attribution set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub text: String,
    pub template: TemplateId,
    pub label: ActivityLabel,
    /// Explainer the features came from; `None` for the ET1 baseline.
    pub method: Option<crate::explain::Method>,
}
