use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::lexicon::{LexiconError, SensorLexicon};
use super::Explanation;
use crate::explain::{Attribution, AttributionSet, FeatureCoordinate, Method};
use crate::ingest::ActivityLabel;

#[derive(Debug, Error)]
pub enum NlgError {
    #[error("attribution set has no features to render")]
    EmptyAttribution,
    #[error("duration missing on feature {0} of a LIME+ attribution")]
    MissingDuration(usize),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemplateId {
    #[serde(rename = "ET1")]
    Et1,
    #[serde(rename = "ET2")]
    Et2,
    #[serde(rename = "ET3")]
    Et3,
}

/// The lexicon phrase for one feature, verbatim.
pub fn describe_feature<'a>(coord: &FeatureCoordinate, lexicon: &'a SensorLexicon) -> Result<&'a str, NlgError> {
    Ok(lexicon.phrase(&coord.sensor_id, coord.value)?)
}

/// ET1: the bare label, the no-explanation baseline.
pub fn render_baseline(label: ActivityLabel, lexicon: &SensorLexicon) -> Result<Explanation, NlgError> {
    let text = format!("The activity is '{}'", lexicon.display_label(label)?);
    Ok(Explanation { text, template: TemplateId::Et1, label, method: None })
}

fn gap_phrase(minutes: usize) -> String {
    if minutes == 1 {
        "a minute later".to_string()
    } else {
        format!("{minutes} minutes later")
    }
}

fn duration_phrase(minutes: usize) -> String {
    if minutes == 1 {
        " for a minute".to_string()
    } else {
        format!(" for {minutes} minutes")
    }
}

fn join_group(phrases: &[String]) -> String {
    match phrases.len() {
        0 => String::new(),
        1 => phrases[0].clone(),
        2 => format!("{} and {}", phrases[0], phrases[1]),
        _ => {
            let head = phrases[..phrases.len() - 1].join(", ");
            format!("{}, and {}", head, phrases[phrases.len() - 1])
        }
    }
}

/// Shared clause builder for RT1/RT2. Features are walked in clock order;
/// features on the same minute merge into one group.
fn render_clauses(
    label: ActivityLabel,
    features: &[Attribution],
    start: NaiveDateTime,
    lexicon: &SensorLexicon,
    with_durations: bool,
) -> Result<String, NlgError> {
    if features.is_empty() {
        return Err(NlgError::EmptyAttribution);
    }
    let mut ordered: Vec<&Attribution> = features.iter().collect();
    ordered.sort_by_key(|a| a.coord.timestep);

    let mut groups: Vec<(usize, Vec<String>)> = Vec::new();
    for (i, a) in ordered.iter().enumerate() {
        let mut phrase = describe_feature(&a.coord, lexicon)?.to_string();
        if with_durations {
            let d = a.duration.ok_or(NlgError::MissingDuration(i))?;
            phrase.push_str(&duration_phrase(d));
        }
        match groups.last_mut() {
            Some((t, phrases)) if *t == a.coord.timestep => phrases.push(phrase),
            _ => groups.push((a.coord.timestep, vec![phrase])),
        }
    }

    let clock = start + chrono::Duration::minutes(groups[0].0 as i64);
    let mut text = format!(
        "The activity is '{}' because at {} {}",
        lexicon.display_label(label)?,
        clock.format("%H:%M"),
        join_group(&groups[0].1)
    );
    for (i, (t, phrases)) in groups.iter().enumerate().skip(1) {
        let gap = t - groups[i - 1].0;
        let connector =
            if i == groups.len() - 1 { format!(", and then {} ", gap_phrase(gap)) } else { format!(", {} ", gap_phrase(gap)) };
        text.push_str(&connector);
        text.push_str(&join_group(phrases));
    }
    text.push('.');
    Ok(text)
}

/// ET2 via RT1: clock-anchored clauses without durations (LIME, Anchors, SHAP).
pub fn render_rt1(
    label: ActivityLabel,
    attribution: &AttributionSet,
    lexicon: &SensorLexicon,
) -> Result<Explanation, NlgError> {
    let text = render_clauses(label, &attribution.features, attribution.window_start, lexicon, false)?;
    Ok(Explanation { text, template: TemplateId::Et2, label, method: Some(attribution.method) })
}

/// ET3 via RT2: RT1 clauses with a duration per feature (LIME+).
pub fn render_rt2(
    label: ActivityLabel,
    attribution: &AttributionSet,
    lexicon: &SensorLexicon,
) -> Result<Explanation, NlgError> {
    let text = render_clauses(label, &attribution.features, attribution.window_start, lexicon, true)?;
    Ok(Explanation { text, template: TemplateId::Et3, label, method: Some(attribution.method) })
}

/// Render an attribution set with the template its method calls for.
pub fn render_attribution(attribution: &AttributionSet, lexicon: &SensorLexicon) -> Result<Explanation, NlgError> {
    match attribution.method {
        Method::LimePlus => render_rt2(attribution.target_class, attribution, lexicon),
        Method::Lime | Method::Anchors | Method::Shap => {
            render_rt1(attribution.target_class, attribution, lexicon)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::Diagnostics;
    use crate::ingest::Category;
    use chrono::NaiveDate;
    use std::collections::BTreeMap;

    /// A lexicon carrying exactly the reference phrases used in the
    /// rendering checks.
    fn table_lexicon() -> SensorLexicon {
        let mut phrases: BTreeMap<String, BTreeMap<Category, String>> = BTreeMap::new();
        let mut add = |sensor: &str, cat: Category, text: &str| {
            phrases.entry(sensor.to_string()).or_default().insert(cat, text.to_string());
        };
        add("D001", Category::Open, "the front door was open");
        add("M022", Category::Detected, "movement near front door was detected");
        add("T001", Category::Moderate, "the thermostat near the kitchen read moderate temperatures");
        add("T001", Category::High, "the thermostat near the kitchen read high temperatures");
        add("T002", Category::Moderate, "the thermostat near the bathroom read moderate temperatures");
        add("M013", Category::Detected, "movement in the shower area was detected");
        add("M011", Category::Detected, "movement in the hallway was detected");
        add("M004", Category::Detected, "movement near the bathroom was detected");
        let display_labels = [
            (ActivityLabel::LeaveHome, "leaving home"),
            (ActivityLabel::Bathing, "bathing"),
            (ActivityLabel::Cook, "cooking"),
            (ActivityLabel::Sleep, "sleep"),
        ]
        .into_iter()
        .map(|(l, s)| (l, s.to_string()))
        .collect();
        SensorLexicon { phrases, display_labels }
    }

    fn attribution(
        method: Method,
        label: ActivityLabel,
        start: (u32, u32),
        features: Vec<(&str, Category, usize, Option<usize>)>,
    ) -> AttributionSet {
        AttributionSet {
            method,
            target_class: label,
            predicted_prob: 0.9,
            window_start: NaiveDate::from_ymd_opt(2009, 11, 2)
                .unwrap()
                .and_hms_opt(start.0, start.1, 0)
                .unwrap(),
            features: features
                .into_iter()
                .map(|(s, v, t, d)| Attribution {
                    coord: FeatureCoordinate { sensor_id: s.to_string(), timestep: t, value: v },
                    weight: 1.0,
                    duration: d,
                })
                .collect(),
            base_value: None,
            anchor: None,
            diagnostics: Diagnostics::default(),
        }
    }

    #[test]
    fn baseline_templates() {
        let lex = table_lexicon();
        assert_eq!(render_baseline(ActivityLabel::Bathing, &lex).unwrap().text, "The activity is 'bathing'");
        assert_eq!(render_baseline(ActivityLabel::Sleep, &lex).unwrap().text, "The activity is 'sleep'");
        assert_eq!(render_baseline(ActivityLabel::LeaveHome, &lex).unwrap().text, "The activity is 'leaving home'");
    }

    #[test]
    fn leaving_home_lime_sentence() {
        let lex = table_lexicon();
        let o = attribution(
            Method::Lime,
            ActivityLabel::LeaveHome,
            (14, 1),
            vec![
                ("D001", Category::Open, 0, None),
                ("M022", Category::Detected, 0, None),
                ("T001", Category::Moderate, 10, None),
            ],
        );
        let e = render_rt1(ActivityLabel::LeaveHome, &o, &lex).unwrap();
        assert_eq!(
            e.text,
            "The activity is 'leaving home' because at 14:01 the front door was open and movement near \
             front door was detected, and then 10 minutes later the thermostat near the kitchen read \
             moderate temperatures."
        );
    }

    #[test]
    fn one_minute_gap_reads_a_minute_later() {
        let lex = table_lexicon();
        let o = attribution(
            Method::Lime,
            ActivityLabel::Cook,
            (17, 45),
            vec![
                ("T001", Category::High, 0, None),
                ("T002", Category::Moderate, 5, None),
                ("T002", Category::Moderate, 6, None),
            ],
        );
        let e = render_rt1(ActivityLabel::Cook, &o, &lex).unwrap();
        assert_eq!(
            e.text,
            "The activity is 'cooking' because at 17:45 the thermostat near the kitchen read high \
             temperatures, 5 minutes later the thermostat near the bathroom read moderate temperatures, \
             and then a minute later the thermostat near the bathroom read moderate temperatures."
        );
    }

    #[test]
    fn bathing_lime_plus_sentence() {
        let lex = table_lexicon();
        let o = attribution(
            Method::LimePlus,
            ActivityLabel::Bathing,
            (15, 24),
            vec![
                ("M013", Category::Detected, 0, Some(2)),
                ("M011", Category::Detected, 0, Some(2)),
                ("M004", Category::Detected, 0, Some(2)),
            ],
        );
        let e = render_rt2(ActivityLabel::Bathing, &o, &lex).unwrap();
        assert_eq!(
            e.text,
            "The activity is 'bathing' because at 15:24 movement in the shower area was detected for \
             2 minutes, movement in the hallway was detected for 2 minutes, and movement near the \
             bathroom was detected for 2 minutes."
        );
    }

    #[test]
    fn single_feature_has_no_connectors() {
        let lex = table_lexicon();
        let o = attribution(Method::Shap, ActivityLabel::Bathing, (8, 30), vec![("M013", Category::Detected, 4, None)]);
        let e = render_rt1(ActivityLabel::Bathing, &o, &lex).unwrap();
        assert_eq!(e.text, "The activity is 'bathing' because at 08:34 movement in the shower area was detected.");
    }

    #[test]
    fn duration_one_reads_for_a_minute() {
        let lex = table_lexicon();
        let o = attribution(Method::LimePlus, ActivityLabel::Bathing, (9, 0), vec![("M013", Category::Detected, 0, Some(1))]);
        let e = render_rt2(ActivityLabel::Bathing, &o, &lex).unwrap();
        assert_eq!(e.text, "The activity is 'bathing' because at 09:00 movement in the shower area was detected for a minute.");
    }

    #[test]
    fn empty_attribution_is_a_render_error() {
        let lex = table_lexicon();
        let o = attribution(Method::Lime, ActivityLabel::Bathing, (9, 0), vec![]);
        assert!(matches!(render_rt1(ActivityLabel::Bathing, &o, &lex), Err(NlgError::EmptyAttribution)));
    }

    #[test]
    fn missing_lexicon_entry_names_the_pair() {
        let lex = table_lexicon();
        let o = attribution(Method::Lime, ActivityLabel::Bathing, (9, 0), vec![("M099", Category::Detected, 0, None)]);
        match render_rt1(ActivityLabel::Bathing, &o, &lex) {
            Err(NlgError::Lexicon(LexiconError::MissingPhrase { sensor, .. })) => assert_eq!(sensor, "M099"),
            other => panic!("expected lexicon error, got {other:?}"),
        }
    }
}
