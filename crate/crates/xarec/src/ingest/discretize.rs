use chrono::{Duration, NaiveDateTime};
use thiserror::Error;

use super::event::{EventValue, SensorEvent};
use super::registry::{Category, SensorKind, SensorRegistry};
use super::window::truncate_to_minute;

#[derive(Debug, Error)]
pub enum DiscretizeError {
    #[error("event list is empty and no explicit range was given")]
    Empty,
    #[error("interval must be positive")]
    BadInterval,
    #[error("events are not sorted by timestamp")]
    Unsorted,
    #[error("requested range ends before it starts")]
    BadRange,
}

/// Per-interval categorical state of every registered sensor.
///
/// Row `i` holds the state of each column (sorted sensor ids) over the
/// interval starting at `origin + i * interval`.
#[derive(Debug, Clone)]
pub struct MinuteSeries {
    pub origin: NaiveDateTime,
    pub minutes: usize,
    pub columns: usize,
    cells: Vec<Category>,
}

impl MinuteSeries {
    pub fn row(&self, i: usize) -> &[Category] {
        &self.cells[i * self.columns..(i + 1) * self.columns]
    }

    pub fn cell(&self, i: usize, m: usize) -> Category {
        self.cells[i * self.columns + m]
    }
}

/// Temperature reading relative to its sensor's level thresholds.
fn temp_level(value: f64, levels: (f64, f64)) -> Category {
    if value < levels.0 {
        Category::Low
    } else if value < levels.1 {
        Category::Moderate
    } else {
        Category::High
    }
}

/// Reduce the events of one interval to the interval's defining category.
///
/// Motion: any ON in the interval counts as `Detected` regardless of order;
/// an interval with only OFF readings is `NotDetected`. Doors take the state
/// after the interval's last reading (numeric readings cross the per-sensor
/// open threshold). Temperature takes a trend category when the net change
/// across the interval exceeds the trend threshold, otherwise the level of
/// the last reading.
fn interval_category(
    kind: SensorKind,
    events: &[&SensorEvent],
    prev: Category,
    open_threshold: f64,
    levels: (f64, f64),
    trend: f64,
) -> Category {
    if events.is_empty() {
        return prev;
    }
    match kind {
        SensorKind::Motion => {
            let any_on = events.iter().any(|e| matches!(e.value, EventValue::Binary(b) if b.is_active()));
            if any_on {
                Category::Detected
            } else {
                Category::NotDetected
            }
        }
        SensorKind::Door => {
            let last = events.last().unwrap();
            let open = match last.value {
                EventValue::Binary(b) => b.is_active(),
                EventValue::Numeric(v) => v > open_threshold,
            };
            if open {
                Category::Open
            } else {
                Category::Closed
            }
        }
        SensorKind::Temperature => {
            let first = match events.first().unwrap().value {
                EventValue::Numeric(v) => v,
                EventValue::Binary(_) => return prev,
            };
            let last = match events.last().unwrap().value {
                EventValue::Numeric(v) => v,
                EventValue::Binary(_) => return prev,
            };
            let net = last - first;
            if net > trend {
                Category::Increased
            } else if net < -trend {
                Category::Decreased
            } else {
                temp_level(last, levels)
            }
        }
    }
}

/// Discretize sorted events onto a fixed-interval categorical grid covering
/// `[first event, last event]`, one-minute intervals by default.
pub fn discretize(
    events: &[SensorEvent],
    registry: &SensorRegistry,
    interval: Duration,
) -> Result<MinuteSeries, DiscretizeError> {
    let first = events.first().ok_or(DiscretizeError::Empty)?;
    let last = events.last().unwrap();
    discretize_range(events, registry, interval, truncate_to_minute(first.timestamp), last.timestamp)
}

/// Like [`discretize`] but over an explicit `[origin, end]` range, so the
/// grid can extend past the last event (carry-forward fills the tail) or
/// start before the first (baselines fill the head).
pub fn discretize_range(
    events: &[SensorEvent],
    registry: &SensorRegistry,
    interval: Duration,
    origin: NaiveDateTime,
    end: NaiveDateTime,
) -> Result<MinuteSeries, DiscretizeError> {
    if interval <= Duration::zero() {
        return Err(DiscretizeError::BadInterval);
    }
    if events.windows(2).any(|w| w[0].timestamp > w[1].timestamp) {
        return Err(DiscretizeError::Unsorted);
    }
    let origin = truncate_to_minute(origin);
    if end < origin {
        return Err(DiscretizeError::BadRange);
    }
    let interval_secs = interval.num_seconds().max(1);
    let total_secs = end.signed_duration_since(origin).num_seconds();
    let minutes = (total_secs / interval_secs) as usize + 1;

    let columns = registry.len();
    let column_of: std::collections::HashMap<&str, usize> =
        registry.sensors.keys().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
    let specs: Vec<_> = registry.sensors.iter().collect();

    // Bucket events per (interval, column); events outside the range clamp
    // into the first/last interval so earlier state still seeds carry-forward.
    let mut buckets: Vec<Vec<Vec<&SensorEvent>>> = vec![vec![Vec::new(); columns]; minutes];
    for e in events {
        let Some(&m) = column_of.get(e.sensor_id.as_str()) else { continue };
        let secs = e.timestamp.signed_duration_since(origin).num_seconds();
        let i = (secs.div_euclid(interval_secs)).clamp(0, minutes as i64 - 1) as usize;
        buckets[i][m].push(e);
    }

    let mut cells = vec![Category::NotDetected; minutes * columns];
    for (m, (id, spec)) in specs.iter().enumerate() {
        let open_threshold = registry.door_open_threshold(id);
        let levels = registry.temp_levels(id);
        let mut prev = spec.baseline;
        for (i, bucket_row) in buckets.iter().enumerate() {
            let cat = interval_category(spec.kind, &bucket_row[m], prev, open_threshold, levels, registry.thresholds.temp_trend);
            cells[i * columns + m] = cat;
            prev = cat;
        }
    }

    Ok(MinuteSeries { origin, minutes, columns, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::event::BinaryState;
    use crate::ingest::registry::{RegistryConfig, SensorConfigEntry, Thresholds};
    use chrono::NaiveDate;
    use std::collections::BTreeMap;

    fn ts(h: u32, m: u32, s: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2009, 10, 16).unwrap().and_hms_opt(h, m, s).unwrap()
    }

    fn test_registry() -> SensorRegistry {
        let mut sensors = BTreeMap::new();
        sensors.insert("M001".into(), SensorConfigEntry { kind: SensorKind::Motion, baseline: None, location: None });
        sensors.insert("D001".into(), SensorConfigEntry { kind: SensorKind::Door, baseline: None, location: None });
        sensors.insert("T001".into(), SensorConfigEntry { kind: SensorKind::Temperature, baseline: None, location: None });
        let mut thresholds = Thresholds::default();
        thresholds.temp_levels.insert("T001".into(), (20.0, 24.0));
        thresholds.door_open.insert("D001".into(), 60.0);
        RegistryConfig { sensors, thresholds }.resolve_provisional().unwrap()
    }

    fn ev(id: &str, value: EventValue, t: NaiveDateTime) -> SensorEvent {
        SensorEvent { sensor_id: id.into(), value, timestamp: t }
    }

    #[test]
    fn motion_any_on_rule_and_carry_forward() {
        let reg = test_registry();
        let events = vec![
            ev("M001", EventValue::Binary(BinaryState::On), ts(3, 38, 28)),
            ev("M001", EventValue::Binary(BinaryState::Off), ts(3, 38, 45)),
            ev("M001", EventValue::Binary(BinaryState::Off), ts(3, 40, 10)),
        ];
        let s = discretize_range(&events, &reg, Duration::minutes(1), ts(3, 38, 0), ts(3, 43, 0)).unwrap();
        let m = reg.column_index("M001").unwrap();
        assert_eq!(s.cell(0, m), Category::Detected); // ON anywhere in interval wins
        assert_eq!(s.cell(1, m), Category::Detected); // no events: carries
        assert_eq!(s.cell(2, m), Category::NotDetected); // OFF-only interval
        for i in 3..=5 {
            assert_eq!(s.cell(i, m), Category::NotDetected); // not_detected persists
        }
    }

    #[test]
    fn door_numeric_takes_last_threshold_crossing() {
        let reg = test_registry();
        // Oracle: replay the interval's events and keep the state after the
        // last one. 121.4 > 60 => open, then 10.0 closes it mid-interval.
        let events = vec![
            ev("D001", EventValue::Numeric(121.4), ts(3, 50, 1)),
            ev("D001", EventValue::Numeric(10.0), ts(3, 50, 40)),
            ev("D001", EventValue::Numeric(80.0), ts(3, 51, 20)),
        ];
        let s = discretize(&events, &reg, Duration::minutes(1)).unwrap();
        let d = reg.column_index("D001").unwrap();
        assert_eq!(s.cell(0, d), Category::Closed);
        assert_eq!(s.cell(1, d), Category::Open);
    }

    #[test]
    fn temperature_trend_beats_level() {
        let reg = test_registry();
        let events = vec![
            ev("T001", EventValue::Numeric(21.0), ts(8, 0, 5)),
            ev("T001", EventValue::Numeric(22.5), ts(8, 0, 50)),
            ev("T001", EventValue::Numeric(22.6), ts(8, 1, 30)),
        ];
        let s = discretize(&events, &reg, Duration::minutes(1)).unwrap();
        let t = reg.column_index("T001").unwrap();
        assert_eq!(s.cell(0, t), Category::Increased); // net +1.5 > 1.0 trend
        assert_eq!(s.cell(1, t), Category::Moderate); // single reading, level of 22.6
    }

    #[test]
    fn first_interval_without_events_uses_baseline() {
        let reg = test_registry();
        let events = vec![ev("M001", EventValue::Binary(BinaryState::On), ts(1, 5, 0))];
        let s = discretize_range(&events, &reg, Duration::minutes(1), ts(1, 0, 0), ts(1, 6, 0)).unwrap();
        let d = reg.column_index("D001").unwrap();
        let t = reg.column_index("T001").unwrap();
        assert_eq!(s.cell(0, d), Category::Closed);
        assert_eq!(s.cell(0, t), Category::Moderate);
    }

    #[test]
    fn motion_order_insensitive_within_interval() {
        let reg = test_registry();
        let base = vec![
            ev("M001", EventValue::Binary(BinaryState::Off), ts(2, 0, 10)),
            ev("M001", EventValue::Binary(BinaryState::On), ts(2, 0, 20)),
            ev("M001", EventValue::Binary(BinaryState::Off), ts(2, 0, 30)),
        ];
        let mut permuted = base.clone();
        permuted.swap(0, 2);
        let permuted: Vec<_> = {
            // keep timestamps sorted while permuting the value order
            let mut v = permuted;
            for (i, t) in [ts(2, 0, 10), ts(2, 0, 20), ts(2, 0, 30)].iter().enumerate() {
                v[i].timestamp = *t;
            }
            v
        };
        let a = discretize(&base, &reg, Duration::minutes(1)).unwrap();
        let b = discretize(&permuted, &reg, Duration::minutes(1)).unwrap();
        let m = reg.column_index("M001").unwrap();
        assert_eq!(a.cell(0, m), b.cell(0, m));
    }
}
