use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::discretize::MinuteSeries;
use super::label::ActivityLabel;
use super::registry::{Category, SensorRegistry};

/// Fixed number of one-minute rows in every activity window.
pub const WINDOW_MINUTES: usize = 30;

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("window starting {start} is not covered by the discretized series ({origin} + {minutes} min)")]
    Coverage { start: NaiveDateTime, origin: NaiveDateTime, minutes: usize },
    #[error("cell ({t},{m}) holds {got} which is invalid for its column's sensor kind")]
    InvalidCell { t: usize, m: usize, got: Category },
    #[error("window has {got} columns, registry has {want}")]
    ColumnMismatch { got: usize, want: usize },
}

/// A 30-row categorical matrix: the state of every registered sensor over
/// the 30 minutes following an activity's begin time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityWindow {
    pub start: NaiveDateTime,
    pub label: Option<ActivityLabel>,
    pub columns: usize,
    /// Row-major `WINDOW_MINUTES x columns` grid.
    pub cells: Vec<Category>,
}

impl ActivityWindow {
    pub fn new(start: NaiveDateTime, label: Option<ActivityLabel>, columns: usize, cells: Vec<Category>) -> Self {
        assert_eq!(cells.len(), WINDOW_MINUTES * columns, "window must have exactly {WINDOW_MINUTES} rows");
        ActivityWindow { start, label, columns, cells }
    }

    pub fn cell(&self, t: usize, m: usize) -> Category {
        self.cells[t * self.columns + m]
    }

    pub fn set_cell(&mut self, t: usize, m: usize, value: Category) {
        self.cells[t * self.columns + m] = value;
    }

    pub fn rows(&self) -> usize {
        WINDOW_MINUTES
    }

    /// Check every cell against its column's kind vocabulary.
    pub fn validate(&self, registry: &SensorRegistry) -> Result<(), WindowError> {
        if self.columns != registry.len() {
            return Err(WindowError::ColumnMismatch { got: self.columns, want: registry.len() });
        }
        let kinds: Vec<_> = registry.sensors.values().map(|s| s.kind).collect();
        for t in 0..self.rows() {
            for (m, kind) in kinds.iter().enumerate() {
                let got = self.cell(t, m);
                if !got.valid_for(*kind) {
                    return Err(WindowError::InvalidCell { t, m, got });
                }
            }
        }
        Ok(())
    }
}

/// Slice a 30-minute window out of a discretized series.
///
/// `start_time` is truncated to the minute. The series must cover the whole
/// `[start, start + 30 min)` range; shorter coverage is an error rather than
/// padding, so every cell is a really recorded (or carried-forward) state.
pub fn build_window(
    series: &MinuteSeries,
    start_time: NaiveDateTime,
    registry: &SensorRegistry,
) -> Result<ActivityWindow, WindowError> {
    let start = truncate_to_minute(start_time);
    let offset = minutes_between(series.origin, start);
    let fits = offset
        .and_then(|o| o.checked_add(WINDOW_MINUTES))
        .map(|end| end <= series.minutes)
        .unwrap_or(false);
    let Some(offset) = offset.filter(|_| fits) else {
        return Err(WindowError::Coverage { start, origin: series.origin, minutes: series.minutes });
    };
    let m = registry.len();
    let mut cells = Vec::with_capacity(WINDOW_MINUTES * m);
    for t in 0..WINDOW_MINUTES {
        cells.extend_from_slice(series.row(offset + t));
    }
    Ok(ActivityWindow::new(start, None, m, cells))
}

pub(crate) fn truncate_to_minute(ts: NaiveDateTime) -> NaiveDateTime {
    use chrono::Timelike;
    ts.with_second(0).unwrap().with_nanosecond(0).unwrap()
}

pub(crate) fn minutes_between(origin: NaiveDateTime, later: NaiveDateTime) -> Option<usize> {
    let delta = later.signed_duration_since(origin);
    let mins = delta.num_minutes();
    if mins < 0 {
        None
    } else {
        Some(mins as usize)
    }
}
