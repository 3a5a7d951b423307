use std::fmt::Write as _;
use std::io::BufRead;

use chrono::NaiveDateTime;
use thiserror::Error;

use super::registry::{SensorKind, SensorRegistry};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: expected DATE TIME SENSOR VALUE [ACTIVITY begin|end], got '{text}'")]
    Malformed { line: usize, text: String },
    #[error("line {line}: bad timestamp '{text}'")]
    BadTimestamp { line: usize, text: String },
    #[error("line {line}: sensor '{sensor}' is not in the registry")]
    UnknownSensor { line: usize, sensor: String },
    #[error("line {line}: value '{value}' is not valid for {kind} sensor '{sensor}'")]
    BadValue { line: usize, sensor: String, kind: SensorKind, value: String },
    #[error("line {line}: activity marker must be 'begin' or 'end', got '{text}'")]
    BadMarker { line: usize, text: String },
    #[error("unpaired activity markers: {0}")]
    UnpairedSpans(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Raw reading of a binary sensor, preserving the token family it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryState {
    On,
    Off,
    Open,
    Close,
}

impl BinaryState {
    pub fn is_active(self) -> bool {
        matches!(self, BinaryState::On | BinaryState::Open)
    }

    pub fn token(self) -> &'static str {
        match self {
            BinaryState::On => "ON",
            BinaryState::Off => "OFF",
            BinaryState::Open => "OPEN",
            BinaryState::Close => "CLOSE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventValue {
    Binary(BinaryState),
    Numeric(f64),
}

/// One timestamped sensor reading.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorEvent {
    pub sensor_id: String,
    pub value: EventValue,
    pub timestamp: NaiveDateTime,
}

/// A labelled activity span, `begin` paired with the next matching `end`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSpan {
    pub raw_activity: String,
    pub begin: NaiveDateTime,
    pub end: NaiveDateTime,
}

#[derive(Debug, Clone)]
pub struct ParsedLog {
    /// Events sorted by timestamp (the parser sorts; input order is not trusted).
    pub events: Vec<SensorEvent>,
    pub spans: Vec<RawSpan>,
}

fn parse_timestamp(date: &str, time: &str) -> Option<NaiveDateTime> {
    let joined = format!("{date} {time}");
    NaiveDateTime::parse_from_str(&joined, "%Y-%m-%d %H:%M:%S%.f")
        .or_else(|_| NaiveDateTime::parse_from_str(&joined, "%Y-%m-%d %H:%M:%S"))
        .ok()
}

fn parse_value(token: &str, kind: SensorKind) -> Option<EventValue> {
    let upper = token.to_ascii_uppercase();
    let binary = match upper.as_str() {
        "ON" => Some(BinaryState::On),
        "OFF" => Some(BinaryState::Off),
        "OPEN" => Some(BinaryState::Open),
        "CLOSE" | "CLOSED" => Some(BinaryState::Close),
        // The paper's event triples write motion readings as 1/0.
        "1" if kind == SensorKind::Motion => Some(BinaryState::On),
        "0" if kind == SensorKind::Motion => Some(BinaryState::Off),
        _ => None,
    };
    if let Some(b) = binary {
        return match kind {
            SensorKind::Motion | SensorKind::Door => Some(EventValue::Binary(b)),
            SensorKind::Temperature => None,
        };
    }
    match kind {
        SensorKind::Motion => None,
        SensorKind::Door | SensorKind::Temperature => token.parse::<f64>().ok().map(EventValue::Numeric),
    }
}

/// Parse a CASAS-style whitespace-delimited event log.
///
/// Every sensor id must be registered. Events come back sorted by timestamp
/// and `begin`/`end` markers paired by activity name; an unpaired marker is
/// an error that lists the orphans.
pub fn parse_event_log<R: BufRead>(source: R, registry: &SensorRegistry) -> Result<ParsedLog, ParseError> {
    let mut events = Vec::new();
    // (activity, timestamp, is_begin), in timestamp order after the sort below.
    let mut markers: Vec<(String, NaiveDateTime, bool)> = Vec::new();

    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.len() != 4 && tokens.len() != 6 {
            return Err(ParseError::Malformed { line: line_no, text: text.to_string() });
        }
        let timestamp = parse_timestamp(tokens[0], tokens[1])
            .ok_or_else(|| ParseError::BadTimestamp { line: line_no, text: format!("{} {}", tokens[0], tokens[1]) })?;
        let sensor_id = tokens[2];
        let spec = registry
            .sensors
            .get(sensor_id)
            .ok_or_else(|| ParseError::UnknownSensor { line: line_no, sensor: sensor_id.to_string() })?;
        let value = parse_value(tokens[3], spec.kind).ok_or_else(|| ParseError::BadValue {
            line: line_no,
            sensor: sensor_id.to_string(),
            kind: spec.kind,
            value: tokens[3].to_string(),
        })?;
        events.push(SensorEvent { sensor_id: sensor_id.to_string(), value, timestamp });

        if tokens.len() == 6 {
            let is_begin = match tokens[5].to_ascii_lowercase().as_str() {
                "begin" => true,
                "end" => false,
                other => return Err(ParseError::BadMarker { line: line_no, text: other.to_string() }),
            };
            markers.push((tokens[4].to_string(), timestamp, is_begin));
        }
    }

    events.sort_by_key(|e| e.timestamp);
    markers.sort_by_key(|m| m.1);

    let mut spans = Vec::new();
    let mut open: Vec<(String, NaiveDateTime)> = Vec::new();
    let mut orphans: Vec<String> = Vec::new();
    for (name, ts, is_begin) in markers {
        if is_begin {
            open.push((name, ts));
        } else if let Some(pos) = open.iter().position(|(n, _)| *n == name) {
            let (name, begin) = open.remove(pos);
            spans.push(RawSpan { raw_activity: name, begin, end: ts });
        } else {
            orphans.push(format!("end without begin: {name} @ {ts}"));
        }
    }
    for (name, ts) in open {
        orphans.push(format!("begin without end: {name} @ {ts}"));
    }
    if !orphans.is_empty() {
        return Err(ParseError::UnpairedSpans(orphans.join("; ")));
    }
    spans.sort_by_key(|s| s.begin);
    Ok(ParsedLog { events, spans })
}

/// Render events back into the log's line format (no activity markers).
/// Parsing the result reproduces the events exactly.
pub fn serialize_events(events: &[SensorEvent]) -> String {
    let mut out = String::new();
    for e in events {
        let ts = if e.timestamp.and_utc().timestamp_subsec_micros() == 0 {
            e.timestamp.format("%Y-%m-%d %H:%M:%S").to_string()
        } else {
            e.timestamp.format("%Y-%m-%d %H:%M:%S%.6f").to_string()
        };
        match e.value {
            EventValue::Binary(b) => writeln!(out, "{ts}\t{}\t{}", e.sensor_id, b.token()).unwrap(),
            EventValue::Numeric(v) => writeln!(out, "{ts}\t{}\t{}", e.sensor_id, v).unwrap(),
        }
    }
    out
}
