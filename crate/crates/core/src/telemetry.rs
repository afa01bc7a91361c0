//! Three-letter-header telemetry lines and a latest-value store.
//!
//! Wire grammar, one message per line:
//!
//! ```text
//! line    = header SP decimal [CR] LF
//! header  = "LAT" | "LON" | "ALT" | "HDG" | "PIT" | "YAW" | "TIM"
//! decimal = ["+" | "-"] 1*DIGIT ["." 1*DIGIT]
//! ```
//!
//! `TIM` carries the sender clock in seconds and stamps every following
//! message until the next `TIM`.

use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Longest line the parser will look at; anything longer is malformed.
pub const MAX_LINE_LEN: usize = 64;
pub const DEFAULT_MAX_STALENESS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Field {
    Lat,
    Lon,
    Alt,
    Hdg,
    Pit,
    Yaw,
}

impl Field {
    pub const ALL: [Field; 6] = [Field::Lat, Field::Lon, Field::Alt, Field::Hdg, Field::Pit, Field::Yaw];

    pub fn header(self) -> &'static str {
        match self {
            Field::Lat => "LAT",
            Field::Lon => "LON",
            Field::Alt => "ALT",
            Field::Hdg => "HDG",
            Field::Pit => "PIT",
            Field::Yaw => "YAW",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn in_range(self, v: f64) -> bool {
        match self {
            Field::Lat => (-90.0..=90.0).contains(&v),
            Field::Lon => (-180.0..=180.0).contains(&v),
            // lidar range
            Field::Alt => (0.0..=100.0).contains(&v),
            Field::Hdg | Field::Yaw => (0.0..360.0).contains(&v),
            Field::Pit => (-90.0..=90.0).contains(&v),
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.header())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Header {
    Field(Field),
    Tim,
}

impl FromStr for Header {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "LAT" => Header::Field(Field::Lat),
            "LON" => Header::Field(Field::Lon),
            "ALT" => Header::Field(Field::Alt),
            "HDG" => Header::Field(Field::Hdg),
            "PIT" => Header::Field(Field::Pit),
            "YAW" => Header::Field(Field::Yaw),
            "TIM" => Header::Tim,
            _ => return Err(()),
        })
    }
}

impl fmt::Display for Header {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Header::Field(fl) => fl.fmt(f),
            Header::Tim => f.write_str("TIM"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelemetryMessage {
    pub header: Header,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("unknown header")]
    UnknownHeader,
    #[error("malformed number")]
    MalformedNumber,
    #[error("{0} value out of range")]
    RangeViolation(Header),
}

/// Parses one line. Accepts an optional trailing `\n` or `\r\n`.
pub fn parse_line(line: &[u8]) -> Result<TelemetryMessage, Rejection> {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    if line.len() < 3 {
        return Err(Rejection::UnknownHeader);
    }
    let header: Header = std::str::from_utf8(&line[..3])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or(Rejection::UnknownHeader)?;
    let rest = &line[3..];
    let number = match rest.split_first() {
        Some((b' ', num)) => num,
        _ => return Err(Rejection::MalformedNumber),
    };
    if number.len() > MAX_LINE_LEN || !is_decimal(number) {
        return Err(Rejection::MalformedNumber);
    }
    // is_decimal guarantees ASCII
    let value: f64 = std::str::from_utf8(number)
        .unwrap()
        .parse()
        .map_err(|_| Rejection::MalformedNumber)?;
    let ok = match header {
        Header::Field(f) => f.in_range(value),
        Header::Tim => value >= 0.0 && value.is_finite(),
    };
    if !ok {
        return Err(Rejection::RangeViolation(header));
    }
    Ok(TelemetryMessage { header, value })
}

fn is_decimal(s: &[u8]) -> bool {
    let s = match s.first() {
        Some(b'+' | b'-') => &s[1..],
        _ => s,
    };
    let (int, frac) = match s.iter().position(|&b| b == b'.') {
        Some(i) => (&s[..i], Some(&s[i + 1..])),
        None => (s, None),
    };
    let digits = |d: &[u8]| !d.is_empty() && d.iter().all(u8::is_ascii_digit);
    digits(int) && frac.is_none_or(digits)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RejectionCounts {
    pub unknown_header: u64,
    pub malformed_number: u64,
    pub range_violation: u64,
}

impl RejectionCounts {
    pub fn record(&mut self, r: &Rejection) {
        match r {
            Rejection::UnknownHeader => self.unknown_header += 1,
            Rejection::MalformedNumber => self.malformed_number += 1,
            Rejection::RangeViolation(_) => self.range_violation += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.unknown_header + self.malformed_number + self.range_violation
    }
}

/// A field update stamped with the sender (or arrival) time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedUpdate {
    pub field: Field,
    pub value: f64,
    pub time: f64,
}

/// Turns a line stream into timed field updates.
///
/// Lines seen before the first `TIM` are stamped by the caller-supplied
/// arrival clock.
pub struct LineDecoder {
    clock: Option<f64>,
    pub accepted: u64,
    pub rejected: RejectionCounts,
}

impl Default for LineDecoder {
    fn default() -> Self {
        Self::new()
    }
}

impl LineDecoder {
    pub fn new() -> Self {
        Self {
            clock: None,
            accepted: 0,
            rejected: RejectionCounts::default(),
        }
    }

    /// Sender clock from the most recent `TIM`, if any.
    pub fn clock(&self) -> Option<f64> {
        self.clock
    }

    pub fn decode(&mut self, line: &[u8], arrival: f64) -> Option<TimedUpdate> {
        match parse_line(line) {
            Ok(TelemetryMessage { header: Header::Tim, value }) => {
                self.accepted += 1;
                self.clock = Some(value);
                None
            }
            Ok(TelemetryMessage { header: Header::Field(field), value }) => {
                self.accepted += 1;
                Some(TimedUpdate {
                    field,
                    value,
                    time: self.clock.unwrap_or(arrival),
                })
            }
            Err(r) => {
                self.rejected.record(&r);
                None
            }
        }
    }

    /// Decodes every line of `input`, stamping un-timed lines with `arrival`.
    pub fn decode_all<R: BufRead>(&mut self, mut input: R, arrival: f64) -> std::io::Result<Vec<TimedUpdate>> {
        let mut out = Vec::new();
        let mut line = Vec::new();
        loop {
            line.clear();
            if input.read_until(b'\n', &mut line)? == 0 {
                return Ok(out);
            }
            out.extend(self.decode(&line, arrival));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Slot {
    value: f64,
    time: f64,
}

/// Latest value and update time per field.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TelemetryStore {
    slots: [Option<Slot>; 6],
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SnapshotError {
    #[error("telemetry incomplete, never received: {0:?}")]
    Incomplete(Vec<Field>),
    #[error("telemetry stale: {0:?}")]
    Stale(Vec<Field>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySnapshot {
    pub latitude: f64,
    pub longitude: f64,
    pub height: f64,
    pub heading: f64,
    pub gimbal_pitch: f64,
    pub gimbal_yaw: f64,
    /// Age of each field in seconds at query time, in [`Field::ALL`] order.
    pub staleness: [f64; 6],
}

impl TelemetrySnapshot {
    /// A snapshot with zero staleness, handy for geometry code and tests.
    pub fn fixed(latitude: f64, longitude: f64, height: f64, heading: f64, gimbal_pitch: f64, gimbal_yaw: f64) -> Self {
        Self {
            latitude,
            longitude,
            height,
            heading,
            gimbal_pitch,
            gimbal_yaw,
            staleness: [0.0; 6],
        }
    }
}

impl TelemetryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Last write wins per field; other fields are untouched.
    pub fn ingest(&mut self, update: TimedUpdate) {
        self.slots[update.field.index()] = Some(Slot {
            value: update.value,
            time: update.time,
        });
    }

    pub fn get(&self, field: Field) -> Option<f64> {
        self.slots[field.index()].map(|s| s.value)
    }

    pub fn updated_at(&self, field: Field) -> Option<f64> {
        self.slots[field.index()].map(|s| s.time)
    }

    pub fn missing(&self) -> Vec<Field> {
        Field::ALL.into_iter().filter(|f| self.get(*f).is_none()).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.slots.iter().all(Option::is_some)
    }

    /// Snapshot at `time` if every field was updated within `max_staleness`.
    pub fn snapshot_at(&self, time: f64, max_staleness: f64) -> Result<TelemetrySnapshot, SnapshotError> {
        let missing = self.missing();
        if !missing.is_empty() {
            return Err(SnapshotError::Incomplete(missing));
        }
        let mut staleness = [0.0; 6];
        let mut stale = Vec::new();
        for f in Field::ALL {
            let slot = self.slots[f.index()].unwrap();
            let age = (time - slot.time).max(0.0);
            staleness[f.index()] = age;
            if age > max_staleness {
                stale.push(f);
            }
        }
        if !stale.is_empty() {
            return Err(SnapshotError::Stale(stale));
        }
        let v = |f: Field| self.slots[f.index()].unwrap().value;
        Ok(TelemetrySnapshot {
            latitude: v(Field::Lat),
            longitude: v(Field::Lon),
            height: v(Field::Alt),
            heading: v(Field::Hdg),
            gimbal_pitch: v(Field::Pit),
            gimbal_yaw: v(Field::Yaw),
            staleness,
        })
    }
}

/// Formats one wire line, e.g. `ALT 37.210000\n`.
pub fn format_line(header: Header, value: f64) -> String {
    format!("{header} {value:.6}\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_examples() {
        assert_eq!(
            parse_line(b"ALT 37.21\n"),
            Ok(TelemetryMessage { header: Header::Field(Field::Alt), value: 37.21 })
        );
        assert_eq!(
            parse_line(b"LAT 36.115700\n"),
            Ok(TelemetryMessage { header: Header::Field(Field::Lat), value: 36.1157 })
        );
        assert_eq!(parse_line(b"QQQ 1.0\n"), Err(Rejection::UnknownHeader));
    }

    #[test]
    fn grammar_edges() {
        assert!(parse_line(b"PIT -45\r\n").is_ok());
        assert!(parse_line(b"PIT +45").is_ok());
        assert_eq!(parse_line(b"ALT 1.\n"), Err(Rejection::MalformedNumber));
        assert_eq!(parse_line(b"ALT .5\n"), Err(Rejection::MalformedNumber));
        assert_eq!(parse_line(b"ALT  5\n"), Err(Rejection::MalformedNumber));
        assert_eq!(parse_line(b"ALT 5 \n"), Err(Rejection::MalformedNumber));
        assert_eq!(parse_line(b"ALT 1e3\n"), Err(Rejection::MalformedNumber));
        assert_eq!(parse_line(b"ALT5\n"), Err(Rejection::MalformedNumber));
        assert_eq!(parse_line(b"alt 5\n"), Err(Rejection::UnknownHeader));
        assert_eq!(parse_line(b""), Err(Rejection::UnknownHeader));
        assert_eq!(parse_line(b"\xff\xfe\xfd 1"), Err(Rejection::UnknownHeader));
    }

    #[test]
    fn range_checks() {
        let rv = |h| Err(Rejection::RangeViolation(h));
        assert_eq!(parse_line(b"ALT 100.5"), rv(Header::Field(Field::Alt)));
        assert_eq!(parse_line(b"ALT -1"), rv(Header::Field(Field::Alt)));
        assert_eq!(parse_line(b"HDG 360"), rv(Header::Field(Field::Hdg)));
        assert!(parse_line(b"HDG 359.999").is_ok());
        assert_eq!(parse_line(b"LAT 90.0001"), rv(Header::Field(Field::Lat)));
        assert_eq!(parse_line(b"LON -180.5"), rv(Header::Field(Field::Lon)));
        assert_eq!(parse_line(b"PIT -91"), rv(Header::Field(Field::Pit)));
        assert_eq!(parse_line(b"TIM -1"), rv(Header::Tim));
    }

    fn upd(field: Field, value: f64, time: f64) -> TimedUpdate {
        TimedUpdate { field, value, time }
    }

    fn full_store(time: f64) -> TelemetryStore {
        let mut s = TelemetryStore::new();
        for (i, f) in Field::ALL.into_iter().enumerate() {
            s.ingest(upd(f, i as f64, time));
        }
        s
    }

    #[test]
    fn latest_wins() {
        let mut s = TelemetryStore::new();
        s.ingest(upd(Field::Alt, 10.0, 0.0));
        s.ingest(upd(Field::Alt, 12.0, 0.1));
        assert_eq!(s.get(Field::Alt), Some(12.0));
    }

    #[test]
    fn partial_store_is_incomplete() {
        let mut s = TelemetryStore::new();
        s.ingest(upd(Field::Lat, 36.0, 0.0));
        assert!(!s.is_complete());
        match s.snapshot_at(0.0, 1.0) {
            Err(SnapshotError::Incomplete(m)) => {
                assert_eq!(m, vec![Field::Lon, Field::Alt, Field::Hdg, Field::Pit, Field::Yaw])
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(
            TelemetryStore::new().snapshot_at(0.0, 1.0),
            Err(SnapshotError::Incomplete(Field::ALL.to_vec()))
        );
    }

    #[test]
    fn staleness_window() {
        let s = full_store(1.0);
        let snap = s.snapshot_at(1.2, 0.5).unwrap();
        assert!(snap.staleness.iter().all(|&a| (a - 0.2).abs() < 1e-12));
        assert_eq!(snap.height, 2.0);

        let mut s = full_store(1.0);
        s.ingest(upd(Field::Alt, 5.0, 0.0));
        assert_eq!(s.snapshot_at(1.2, 0.5), Err(SnapshotError::Stale(vec![Field::Alt])));
    }

    #[test]
    fn decoder_stamps_with_tim() {
        let text = b"LAT 1.0\nTIM 2.5\nALT 30\nbogus\nHDG 10\r\n";
        let mut d = LineDecoder::new();
        let ups = d.decode_all(&text[..], 0.25).unwrap();
        assert_eq!(
            ups,
            vec![upd(Field::Lat, 1.0, 0.25), upd(Field::Alt, 30.0, 2.5), upd(Field::Hdg, 10.0, 2.5)]
        );
        assert_eq!(d.accepted, 4);
        assert_eq!(d.rejected.total(), 1);
    }

    #[test]
    fn format_parses_back() {
        let line = format_line(Header::Field(Field::Lat), 36.1157);
        assert_eq!(line, "LAT 36.115700\n");
        assert_eq!(parse_line(line.as_bytes()).unwrap().value, 36.1157);
    }

    proptest! {
        #[test]
        fn parser_total_on_arbitrary_bytes(lines in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..24), 0..64)) {
            let mut d = LineDecoder::new();
            for l in &lines {
                d.decode(l, 0.0);
            }
            prop_assert_eq!(d.accepted + d.rejected.total(), lines.len() as u64);
        }

        #[test]
        fn ingest_order_insensitive(perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle()) {
            let values = [36.1, -97.0, 50.0, 90.0, -45.0, 3.0];
            let mut a = TelemetryStore::new();
            let mut b = TelemetryStore::new();
            for i in 0..6 {
                a.ingest(upd(Field::ALL[i], values[i], 1.0));
                let j = perm[i];
                b.ingest(upd(Field::ALL[j], values[j], 1.0));
            }
            prop_assert_eq!(a.snapshot_at(1.0, 1.0).unwrap(), b.snapshot_at(1.0, 1.0).unwrap());
        }
    }
}
