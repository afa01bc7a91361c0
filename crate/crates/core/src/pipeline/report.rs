use serde::{Deserialize, Serialize};

use crate::blobs::BBox;
use crate::eoq::EoqRecord;
use crate::telemetry::{Field, SnapshotError};
use crate::tracking::TrackState;

/// Wall time per stage in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub blur: f64,
    pub mog: f64,
    pub dilate: f64,
    pub blobs: f64,
    pub tracking: f64,
    pub geoloc: f64,
    pub eoq: f64,
}

impl StageTimes {
    pub fn sum(&self) -> f64 {
        self.blur + self.mog + self.dilate + self.blobs + self.tracking + self.geoloc + self.eoq
    }
}

/// Overlay colours: tracked objects blue, vehicles green, the End-of-Queue red.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxColor {
    Blue,
    Green,
    Red,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub track: u64,
    pub bbox: BBox,
    pub state: TrackState,
    pub color: BoxColor,
    pub speed_mph: Option<f64>,
    pub label: Option<String>,
}

pub fn speed_label(mph: f64) -> String {
    format!("{mph:.1} mph")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TelemetryStatus {
    Ok,
    Incomplete { missing: Vec<String> },
    Stale { fields: Vec<String> },
}

impl TelemetryStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, Self::Ok)
    }
}

impl From<&SnapshotError> for TelemetryStatus {
    fn from(e: &SnapshotError) -> Self {
        let names = |fs: &[Field]| fs.iter().map(|f| f.header().to_string()).collect();
        match e {
            SnapshotError::Incomplete(fs) => Self::Incomplete { missing: names(fs) },
            SnapshotError::Stale(fs) => Self::Stale { fields: names(fs) },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame: u64,
    pub t: f64,
    pub config_version: u64,
    pub stages_ms: StageTimes,
    pub total_ms: f64,
    pub blob_count: usize,
    pub blobs_dropped: usize,
    pub track_count: usize,
    pub eoq: Option<EoqRecord>,
    pub overlays: Vec<Overlay>,
    pub telemetry: TelemetryStatus,
    pub warmup: bool,
    pub dropped_frames: u64,
}
