//! Queue membership and End-of-Queue selection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tracking::{Heading, Track, TrackState};

pub const DEFAULT_SPEED_THRESHOLD_MPH: f64 = 25.0;
pub const DEFAULT_HYSTERESIS_FRAMES: u32 = 3;

/// Direction of queued traffic in image space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum QueueDirection {
    #[default]
    #[serde(rename = "ltr", alias = "left_to_right")]
    LeftToRight,
    #[serde(rename = "rtl", alias = "right_to_left")]
    RightToLeft,
}

impl QueueDirection {
    pub fn heading(self) -> Heading {
        match self {
            Self::LeftToRight => Heading::LeftToRight,
            Self::RightToLeft => Heading::RightToLeft,
        }
    }
}

impl std::str::FromStr for QueueDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ltr" | "left_to_right" => Ok(Self::LeftToRight),
            "rtl" | "right_to_left" => Ok(Self::RightToLeft),
            other => Err(format!("unknown direction {other:?}, expected ltr or rtl")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueueConfigError {
    #[error("speed threshold must be a positive number of mph, got {0}")]
    Threshold(f64),
    #[error("posted limit must be a positive number of mph, got {0}")]
    PostedLimit(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueConfig {
    speed_threshold_mph: f64,
    posted_limit_mph: Option<f64>,
    pub direction: QueueDirection,
    /// Window used to decide the direction of a track.
    pub direction_window: usize,
}

impl Default for QueueConfig {
    fn default() -> Self {
        Self {
            speed_threshold_mph: DEFAULT_SPEED_THRESHOLD_MPH,
            posted_limit_mph: None,
            direction: QueueDirection::LeftToRight,
            direction_window: 8,
        }
    }
}

impl QueueConfig {
    /// A posted limit, when given, overrides the threshold with a third of it.
    pub fn new(threshold_mph: f64, posted_limit_mph: Option<f64>, direction: QueueDirection) -> Result<Self, QueueConfigError> {
        let speed_threshold_mph = match posted_limit_mph {
            Some(l) if l.is_finite() && l > 0.0 => l / 3.0,
            Some(l) => return Err(QueueConfigError::PostedLimit(l)),
            None if threshold_mph.is_finite() && threshold_mph > 0.0 => threshold_mph,
            None => return Err(QueueConfigError::Threshold(threshold_mph)),
        };
        Ok(Self {
            speed_threshold_mph,
            posted_limit_mph,
            direction,
            ..Self::default()
        })
    }

    pub fn speed_threshold_mph(&self) -> f64 {
        self.speed_threshold_mph
    }

    pub fn posted_limit_mph(&self) -> Option<f64> {
        self.posted_limit_mph
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EoqRecord {
    pub frame: u64,
    pub t: f64,
    pub track: u64,
    pub lat: f64,
    pub lon: f64,
    pub speed_mph: f64,
}

/// Vehicle tracks slower than the threshold and travelling in the queue
/// direction. A track coasting through a short miss still qualifies.
pub fn queue_members(tracks: &[Track], config: &QueueConfig) -> Vec<u64> {
    tracks
        .iter()
        .filter(|t| t.state == TrackState::Vehicle)
        .filter(|t| t.speed_mph.is_some_and(|s| s < config.speed_threshold_mph))
        .filter(|t| t.heading(config.direction_window) == config.direction.heading())
        .map(|t| t.id)
        .collect()
}

/// The member furthest upstream: smallest centroid x for left-to-right
/// traffic, largest for right-to-left. Ties go to smaller y, then smaller id.
pub fn select_eoq<'a>(members: impl IntoIterator<Item = &'a Track>, direction: QueueDirection) -> Option<&'a Track> {
    let key = |t: &Track| {
        let (x, y) = t.centroid();
        let x = match direction {
            QueueDirection::LeftToRight => x,
            QueueDirection::RightToLeft => -x,
        };
        (x, y, t.id)
    };
    members
        .into_iter()
        .min_by(|a, b| key(a).partial_cmp(&key(b)).unwrap_or(std::cmp::Ordering::Equal))
}

/// Builds the record for `track` from its newest geolocated point.
pub fn make_record(track: &Track, frame: u64, t: f64) -> Option<EoqRecord> {
    let geo = track.history.iter().rev().find_map(|p| p.geo)?;
    Some(EoqRecord {
        frame,
        t,
        track: track.id,
        lat: geo.lat,
        lon: geo.lon,
        speed_mph: track.speed_mph?,
    })
}

/// Debounces EOQ changes: a new track must be the raw EOQ for `persist`
/// consecutive frames before it replaces the published one.
#[derive(Debug, Clone, Default)]
pub struct EoqSelector {
    persist: u32,
    published: Option<u64>,
    pending: Option<(u64, u32)>,
}

impl EoqSelector {
    pub fn new(persist: u32) -> Self {
        Self {
            persist: persist.max(1),
            published: None,
            pending: None,
        }
    }

    pub fn published(&self) -> Option<u64> {
        self.published
    }

    /// Feeds this frame's raw EOQ and member list; returns the id to publish.
    pub fn update(&mut self, raw: Option<u64>, members: &[u64]) -> Option<u64> {
        if self.published.is_some_and(|p| !members.contains(&p)) {
            self.published = None;
        }
        match raw {
            None => self.pending = None,
            Some(id) if Some(id) == self.published => self.pending = None,
            Some(id) => {
                let count = match self.pending {
                    Some((p, n)) if p == id => n + 1,
                    _ => 1,
                };
                if count >= self.persist {
                    self.published = Some(id);
                    self.pending = None;
                } else {
                    self.pending = Some((id, count));
                }
            }
        }
        self.published
    }
}
