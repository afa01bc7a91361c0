use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::bgsub::{MAX_BLUR, MAX_DILATION, MIN_BLUR, MIN_DILATION};
use crate::eoq::{QueueConfig, QueueDirection, DEFAULT_HYSTERESIS_FRAMES, DEFAULT_SPEED_THRESHOLD_MPH};
use crate::geoloc::Projection;

pub const DEFAULT_WARMUP: u64 = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub version: u64,
    pub blur: u32,
    pub dilation: u32,
    pub min_blob_area: u64,
    pub max_blob_area: u64,
    pub speed_threshold_mph: f64,
    pub posted_limit_mph: Option<f64>,
    pub direction: QueueDirection,
    pub projection: Projection,
    pub speed_cal: f64,
    pub warmup: u64,
    pub max_staleness_s: f64,
    pub fov_h_deg: f64,
    /// Frames between the two positions used for a speed estimate.
    pub speed_window: u64,
    /// Frames a new End-of-Queue must persist before it is published.
    pub hysteresis: u32,
    pub serve_port: Option<u16>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: 1,
            blur: 5,
            dilation: 5,
            min_blob_area: 40,
            max_blob_area: 30_000,
            speed_threshold_mph: DEFAULT_SPEED_THRESHOLD_MPH,
            posted_limit_mph: None,
            direction: QueueDirection::LeftToRight,
            projection: Projection::Pinhole,
            speed_cal: 1.0,
            warmup: DEFAULT_WARMUP,
            max_staleness_s: 1.0,
            fov_h_deg: 94.0,
            speed_window: 8,
            hysteresis: DEFAULT_HYSTERESIS_FRAMES,
            serve_port: None,
        }
    }
}

impl PipelineConfig {
    pub fn queue(&self) -> QueueConfig {
        QueueConfig::new(self.speed_threshold_mph, self.posted_limit_mph, self.direction)
            .expect("validated config has a valid queue rule")
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, field: &str, message: String| {
            if !ok {
                errs.push(FieldError {
                    field: field.to_string(),
                    message,
                });
            }
        };
        let odd_in = |v: u32, lo: u32, hi: u32| v % 2 == 1 && (lo..=hi).contains(&v);
        check(
            odd_in(self.blur, MIN_BLUR, MAX_BLUR),
            "blur",
            format!("must be odd and in [{MIN_BLUR}, {MAX_BLUR}], got {}", self.blur),
        );
        check(
            odd_in(self.dilation, MIN_DILATION, MAX_DILATION),
            "dilation",
            format!("must be odd and in [{MIN_DILATION}, {MAX_DILATION}], got {}", self.dilation),
        );
        check(self.min_blob_area >= 1, "min_blob_area", "must be at least 1".into());
        check(
            self.max_blob_area >= self.min_blob_area,
            "max_blob_area",
            format!("must be >= min_blob_area ({})", self.min_blob_area),
        );
        let positive = |v: f64| v.is_finite() && v > 0.0;
        check(
            positive(self.speed_threshold_mph) && self.speed_threshold_mph <= 200.0,
            "speed_threshold_mph",
            format!("must be in (0, 200], got {}", self.speed_threshold_mph),
        );
        if let Some(l) = self.posted_limit_mph {
            check(positive(l) && l <= 200.0, "posted_limit_mph", format!("must be in (0, 200], got {l}"));
        }
        check(
            positive(self.speed_cal) && self.speed_cal <= 10.0,
            "speed_cal",
            format!("must be in (0, 10], got {}", self.speed_cal),
        );
        check(self.warmup <= 100_000, "warmup", "must be at most 100000 frames".into());
        check(
            positive(self.max_staleness_s),
            "max_staleness_s",
            format!("must be positive, got {}", self.max_staleness_s),
        );
        check(
            self.fov_h_deg > 1.0 && self.fov_h_deg < 179.0,
            "fov_h_deg",
            format!("must be in (1, 179), got {}", self.fov_h_deg),
        );
        check(
            (1..=32).contains(&self.speed_window),
            "speed_window",
            format!("must be in [1, 32], got {}", self.speed_window),
        );
        check(
            (1..=240).contains(&self.hysteresis),
            "hysteresis",
            format!("must be in [1, 240], got {}", self.hysteresis),
        );
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ValidationError { errors: errs })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("invalid config: {}", .errors.iter().map(|e| format!("{}: {}", e.field, e.message)).collect::<Vec<_>>().join("; "))]
pub struct ValidationError {
    pub errors: Vec<FieldError>,
}

impl ValidationError {
    pub fn fields(&self) -> Vec<&str> {
        self.errors.iter().map(|e| e.field.as_str()).collect()
    }
}

/// Partial update; absent fields keep their value. `posted_limit_mph: null`
/// clears the posted limit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigPatch {
    pub blur: Option<u32>,
    pub dilation: Option<u32>,
    pub min_blob_area: Option<u64>,
    pub max_blob_area: Option<u64>,
    pub speed_threshold_mph: Option<f64>,
    #[serde(deserialize_with = "present", skip_serializing_if = "Option::is_none")]
    pub posted_limit_mph: Option<Option<f64>>,
    pub direction: Option<QueueDirection>,
    pub projection: Option<Projection>,
    pub speed_cal: Option<f64>,
    pub warmup: Option<u64>,
    pub max_staleness_s: Option<f64>,
    pub fov_h_deg: Option<f64>,
    pub speed_window: Option<u64>,
    pub hysteresis: Option<u32>,
}

fn present<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Option<f64>>, D::Error> {
    Option::<f64>::deserialize(d).map(Some)
}

/// Merges `patch` into `current`. Either every field is applied and the
/// version is bumped, or nothing changes.
pub fn apply_config(current: &PipelineConfig, patch: &ConfigPatch) -> Result<PipelineConfig, ValidationError> {
    let mut next = current.clone();
    macro_rules! merge {
        ($($f:ident),*) => {
            $(if let Some(v) = patch.$f { next.$f = v; })*
        };
    }
    merge!(
        blur,
        dilation,
        min_blob_area,
        max_blob_area,
        speed_threshold_mph,
        posted_limit_mph,
        direction,
        projection,
        speed_cal,
        warmup,
        max_staleness_s,
        fov_h_deg,
        speed_window,
        hysteresis
    );
    next.validate()?;
    next.version = current.version + 1;
    Ok(next)
}
