//! Pixel to ground georeferencing, great-circle distance and track speed.
//!
//! # Conventions
//!
//! * Image coordinates are continuous: pixel `(i, j)` covers
//!   `[i, i + 1) x [j, j + 1)`, so its centre is `(i + 0.5, j + 0.5)` and the
//!   optical axis passes through `(n_x / 2, n_y / 2)`.
//! * UAV frame: `+dy` is forward along the camera heading, `+dx` is to the
//!   right. Image-right maps to `+dx`, image-up maps to `+dy`.
//! * `theta_camera` is the angle of the optical axis off nadir, derived from
//!   gimbal pitch as `90 + pitch` (pitch -90 is straight down). The heading
//!   used for the North/East rotation is UAV heading plus gimbal yaw.
//! * UAV roll and pitch are ignored.
//!
//! # Projection modes
//!
//! [`Projection::Pinhole`] intersects the pixel ray with flat ground:
//!
//! ```text
//! a = n_y/2 - row        u = col - n_x/2
//! alpha = atan(a / f)    theta = alpha + theta_camera
//! dy = h * tan(theta)
//! dx = h * u / (f * cos(theta_camera) - a * sin(theta_camera))
//! north = dy * cos(H) - dx * sin(H)
//! east  = dy * sin(H) + dx * cos(H)
//! ```
//!
//! `dx` equals `-tan(beta) * h * cos(alpha) / cos(theta)` with
//! `beta = atan((n_x/2 - col) / f)`, i.e. the lateral offset scales with the
//! slant range rather than with `dy`, so a nadir camera still resolves columns
//! on its centre row.
//!
//! [`Projection::Paper`] keeps an alternative closed form for comparison:
//! `alpha = atan((n_y - row) / 2f)`, `beta = atan((n_x - col) / 2f)`,
//! `dx = dy * tan(beta)` and the rotation matrix `[[sin H, cos H], [cos H, sin H]]`
//! applied to `(dx, dy)`.
//!
//! Both modes convert North/East offsets to latitude/longitude on a sphere of
//! radius [`EARTH_RADIUS_M`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{SnapshotError, TelemetrySnapshot};
use crate::tracking::{GeoPos, Track};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const MPS_TO_MPH: f64 = 2.23694;
pub const METERS_PER_FOOT: f64 = 0.3048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    #[default]
    Pinhole,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeolocError {
    #[error("ray at {theta_deg:.3} deg off nadir does not reach the ground")]
    HorizonOverflow { theta_deg: f64 },
    #[error(transparent)]
    IncompleteTelemetry(#[from] SnapshotError),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("height {0} m must be positive")]
    InvalidHeight(f64),
    #[error("track has no geo positions spanning {window} frames")]
    InsufficientHistory { window: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub n_x: f64,
    pub n_y: f64,
    pub focal_px: f64,
    pub theta_camera_deg: f64,
    pub fov_h_deg: f64,
}

impl CameraModel {
    pub fn from_fov(n_x: u32, n_y: u32, fov_h_deg: f64, theta_camera_deg: f64) -> Result<Self, GeolocError> {
        if !(fov_h_deg > 0.0 && fov_h_deg < 180.0) {
            return Err(GeolocError::InvalidCamera(format!("horizontal fov {fov_h_deg} outside (0, 180)")));
        }
        let n_x = n_x as f64;
        let focal_px = (n_x / 2.0) / (fov_h_deg.to_radians() / 2.0).tan();
        let cam = Self {
            n_x,
            n_y: n_y as f64,
            focal_px,
            theta_camera_deg,
            fov_h_deg,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera pointing as reported by the gimbal.
    pub fn from_snapshot(n_x: u32, n_y: u32, fov_h_deg: f64, snap: &TelemetrySnapshot) -> Result<Self, GeolocError> {
        Self::from_fov(n_x, n_y, fov_h_deg, 90.0 + snap.gimbal_pitch)
    }

    pub fn half_vertical_fov_deg(&self) -> f64 {
        (self.n_y / 2.0 / self.focal_px).atan().to_degrees()
    }

    fn validate(&self) -> Result<(), GeolocError> {
        if !(0.0..90.0).contains(&self.theta_camera_deg) {
            return Err(GeolocError::InvalidCamera(format!(
                "theta_camera {} outside [0, 90)",
                self.theta_camera_deg
            )));
        }
        if self.theta_camera_deg + self.half_vertical_fov_deg() >= 90.0 {
            return Err(GeolocError::InvalidCamera(format!(
                "top image rows look above the horizon (theta_camera {} + half vfov {:.2})",
                self.theta_camera_deg,
                self.half_vertical_fov_deg()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPoint {
    pub dx: f64,
    pub dy: f64,
    pub north: f64,
    pub east: f64,
    pub lat: f64,
    pub lon: f64,
}

/// Heading used to rotate UAV-frame offsets, degrees clockwise from north.
pub fn effective_heading_deg(snap: &TelemetrySnapshot) -> f64 {
    (snap.heading + snap.gimbal_yaw).rem_euclid(360.0)
}

/// Rotates UAV-frame `(dx, dy)` into `(north, east)`.
pub fn to_north_east(dx: f64, dy: f64, heading_deg: f64, mode: Projection) -> (f64, f64) {
    let (s, c) = heading_deg.to_radians().sin_cos();
    match mode {
        Projection::Pinhole => (dy * c - dx * s, dy * s + dx * c),
        Projection::Paper => (s * dx + c * dy, c * dx + s * dy),
    }
}

/// Inverse of the pinhole rotation.
pub fn to_body(north: f64, east: f64, heading_deg: f64) -> (f64, f64) {
    let (s, c) = heading_deg.to_radians().sin_cos();
    (-north * s + east * c, north * c + east * s)
}

/// Applies a North/East offset in metres to a reference position.
pub fn offset_latlon(lat_deg: f64, lon_deg: f64, north: f64, east: f64) -> (f64, f64) {
    let lat = lat_deg + (north / EARTH_RADIUS_M).to_degrees();
    let lon = lon_deg + (east / (EARTH_RADIUS_M * lat.to_radians().cos())).to_degrees();
    (lat, lon)
}

/// Inverse of [`offset_latlon`].
pub fn latlon_offset(ref_lat: f64, ref_lon: f64, lat: f64, lon: f64) -> (f64, f64) {
    let north = (lat - ref_lat).to_radians() * EARTH_RADIUS_M;
    let east = (lon - ref_lon).to_radians() * EARTH_RADIUS_M * lat.to_radians().cos();
    (north, east)
}

fn check_theta(theta: f64) -> Result<(), GeolocError> {
    if theta >= std::f64::consts::FRAC_PI_2 || theta <= -std::f64::consts::FRAC_PI_2 {
        Err(GeolocError::HorizonOverflow {
            theta_deg: theta.to_degrees(),
        })
    } else {
        Ok(())
    }
}

pub fn pixel_to_ground(
    pixel: (f64, f64),
    camera: &CameraModel,
    snap: &TelemetrySnapshot,
    mode: Projection,
) -> Result<GroundPoint, GeolocError> {
    let (col, row) = pixel;
    let h = snap.height;
    if !(h > 0.0) {
        return Err(GeolocError::InvalidHeight(h));
    }
    let f = camera.focal_px;
    let theta_c = camera.theta_camera_deg.to_radians();
    let (dx, dy) = match mode {
        Projection::Pinhole => {
            let a = camera.n_y / 2.0 - row;
            let u = col - camera.n_x / 2.0;
            let theta = (a / f).atan() + theta_c;
            check_theta(theta)?;
            let dy = h * theta.tan();
            let dx = h * u / (f * theta_c.cos() - a * theta_c.sin());
            (dx, dy)
        }
        Projection::Paper => {
            let alpha = ((camera.n_y - row) / (2.0 * f)).atan();
            let theta = alpha + theta_c;
            check_theta(theta)?;
            let dy = h * theta.tan();
            let beta = ((camera.n_x - col) / (2.0 * f)).atan();
            (dy * beta.tan(), dy)
        }
    };
    let (north, east) = to_north_east(dx, dy, effective_heading_deg(snap), mode);
    let (lat, lon) = offset_latlon(snap.latitude, snap.longitude, north, east);
    Ok(GroundPoint {
        dx,
        dy,
        north,
        east,
        lat,
        lon,
    })
}

/// Inverse of pinhole [`pixel_to_ground`] from UAV-frame ground offsets.
pub fn ground_to_pixel(dx: f64, dy: f64, camera: &CameraModel, height: f64) -> Result<(f64, f64), GeolocError> {
    if !(height > 0.0) {
        return Err(GeolocError::InvalidHeight(height));
    }
    let f = camera.focal_px;
    let theta_c = camera.theta_camera_deg.to_radians();
    let theta = dy.atan2(height);
    let alpha = theta - theta_c;
    check_theta(alpha)?;
    let a = f * alpha.tan();
    let row = camera.n_y / 2.0 - a;
    let u = dx * (f * theta_c.cos() - a * theta_c.sin()) / height;
    Ok((camera.n_x / 2.0 + u, row))
}

/// Pixel at which a geographic point appears (pinhole mode).
pub fn geo_to_pixel(lat: f64, lon: f64, camera: &CameraModel, snap: &TelemetrySnapshot) -> Result<(f64, f64), GeolocError> {
    let (north, east) = latlon_offset(snap.latitude, snap.longitude, lat, lon);
    let (dx, dy) = to_body(north, east, effective_heading_deg(snap));
    ground_to_pixel(dx, dy, camera, snap.height)
}

/// Camera and telemetry for one frame, ready to locate pixels.
#[derive(Debug, Clone, Copy)]
pub struct Georeferencer {
    pub camera: CameraModel,
    pub snapshot: TelemetrySnapshot,
    pub mode: Projection,
}

impl Georeferencer {
    pub fn new(
        n_x: u32,
        n_y: u32,
        fov_h_deg: f64,
        snapshot: Result<TelemetrySnapshot, SnapshotError>,
        mode: Projection,
    ) -> Result<Self, GeolocError> {
        let snapshot = snapshot?;
        let camera = CameraModel::from_snapshot(n_x, n_y, fov_h_deg, &snapshot)?;
        Ok(Self { camera, snapshot, mode })
    }

    /// Locates the centre of the pixel whose index-space coordinates are
    /// `(x, y)`, e.g. a blob centroid.
    pub fn locate_index(&self, x: f64, y: f64) -> Result<GroundPoint, GeolocError> {
        pixel_to_ground((x + 0.5, y + 0.5), &self.camera, &self.snapshot, self.mode)
    }
}

/// Great-circle distance in metres on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let s_lat = ((lat2 - lat1) / 2.0).sin();
    let s_lon = ((lon2 - lon1) / 2.0).sin();
    let h = s_lat * s_lat + lat1.cos() * lat2.cos() * s_lon * s_lon;
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Unsmoothed speed over the last `window` frames.
///
/// Uses the newest geolocated point and the most recent geolocated point at
/// least `window` frames older; elapsed time comes from their frame indices.
pub fn instant_speed_mph(track: &Track, window: u64, fps: f64, calibration: f64) -> Result<f64, GeolocError> {
    let insufficient = GeolocError::InsufficientHistory { window };
    let newest = track.history.back().ok_or(insufficient.clone())?;
    let end = newest.geo.ok_or(insufficient.clone())?;
    let start_frame = newest.frame.checked_sub(window).ok_or(insufficient.clone())?;
    let start = track
        .history
        .iter()
        .rev()
        .filter(|p| p.frame <= start_frame)
        .find_map(|p| p.geo.map(|g| (p.frame, g)))
        .ok_or(insufficient)?;
    let elapsed = (newest.frame - start.0) as f64 / fps;
    let meters = haversine((start.1.lat, start.1.lon), (end.lat, end.lon));
    Ok(calibration * meters / elapsed * MPS_TO_MPH)
}

/// Updates the track's smoothed speed with an exponential moving average.
pub fn track_speed(track: &mut Track, window: u64, fps: f64, calibration: f64, ema: f64) -> Result<f64, GeolocError> {
    let inst = instant_speed_mph(track, window, fps, calibration)?;
    let smoothed = match track.speed_mph {
        Some(prev) => ema * inst + (1.0 - ema) * prev,
        None => inst,
    };
    track.speed_mph = Some(smoothed);
    Ok(smoothed)
}

pub fn geo(lat: f64, lon: f64) -> GeoPos {
    GeoPos { lat, lon }
}
