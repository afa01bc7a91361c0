//! Synthetic aerial scenes with exact ground truth.
//!
//! A stationary camera looks at flat ground textured with smooth value noise.
//! Vehicles are flat rectangles moving along piecewise-linear GPS paths; they
//! are projected with the pinhole inverse and painted by testing pixel centres.
//! Frame `i` draws its noise from its own ChaCha stream, so frames can be
//! rendered in any order and output is a pure function of `(spec, seed)`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame_io::{Fps, Frame, FrameIoError, FrameWriter, StreamHeader};
use crate::geoloc::{
    effective_heading_deg, ground_to_pixel, latlon_offset, offset_latlon, to_body, CameraModel, GeolocError,
    MPS_TO_MPH,
};
use crate::telemetry::{format_line, Field, Header, TelemetrySnapshot};

const TEXTURE_CELL: u32 = 32;
const RENDER_BATCH: u64 = 16;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("vehicle {vehicle} leaves the camera footprint at frame {frame}")]
    FootprintViolation { vehicle: usize, frame: u64 },
    #[error(transparent)]
    Camera(#[from] GeolocError),
    #[error(transparent)]
    Frame(#[from] FrameIoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundSpec {
    pub level: f64,
    /// Peak deviation of the static texture from `level`.
    pub texture: f64,
    pub noise_sigma: f64,
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        Self {
            level: 100.0,
            texture: 20.0,
            noise_sigma: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub height_m: f64,
    /// Gimbal pitch; -90 looks straight down.
    #[serde(default = "nadir")]
    pub pitch_deg: f64,
    #[serde(default)]
    pub heading_deg: f64,
    #[serde(default)]
    pub yaw_deg: f64,
    pub lat: f64,
    pub lon: f64,
    #[serde(default = "default_fov")]
    pub fov_h_deg: f64,
}

fn nadir() -> f64 {
    -90.0
}

fn default_fov() -> f64 {
    94.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub lat: f64,
    pub lon: f64,
    /// Speed on the segment leaving this waypoint.
    #[serde(default)]
    pub speed_mph: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub length_m: f64,
    pub width_m: f64,
    #[serde(default = "default_gray")]
    pub gray: u8,
    #[serde(default)]
    pub start_s: f64,
    pub waypoints: Vec<Waypoint>,
}

fn default_gray() -> u8 {
    220
}

/// Telemetry rate per field in Hz; zero leaves the field out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TelemetryRates {
    pub lat: f64,
    pub lon: f64,
    pub alt: f64,
    pub hdg: f64,
    pub pit: f64,
    pub yaw: f64,
}

impl Default for TelemetryRates {
    fn default() -> Self {
        Self {
            lat: 10.0,
            lon: 10.0,
            alt: 10.0,
            hdg: 10.0,
            pit: 10.0,
            yaw: 10.0,
        }
    }
}

impl TelemetryRates {
    fn rate(&self, field: Field) -> f64 {
        match field {
            Field::Lat => self.lat,
            Field::Lon => self.lon,
            Field::Alt => self.alt,
            Field::Hdg => self.hdg,
            Field::Pit => self.pit,
            Field::Yaw => self.yaw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_fps")]
    pub fps: u32,
    pub duration_s: f64,
    #[serde(default)]
    pub background: BackgroundSpec,
    pub camera: CameraSpec,
    #[serde(default)]
    pub vehicles: Vec<VehicleSpec>,
    /// Whole-frame shake of up to this many pixels.
    #[serde(default)]
    pub jitter_px: u32,
    #[serde(default)]
    pub telemetry: TelemetryRates,
}

fn default_fps() -> u32 {
    24
}

impl SceneSpec {
    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn frame_count(&self) -> u64 {
        (self.duration_s * self.fps as f64).round() as u64
    }

    pub fn snapshot(&self) -> TelemetrySnapshot {
        let c = &self.camera;
        TelemetrySnapshot::fixed(c.lat, c.lon, c.height_m, c.heading_deg, c.pitch_deg, c.yaw_deg)
    }

    /// Local North/East metres of a point relative to the UAV.
    pub fn local(&self, lat: f64, lon: f64) -> (f64, f64) {
        latlon_offset(self.camera.lat, self.camera.lon, lat, lon)
    }

    /// Latitude/longitude of a local North/East offset from the UAV.
    pub fn geo(&self, north: f64, east: f64) -> (f64, f64) {
        offset_latlon(self.camera.lat, self.camera.lon, north, east)
    }
}

/// Ground truth for one vehicle in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub frame: u64,
    pub t: f64,
    pub vehicle: usize,
    /// Pixel centroid in index coordinates, comparable to blob centroids.
    pub x: f64,
    pub y: f64,
    pub lat: f64,
    pub lon: f64,
    pub speed_mph: f64,
}

#[derive(Debug, Clone)]
struct Segment {
    from: (f64, f64),
    dir: (f64, f64),
    length: f64,
    speed_mps: f64,
    start_t: f64,
}

#[derive(Debug, Clone)]
struct VehiclePath {
    segments: Vec<Segment>,
    end: (f64, f64),
    end_dir: (f64, f64),
    start_s: f64,
    /// None for a vehicle that parks at its final waypoint.
    end_s: Option<f64>,
    length: f64,
    width: f64,
    gray: u8,
}

#[derive(Debug, Clone, Copy)]
struct Pose {
    centre: (f64, f64),
    dir: (f64, f64),
    speed_mps: f64,
}

impl VehiclePath {
    fn new(spec: &SceneSpec, v: &VehicleSpec) -> Result<Self, SynthError> {
        if !(v.length_m > 0.0 && v.width_m > 0.0) {
            return Err(SynthError::Invalid("vehicle dimensions must be positive".into()));
        }
        if v.waypoints.is_empty() {
            return Err(SynthError::Invalid("vehicle needs at least one waypoint".into()));
        }
        if !(v.start_s >= 0.0) {
            return Err(SynthError::Invalid("vehicle start_s must be >= 0".into()));
        }
        let pts: Vec<(f64, f64)> = v.waypoints.iter().map(|w| spec.local(w.lat, w.lon)).collect();
        let mut segments = Vec::new();
        let mut t = v.start_s;
        let mut end_s = None;
        let mut end_dir = (1.0, 0.0);
        for (i, pair) in pts.windows(2).enumerate() {
            let (a, b) = (pair[0], pair[1]);
            let d = (b.0 - a.0, b.1 - a.1);
            let length = d.0.hypot(d.1);
            if length == 0.0 {
                continue;
            }
            let speed = v.waypoints[i].speed_mph;
            if !(speed >= 0.0 && speed.is_finite()) {
                return Err(SynthError::Invalid("waypoint speeds must be >= 0".into()));
            }
            let dir = (d.0 / length, d.1 / length);
            end_dir = dir;
            segments.push(Segment {
                from: a,
                dir,
                length,
                speed_mps: speed / MPS_TO_MPH,
                start_t: t,
            });
            if speed == 0.0 {
                break;
            }
            t += length / (speed / MPS_TO_MPH);
            end_s = Some(t);
        }
        if segments.last().is_some_and(|s| s.speed_mps == 0.0) {
            end_s = None;
        }
        if segments.is_empty() {
            end_s = None;
        }
        let end = match segments.last() {
            Some(s) if s.speed_mps == 0.0 => s.from,
            _ => *pts.last().expect("non-empty"),
        };
        Ok(Self {
            segments,
            end,
            end_dir,
            start_s: v.start_s,
            end_s,
            length: v.length_m,
            width: v.width_m,
            gray: v.gray,
        })
    }

    fn active(&self, t: f64) -> bool {
        t >= self.start_s && self.end_s.is_none_or(|e| t < e)
    }

    fn pose(&self, t: f64) -> Option<Pose> {
        if !self.active(t) {
            return None;
        }
        for (i, s) in self.segments.iter().enumerate() {
            let next_start = self.segments.get(i + 1).map(|n| n.start_t);
            let on_segment = s.speed_mps == 0.0 || next_start.is_none_or(|n| t < n);
            if on_segment {
                let d = if s.speed_mps == 0.0 {
                    0.0
                } else {
                    ((t - s.start_t) * s.speed_mps).min(s.length)
                };
                return Some(Pose {
                    centre: (s.from.0 + s.dir.0 * d, s.from.1 + s.dir.1 * d),
                    dir: s.dir,
                    speed_mps: s.speed_mps,
                });
            }
        }
        Some(Pose {
            centre: self.end,
            dir: self.end_dir,
            speed_mps: 0.0,
        })
    }

    /// Ground corners (north, east) of the footprint.
    fn corners(&self, pose: &Pose) -> [(f64, f64); 4] {
        let (n, e) = pose.centre;
        let (fl, fw) = (pose.dir.0 * self.length / 2.0, pose.dir.1 * self.length / 2.0);
        // left normal of (north, east) direction
        let (ln, le) = (pose.dir.1 * self.width / 2.0, -pose.dir.0 * self.width / 2.0);
        [
            (n + fl + ln, e + fw + le),
            (n + fl - ln, e + fw - le),
            (n - fl - ln, e - fw - le),
            (n - fl + ln, e - fw + le),
        ]
    }
}

/// Renders frames, telemetry and ground truth for one scene.
#[derive(Debug, Clone)]
pub struct SceneRenderer {
    spec: SceneSpec,
    seed: u64,
    camera: CameraModel,
    heading: f64,
    header: StreamHeader,
    texture: Vec<f32>,
    paths: Vec<VehiclePath>,
}

impl SceneRenderer {
    pub fn new(spec: &SceneSpec, seed: u64) -> Result<Self, SynthError> {
        let fps = Fps::new(spec.fps, 1)?;
        let header = StreamHeader::new(spec.width, spec.height, fps)?;
        if !(spec.duration_s > 0.0 && spec.duration_s.is_finite()) {
            return Err(SynthError::Invalid("duration_s must be positive".into()));
        }
        if !(spec.camera.height_m > 0.0) {
            return Err(SynthError::Invalid("camera height must be positive".into()));
        }
        if !(spec.background.noise_sigma >= 0.0) {
            return Err(SynthError::Invalid("noise_sigma must be >= 0".into()));
        }
        let snap = spec.snapshot();
        let camera = CameraModel::from_snapshot(spec.width, spec.height, spec.camera.fov_h_deg, &snap)?;
        let paths = spec
            .vehicles
            .iter()
            .map(|v| VehiclePath::new(spec, v))
            .collect::<Result<Vec<_>, _>>()?;
        let renderer = Self {
            spec: spec.clone(),
            seed,
            camera,
            heading: effective_heading_deg(&snap),
            header,
            texture: value_noise(spec.width, spec.height, seed, spec.background.level, spec.background.texture),
            paths,
        };
        renderer.check_footprints()?;
        Ok(renderer)
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    pub fn header(&self) -> StreamHeader {
        self.header
    }

    pub fn frame_count(&self) -> u64 {
        self.spec.frame_count()
    }

    pub fn time(&self, frame: u64) -> f64 {
        self.header.fps.timestamp(frame)
    }

    fn project(&self, north: f64, east: f64) -> Result<(f64, f64), GeolocError> {
        let (dx, dy) = to_body(north, east, self.heading);
        ground_to_pixel(dx, dy, &self.camera, self.spec.camera.height_m)
    }

    fn check_footprints(&self) -> Result<(), SynthError> {
        let (w, h) = (self.spec.width as f64, self.spec.height as f64);
        for frame in 0..self.frame_count() {
            let t = self.time(frame);
            for (i, p) in self.paths.iter().enumerate() {
                let Some(pose) = p.pose(t) else { continue };
                for (n, e) in p.corners(&pose) {
                    let inside = self
                        .project(n, e)
                        .is_ok_and(|(c, r)| (0.0..=w).contains(&c) && (0.0..=h).contains(&r));
                    if !inside {
                        return Err(SynthError::FootprintViolation { vehicle: i, frame });
                    }
                }
            }
        }
        Ok(())
    }

    fn jitter(&self, frame: u64) -> (i32, i32) {
        let j = self.spec.jitter_px as i32;
        if j == 0 {
            return (0, 0);
        }
        let mut rng = self.frame_rng(frame);
        rng.set_word_pos(1 << 40);
        (rng.random_range(-j..=j), rng.random_range(-j..=j))
    }

    fn frame_rng(&self, frame: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(frame);
        rng
    }

    pub fn render_frame(&self, frame: u64) -> Frame {
        let (w, h) = (self.spec.width as usize, self.spec.height as usize);
        let t = self.time(frame);
        let mut canvas = self.texture.clone();
        for p in &self.paths {
            let Some(pose) = p.pose(t) else { continue };
            let quad: Vec<(f64, f64)> = p
                .corners(&pose)
                .iter()
                .map(|&(n, e)| self.project(n, e).expect("footprint checked"))
                .collect();
            fill_quad(&mut canvas, w, h, &quad, p.gray as f32);
        }
        let (jx, jy) = self.jitter(frame);
        let mut rng = self.frame_rng(frame);
        let sigma = self.spec.background.noise_sigma;
        let normal = Normal::new(0.0f32, sigma as f32).expect("sigma >= 0");
        let mut pixels = vec![0u8; w * h];
        for y in 0..h {
            let sy = (y as i32 - jy).clamp(0, h as i32 - 1) as usize;
            for x in 0..w {
                let sx = (x as i32 - jx).clamp(0, w as i32 - 1) as usize;
                let mut v = canvas[sy * w + sx];
                if sigma > 0.0 {
                    v += rng.sample(normal);
                }
                pixels[y * w + x] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
        Frame::new(self.spec.width, self.spec.height, t, pixels).expect("dimensions validated")
    }

    pub fn truth(&self, frame: u64) -> Vec<TruthRecord> {
        let t = self.time(frame);
        let (jx, jy) = self.jitter(frame);
        self.paths
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let pose = p.pose(t)?;
                let (c, r) = self.project(pose.centre.0, pose.centre.1).ok()?;
                let (lat, lon) = self.spec.geo(pose.centre.0, pose.centre.1);
                Some(TruthRecord {
                    frame,
                    t,
                    vehicle: i,
                    x: c - 0.5 + jx as f64,
                    y: r - 0.5 + jy as f64,
                    lat,
                    lon,
                    speed_mph: pose.speed_mps * MPS_TO_MPH,
                })
            })
            .collect()
    }

    /// Telemetry in wire format, every group of updates preceded by a TIM line.
    pub fn telemetry_text(&self) -> String {
        let snap = self.spec.snapshot();
        let value = |f: Field| match f {
            Field::Lat => snap.latitude,
            Field::Lon => snap.longitude,
            Field::Alt => snap.height,
            Field::Hdg => snap.heading,
            Field::Pit => snap.gimbal_pitch,
            Field::Yaw => snap.gimbal_yaw,
        };
        // (tick time in whole microseconds, field order)
        let mut events: Vec<(u64, usize)> = Vec::new();
        for (k, &f) in Field::ALL.iter().enumerate() {
            let rate = self.spec.telemetry.rate(f);
            if !(rate > 0.0) {
                continue;
            }
            let mut n = 0u64;
            loop {
                let t = n as f64 / rate;
                if t > self.spec.duration_s {
                    break;
                }
                events.push(((t * 1e6).round() as u64, k));
                n += 1;
            }
        }
        events.sort_unstable();
        let mut out = String::new();
        let mut last_tick = None;
        for (tick, k) in events {
            if last_tick != Some(tick) {
                out.push_str(&format_line(Header::Tim, tick as f64 / 1e6));
                last_tick = Some(tick);
            }
            let f = Field::ALL[k];
            out.push_str(&format_line(Header::Field(f), value(f)));
        }
        out
    }

    /// Writes the frame stream, rendering batches of frames in parallel.
    pub fn write_video<W: Write>(&self, out: W) -> Result<W, SynthError> {
        let mut writer = FrameWriter::new(out, self.header)?;
        let n = self.frame_count();
        let mut start = 0;
        while start < n {
            let end = (start + RENDER_BATCH).min(n);
            let frames: Vec<Frame> = (start..end).into_par_iter().map(|i| self.render_frame(i)).collect();
            for f in &frames {
                writer.write_frame(f)?;
            }
            start = end;
        }
        writer.flush()?;
        Ok(writer.into_inner())
    }

    pub fn write_truth<W: Write>(&self, mut out: W) -> Result<W, SynthError> {
        for frame in 0..self.frame_count() {
            for r in self.truth(frame) {
                serde_json::to_writer(&mut out, &r)?;
                out.write_all(b"\n")?;
            }
        }
        out.flush()?;
        Ok(out)
    }
}

/// Bilinear value noise on a coarse grid.
fn value_noise(w: u32, h: u32, seed: u64, level: f64, amplitude: f64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let gw = (w / TEXTURE_CELL + 2) as usize;
    let gh = (h / TEXTURE_CELL + 2) as usize;
    let grid: Vec<f64> = (0..gw * gh).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let mut out = Vec::with_capacity((w * h) as usize);
    let cell = TEXTURE_CELL as f64;
    for y in 0..h {
        let gy = y as f64 / cell;
        let (y0, fy) = (gy.floor() as usize, gy.fract());
        for x in 0..w {
            let gx = x as f64 / cell;
            let (x0, fx) = (gx.floor() as usize, gx.fract());
            let g = |i: usize, j: usize| grid[j * gw + i];
            let top = g(x0, y0) * (1.0 - fx) + g(x0 + 1, y0) * fx;
            let bottom = g(x0, y0 + 1) * (1.0 - fx) + g(x0 + 1, y0 + 1) * fx;
            out.push((level + amplitude * (top * (1.0 - fy) + bottom * fy)) as f32);
        }
    }
    out
}

/// Paints every pixel whose centre lies inside the convex polygon.
fn fill_quad(canvas: &mut [f32], w: usize, h: usize, quad: &[(f64, f64)], value: f32) {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in quad {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let cross = |a: (f64, f64), b: (f64, f64), p: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    let orient = cross(quad[0], quad[1], quad[2]).signum();
    let xs = (x0.floor().max(0.0) as usize)..=((x1.ceil() as usize).min(w - 1));
    let ys = (y0.floor().max(0.0) as usize)..=((y1.ceil() as usize).min(h - 1));
    for y in ys {
        for x in xs.clone() {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let inside = (0..quad.len()).all(|i| cross(quad[i], quad[(i + 1) % quad.len()], p) * orient >= 0.0);
            if inside {
                canvas[y * w + x] = value;
            }
        }
    }
}

/// Lane layout shared by the stock scenes: a nadir camera looking north, so
/// image-right is east.
#[derive(Debug, Clone, Copy)]
pub struct RoadLayout {
    pub width: u32,
    pub height: u32,
    pub fps: u32,
    pub camera_height_m: f64,
    pub lat: f64,
    pub lon: f64,
}

impl Default for RoadLayout {
    fn default() -> Self {
        Self {
            width: 720,
            height: 406,
            fps: 24,
            camera_height_m: 60.0,
            lat: 36.1157,
            lon: -97.0586,
        }
    }
}

impl RoadLayout {
    pub fn base_spec(&self, duration_s: f64) -> SceneSpec {
        SceneSpec {
            width: self.width,
            height: self.height,
            fps: self.fps,
            duration_s,
            background: BackgroundSpec::default(),
            camera: CameraSpec {
                height_m: self.camera_height_m,
                pitch_deg: -90.0,
                heading_deg: 0.0,
                yaw_deg: 0.0,
                lat: self.lat,
                lon: self.lon,
                fov_h_deg: 94.0,
            },
            vehicles: Vec::new(),
            jitter_px: 0,
            telemetry: TelemetryRates::default(),
        }
    }

    /// Half the ground width covered by the image, metres.
    pub fn half_swath_m(&self) -> f64 {
        self.camera_height_m * 47f64.to_radians().tan()
    }

    /// A car driving along a straight east-west line `north` metres from the
    /// image centre, from `east0` to `east1`.
    pub fn car(&self, north: f64, east0: f64, east1: f64, mph: f64, start_s: f64, gray: u8) -> VehicleSpec {
        let spec = self.base_spec(1.0);
        let (lat0, lon0) = spec.geo(north, east0);
        let (lat1, lon1) = spec.geo(north, east1);
        VehicleSpec {
            length_m: 4.5,
            width_m: 1.8,
            gray,
            start_s,
            waypoints: vec![
                Waypoint { lat: lat0, lon: lon0, speed_mph: mph },
                Waypoint { lat: lat1, lon: lon1, speed_mph: 0.0 },
            ],
        }
    }
}

/// One car crossing the image left to right at a constant speed.
pub fn single_vehicle_scene(mph: f64, duration_s: f64) -> SceneSpec {
    let road = RoadLayout::default();
    let mut spec = road.base_spec(duration_s);
    let reach = road.half_swath_m() - 5.0;
    let start_s = 0.5;
    let travel = (mph / MPS_TO_MPH * (duration_s - start_s)).min(2.0 * reach);
    let east0 = -reach;
    spec.vehicles.push(road.car(0.0, east0, east0 + travel, mph, start_s, 220));
    spec
}

/// A queue scene whose End-of-Queue vehicle is known by construction.
#[derive(Debug, Clone)]
pub struct QueueScene {
    pub spec: SceneSpec,
    /// Index of the vehicle that is the End-of-Queue in every frame.
    pub eoq_vehicle: usize,
}

/// Random scene with `n` vehicles (3 to 8). A slow eastbound lane holds the
/// queue; its rearmost car is the End-of-Queue. The other vehicles drive fast
/// in a parallel eastbound lane or slowly westbound, so none of them
/// qualifies. Cars vanish when they reach the end of their path.
pub fn queue_scene(seed: u64, n: usize, duration_s: f64) -> QueueScene {
    assert!((3..=8).contains(&n), "queue scenes hold 3 to 8 vehicles");
    let road = RoadLayout::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = road.base_spec(duration_s);
    let reach = road.half_swath_m() - 4.0;
    let start_s = 0.5;
    let drive = duration_s - start_s;
    let to_mps = |mph: f64| mph / MPS_TO_MPH;

    let queued = rng.random_range(2..=(n - 1).min(4));
    let others = n - queued;
    let fast_lane = others.div_ceil(2);
    let west_lane = others - fast_lane;

    // lane A, north = 0: the queue, rearmost car first
    let slow = rng.random_range(8.0..18.0);
    let spacing = rng.random_range(16.0..24.0);
    for q in 0..queued {
        let e0 = -reach + q as f64 * spacing;
        let e1 = (e0 + to_mps(slow) * drive).min(reach);
        let gray = rng.random_range(170..=250u8);
        spec.vehicles.push(road.car(0.0, e0, e1, slow, start_s, gray));
    }

    // lane B, north = 4.5: fast eastbound, staggered in time
    let fast = rng.random_range(35.0..50.0);
    for k in 0..fast_lane {
        let t0 = start_s + k as f64 * 1.5 + rng.random_range(0.0..0.5);
        let gray = rng.random_range(170..=250u8);
        spec.vehicles.push(road.car(4.5, -reach + 2.0, reach, fast, t0, gray));
    }

    // lane C, north = -4.5: slow westbound, spaced along the lane
    let west_spacing = 20.0;
    let room = 2.0 * reach - west_lane.saturating_sub(1) as f64 * west_spacing;
    let west = rng.random_range(8.0..18.0f64).min(room / drive * MPS_TO_MPH);
    for k in 0..west_lane {
        let e0 = reach - k as f64 * west_spacing;
        let gray = rng.random_range(170..=250u8);
        spec.vehicles.push(road.car(-4.5, e0, e0 - to_mps(west) * drive, west, start_s, gray));
    }
    QueueScene { spec, eoq_vehicle: 0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geoloc::{haversine, pixel_to_ground, Projection};

    fn small_scene() -> SceneSpec {
        let road = RoadLayout {
            width: 160,
            height: 96,
            camera_height_m: 15.0,
            ..RoadLayout::default()
        };
        let mut spec = road.base_spec(2.0);
        spec.vehicles.push(road.car(0.0, -8.0, 8.0, 20.0, 0.0, 230));
        spec
    }

    #[test]
    fn empty_scene_is_static_texture() {
        let mut spec = small_scene();
        spec.vehicles.clear();
        spec.background.noise_sigma = 0.0;
        let r = SceneRenderer::new(&spec, 3).unwrap();
        assert_eq!(r.render_frame(0).pixels(), r.render_frame(40).pixels());
        assert!(r.truth(5).is_empty());
    }

    #[test]
    fn constant_speed_truth() {
        let spec = single_vehicle_scene(25.0, 4.0);
        let r = SceneRenderer::new(&spec, 1).unwrap();
        let truths: Vec<_> = (0..r.frame_count()).flat_map(|f| r.truth(f)).collect();
        assert!(truths.len() > 50);
        assert!(truths.iter().all(|t| (t.speed_mph - 25.0).abs() < 1e-9));
        // displacement between consecutive frames matches the speed
        let d = haversine((truths[0].lat, truths[0].lon), (truths[1].lat, truths[1].lon));
        assert!((d * 24.0 * MPS_TO_MPH - 25.0).abs() < 1e-3);
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = small_scene();
        let a = SceneRenderer::new(&spec, 9).unwrap();
        let b = SceneRenderer::new(&spec, 9).unwrap();
        let c = SceneRenderer::new(&spec, 10).unwrap();
        assert_eq!(a.write_video(Vec::new()).unwrap(), b.write_video(Vec::new()).unwrap());
        assert_eq!(a.telemetry_text(), b.telemetry_text());
        assert_ne!(a.render_frame(3).pixels(), c.render_frame(3).pixels());
    }

    #[test]
    fn painted_centroid_matches_truth() {
        let mut spec = small_scene();
        spec.background.noise_sigma = 0.0;
        spec.background.texture = 0.0;
        let r = SceneRenderer::new(&spec, 0).unwrap();
        for f in [0, 10, 30] {
            let frame = r.render_frame(f);
            let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
            for y in 0..frame.height() {
                for x in 0..frame.width() {
                    if frame.get(x, y) == 230 {
                        sx += x as f64;
                        sy += y as f64;
                        n += 1.0;
                    }
                }
            }
            let t = r.truth(f)[0];
            assert!(n > 100.0);
            assert!((sx / n - t.x).abs() <= 0.5 && (sy / n - t.y).abs() <= 0.5, "{} {} vs {:?}", sx / n, sy / n, t);
        }
    }

    #[test]
    fn truth_pixel_geolocates_to_truth_gps() {
        let mut spec = small_scene();
        spec.camera.pitch_deg = -70.0;
        spec.camera.heading_deg = 33.0;
        spec.camera.height_m = 80.0;
        let r = SceneRenderer::new(&spec, 0).unwrap();
        let snap = spec.snapshot();
        for t in r.truth(12) {
            let g = pixel_to_ground((t.x + 0.5, t.y + 0.5), r.camera(), &snap, Projection::Pinhole).unwrap();
            assert!((g.lat - t.lat).abs() < 1e-6 && (g.lon - t.lon).abs() < 1e-6);
        }
    }

    #[test]
    fn footprint_violation() {
        let road = RoadLayout::default();
        let mut spec = road.base_spec(5.0);
        spec.vehicles.push(road.car(0.0, 0.0, 200.0, 60.0, 0.0, 200));
        assert!(matches!(SceneRenderer::new(&spec, 0), Err(SynthError::FootprintViolation { vehicle: 0, .. })));
    }

    #[test]
    fn telemetry_has_time_stamps_and_respects_rates() {
        let mut spec = small_scene();
        spec.telemetry.alt = 0.0;
        spec.telemetry.lat = 2.0;
        let text = SceneRenderer::new(&spec, 0).unwrap().telemetry_text();
        assert!(text.starts_with("TIM 0.000000\n"));
        assert!(!text.contains("ALT"));
        assert_eq!(text.lines().filter(|l| l.starts_with("LAT")).count(), 5);
        assert_eq!(text.lines().filter(|l| l.starts_with("LON")).count(), 21);
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = queue_scene(4, 6, 10.0).spec;
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(SceneSpec::from_json(&text).unwrap(), spec);
        let minimal = r#"{"width":64,"height":48,"duration_s":1,"camera":{"height_m":30,"lat":1,"lon":2}}"#;
        let s = SceneSpec::from_json(minimal).unwrap();
        assert_eq!((s.fps, s.camera.pitch_deg, s.background.noise_sigma), (24, -90.0, 2.0));
        assert!(SceneSpec::from_json(r#"{"width":64,"bogus":1}"#).is_err());
    }

    #[test]
    fn queue_scenes_are_valid() {
        for seed in 0..40 {
            for n in 3..=8 {
                let q = queue_scene(seed, n, 10.0);
                assert_eq!(q.spec.vehicles.len(), n);
                SceneRenderer::new(&q.spec, seed).unwrap();
            }
        }
    }
}
