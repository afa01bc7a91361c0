//! Per-object trackers.
//!
//! Every frame each live track predicts its next position from its pixel
//! velocity, refines the prediction with mean-shift over the foreground mask,
//! and is then greedily paired with the nearest unclaimed blob inside its gate.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bgsub::ForegroundMask;
use crate::blobs::{BBox, Blob};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackState {
    Candidate,
    Vehicle,
    Noise,
    Retired,
}

/// Horizontal direction of travel in image space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heading {
    LeftToRight,
    RightToLeft,
    Still,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPos {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame: u64,
    pub centroid: (f64, f64),
    pub bbox: BBox,
    pub geo: Option<GeoPos>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: u64,
    pub history: VecDeque<TrackPoint>,
    /// Frames in which the track was matched to a blob.
    pub age: u32,
    /// Consecutive unmatched frames.
    pub misses: u32,
    pub state: TrackState,
    pub velocity_px: (f64, f64),
    pub speed_mph: Option<f64>,
    /// Consecutive classifications with an implausible speed.
    pub implausible_streak: u32,
}

impl Track {
    fn spawn(id: u64, blob: &Blob, frame: u64) -> Self {
        let mut history = VecDeque::new();
        history.push_back(TrackPoint {
            frame,
            centroid: blob.centroid,
            bbox: blob.bbox,
            geo: None,
        });
        Self {
            id,
            history,
            age: 1,
            misses: 0,
            state: TrackState::Candidate,
            velocity_px: (0.0, 0.0),
            speed_mph: None,
            implausible_streak: 0,
        }
    }

    pub fn last(&self) -> &TrackPoint {
        self.history.back().expect("tracks always have history")
    }

    pub fn centroid(&self) -> (f64, f64) {
        self.last().centroid
    }

    pub fn bbox(&self) -> BBox {
        self.last().bbox
    }

    pub fn is_live(&self) -> bool {
        self.state != TrackState::Retired
    }

    /// Attaches a geographic position to the newest history point.
    pub fn set_latest_geo(&mut self, geo: GeoPos) {
        if let Some(p) = self.history.back_mut() {
            p.geo = Some(geo);
        }
    }

    /// Horizontal displacements between consecutive history points,
    /// newest last, at most `n` of them.
    pub fn recent_dx(&self, n: usize) -> Vec<f64> {
        let pts: Vec<_> = self.history.iter().rev().take(n + 1).collect();
        pts.windows(2).rev().map(|w| w[0].centroid.0 - w[1].centroid.0).collect()
    }

    /// Sign of the mean recent horizontal displacement.
    pub fn heading(&self, window: usize) -> Heading {
        let dx = self.recent_dx(window);
        let mean = dx.iter().sum::<f64>() / dx.len().max(1) as f64;
        if mean > 0.0 {
            Heading::LeftToRight
        } else if mean < 0.0 {
            Heading::RightToLeft
        } else {
            Heading::Still
        }
    }

    /// True when at least `agreement` of the last `window` displacements
    /// share one sign.
    pub fn direction_stable(&self, window: usize, agreement: f64) -> bool {
        let dx = self.recent_dx(window);
        if dx.is_empty() {
            return false;
        }
        let pos = dx.iter().filter(|&&d| d > 0.0).count();
        let neg = dx.iter().filter(|&&d| d < 0.0).count();
        pos.max(neg) as f64 >= agreement * dx.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub miss_limit: u32,
    pub velocity_ema: f64,
    pub window_inflation: f64,
    /// Gate radius as a fraction of the track's bbox diagonal.
    pub gate_factor: f64,
    pub mean_shift_iters: u32,
    pub mean_shift_epsilon: f64,
    pub history_cap: usize,
    pub vehicle_min_age: u32,
    pub direction_window: usize,
    pub direction_agreement: f64,
    pub plausible_speed_mph: (f64, f64),
    pub noise_after: u32,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            miss_limit: 5,
            velocity_ema: 0.3,
            window_inflation: 1.5,
            gate_factor: 0.5,
            mean_shift_iters: 10,
            mean_shift_epsilon: 0.5,
            history_cap: 64,
            vehicle_min_age: 8,
            direction_window: 8,
            direction_agreement: 0.75,
            plausible_speed_mph: (2.0, 100.0),
            noise_after: 8,
        }
    }
}

/// Axis-aligned search window in pixel-index coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub cx: f64,
    pub cy: f64,
    pub half_w: f64,
    pub half_h: f64,
}

impl Window {
    pub fn around(bbox: &BBox, center: (f64, f64), inflation: f64) -> Self {
        Self {
            cx: center.0,
            cy: center.1,
            half_w: bbox.width() as f64 * inflation / 2.0,
            half_h: bbox.height() as f64 * inflation / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no foreground inside the mean-shift window")]
pub struct EmptyWindow;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanShift {
    pub centroid: (f64, f64),
    pub iterations: u32,
}

/// Uniform-kernel mean-shift: moves the window to the mean of the foreground
/// pixels it covers until the move is shorter than `epsilon`.
pub fn mean_shift_refine(
    mask: &ForegroundMask,
    window: Window,
    max_iters: u32,
    epsilon: f64,
) -> Result<MeanShift, EmptyWindow> {
    let mut w = window;
    let mut iterations = 0;
    loop {
        let (mx, my) = window_mean(mask, &w).ok_or(EmptyWindow)?;
        iterations += 1;
        let shift = (mx - w.cx).hypot(my - w.cy);
        w.cx = mx;
        w.cy = my;
        if shift < epsilon || iterations >= max_iters.max(1) {
            return Ok(MeanShift {
                centroid: (mx, my),
                iterations,
            });
        }
    }
}

fn window_mean(mask: &ForegroundMask, w: &Window) -> Option<(f64, f64)> {
    let x0 = (w.cx - w.half_w).ceil().max(0.0);
    let x1 = (w.cx + w.half_w).floor().min(mask.width() as f64 - 1.0);
    let y0 = (w.cy - w.half_h).ceil().max(0.0);
    let y1 = (w.cy + w.half_h).floor().min(mask.height() as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return None;
    }
    let (mut sx, mut sy, mut n) = (0u64, 0u64, 0u64);
    for y in y0 as u32..=y1 as u32 {
        for x in x0 as u32..=x1 as u32 {
            if mask.is_foreground(x, y) {
                sx += x as u64;
                sy += y as u64;
                n += 1;
            }
        }
    }
    (n > 0).then(|| (sx as f64 / n as f64, sy as f64 / n as f64))
}

#[derive(Debug, Default)]
pub struct StepOutcome {
    pub matched: usize,
    pub spawned: usize,
    pub retired: Vec<Track>,
}

/// Owns the live track set. Ids are never reused.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Self {
            config,
            tracks: Vec::new(),
            next_id: 1,
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Live tracks in ascending id order.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn tracks_mut(&mut self) -> &mut [Track] {
        &mut self.tracks
    }

    /// Total number of tracks ever spawned.
    pub fn spawned_total(&self) -> u64 {
        self.next_id - 1
    }

    /// Retires every remaining track, e.g. at end of stream.
    pub fn drain(&mut self) -> Vec<Track> {
        let mut out = std::mem::take(&mut self.tracks);
        for t in &mut out {
            t.state = TrackState::Retired;
        }
        out
    }

    /// Advances all tracks by one frame. `blobs` and `mask` must come from
    /// the same frame.
    pub fn step(&mut self, blobs: &[Blob], mask: &ForegroundMask, frame: u64) -> StepOutcome {
        let cfg = self.config;

        // predict + refine
        let predicted: Vec<(f64, f64)> = self
            .tracks
            .iter()
            .map(|t| {
                let (cx, cy) = t.centroid();
                let guess = (cx + t.velocity_px.0, cy + t.velocity_px.1);
                let win = Window::around(&t.bbox(), guess, cfg.window_inflation);
                mean_shift_refine(mask, win, cfg.mean_shift_iters, cfg.mean_shift_epsilon)
                    .map(|m| m.centroid)
                    .unwrap_or(guess)
            })
            .collect();

        // greedy nearest-neighbour association inside the gate
        let mut pairs: Vec<(f64, u64, usize, usize)> = Vec::new();
        for (ti, t) in self.tracks.iter().enumerate() {
            let gate = cfg.gate_factor * t.bbox().diagonal();
            let (px, py) = predicted[ti];
            for (bi, b) in blobs.iter().enumerate() {
                let d = (b.centroid.0 - px).hypot(b.centroid.1 - py);
                if d <= gate {
                    pairs.push((d, t.id, ti, bi));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.3.cmp(&b.3)));
        let mut track_match: Vec<Option<usize>> = vec![None; self.tracks.len()];
        let mut blob_used = vec![false; blobs.len()];
        for (_, _, ti, bi) in pairs {
            if track_match[ti].is_none() && !blob_used[bi] {
                track_match[ti] = Some(bi);
                blob_used[bi] = true;
            }
        }

        let mut outcome = StepOutcome::default();
        for (t, m) in self.tracks.iter_mut().zip(&track_match) {
            match m {
                Some(bi) => {
                    let b = &blobs[*bi];
                    let last = t.last().clone();
                    let gap = (frame.saturating_sub(last.frame)).max(1) as f64;
                    let v = ((b.centroid.0 - last.centroid.0) / gap, (b.centroid.1 - last.centroid.1) / gap);
                    t.velocity_px = if t.age == 1 {
                        v
                    } else {
                        let a = cfg.velocity_ema;
                        (a * v.0 + (1.0 - a) * t.velocity_px.0, a * v.1 + (1.0 - a) * t.velocity_px.1)
                    };
                    t.history.push_back(TrackPoint {
                        frame,
                        centroid: b.centroid,
                        bbox: b.bbox,
                        geo: None,
                    });
                    while t.history.len() > cfg.history_cap {
                        t.history.pop_front();
                    }
                    t.age += 1;
                    t.misses = 0;
                    outcome.matched += 1;
                }
                None => {
                    t.misses += 1;
                    if t.misses > cfg.miss_limit {
                        t.state = TrackState::Retired;
                    }
                }
            }
        }
        let (live, retired): (Vec<_>, Vec<_>) = std::mem::take(&mut self.tracks).into_iter().partition(Track::is_live);
        self.tracks = live;
        outcome.retired = retired;

        for (b, used) in blobs.iter().zip(&blob_used) {
            if !used {
                self.tracks.push(Track::spawn(self.next_id, b, frame));
                self.next_id += 1;
                outcome.spawned += 1;
            }
        }
        outcome
    }
}

/// Updates and returns the track's state given its current speed estimate.
///
/// A track is a vehicle when it has been seen for `vehicle_min_age` frames,
/// its speed is plausible and its direction is stable. A track whose speed is
/// implausible for `noise_after` consecutive calls becomes noise for good.
pub fn classify_track(track: &mut Track, speed_mph: Option<f64>, cfg: &TrackerConfig) -> TrackState {
    if matches!(track.state, TrackState::Noise | TrackState::Retired) {
        return track.state;
    }
    let (lo, hi) = cfg.plausible_speed_mph;
    let plausible = match speed_mph {
        Some(s) if (lo..=hi).contains(&s) => {
            track.implausible_streak = 0;
            true
        }
        Some(_) => {
            track.implausible_streak += 1;
            false
        }
        None => false,
    };
    track.state = if track.implausible_streak >= cfg.noise_after {
        TrackState::Noise
    } else if track.age >= cfg.vehicle_min_age
        && plausible
        && track.direction_stable(cfg.direction_window, cfg.direction_agreement)
    {
        TrackState::Vehicle
    } else {
        TrackState::Candidate
    };
    track.state
}
