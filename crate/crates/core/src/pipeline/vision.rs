//! The per-frame vision loop, free of threads and I/O.

use std::sync::Arc;
use std::time::Instant;

use crate::bgsub::{dilate, gaussian_blur, BgsubError, ForegroundMask, MogModel, MogParams, Parallelism};
use crate::blobs::{detect_blobs, DEFAULT_BLOB_CAP};
use crate::eoq::{make_record, queue_members, select_eoq, EoqRecord, EoqSelector};
use crate::frame_io::Frame;
use crate::geoloc::{track_speed, GeolocError, Georeferencer};
use crate::telemetry::{TelemetryStore, TimedUpdate};
use crate::tracking::{classify_track, GeoPos, Track, TrackState, Tracker, TrackerConfig};

use super::config::PipelineConfig;
use super::report::{speed_label, BoxColor, FrameReport, Overlay, StageTimes, TelemetryStatus};

/// Smoothing factor for track speeds.
pub const SPEED_EMA: f64 = 0.3;

/// Everything one frame produced.
#[derive(Debug)]
pub struct FrameOutput {
    pub report: FrameReport,
    pub mask: ForegroundMask,
    pub retired: Vec<Track>,
}

#[derive(Debug)]
pub struct Vision {
    fps: f64,
    mog_params: MogParams,
    mog: Option<MogModel>,
    tracker: Tracker,
    telemetry: TelemetryStore,
    selector: EoqSelector,
    hysteresis: u32,
    stale_frames: u64,
    records: u64,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

impl Vision {
    pub fn new(fps: f64) -> Self {
        Self::with_params(fps, MogParams::default(), TrackerConfig::default())
    }

    pub fn with_params(fps: f64, mog_params: MogParams, tracker: TrackerConfig) -> Self {
        Self {
            fps,
            mog_params,
            mog: None,
            tracker: Tracker::new(tracker),
            telemetry: TelemetryStore::new(),
            selector: EoqSelector::new(1),
            hysteresis: 0,
            stale_frames: 0,
            records: 0,
        }
    }

    pub fn ingest(&mut self, update: TimedUpdate) {
        self.telemetry.ingest(update);
    }

    pub fn telemetry(&self) -> &TelemetryStore {
        &self.telemetry
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    pub fn stale_frames(&self) -> u64 {
        self.stale_frames
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    /// Runs every stage on `frame` under one config snapshot.
    pub fn process(&mut self, frame: &Frame, index: u64, config: &Arc<PipelineConfig>) -> Result<FrameOutput, BgsubError> {
        let start = Instant::now();
        let mut times = StageTimes::default();
        let t = frame.timestamp();
        if self.hysteresis != config.hysteresis {
            // the debounce window changed, restart it
            self.selector = EoqSelector::new(config.hysteresis);
            self.hysteresis = config.hysteresis;
        }

        let s = Instant::now();
        let blurred = gaussian_blur(frame, config.blur)?;
        times.blur = ms(s);

        let s = Instant::now();
        let mog = match &mut self.mog {
            Some(m) => m,
            None => self.mog.insert(MogModel::from_first_frame(&blurred, self.mog_params)?),
        };
        let raw = mog.apply(&blurred, Parallelism::Rows)?;
        times.mog = ms(s);

        let s = Instant::now();
        let mask = dilate(&raw, config.dilation)?;
        times.dilate = ms(s);

        let s = Instant::now();
        let detection = detect_blobs(&mask, config.min_blob_area, config.max_blob_area, DEFAULT_BLOB_CAP);
        times.blobs = ms(s);

        let s = Instant::now();
        let step = self.tracker.step(&detection.blobs, &mask, index);
        times.tracking = ms(s);

        let s = Instant::now();
        let georef = Georeferencer::new(
            frame.width(),
            frame.height(),
            config.fov_h_deg,
            self.telemetry.snapshot_at(t, config.max_staleness_s),
            config.projection,
        );
        let telemetry_status = match &georef {
            Ok(_) => TelemetryStatus::Ok,
            Err(GeolocError::IncompleteTelemetry(e)) => e.into(),
            Err(e) => {
                tracing::warn!(frame = index, error = %e, "camera geometry unusable");
                TelemetryStatus::Incomplete { missing: Vec::new() }
            }
        };
        let tracker_cfg = *self.tracker.config();
        for track in self.tracker.tracks_mut() {
            if track.last().frame != index {
                continue;
            }
            let speed = match &georef {
                Ok(g) => {
                    let (x, y) = track.centroid();
                    match g.locate_index(x, y) {
                        Ok(p) => {
                            track.set_latest_geo(GeoPos { lat: p.lat, lon: p.lon });
                            track_speed(track, config.speed_window, self.fps, config.speed_cal, SPEED_EMA).ok()
                        }
                        Err(_) => None,
                    }
                }
                Err(_) => None,
            };
            classify_track(track, speed, &tracker_cfg);
        }
        times.geoloc = ms(s);

        let s = Instant::now();
        let queue = config.queue();
        let tracks = self.tracker.tracks();
        let members = if georef.is_ok() { queue_members(tracks, &queue) } else { Vec::new() };
        let raw_eoq = select_eoq(tracks.iter().filter(|t| members.contains(&t.id)), queue.direction).map(|t| t.id);
        let published = self.selector.update(raw_eoq, &members);
        let warmup = index < config.warmup;
        let record: Option<EoqRecord> = match published {
            Some(id) if !warmup => tracks
                .iter()
                .find(|tr| tr.id == id)
                .and_then(|tr| make_record(tr, index, t)),
            _ => None,
        };
        if record.is_some() {
            self.records += 1;
        }
        if !telemetry_status.is_ok() {
            self.stale_frames += 1;
        }
        let overlays = overlays(tracks, record.as_ref().map(|r| r.track));
        times.eoq = ms(s);

        let report = FrameReport {
            frame: index,
            t,
            config_version: config.version,
            stages_ms: times,
            total_ms: ms(start).max(times.sum()),
            blob_count: detection.blobs.len(),
            blobs_dropped: detection.dropped,
            track_count: tracks.len(),
            eoq: record,
            overlays,
            telemetry: telemetry_status,
            warmup,
            dropped_frames: 0,
        };
        Ok(FrameOutput {
            report,
            mask,
            retired: step.retired,
        })
    }

    /// Retires the remaining tracks at end of stream.
    pub fn finish(&mut self) -> Vec<Track> {
        self.tracker.drain()
    }
}

fn overlays(tracks: &[Track], eoq: Option<u64>) -> Vec<Overlay> {
    tracks
        .iter()
        .filter(|t| t.state != TrackState::Noise)
        .map(|t| {
            let (color, label) = match t.state {
                _ if Some(t.id) == eoq => (BoxColor::Red, t.speed_mph.map(speed_label)),
                TrackState::Vehicle => (BoxColor::Green, t.speed_mph.map(speed_label)),
                _ => (BoxColor::Blue, None),
            };
            Overlay {
                track: t.id,
                bbox: t.bbox(),
                state: t.state,
                color,
                speed_mph: t.speed_mph,
                label,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::{Field, TimedUpdate};

    fn feed_all(v: &mut Vision) {
        for (field, value) in [
            (Field::Lat, 36.0),
            (Field::Lon, -97.0),
            (Field::Alt, 60.0),
            (Field::Hdg, 0.0),
            (Field::Pit, -90.0),
            (Field::Yaw, 0.0),
        ] {
            v.ingest(TimedUpdate { field, value, time: 0.0 });
        }
    }

    #[test]
    fn static_scene_has_no_blobs() {
        let mut v = Vision::new(24.0);
        feed_all(&mut v);
        let cfg = Arc::new(PipelineConfig::default());
        let f = Frame::filled(64, 48, 0.0, 90).unwrap();
        for i in 0..5 {
            let out = v.process(&f, i, &cfg).unwrap();
            assert_eq!(out.report.blob_count, 0);
            assert!(out.report.telemetry.is_ok());
            assert!(out.report.stages_ms.sum() <= out.report.total_ms);
        }
    }

    #[test]
    fn missing_telemetry_counts_stale_frames() {
        let mut v = Vision::new(24.0);
        let cfg = Arc::new(PipelineConfig::default());
        let f = Frame::filled(64, 48, 0.0, 90).unwrap();
        let out = v.process(&f, 0, &cfg).unwrap();
        assert!(matches!(out.report.telemetry, TelemetryStatus::Incomplete { .. }));
        assert_eq!(v.stale_frames(), 1);
    }

    #[test]
    fn overlay_colours() {
        use crate::blobs::BBox;
        use std::collections::VecDeque;
        let mk = |id, state, speed| Track {
            id,
            history: VecDeque::from([crate::tracking::TrackPoint {
                frame: 0,
                centroid: (1.0, 1.0),
                bbox: BBox { x_min: 0, y_min: 0, x_max: 2, y_max: 2 },
                geo: None,
            }]),
            age: 9,
            misses: 0,
            state,
            velocity_px: (0.0, 0.0),
            speed_mph: speed,
            implausible_streak: 0,
        };
        let ts = [
            mk(1, TrackState::Candidate, None),
            mk(2, TrackState::Vehicle, Some(23.44)),
            mk(3, TrackState::Vehicle, Some(10.0)),
            mk(4, TrackState::Noise, None),
        ];
        let o = overlays(&ts, Some(3));
        assert_eq!(o.len(), 3);
        assert_eq!((o[0].color, o[0].label.as_deref()), (BoxColor::Blue, None));
        assert_eq!((o[1].color, o[1].label.as_deref()), (BoxColor::Green, Some("23.4 mph")));
        assert_eq!(o[2].color, BoxColor::Red);
    }
}
