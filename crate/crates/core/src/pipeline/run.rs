//! Threaded orchestration: frame reader, telemetry ingest, vision loop and
//! output writer.

use std::io::{BufRead, Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, TryRecvError};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::queue::{FrameQueue, Overflow, FRAME_QUEUE_CAPACITY};
use super::report::FrameReport;
use super::shared::SharedState;
use super::vision::Vision;
use crate::bgsub::{BgsubError, ForegroundMask};
use crate::eoq::EoqRecord;
use crate::frame_io::{Fps, Frame, FrameIoError, FrameReader, FrameWriter, StreamHeader};
use crate::telemetry::{LineDecoder, TimedUpdate};
use crate::tracking::Track;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Frame(#[from] FrameIoError),
    #[error(transparent)]
    Vision(#[from] BgsubError),
    #[error("output: {0}")]
    Output(#[from] std::io::Error),
    #[error("{0} thread panicked")]
    Panicked(&'static str),
}

/// How sources are paced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceMode {
    /// Files: every frame is processed, telemetry is aligned on its own clock.
    #[default]
    Replay,
    /// Live feeds: stale frames are dropped, telemetry is used as it arrives.
    Live,
}

pub struct Sources {
    pub video: Box<dyn Read + Send>,
    pub telemetry: Option<Box<dyn BufRead + Send>>,
    pub mode: SourceMode,
    pub fps_override: Option<Fps>,
}

#[derive(Default)]
pub struct Sinks {
    pub eoq: Option<Box<dyn Write + Send>>,
    pub report: Option<Box<dyn Write + Send>>,
    pub masks: Option<Box<dyn Write + Send>>,
    pub tracks: Option<Box<dyn Write + Send>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub frames: u64,
    pub eoq_records: u64,
    pub stale_frames: u64,
    pub dropped_frames: u64,
    pub tracks_spawned: u64,
    pub telemetry_accepted: u64,
    pub telemetry_rejected: u64,
    pub mean_frame_ms: f64,
    pub max_frame_ms: f64,
    /// Set when the video ended in the middle of a frame.
    pub truncated: bool,
}

enum Output {
    Eoq(EoqRecord),
    Report(Box<FrameReport>),
    Mask(ForegroundMask),
    Tracks(Vec<Track>),
}

#[derive(Default)]
struct TelemetryCounters {
    accepted: AtomicU64,
    rejected: AtomicU64,
}

/// Processes the video until it is exhausted. The vision loop runs on the
/// calling thread and reads `shared`'s config once per frame.
pub fn run(sources: Sources, shared: Arc<SharedState>, sinks: Sinks) -> Result<RunSummary, PipelineError> {
    let reader = FrameReader::open(sources.video)?.with_fps_override(sources.fps_override);
    let header = *reader.header();
    let fps = reader.fps();
    let mode = sources.mode;
    let overflow = match mode {
        SourceMode::Replay => Overflow::Block,
        SourceMode::Live => Overflow::DropOldest,
    };
    let queue = Arc::new(FrameQueue::new(FRAME_QUEUE_CAPACITY, overflow));
    let reader_handle = spawn_reader(reader, queue.clone());

    let counters = Arc::new(TelemetryCounters::default());
    let telemetry_rx = sources.telemetry.map(|input| spawn_telemetry(input, mode, counters.clone()));

    let (out_tx, out_rx) = mpsc::sync_channel::<Output>(64);
    let writer_handle = spawn_writer(out_rx, sinks, header);

    let result = vision_loop(&queue, telemetry_rx, &out_tx, &shared, fps.as_f64(), mode);
    queue.close();
    drop(out_tx);
    shared.finish();

    let truncated = reader_handle.join().map_err(|_| PipelineError::Panicked("reader"))??;
    writer_handle.join().map_err(|_| PipelineError::Panicked("writer"))??;
    let mut summary = result?;
    summary.truncated = truncated;
    summary.dropped_frames = queue.dropped();
    summary.telemetry_accepted = counters.accepted.load(Ordering::Acquire);
    summary.telemetry_rejected = counters.rejected.load(Ordering::Acquire);
    Ok(summary)
}

fn spawn_reader<R: Read + Send + 'static>(
    mut reader: FrameReader<R>,
    queue: Arc<FrameQueue<(u64, Frame)>>,
) -> thread::JoinHandle<Result<bool, PipelineError>> {
    thread::Builder::new()
        .name("frame-reader".into())
        .spawn(move || {
            let result = loop {
                let index = reader.next_index();
                match reader.read_frame() {
                    Ok(Some(frame)) => {
                        if !queue.push((index, frame)) {
                            break Ok(false);
                        }
                    }
                    Ok(None) => break Ok(false),
                    Err(FrameIoError::TruncatedFrame { index, got, expected }) => {
                        tracing::warn!(index, got, expected, "video ends inside a frame");
                        break Ok(true);
                    }
                    Err(e) => break Err(e.into()),
                }
            };
            queue.close();
            result
        })
        .expect("spawn reader thread")
}

/// The telemetry thread is detached: a live feed may never end.
fn spawn_telemetry(
    mut input: Box<dyn BufRead + Send>,
    mode: SourceMode,
    counters: Arc<TelemetryCounters>,
) -> Receiver<TimedUpdate> {
    let (tx, rx) = mpsc::channel();
    let started = Instant::now();
    thread::Builder::new()
        .name("telemetry".into())
        .spawn(move || {
            let mut decoder = LineDecoder::new();
            let mut line = Vec::new();
            loop {
                line.clear();
                match input.read_until(b'\n', &mut line) {
                    Ok(0) => break,
                    Ok(_) => {}
                    Err(e) => {
                        tracing::warn!(error = %e, "telemetry read failed");
                        break;
                    }
                }
                let arrival = match mode {
                    SourceMode::Replay => 0.0,
                    SourceMode::Live => started.elapsed().as_secs_f64(),
                };
                let update = decoder.decode(&line, arrival);
                counters.accepted.store(decoder.accepted, Ordering::Release);
                counters.rejected.store(decoder.rejected.total(), Ordering::Release);
                if let Some(u) = update {
                    if tx.send(u).is_err() {
                        break;
                    }
                }
            }
        })
        .expect("spawn telemetry thread");
    rx
}

fn spawn_writer(rx: Receiver<Output>, mut sinks: Sinks, header: StreamHeader) -> thread::JoinHandle<Result<(), PipelineError>> {
    thread::Builder::new()
        .name("output".into())
        .spawn(move || {
            let mut masks = match sinks.masks.take() {
                Some(w) => Some(FrameWriter::new(w, header)?),
                None => None,
            };
            for msg in rx {
                match msg {
                    Output::Eoq(r) => {
                        if let Some(w) = sinks.eoq.as_mut() {
                            serde_json::to_writer(&mut *w, &r).map_err(std::io::Error::from)?;
                            w.write_all(b"\n")?;
                            w.flush()?;
                        }
                    }
                    Output::Report(r) => {
                        if let Some(w) = sinks.report.as_mut() {
                            serde_json::to_writer(&mut *w, &r).map_err(std::io::Error::from)?;
                            w.write_all(b"\n")?;
                        }
                    }
                    Output::Mask(m) => {
                        if let Some(w) = masks.as_mut() {
                            w.write_pixels(m.width(), m.height(), m.labels())?;
                        }
                    }
                    Output::Tracks(ts) => {
                        if let Some(w) = sinks.tracks.as_mut() {
                            for t in ts {
                                serde_json::to_writer(&mut *w, &t).map_err(std::io::Error::from)?;
                                w.write_all(b"\n")?;
                            }
                        }
                    }
                }
            }
            if let Some(mut w) = masks {
                w.flush()?;
            }
            for w in [sinks.eoq.as_mut(), sinks.report.as_mut(), sinks.tracks.as_mut()].into_iter().flatten() {
                w.flush()?;
            }
            Ok(())
        })
        .expect("spawn output thread")
}

/// Pulls telemetry stamped at or before `t`, holding back the first later update.
struct TelemetryFeed {
    rx: Option<Receiver<TimedUpdate>>,
    pending: Option<TimedUpdate>,
}

impl TelemetryFeed {
    fn drain_until(&mut self, t: f64, mode: SourceMode, vision: &mut Vision) {
        if let Some(u) = self.pending.take() {
            if u.time <= t || mode == SourceMode::Live {
                vision.ingest(u);
            } else {
                self.pending = Some(u);
                return;
            }
        }
        let Some(rx) = &self.rx else { return };
        loop {
            let next = match mode {
                SourceMode::Replay => rx.recv().ok(),
                SourceMode::Live => match rx.try_recv() {
                    Ok(u) => Some(u),
                    Err(TryRecvError::Empty) => return,
                    Err(TryRecvError::Disconnected) => None,
                },
            };
            match next {
                Some(u) if mode == SourceMode::Live || u.time <= t => vision.ingest(u),
                Some(u) => {
                    self.pending = Some(u);
                    return;
                }
                None => {
                    self.rx = None;
                    return;
                }
            }
        }
    }
}

fn vision_loop(
    queue: &FrameQueue<(u64, Frame)>,
    telemetry: Option<Receiver<TimedUpdate>>,
    out: &mpsc::SyncSender<Output>,
    shared: &SharedState,
    fps: f64,
    mode: SourceMode,
) -> Result<RunSummary, PipelineError> {
    let mut vision = Vision::new(fps);
    let mut feed = TelemetryFeed {
        rx: telemetry,
        pending: None,
    };
    let mut summary = RunSummary::default();
    let mut total_ms = 0.0;
    // the writer only fails on I/O errors, which surface when it is joined
    let send = |msg| {
        let _ = out.send(msg);
    };
    while let Some((index, frame)) = queue.pop() {
        let config = shared.config();
        feed.drain_until(frame.timestamp(), mode, &mut vision);
        let output = vision.process(&frame, index, &config)?;
        let mut report = output.report;
        report.dropped_frames = queue.dropped();
        summary.frames += 1;
        total_ms += report.total_ms;
        summary.max_frame_ms = summary.max_frame_ms.max(report.total_ms);
        if let Some(r) = report.eoq {
            send(Output::Eoq(r));
        }
        if !output.retired.is_empty() {
            send(Output::Tracks(output.retired));
        }
        send(Output::Mask(output.mask));
        send(Output::Report(Box::new(report.clone())));
        shared.publish(report, frame);
    }
    let remaining = vision.finish();
    if !remaining.is_empty() {
        send(Output::Tracks(remaining));
    }
    summary.eoq_records = vision.records();
    summary.stale_frames = vision.stale_frames();
    summary.tracks_spawned = vision.tracker().spawned_total();
    summary.mean_frame_ms = if summary.frames > 0 { total_ms / summary.frames as f64 } else { 0.0 };
    Ok(summary)
}
