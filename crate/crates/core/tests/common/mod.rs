#![allow(dead_code)]

use std::io::{Cursor, Write};
use std::sync::{Arc, Mutex};

use eoq_core::bgsub::{ForegroundMask, FOREGROUND};
use eoq_core::blobs::BBox;
use eoq_core::eoq::EoqRecord;
use eoq_core::pipeline::{run, FrameReport, PipelineConfig, RunSummary, SharedState, Sinks, SourceMode, Sources};
use eoq_core::synth::{SceneRenderer, SceneSpec};

/// A `Write` whose bytes stay readable after the writer is handed away.
#[derive(Clone, Default)]
pub struct SharedBuf(Arc<Mutex<Vec<u8>>>);

impl SharedBuf {
    pub fn bytes(&self) -> Vec<u8> {
        self.0.lock().unwrap().clone()
    }

    pub fn text(&self) -> String {
        String::from_utf8(self.bytes()).unwrap()
    }
}

impl Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

pub struct Rendered {
    pub renderer: SceneRenderer,
    pub video: Vec<u8>,
    pub telemetry: String,
}

pub fn render(spec: &SceneSpec, seed: u64) -> Rendered {
    let renderer = SceneRenderer::new(spec, seed).expect("valid scene");
    let video = renderer.write_video(Vec::new()).expect("render");
    let telemetry = renderer.telemetry_text();
    Rendered {
        renderer,
        video,
        telemetry,
    }
}

pub struct RunOutput {
    pub summary: RunSummary,
    pub eoq: Vec<u8>,
    pub reports: Vec<u8>,
    pub tracks: Vec<u8>,
    pub masks: Vec<u8>,
}

impl RunOutput {
    pub fn records(&self) -> Vec<EoqRecord> {
        lines(&self.eoq)
    }

    pub fn reports(&self) -> Vec<FrameReport> {
        lines(&self.reports)
    }
}

pub fn lines<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Vec<T> {
    std::str::from_utf8(bytes)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

pub fn run_in_memory(video: Vec<u8>, telemetry: String, config: PipelineConfig) -> RunOutput {
    let shared = SharedState::new(config).expect("valid config");
    run_shared(video, telemetry, shared)
}

pub fn run_shared(video: Vec<u8>, telemetry: String, shared: Arc<SharedState>) -> RunOutput {
    let (eoq, reports, tracks, masks) = (SharedBuf::default(), SharedBuf::default(), SharedBuf::default(), SharedBuf::default());
    let sources = Sources {
        video: Box::new(Cursor::new(video)),
        telemetry: Some(Box::new(Cursor::new(telemetry.into_bytes()))),
        mode: SourceMode::Replay,
        fps_override: None,
    };
    let sinks = Sinks {
        eoq: Some(Box::new(eoq.clone())),
        report: Some(Box::new(reports.clone())),
        masks: Some(Box::new(masks.clone())),
        tracks: Some(Box::new(tracks.clone())),
    };
    let summary = run(sources, shared, sinks).expect("pipeline run");
    RunOutput {
        summary,
        eoq: eoq.bytes(),
        reports: reports.bytes(),
        tracks: tracks.bytes(),
        masks: masks.bytes(),
    }
}

/// Reference labelling: breadth-first flood fill over 8-neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct RefBlob {
    pub bbox: BBox,
    pub centroid: (f64, f64),
    pub area: u64,
    pub first: usize,
}

pub fn flood_fill_blobs(mask: &ForegroundMask) -> Vec<RefBlob> {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let labels = mask.labels();
    let mut seen = vec![false; labels.len()];
    let mut out = Vec::new();
    for start in 0..labels.len() {
        if seen[start] || labels[start] != FOREGROUND {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let (mut sx, mut sy, mut n) = (0u64, 0u64, 0u64);
        let mut bbox = BBox {
            x_min: u32::MAX,
            y_min: u32::MAX,
            x_max: 0,
            y_max: 0,
        };
        while let Some(i) = stack.pop() {
            let (x, y) = (i as i64 % w, i as i64 / w);
            sx += x as u64;
            sy += y as u64;
            n += 1;
            bbox.x_min = bbox.x_min.min(x as u32);
            bbox.x_max = bbox.x_max.max(x as u32);
            bbox.y_min = bbox.y_min.min(y as u32);
            bbox.y_max = bbox.y_max.max(y as u32);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let j = (ny * w + nx) as usize;
                    if !seen[j] && labels[j] == FOREGROUND {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push(RefBlob {
            bbox,
            centroid: (sx as f64 / n as f64, sy as f64 / n as f64),
            area: n,
            first: start,
        });
    }
    out
}
