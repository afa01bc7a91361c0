//! State shared between the vision loop and its observers.
//!
//! Every cell has exactly one writer and is replaced wholesale, so readers
//! always see a complete snapshot.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use super::config::{apply_config, ConfigPatch, PipelineConfig, ValidationError};
use super::report::FrameReport;
use crate::eoq::EoqRecord;
use crate::frame_io::Frame;

/// A value replaced atomically and read as an `Arc` snapshot.
#[derive(Debug)]
pub struct Latest<T> {
    slot: RwLock<Arc<T>>,
}

impl<T> Latest<T> {
    pub fn new(value: T) -> Self {
        Self {
            slot: RwLock::new(Arc::new(value)),
        }
    }

    pub fn get(&self) -> Arc<T> {
        self.slot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn set(&self, value: T) {
        *self.slot.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(value);
    }
}

#[derive(Debug)]
pub struct SharedState {
    config: Latest<PipelineConfig>,
    patch_lock: Mutex<()>,
    report: Latest<Option<FrameReport>>,
    frame: Latest<Option<Frame>>,
    eoq: Latest<Option<EoqRecord>>,
    seq: AtomicU64,
    finished: AtomicBool,
}

impl SharedState {
    pub fn new(config: PipelineConfig) -> Result<Arc<Self>, ValidationError> {
        config.validate()?;
        Ok(Arc::new(Self {
            config: Latest::new(config),
            patch_lock: Mutex::new(()),
            report: Latest::new(None),
            frame: Latest::new(None),
            eoq: Latest::new(None),
            seq: AtomicU64::new(0),
            finished: AtomicBool::new(false),
        }))
    }

    pub fn config(&self) -> Arc<PipelineConfig> {
        self.config.get()
    }

    /// Validates and installs a patch; concurrent callers are serialised so
    /// versions stay consecutive.
    pub fn apply_patch(&self, patch: &ConfigPatch) -> Result<Arc<PipelineConfig>, ValidationError> {
        let _guard = self.patch_lock.lock().unwrap_or_else(|e| e.into_inner());
        let next = apply_config(&self.config.get(), patch)?;
        self.config.set(next);
        Ok(self.config.get())
    }

    pub fn report(&self) -> Arc<Option<FrameReport>> {
        self.report.get()
    }

    pub fn frame(&self) -> Arc<Option<Frame>> {
        self.frame.get()
    }

    pub fn eoq(&self) -> Arc<Option<EoqRecord>> {
        self.eoq.get()
    }

    /// Number of reports published so far; observers poll it for changes.
    pub fn sequence(&self) -> u64 {
        self.seq.load(Ordering::Acquire)
    }

    pub fn is_finished(&self) -> bool {
        self.finished.load(Ordering::Acquire)
    }

    pub(crate) fn publish(&self, report: FrameReport, frame: Frame) {
        if let Some(r) = report.eoq {
            self.eoq.set(Some(r));
        }
        self.frame.set(Some(frame));
        self.report.set(Some(report));
        self.seq.fetch_add(1, Ordering::AcqRel);
    }

    pub(crate) fn finish(&self) {
        self.finished.store(true, Ordering::Release);
    }
}
