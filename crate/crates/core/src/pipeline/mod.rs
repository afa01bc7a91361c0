//! Orchestration of the vision loop, its configuration and shared state.

mod config;
mod queue;
mod report;
mod run;
mod shared;
mod vision;

pub use config::{apply_config, ConfigPatch, FieldError, PipelineConfig, ValidationError, DEFAULT_WARMUP};
pub use queue::{FrameQueue, Overflow, FRAME_QUEUE_CAPACITY};
pub use report::{speed_label, BoxColor, FrameReport, Overlay, StageTimes, TelemetryStatus};
pub use run::{run, PipelineError, RunSummary, Sinks, SourceMode, Sources};
pub use shared::{Latest, SharedState};
pub use vision::{FrameOutput, Vision, SPEED_EMA};
