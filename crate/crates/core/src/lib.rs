//! End-of-Queue detection for stationary aerial traffic video.
//!
//! Frames flow through Gaussian blur, a mixture-of-Gaussians background
//! model, dilation, blob labelling and mean-shift tracking. Tracks are
//! georeferenced from UAV telemetry, classified as vehicles, and the most
//! upstream slow vehicle is reported as the End-of-Queue.

pub mod bgsub;
pub mod blobs;
pub mod eoq;
pub mod frame_io;
pub mod geoloc;
pub mod pipeline;
pub mod synth;
pub mod telemetry;
pub mod tracking;
