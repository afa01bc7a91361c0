//! Foreground segmentation: Gaussian blur, per-pixel mixture-of-Gaussians
//! background model with shadow labelling, and disk dilation.

mod blur;
mod mog;
mod morph;

pub use blur::{gaussian_blur, gaussian_kernel, MAX_BLUR, MIN_BLUR};
pub use mog::{Component, MogModel, MogParams, Parallelism};
pub use morph::{dilate, disk_offsets, MAX_DILATION, MIN_DILATION};

use thiserror::Error;

use crate::frame_io::{Frame, FrameIoError};

pub const BACKGROUND: u8 = 0;
pub const SHADOW: u8 = 127;
pub const FOREGROUND: u8 = 255;

#[derive(Debug, Error, PartialEq)]
pub enum BgsubError {
    #[error("diameter {diameter} must be odd and in [{min}, {max}]")]
    InvalidDiameter { diameter: u32, min: u32, max: u32 },
    #[error("frame is {got:?}, model is {expected:?}")]
    DimensionMismatch { got: (u32, u32), expected: (u32, u32) },
    #[error("invalid model parameter: {0}")]
    InvalidParams(String),
}

pub(crate) fn check_odd(diameter: u32, min: u32, max: u32) -> Result<(), BgsubError> {
    if diameter % 2 == 1 && (min..=max).contains(&diameter) {
        Ok(())
    } else {
        Err(BgsubError::InvalidDiameter { diameter, min, max })
    }
}

/// Per-pixel labels: [`BACKGROUND`], [`SHADOW`] or [`FOREGROUND`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    width: u32,
    height: u32,
    labels: Vec<u8>,
}

impl ForegroundMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            labels: vec![BACKGROUND; width as usize * height as usize],
        }
    }

    /// Panics if `labels` has the wrong length.
    pub fn from_labels(width: u32, height: u32, labels: Vec<u8>) -> Self {
        assert_eq!(labels.len(), width as usize * height as usize);
        Self { width, height, labels }
    }

    /// Builds a mask with the given pixels set to foreground.
    pub fn from_points(width: u32, height: u32, points: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut m = Self::new(width, height);
        for (x, y) in points {
            m.set(x, y, FOREGROUND);
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub(crate) fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, label: u8) {
        self.labels[y as usize * self.width as usize + x as usize] = label;
    }

    pub fn is_foreground(&self, x: u32, y: u32) -> bool {
        self.get(x, y) == FOREGROUND
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.count(FOREGROUND) as f64 / self.labels.len() as f64
    }

    /// Mask as a frame (values 0/127/255) for debug dumps.
    pub fn to_frame(&self, timestamp: f64) -> Result<Frame, FrameIoError> {
        Frame::new(self.width, self.height, timestamp, self.labels.clone())
    }
}
