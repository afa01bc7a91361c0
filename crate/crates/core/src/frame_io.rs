//! Raw luminance frame container.
//!
//! A stream is a 21-byte header followed by back-to-back frames with no
//! per-frame framing:
//!
//! | bytes  | content                                  |
//! |--------|------------------------------------------|
//! | 0..5   | ASCII `EOQV1`                            |
//! | 5..9   | width, u32 little-endian                 |
//! | 9..13  | height, u32 little-endian                |
//! | 13..17 | fps numerator, u32 little-endian         |
//! | 17..21 | fps denominator, u32 little-endian       |
//! | 21..   | frames, each `width * height` bytes      |

use std::io::{self, Read, Write};
use std::sync::Arc;

use thiserror::Error;

pub const MAGIC: &[u8; 5] = b"EOQV1";
pub const HEADER_LEN: usize = 21;
pub const MIN_DIM: u32 = 16;
pub const MAX_DIM: u32 = 8192;

#[derive(Debug, Error)]
pub enum FrameIoError {
    #[error("bad magic {0:?}, expected \"EOQV1\"")]
    BadMagic([u8; 5]),
    #[error("stream ended inside the {0}-byte header")]
    TruncatedHeader(usize),
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("frame {index} truncated: got {got} of {expected} bytes")]
    TruncatedFrame {
        index: u64,
        got: usize,
        expected: usize,
    },
    #[error("invalid downscale target {width}x{height} for a {src_width}x{src_height} frame")]
    InvalidTarget {
        width: u32,
        height: u32,
        src_width: u32,
        src_height: u32,
    },
    #[error("pixel buffer has {got} bytes, expected {expected}")]
    BufferSize { got: usize, expected: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Frame rate as an exact ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Fps {
    pub num: u32,
    pub den: u32,
}

impl Fps {
    pub fn new(num: u32, den: u32) -> Result<Self, FrameIoError> {
        if num == 0 || den == 0 {
            return Err(FrameIoError::InvalidDimensions(format!(
                "fps {num}/{den} must have positive numerator and denominator"
            )));
        }
        Ok(Self { num, den })
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Timestamp in seconds of the frame at `index`.
    pub fn timestamp(&self, index: u64) -> f64 {
        (index as f64 * self.den as f64) / self.num as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub width: u32,
    pub height: u32,
    pub fps: Fps,
}

impl StreamHeader {
    pub fn new(width: u32, height: u32, fps: Fps) -> Result<Self, FrameIoError> {
        check_dims(width, height)?;
        Ok(Self { width, height, fps })
    }

    pub fn frame_len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..5].copy_from_slice(MAGIC);
        out[5..9].copy_from_slice(&self.width.to_le_bytes());
        out[9..13].copy_from_slice(&self.height.to_le_bytes());
        out[13..17].copy_from_slice(&self.fps.num.to_le_bytes());
        out[17..21].copy_from_slice(&self.fps.den.to_le_bytes());
        out
    }
}

fn check_dims(width: u32, height: u32) -> Result<(), FrameIoError> {
    let ok = |d: u32| (MIN_DIM..=MAX_DIM).contains(&d);
    if ok(width) && ok(height) {
        Ok(())
    } else {
        Err(FrameIoError::InvalidDimensions(format!(
            "{width}x{height} outside [{MIN_DIM}, {MAX_DIM}]"
        )))
    }
}

/// Single-channel luminance raster. Pixel storage is shared, so clones are cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: u32,
    height: u32,
    timestamp: f64,
    pixels: Arc<[u8]>,
}

impl Frame {
    pub fn new(width: u32, height: u32, timestamp: f64, pixels: Vec<u8>) -> Result<Self, FrameIoError> {
        check_dims(width, height)?;
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(FrameIoError::BufferSize {
                got: pixels.len(),
                expected,
            });
        }
        if !(timestamp >= 0.0 && timestamp.is_finite()) {
            return Err(FrameIoError::InvalidDimensions(format!(
                "timestamp {timestamp} must be finite and non-negative"
            )));
        }
        Ok(Self {
            width,
            height,
            timestamp,
            pixels: pixels.into(),
        })
    }

    pub fn filled(width: u32, height: u32, timestamp: f64, value: u8) -> Result<Self, FrameIoError> {
        Self::new(width, height, timestamp, vec![value; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    /// Area-averaging resample to `width` x `height`.
    pub fn downscale(&self, width: u32, height: u32) -> Result<Frame, FrameIoError> {
        if width > self.width || height > self.height || width < MIN_DIM || height < MIN_DIM {
            return Err(FrameIoError::InvalidTarget {
                width,
                height,
                src_width: self.width,
                src_height: self.height,
            });
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let pixels = box_downscale(&self.pixels, self.width, self.height, width, height);
        Frame::new(width, height, self.timestamp, pixels)
    }
}

/// Box-filter resample of a raw raster. Each output pixel is the
/// area-weighted mean of the source pixels it covers, rounded half-to-even.
///
/// Works on any size (including below the [`Frame`] minimum), which is what
/// the unit tests use to pin the rounding rule.
pub fn box_downscale(src: &[u8], sw: u32, sh: u32, tw: u32, th: u32) -> Vec<u8> {
    assert!(tw >= 1 && th >= 1 && tw <= sw && th <= sh);
    assert_eq!(src.len(), sw as usize * sh as usize);
    let xs = spans(sw, tw);
    let ys = spans(sh, th);
    let mut out = Vec::with_capacity(tw as usize * th as usize);
    for yspan in &ys {
        for xspan in &xs {
            let mut acc = 0.0f64;
            for &(sy, wy) in yspan {
                let row = &src[sy * sw as usize..(sy + 1) * sw as usize];
                for &(sx, wx) in xspan {
                    acc += row[sx] as f64 * wx * wy;
                }
            }
            out.push(acc.round_ties_even().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// For each output cell, the source indices it overlaps and their
/// normalized overlap weights. Integer ratios yield exact binary weights.
fn spans(src: u32, dst: u32) -> Vec<Vec<(usize, f64)>> {
    let src = src as u64;
    let dst = dst as u64;
    // Work in units of 1/dst source pixels so boundaries are integers.
    (0..dst)
        .map(|o| {
            let start = o * src;
            let end = (o + 1) * src;
            let mut cells = Vec::new();
            let mut s = start / dst;
            while s * dst < end {
                let lo = (s * dst).max(start);
                let hi = ((s + 1) * dst).min(end);
                if hi > lo {
                    cells.push((s as usize, (hi - lo) as f64 / src as f64));
                }
                s += 1;
            }
            cells
        })
        .collect()
}

/// Reads frames sequentially from a stream.
pub struct FrameReader<R> {
    inner: R,
    header: StreamHeader,
    next_index: u64,
    fps_override: Option<Fps>,
}

impl<R: Read> FrameReader<R> {
    /// Parses the header, leaving `source` positioned at the first frame.
    pub fn open(mut source: R) -> Result<Self, FrameIoError> {
        let header = open_stream(&mut source)?;
        Ok(Self {
            inner: source,
            header,
            next_index: 0,
            fps_override: None,
        })
    }

    /// Use `fps` for timestamps instead of the rate stored in the header.
    pub fn with_fps_override(mut self, fps: Option<Fps>) -> Self {
        self.fps_override = fps;
        self
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    pub fn fps(&self) -> Fps {
        self.fps_override.unwrap_or(self.header.fps)
    }

    /// Index the next call to [`FrameReader::read_frame`] will return.
    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    /// Returns `Ok(None)` at a clean end of stream.
    pub fn read_frame(&mut self) -> Result<Option<Frame>, FrameIoError> {
        let len = self.header.frame_len();
        let mut buf = vec![0u8; len];
        let got = read_full(&mut self.inner, &mut buf)?;
        if got == 0 {
            return Ok(None);
        }
        if got < len {
            return Err(FrameIoError::TruncatedFrame {
                index: self.next_index,
                got,
                expected: len,
            });
        }
        let ts = self.fps().timestamp(self.next_index);
        self.next_index += 1;
        Frame::new(self.header.width, self.header.height, ts, buf).map(Some)
    }
}

impl<R: Read> Iterator for FrameReader<R> {
    type Item = Result<Frame, FrameIoError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.read_frame().transpose()
    }
}

/// Parses a stream header from the start of `source`.
pub fn open_stream<R: Read>(source: &mut R) -> Result<StreamHeader, FrameIoError> {
    let mut buf = [0u8; HEADER_LEN];
    let got = read_full(source, &mut buf)?;
    if got >= 5 && &buf[..5] != MAGIC {
        let mut m = [0u8; 5];
        m.copy_from_slice(&buf[..5]);
        return Err(FrameIoError::BadMagic(m));
    }
    if got < HEADER_LEN {
        return Err(FrameIoError::TruncatedHeader(got));
    }
    let word = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().unwrap());
    let fps = Fps::new(word(13), word(17))?;
    StreamHeader::new(word(5), word(9), fps)
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

pub struct FrameWriter<W> {
    inner: W,
    header: StreamHeader,
}

impl<W: Write> FrameWriter<W> {
    pub fn new(mut inner: W, header: StreamHeader) -> Result<Self, FrameIoError> {
        inner.write_all(&header.to_bytes())?;
        Ok(Self { inner, header })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    pub fn write_frame(&mut self, frame: &Frame) -> Result<(), FrameIoError> {
        self.write_pixels(frame.width(), frame.height(), frame.pixels())
    }

    pub fn write_pixels(&mut self, width: u32, height: u32, pixels: &[u8]) -> Result<(), FrameIoError> {
        if width != self.header.width || height != self.header.height {
            return Err(FrameIoError::InvalidDimensions(format!(
                "frame {width}x{height} does not match stream {}x{}",
                self.header.width, self.header.height
            )));
        }
        if pixels.len() != self.header.frame_len() {
            return Err(FrameIoError::BufferSize {
                got: pixels.len(),
                expected: self.header.frame_len(),
            });
        }
        self.inner.write_all(pixels)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), FrameIoError> {
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn stream_bytes(w: u32, h: u32, num: u32, den: u32) -> Vec<u8> {
        let mut v = MAGIC.to_vec();
        for x in [w, h, num, den] {
            v.extend_from_slice(&x.to_le_bytes());
        }
        v
    }

    #[test]
    fn parses_working_resolution_header() {
        let bytes = stream_bytes(720, 406, 24, 1);
        let h = open_stream(&mut Cursor::new(bytes)).unwrap();
        assert_eq!((h.width, h.height), (720, 406));
        assert_eq!(h.fps, Fps { num: 24, den: 1 });
        assert_eq!(h.frame_len(), 292_320);
    }

    #[test]
    fn header_errors() {
        let mut bad = stream_bytes(720, 406, 24, 1);
        bad[..5].copy_from_slice(b"XXXXX");
        assert!(matches!(open_stream(&mut Cursor::new(bad)), Err(FrameIoError::BadMagic(_))));

        let zero_den = stream_bytes(720, 406, 24, 0);
        assert!(matches!(
            open_stream(&mut Cursor::new(zero_den)),
            Err(FrameIoError::InvalidDimensions(_))
        ));

        let tiny = stream_bytes(8, 406, 24, 1);
        assert!(matches!(open_stream(&mut Cursor::new(tiny)), Err(FrameIoError::InvalidDimensions(_))));
        let huge = stream_bytes(8193, 406, 24, 1);
        assert!(matches!(open_stream(&mut Cursor::new(huge)), Err(FrameIoError::InvalidDimensions(_))));

        let short = stream_bytes(720, 406, 24, 1)[..12].to_vec();
        assert!(matches!(
            open_stream(&mut Cursor::new(short)),
            Err(FrameIoError::TruncatedHeader(12))
        ));
    }

    #[test]
    fn timestamps_follow_fps() {
        let fps = Fps::new(24, 1).unwrap();
        assert_eq!(fps.timestamp(0), 0.0);
        assert_eq!(fps.timestamp(24), 1.0);
        let ntsc = Fps::new(30000, 1001).unwrap();
        assert!((ntsc.timestamp(30) - 1.001).abs() < 1e-12);
    }

    #[test]
    fn truncated_frame_is_an_error() {
        let mut bytes = stream_bytes(720, 406, 24, 1);
        bytes.extend(std::iter::repeat(7u8).take(292_320));
        bytes.extend(std::iter::repeat(9u8).take(100));
        let mut r = FrameReader::open(Cursor::new(bytes)).unwrap();
        let f0 = r.read_frame().unwrap().unwrap();
        assert_eq!(f0.timestamp(), 0.0);
        match r.read_frame() {
            Err(FrameIoError::TruncatedFrame { index: 1, got: 100, expected: 292_320 }) => {}
            other => panic!("expected TruncatedFrame, got {other:?}"),
        }
    }

    #[test]
    fn end_of_stream_after_last_frame() {
        let mut bytes = stream_bytes(16, 16, 24, 1);
        bytes.extend(vec![1u8; 256 * 25]);
        let r = FrameReader::open(Cursor::new(bytes)).unwrap();
        let frames: Vec<_> = r.collect::<Result<_, _>>().unwrap();
        assert_eq!(frames.len(), 25);
        assert_eq!(frames[24].timestamp(), 1.0);
    }

    #[test]
    fn fps_override_changes_timestamps() {
        let mut bytes = stream_bytes(16, 16, 24, 1);
        bytes.extend(vec![1u8; 256 * 3]);
        let mut r = FrameReader::open(Cursor::new(bytes))
            .unwrap()
            .with_fps_override(Some(Fps::new(2, 1).unwrap()));
        r.read_frame().unwrap();
        assert_eq!(r.read_frame().unwrap().unwrap().timestamp(), 0.5);
    }

    #[test]
    fn downscale_identity_is_byte_exact() {
        let px: Vec<u8> = (0..720 * 406).map(|i| (i * 31 % 251) as u8).collect();
        let f = Frame::new(720, 406, 0.0, px).unwrap();
        assert_eq!(f.downscale(720, 406).unwrap(), f);
    }

    #[test]
    fn downscale_constant_image() {
        let f = Frame::filled(1440, 812, 0.0, 128).unwrap();
        let d = f.downscale(720, 406).unwrap();
        assert_eq!((d.width(), d.height()), (720, 406));
        assert!(d.pixels().iter().all(|&p| p == 128));
    }

    #[test]
    fn downscale_rounds_half_to_even() {
        // (0 + 0 + 255 + 255) / 4 = 127.5 -> 128
        assert_eq!(box_downscale(&[0, 0, 255, 255], 2, 2, 1, 1), vec![128]);
        // (0 + 1 + 2 + 2) / 4 = 1.25 -> 1; (0+1)/2 = 0.5 -> 0
        assert_eq!(box_downscale(&[0, 1, 2, 2], 2, 2, 1, 1), vec![1]);
        assert_eq!(box_downscale(&[0, 1], 2, 1, 1, 1), vec![0]);
    }

    #[test]
    fn downscale_non_integer_ratio() {
        // 3 -> 2: output 0 covers src0 fully and half of src1.
        let out = box_downscale(&[30, 60, 90], 3, 1, 2, 1);
        // (30 + 0.5*60) / 1.5 = 40, (0.5*60 + 90) / 1.5 = 80
        assert_eq!(out, vec![40, 80]);
    }

    #[test]
    fn downscale_rejects_upscale() {
        let f = Frame::filled(32, 32, 0.0, 1).unwrap();
        assert!(matches!(f.downscale(64, 16), Err(FrameIoError::InvalidTarget { .. })));
        assert!(matches!(f.downscale(8, 16), Err(FrameIoError::InvalidTarget { .. })));
    }

    proptest! {
        #[test]
        fn stream_round_trip(w in 16u32..40, h in 16u32..40, n in 0usize..4, num in 1u32..100, den in 1u32..5, seed: u64) {
            let header = StreamHeader::new(w, h, Fps::new(num, den).unwrap()).unwrap();
            let mut bytes = header.to_bytes().to_vec();
            let mut s = seed;
            for _ in 0..(w as usize * h as usize * n) {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                bytes.push((s >> 56) as u8);
            }
            let reader = FrameReader::open(Cursor::new(bytes.clone())).unwrap();
            let mut writer = FrameWriter::new(Vec::new(), *reader.header()).unwrap();
            let mut last_ts = -1.0;
            for f in reader {
                let f = f.unwrap();
                prop_assert!(f.timestamp() > last_ts);
                last_ts = f.timestamp();
                writer.write_frame(&f).unwrap();
            }
            prop_assert_eq!(writer.into_inner(), bytes);
        }

        #[test]
        fn downscale_preserves_mean(sw in 16u32..64, sh in 16u32..64, tw in 16u32..64, th in 16u32..64, seed: u64) {
            prop_assume!(tw <= sw && th <= sh);
            let mut s = seed;
            let px: Vec<u8> = (0..sw * sh).map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                (s >> 56) as u8
            }).collect();
            let f = Frame::new(sw, sh, 0.0, px).unwrap();
            let d = f.downscale(tw, th).unwrap();
            prop_assert_eq!((d.width(), d.height()), (tw, th));
            prop_assert!((d.mean() - f.mean()).abs() <= 1.0);
        }
    }
}
