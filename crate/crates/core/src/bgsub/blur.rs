use rayon::prelude::*;

use super::{check_odd, BgsubError};
use crate::frame_io::Frame;

pub const MIN_BLUR: u32 = 3;
pub const MAX_BLUR: u32 = 31;

/// Normalized 1-D Gaussian taps for an odd `diameter`, sigma = diameter / 6.
pub fn gaussian_kernel(diameter: u32) -> Vec<f32> {
    let radius = (diameter / 2) as i32;
    let sigma = diameter as f64 / 6.0;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| (t / sum) as f32).collect()
}

/// Separable Gaussian blur with clamp-to-edge borders. Rows are processed
/// in parallel; the result does not depend on the thread count.
pub fn gaussian_blur(frame: &Frame, diameter: u32) -> Result<Frame, BgsubError> {
    check_odd(diameter, MIN_BLUR, MAX_BLUR)?;
    let w = frame.width() as usize;
    let h = frame.height() as usize;
    let k = gaussian_kernel(diameter);
    let r = k.len() / 2;
    let src = frame.pixels();

    let mut tmp = vec![0f32; w * h];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let s = &src[y * w..(y + 1) * w];
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0f32;
            for (i, &kv) in k.iter().enumerate() {
                let sx = (x + i).saturating_sub(r).min(w - 1);
                acc += kv * s[sx] as f32;
            }
            *out = acc;
        }
    });

    let mut dst = vec![0u8; w * h];
    dst.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let mut acc = vec![0f32; w];
        for (i, &kv) in k.iter().enumerate() {
            let sy = (y + i).saturating_sub(r).min(h - 1);
            let srow = &tmp[sy * w..(sy + 1) * w];
            for (a, &v) in acc.iter_mut().zip(srow) {
                *a += kv * v;
            }
        }
        for (o, a) in row.iter_mut().zip(acc) {
            *o = a.round().clamp(0.0, 255.0) as u8;
        }
    });

    Ok(Frame::new(frame.width(), frame.height(), frame.timestamp(), dst).expect("dimensions preserved"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_unchanged() {
        let f = Frame::filled(40, 30, 0.0, 128).unwrap();
        for d in (3..=31).step_by(2) {
            assert_eq!(gaussian_blur(&f, d).unwrap(), f, "diameter {d}");
        }
    }

    #[test]
    fn rejects_even_and_out_of_range() {
        let f = Frame::filled(16, 16, 0.0, 0).unwrap();
        for d in [0, 1, 2, 4, 30, 33] {
            assert!(matches!(gaussian_blur(&f, d), Err(BgsubError::InvalidDiameter { .. })), "{d}");
        }
    }

    #[test]
    fn impulse_response_diameter_3() {
        // Independent evaluation: sigma = 0.5, taps [e^-2, 1, e^-2] normalized,
        // 2-D center weight is the square of the 1-D center tap.
        let side = (-2.0f64).exp();
        let center = 1.0 / (1.0 + 2.0 * side);
        let expected = (center * center * 255.0).round() as u8;
        assert_eq!(expected, 158);

        let mut px = vec![0u8; 32 * 32];
        px[16 * 32 + 16] = 255;
        let f = Frame::new(32, 32, 0.0, px).unwrap();
        let b = gaussian_blur(&f, 3).unwrap();
        assert_eq!(b.get(16, 16), expected);
        let side_tap = side * center;
        assert_eq!(b.get(17, 16), (center * side_tap * 255.0).round() as u8);
        assert_eq!(b.get(17, 17), (side_tap * side_tap * 255.0).round() as u8);
        assert_eq!(b.get(18, 16), 0);
    }

    #[test]
    fn preserves_mean() {
        let px: Vec<u8> = (0..64 * 48).map(|i| ((i * 37) % 256) as u8).collect();
        let f = Frame::new(64, 48, 0.0, px).unwrap();
        for d in [3, 9, 31] {
            let b = gaussian_blur(&f, d).unwrap();
            assert!((b.mean() - f.mean()).abs() <= 1.0, "diameter {d}");
        }
    }
}
