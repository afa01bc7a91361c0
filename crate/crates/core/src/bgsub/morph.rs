use super::{check_odd, BgsubError, ForegroundMask, FOREGROUND};

pub const MIN_DILATION: u32 = 3;
pub const MAX_DILATION: u32 = 9;

/// Offsets of the discrete disk `dx^2 + dy^2 <= (diameter - 1)^2 / 4`.
pub fn disk_offsets(diameter: u32) -> Vec<(i32, i32)> {
    let r = (diameter as i32 - 1) / 2;
    let r2 = (diameter as i64 - 1).pow(2);
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if 4 * ((dx * dx + dy * dy) as i64) <= r2 {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Dilates foreground pixels with a disk. Shadow pixels are not seeds, but
/// keep their label where the disk does not reach them.
pub fn dilate(mask: &ForegroundMask, diameter: u32) -> Result<ForegroundMask, BgsubError> {
    check_odd(diameter, MIN_DILATION, MAX_DILATION)?;
    let w = mask.width() as i32;
    let h = mask.height() as i32;
    let r = (diameter as i32 - 1) / 2;
    let r2 = (diameter as i32 - 1).pow(2);
    // horizontal half-extent of the disk on each row offset
    let spans: Vec<(i32, i32)> = (-r..=r)
        .map(|dy| {
            let mut half = 0;
            while 4 * ((half + 1) * (half + 1) + dy * dy) <= r2 {
                half += 1;
            }
            (dy, half)
        })
        .collect();

    let src = mask.labels();
    let mut out = mask.clone();
    let labels = out.labels_mut();
    for y in 0..h {
        let row = &src[(y * w) as usize..((y + 1) * w) as usize];
        for x in row.iter().enumerate().filter(|(_, &l)| l == FOREGROUND).map(|(x, _)| x as i32) {
            for &(dy, half) in &spans {
                let ty = y + dy;
                if ty < 0 || ty >= h {
                    continue;
                }
                let lo = (x - half).max(0);
                let hi = (x + half).min(w - 1);
                labels[(ty * w + lo) as usize..=(ty * w + hi) as usize].fill(FOREGROUND);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bgsub::SHADOW;
    use proptest::prelude::*;

    fn fg_points(m: &ForegroundMask) -> Vec<(u32, u32)> {
        let mut v = Vec::new();
        for y in 0..m.height() {
            for x in 0..m.width() {
                if m.is_foreground(x, y) {
                    v.push((x, y));
                }
            }
        }
        v
    }

    #[test]
    fn disk_shapes() {
        assert_eq!(disk_offsets(3).len(), 5);
        // r^2 = 4: 13 offsets (|d| <= 2 on axes, plus the 3x3 block)
        assert_eq!(disk_offsets(5).len(), 13);
        assert_eq!(disk_offsets(7).len(), 29);
        assert_eq!(disk_offsets(9).len(), 49);
    }

    #[test]
    fn single_pixel_becomes_plus() {
        let m = ForegroundMask::from_points(16, 16, [(5, 5)]);
        let d = dilate(&m, 3).unwrap();
        assert_eq!(fg_points(&d), vec![(5, 4), (4, 5), (5, 5), (6, 5), (5, 6)]);
    }

    #[test]
    fn empty_stays_empty() {
        let m = ForegroundMask::new(20, 20);
        assert_eq!(dilate(&m, 9).unwrap(), m);
    }

    #[test]
    fn gap_of_two_closes() {
        // pixels at x=4 and x=7: dilation fills 3,4,5 and 6,7,8 -> one run
        let m = ForegroundMask::from_points(16, 16, [(4, 8), (7, 8)]);
        let d = dilate(&m, 3).unwrap();
        assert!((3..=8).all(|x| d.is_foreground(x, 8)));
    }

    #[test]
    fn shadow_is_not_a_seed() {
        let mut m = ForegroundMask::new(16, 16);
        m.set(8, 8, SHADOW);
        let d = dilate(&m, 5).unwrap();
        assert_eq!(d.count(FOREGROUND), 0);
        assert_eq!(d.get(8, 8), SHADOW);
    }

    #[test]
    fn rejects_bad_diameter() {
        let m = ForegroundMask::new(16, 16);
        for d in [1, 4, 11] {
            assert!(dilate(&m, d).is_err());
        }
    }

    #[test]
    fn clipped_at_border() {
        let m = ForegroundMask::from_points(16, 16, [(0, 0)]);
        let d = dilate(&m, 3).unwrap();
        assert_eq!(fg_points(&d), vec![(0, 0), (1, 0), (0, 1)]);
    }

    proptest! {
        #[test]
        fn matches_offset_enumeration_and_is_monotone(pts in proptest::collection::vec((0u32..24, 0u32..24), 0..12)) {
            let m = ForegroundMask::from_points(24, 24, pts.iter().copied());
            let mut prev: Option<ForegroundMask> = None;
            for d in [3u32, 5, 7, 9] {
                let out = dilate(&m, d).unwrap();
                // brute force: every pixel within a disk offset of a seed
                let offs = disk_offsets(d);
                let mut expect = ForegroundMask::new(24, 24);
                for &(x, y) in &pts {
                    for &(dx, dy) in &offs {
                        let (tx, ty) = (x as i32 + dx, y as i32 + dy);
                        if (0..24).contains(&tx) && (0..24).contains(&ty) {
                            expect.set(tx as u32, ty as u32, FOREGROUND);
                        }
                    }
                }
                prop_assert_eq!(&out, &expect);
                for &(x, y) in &pts {
                    prop_assert!(out.is_foreground(x, y));
                }
                if let Some(p) = prev {
                    for (a, b) in p.labels().iter().zip(out.labels()) {
                        prop_assert!(*a != FOREGROUND || *b == FOREGROUND);
                    }
                }
                prev = Some(out);
            }
        }
    }
}
