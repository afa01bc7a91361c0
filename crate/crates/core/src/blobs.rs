//! Connected foreground regions.
//!
//! Labelling is run-based: each row is split into foreground runs, runs that
//! touch an 8-neighbouring run in the previous row are unioned, and the
//! resulting sets are summarised into [`Blob`]s.

use serde::{Deserialize, Serialize};

use crate::bgsub::{ForegroundMask, FOREGROUND};

pub const DEFAULT_BLOB_CAP: usize = 512;

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BBox {
    pub fn width(&self) -> u32 {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min + 1
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn diagonal(&self) -> f64 {
        (self.width() as f64).hypot(self.height() as f64)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min as f64 && x <= self.x_max as f64 && y >= self.y_min as f64 && y <= self.y_max as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub id: usize,
    pub bbox: BBox,
    /// Mean of member pixel indices.
    pub centroid: (f64, f64),
    pub area: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlobDetection {
    pub blobs: Vec<Blob>,
    /// Components that passed the area filter but were dropped by the cap.
    pub dropped: usize,
}

#[derive(Debug, Clone, Copy)]
struct Run {
    y: u32,
    x0: u32,
    x1: u32,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // keep the smaller index as root so labels follow raster order
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

#[derive(Debug, Clone, Copy)]
struct Acc {
    bbox: BBox,
    sum_x: u64,
    sum_y: u64,
    area: u64,
    first: usize,
}

/// 8-connected foreground components with `min_area <= area <= max_area`,
/// ordered by `x_min`, then `y_min`, then raster position of the first pixel.
/// At most `cap` blobs are returned; the smallest are dropped first.
pub fn detect_blobs(mask: &ForegroundMask, min_area: u64, max_area: u64, cap: usize) -> BlobDetection {
    let w = mask.width();
    let labels = mask.labels();
    let mut runs: Vec<Run> = Vec::new();
    let mut parent: Vec<usize> = Vec::new();
    let mut prev_row: std::ops::Range<usize> = 0..0;

    for y in 0..mask.height() {
        let row = &labels[(y * w) as usize..((y + 1) * w) as usize];
        let row_start = runs.len();
        let mut x = 0u32;
        while x < w {
            if row[x as usize] != FOREGROUND {
                x += 1;
                continue;
            }
            let x0 = x;
            while x < w && row[x as usize] == FOREGROUND {
                x += 1;
            }
            let idx = runs.len();
            runs.push(Run { y, x0, x1: x - 1 });
            parent.push(idx);
        }
        // merge with overlapping runs of the previous row (diagonals included)
        let mut p = prev_row.start;
        for i in row_start..runs.len() {
            let cur = runs[i];
            while p < prev_row.end && runs[p].x1 + 1 < cur.x0 {
                p += 1;
            }
            let mut q = p;
            while q < prev_row.end && runs[q].x0 <= cur.x1 + 1 {
                union(&mut parent, q, i);
                q += 1;
            }
        }
        prev_row = row_start..runs.len();
    }

    let mut acc: Vec<Option<Acc>> = vec![None; runs.len()];
    for i in 0..runs.len() {
        let root = find(&mut parent, i);
        let r = runs[i];
        let n = (r.x1 - r.x0 + 1) as u64;
        let sx = (r.x0 as u64 + r.x1 as u64) * n / 2;
        let entry = acc[root].get_or_insert(Acc {
            bbox: BBox {
                x_min: r.x0,
                y_min: r.y,
                x_max: r.x1,
                y_max: r.y,
            },
            sum_x: 0,
            sum_y: 0,
            area: 0,
            first: (r.y * w + r.x0) as usize,
        });
        entry.bbox.x_min = entry.bbox.x_min.min(r.x0);
        entry.bbox.x_max = entry.bbox.x_max.max(r.x1);
        entry.bbox.y_max = entry.bbox.y_max.max(r.y);
        entry.sum_x += sx;
        entry.sum_y += r.y as u64 * n;
        entry.area += n;
    }

    let mut found: Vec<Acc> = acc
        .into_iter()
        .flatten()
        .filter(|a| a.area >= min_area && a.area <= max_area)
        .collect();

    let mut dropped = 0;
    if found.len() > cap {
        dropped = found.len() - cap;
        // stable: equal areas keep raster order
        found.sort_by(|a, b| b.area.cmp(&a.area).then(a.first.cmp(&b.first)));
        found.truncate(cap);
    }
    found.sort_by_key(|a| (a.bbox.x_min, a.bbox.y_min, a.first));

    let blobs = found
        .into_iter()
        .enumerate()
        .map(|(id, a)| Blob {
            id,
            bbox: a.bbox,
            centroid: (a.sum_x as f64 / a.area as f64, a.sum_y as f64 / a.area as f64),
            area: a.area,
        })
        .collect();
    BlobDetection { blobs, dropped }
}
