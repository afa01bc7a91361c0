//! Adaptive per-pixel Gaussian mixture background model.
//!
//! Each pixel keeps `K` components sorted by `w / sigma` descending. A pixel
//! is background when the component it matches sits in the leading run of
//! components that together explain `T` of the weight; a non-background pixel
//! that is darker than the dominant background by a ratio in
//! `[shadow_low, shadow_high]` is labelled shadow.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BgsubError, ForegroundMask, BACKGROUND, FOREGROUND, SHADOW};
use crate::frame_io::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MogParams {
    pub components: usize,
    pub learning_rate: f64,
    /// Match gate in standard deviations.
    pub match_threshold: f64,
    pub background_ratio: f64,
    pub init_weight: f64,
    pub init_variance: f64,
    pub variance_floor: f64,
    pub shadow_low: f64,
    pub shadow_high: f64,
}

impl Default for MogParams {
    fn default() -> Self {
        Self {
            components: 5,
            learning_rate: 0.005,
            match_threshold: 2.5,
            background_ratio: 0.7,
            init_weight: 0.05,
            init_variance: 225.0,
            variance_floor: 4.0,
            shadow_low: 0.5,
            shadow_high: 0.95,
        }
    }
}

impl MogParams {
    pub fn validate(&self) -> Result<(), BgsubError> {
        let bad = |m: &str| Err(BgsubError::InvalidParams(m.to_string()));
        if !(1..=16).contains(&self.components) {
            return bad("components must be in [1, 16]");
        }
        let open01 = |v: f64| v > 0.0 && v < 1.0;
        if !open01(self.learning_rate) {
            return bad("learning_rate must be in (0, 1)");
        }
        if !open01(self.background_ratio) {
            return bad("background_ratio must be in (0, 1)");
        }
        if !open01(self.init_weight) {
            return bad("init_weight must be in (0, 1)");
        }
        if !(self.match_threshold > 0.0) {
            return bad("match_threshold must be positive");
        }
        if !(self.variance_floor > 0.0 && self.init_variance >= self.variance_floor) {
            return bad("need 0 < variance_floor <= init_variance");
        }
        if !(0.0 <= self.shadow_low && self.shadow_low <= self.shadow_high) {
            return bad("need 0 <= shadow_low <= shadow_high");
        }
        Ok(())
    }
}

/// One Gaussian. A weight of zero marks an unused slot.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl Component {
    fn fitness(&self) -> f64 {
        self.weight / self.variance.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    Rows,
}

#[derive(Debug, Clone)]
pub struct MogModel {
    width: u32,
    height: u32,
    params: MogParams,
    comps: Vec<Component>,
}

impl MogModel {
    /// Seeds the model from `first`: component 0 takes the pixel value with
    /// full weight, the remaining slots are empty.
    pub fn from_first_frame(first: &Frame, params: MogParams) -> Result<Self, BgsubError> {
        params.validate()?;
        let k = params.components;
        let mut comps = vec![
            Component {
                weight: 0.0,
                mean: 0.0,
                variance: params.init_variance,
            };
            first.pixels().len() * k
        ];
        for (px, slot) in first.pixels().iter().zip(comps.chunks_mut(k)) {
            slot[0] = Component {
                weight: 1.0,
                mean: *px as f64,
                variance: params.init_variance,
            };
        }
        Ok(Self {
            width: first.width(),
            height: first.height(),
            params,
            comps,
        })
    }

    pub fn params(&self) -> &MogParams {
        &self.params
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// The learning rate may change between frames; the component count may not.
    pub fn set_learning_rate(&mut self, rate: f64) -> Result<(), BgsubError> {
        let mut p = self.params;
        p.learning_rate = rate;
        p.validate()?;
        self.params = p;
        Ok(())
    }

    /// Components of pixel `(x, y)` in fitness order.
    pub fn pixel(&self, x: u32, y: u32) -> &[Component] {
        let k = self.params.components;
        let i = (y as usize * self.width as usize + x as usize) * k;
        &self.comps[i..i + k]
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[Component]> {
        self.comps.chunks(self.params.components)
    }

    /// Labels `frame` against the current model, then updates the model with it.
    pub fn apply(&mut self, frame: &Frame, parallelism: Parallelism) -> Result<ForegroundMask, BgsubError> {
        if (frame.width(), frame.height()) != (self.width, self.height) {
            return Err(BgsubError::DimensionMismatch {
                got: (frame.width(), frame.height()),
                expected: (self.width, self.height),
            });
        }
        let w = self.width as usize;
        let k = self.params.components;
        let params = self.params;
        let mut mask = ForegroundMask::new(self.width, self.height);
        let run_row = |((comps, px), labels): ((&mut [Component], &[u8]), &mut [u8])| {
            for ((slot, &x), label) in comps.chunks_mut(k).zip(px).zip(labels.iter_mut()) {
                *label = update_pixel(slot, x as f64, &params);
            }
        };
        match parallelism {
            Parallelism::Sequential => self
                .comps
                .chunks_mut(w * k)
                .zip(frame.pixels().chunks(w))
                .zip(mask.labels_mut().chunks_mut(w))
                .for_each(run_row),
            Parallelism::Rows => self
                .comps
                .par_chunks_mut(w * k)
                .zip(frame.pixels().par_chunks(w))
                .zip(mask.labels_mut().par_chunks_mut(w))
                .for_each(run_row),
        }
        Ok(mask)
    }
}

fn update_pixel(slot: &mut [Component], x: f64, p: &MogParams) -> u8 {
    let matched = slot
        .iter()
        .position(|c| c.weight > 0.0 && (x - c.mean).abs() <= p.match_threshold * c.variance.sqrt());

    let label = match matched {
        Some(i) if slot[..i].iter().map(|c| c.weight).sum::<f64>() < p.background_ratio => BACKGROUND,
        _ => {
            let best = &slot[0];
            let ratio = x / best.mean;
            if best.weight > 0.0 && best.mean > 0.0 && (p.shadow_low..=p.shadow_high).contains(&ratio) {
                SHADOW
            } else {
                FOREGROUND
            }
        }
    };

    let rho = p.learning_rate;
    match matched {
        Some(i) => {
            for c in slot.iter_mut() {
                c.weight *= 1.0 - rho;
            }
            let c = &mut slot[i];
            c.weight += rho;
            let r = (rho / c.weight).min(1.0);
            let d = x - c.mean;
            c.mean += r * d;
            c.variance = (c.variance + r * (d * d - c.variance)).max(p.variance_floor);
        }
        None => {
            let last = slot.len() - 1;
            slot[last] = Component {
                weight: p.init_weight,
                mean: x,
                variance: p.init_variance,
            };
        }
    }

    let total: f64 = slot.iter().map(|c| c.weight).sum();
    for c in slot.iter_mut() {
        c.weight /= total;
    }
    // insertion sort, K is tiny
    for i in 1..slot.len() {
        let mut j = i;
        while j > 0 && slot[j - 1].fitness() < slot[j].fitness() {
            slot.swap(j - 1, j);
            j -= 1;
        }
    }
    label
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(v: u8) -> Frame {
        Frame::filled(16, 16, 0.0, v).unwrap()
    }

    fn converged_on_100() -> MogModel {
        let bg = flat(100);
        let mut m = MogModel::from_first_frame(&bg, MogParams::default()).unwrap();
        for _ in 0..200 {
            m.apply(&bg, Parallelism::Sequential).unwrap();
        }
        m
    }

    #[test]
    fn stationary_scene_converges() {
        let mut m = converged_on_100();
        let mask = m.apply(&flat(100), Parallelism::Sequential).unwrap();
        assert_eq!(mask.count(BACKGROUND), 256);
        let top = m.pixel(3, 3)[0];
        assert!((top.mean - 100.0).abs() < 1e-9);
        assert!(top.weight > m.params().background_ratio);
    }

    #[test]
    fn bright_outlier_is_foreground() {
        let mut m = converged_on_100();
        // Closed form for the dominant variance with x == mean every frame:
        // var_n = 225 * (1 - rho)^n, so the gate is 2.5 * sqrt(var_200).
        let var = 225.0 * (1.0f64 - 0.005).powi(200);
        assert!((m.pixel(0, 0)[0].variance - var).abs() < 1e-6);
        let gate = 2.5 * var.sqrt();
        assert!(100.0 > gate, "gate {gate}");

        let mut px = vec![100u8; 256];
        px[5 * 16 + 7] = 200;
        let f = Frame::new(16, 16, 0.0, px).unwrap();
        let mask = m.apply(&f, Parallelism::Sequential).unwrap();
        assert_eq!(mask.get(7, 5), FOREGROUND);
        assert_eq!(mask.count(FOREGROUND), 1);
    }

    #[test]
    fn darker_pixel_is_shadow() {
        let mut m = converged_on_100();
        let mut px = vec![100u8; 256];
        px[2 * 16 + 2] = 70;
        // 30 grey levels exceed the gate, ratio 0.7 is inside [0.5, 0.95]
        let f = Frame::new(16, 16, 0.0, px).unwrap();
        let mask = m.apply(&f, Parallelism::Sequential).unwrap();
        assert_eq!(mask.get(2, 2), SHADOW);
        // much darker is foreground
        let mut px = vec![100u8; 256];
        px[0] = 20;
        let mask = m.apply(&Frame::new(16, 16, 0.0, px).unwrap(), Parallelism::Sequential).unwrap();
        assert_eq!(mask.get(0, 0), FOREGROUND);
    }

    #[test]
    fn new_component_replaces_weakest() {
        let mut m = MogModel::from_first_frame(&flat(100), MogParams::default()).unwrap();
        m.apply(&flat(200), Parallelism::Sequential).unwrap();
        let c = m.pixel(0, 0);
        let active: Vec<_> = c.iter().filter(|c| c.weight > 0.0).collect();
        assert_eq!(active.len(), 2);
        let sum: f64 = c.iter().map(|c| c.weight).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!((active[1].weight - 0.05 / 1.05).abs() < 1e-12);
        assert_eq!(active[1].mean, 200.0);
    }

    #[test]
    fn dimension_mismatch() {
        let mut m = MogModel::from_first_frame(&flat(1), MogParams::default()).unwrap();
        let other = Frame::filled(32, 16, 0.0, 1).unwrap();
        assert_eq!(
            m.apply(&other, Parallelism::Rows).unwrap_err(),
            BgsubError::DimensionMismatch { got: (32, 16), expected: (16, 16) }
        );
    }

    #[test]
    fn params_validation() {
        let mut p = MogParams::default();
        p.learning_rate = 1.0;
        assert!(p.validate().is_err());
        let mut p = MogParams::default();
        p.variance_floor = 0.0;
        assert!(p.validate().is_err());
    }
}
