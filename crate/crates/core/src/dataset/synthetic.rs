//! Procedural video: a smooth random texture translating at a constant
//! integer velocity, so the true motion is known.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{degrade, TrainSample};
use crate::config::ScaleFactor;
use crate::context::ContextPlan;
use crate::error::Result;
use crate::flow::FlowField;
use crate::frame::Frame;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// HR frame height.
    pub height: usize,
    /// HR frame width.
    pub width: usize,
    pub frames: usize,
    /// Largest velocity component in HR pixels per frame.
    pub max_speed: i32,
    /// Sinusoids per channel.
    pub waves: usize,
    /// Shortest wavelength in HR pixels.
    pub min_wavelength: f64,
}

impl SyntheticSpec {
    pub fn small(height: usize, width: usize, frames: usize) -> Self {
        Self {
            height,
            width,
            frames,
            max_speed: 3,
            waves: 6,
            min_wavelength: 6.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Wave {
    amp: f64,
    kx: f64,
    ky: f64,
    phase: f64,
}

/// A generated sequence of HR frames.
#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub hr: Vec<Frame>,
    /// HR displacement per frame, `(vx, vy)`.
    pub velocity: (i32, i32),
}

impl SyntheticSequence {
    pub fn generate(spec: &SyntheticSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = spec.max_speed;
        let velocity = (rng.random_range(-v..=v), rng.random_range(-v..=v));
        let max_wl = spec.min_wavelength * 6.0;
        let channels: Vec<Vec<Wave>> = (0..3)
            .map(|_| {
                (0..spec.waves)
                    .map(|_| {
                        let wl = rng.random_range(spec.min_wavelength..max_wl);
                        let angle = rng.random_range(0.0..TAU);
                        Wave {
                            amp: rng.random_range(0.05..0.25) / (spec.waves as f64).sqrt(),
                            kx: TAU / wl * angle.cos(),
                            ky: TAU / wl * angle.sin(),
                            phase: rng.random_range(0.0..TAU),
                        }
                    })
                    .collect()
            })
            .collect();
        let hr = (0..spec.frames)
            .map(|t| {
                let (dx, dy) = ((t as i32 * velocity.0) as f64, (t as i32 * velocity.1) as f64);
                Frame::from_fn(spec.height, spec.width, |c, y, x| {
                    let (px, py) = (x as f64 - dx, y as f64 - dy);
                    let v: f64 = channels[c]
                        .iter()
                        .map(|w| w.amp * (w.kx * px + w.ky * py + w.phase).sin())
                        .sum();
                    (0.5 + v).clamp(0.0, 1.0)
                })
            })
            .collect();
        Self { hr, velocity }
    }

    /// True LR flow from frame `neighbor` toward frame `target`.
    pub fn flow(&self, target: usize, neighbor: usize, s: ScaleFactor, lr_h: usize, lr_w: usize) -> FlowField {
        let dt = target as f64 - neighbor as f64;
        let s = s.get() as f64;
        FlowField::uniform(lr_h, lr_w, dt * self.velocity.0 as f64 / s, dt * self.velocity.1 as f64 / s)
    }

    /// Builds a full-frame sample with exact flows.
    pub fn sample(&self, plan: &ContextPlan, s: ScaleFactor) -> Result<TrainSample> {
        let m = s.get();
        let hr_target = self.hr[plan.target].mod_crop(m)?;
        let lr_target = degrade(&hr_target, s)?;
        let (h, w) = (lr_target.height(), lr_target.width());
        let mut lr_neighbors = Vec::with_capacity(plan.neighbors.len());
        let mut flows = Vec::with_capacity(plan.neighbors.len());
        for (&k, &replicated) in plan.neighbors.iter().zip(&plan.replicated) {
            lr_neighbors.push(degrade(&self.hr[k].mod_crop(m)?, s)?);
            flows.push(if replicated {
                FlowField::zeros(h, w)
            } else {
                self.flow(plan.target, k, s, h, w)
            });
        }
        Ok(TrainSample {
            lr_target,
            lr_neighbors,
            flows,
            hr_target,
            origin: (0, 0),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_translate_by_the_velocity() {
        let seq = SyntheticSequence::generate(&SyntheticSpec::small(20, 24, 3), 4);
        let (vx, vy) = seq.velocity;
        let (f0, f1) = (&seq.hr[0], &seq.hr[1]);
        for y in 4..16 {
            for x in 4..20 {
                let (x1, y1) = ((x as i32 + vx) as usize, (y as i32 + vy) as usize);
                for c in 0..3 {
                    assert!((f1.get(c, y1, x1) - f0.get(c, y, x)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        let spec = SyntheticSpec::small(8, 8, 2);
        assert_eq!(SyntheticSequence::generate(&spec, 1).hr, SyntheticSequence::generate(&spec, 1).hr);
        assert_ne!(SyntheticSequence::generate(&spec, 1).hr, SyntheticSequence::generate(&spec, 2).hr);
    }
}
