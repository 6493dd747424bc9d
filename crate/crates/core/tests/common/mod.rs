#![allow(dead_code)]

use rbpn_core::config::{ModelConfig, ScaleFactor, TemporalOrder};
use rbpn_core::context::plan_context;
use rbpn_core::dataset::{sample_patch, SyntheticSequence, SyntheticSpec, TrainSample};
use rbpn_core::model::{Architecture, VsrModel};

/// Tiny widths with one stage and one block; PF order when `n` is even.
pub fn tiny_config(channels: usize, s: ScaleFactor, n: usize) -> ModelConfig {
    ModelConfig {
        scale: s,
        context_n: n,
        order: if n.is_multiple_of(2) { TemporalOrder::PF } else { TemporalOrder::P },
        ..ModelConfig::tiny(channels)
    }
}

pub fn tiny_model(channels: usize, s: ScaleFactor, n: usize, seed: u64) -> VsrModel {
    VsrModel::new(Architecture::Rbpn, tiny_config(channels, s, n).validate().unwrap(), seed).unwrap()
}

/// Full-frame samples centred in procedural sequences, with exact flow.
pub fn synthetic_samples(cfg: &ModelConfig, spec: &SyntheticSpec, count: usize, seed: u64) -> Vec<TrainSample> {
    let n = cfg.context_n;
    (0..count as u64)
        .map(|i| {
            let seq = SyntheticSequence::generate(spec, seed + i);
            let plan = plan_context(n, n, cfg.order, cfg.pf_sequence, seed, seq.hr.len()).unwrap();
            seq.sample(&plan, cfg.scale).unwrap()
        })
        .collect()
}

/// One `patch_lr`-sized patch from each of `count` sequences whose
/// texture reaches down to a 3-pixel HR wavelength.
pub fn detailed_patches(cfg: &ModelConfig, patch_lr: usize, count: usize, seed: u64) -> Vec<TrainSample> {
    let side = 2 * patch_lr * cfg.scale.get();
    let spec = SyntheticSpec {
        min_wavelength: 3.0,
        ..SyntheticSpec::small(side, side, 2 * cfg.context_n + 1)
    };
    synthetic_samples(cfg, &spec, count, seed)
        .iter()
        .zip(seed..)
        .map(|(s, k)| sample_patch(s, patch_lr, k).unwrap())
        .collect()
}
