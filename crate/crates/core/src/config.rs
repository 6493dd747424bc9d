//! Model and training configuration, validation, and the scale-dependent
//! resampling geometry shared by every up/down-sampling layer.

use std::fmt;
use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Integer upscaling ratio; only 2, 4 and 8 are supported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct ScaleFactor(u32);

impl ScaleFactor {
    pub const X2: ScaleFactor = ScaleFactor(2);
    pub const X4: ScaleFactor = ScaleFactor(4);
    pub const X8: ScaleFactor = ScaleFactor(8);

    pub fn new(s: u32) -> Result<Self> {
        match s {
            2 | 4 | 8 => Ok(Self(s)),
            _ => Err(Error::config("scale", format!("{s} is not one of 2, 4, 8"))),
        }
    }

    pub fn get(self) -> usize {
        self.0 as usize
    }
}

impl TryFrom<u32> for ScaleFactor {
    type Error = Error;
    fn try_from(v: u32) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ScaleFactor> for u32 {
    fn from(s: ScaleFactor) -> u32 {
        s.0
    }
}

impl fmt::Display for ScaleFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x", self.0)
    }
}

/// Kernel / stride / padding of the strided and transposed resampling
/// convolutions for one scale factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResampleSpec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ResampleSpec {
    /// Output extent of the transposed (upsampling) convolution.
    pub fn up_size(&self, w: usize) -> usize {
        (w - 1) * self.stride + self.kernel - 2 * self.pad
    }

    /// Output extent of the strided (downsampling) convolution.
    pub fn down_size(&self, w: usize) -> usize {
        (w + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

pub fn resample_spec(scale: ScaleFactor) -> ResampleSpec {
    let (kernel, stride, pad) = match scale.get() {
        2 => (6, 2, 2),
        4 => (8, 4, 2),
        8 => (12, 8, 2),
        _ => unreachable!("ScaleFactor is validated on construction"),
    };
    ResampleSpec { kernel, stride, pad }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TemporalOrder {
    /// Past frames only, nearest first.
    P,
    /// Past and future frames, symmetric halves.
    PF,
    /// Past frames in a seeded random order.
    PR,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integration {
    /// Reconstruct from every per-step HR map.
    Concat,
    /// Reconstruct from the final HR map only.
    Last,
}

/// Visiting order of the neighbours inside a PF context.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PfSequence {
    /// t−1, t+1, t−2, t+2, …
    #[default]
    Alternating,
    /// t−1, …, t−n/2, then t+1, …, t+n/2.
    PastThenFuture,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SizeVariant {
    S,
    #[serde(rename = "base", alias = "BASE")]
    Base,
    L,
}

impl SizeVariant {
    /// `(sisr_stages, resnet_blocks)` fixed by the S and L presets.
    pub fn preset(self) -> Option<(usize, usize)> {
        match self {
            SizeVariant::S => Some((2, 3)),
            SizeVariant::Base => None,
            SizeVariant::L => Some((6, 5)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub scale: ScaleFactor,
    pub context_n: usize,
    pub c_l: usize,
    pub c_m: usize,
    pub c_h: usize,
    pub sisr_stages: usize,
    pub resnet_blocks: usize,
    pub order: TemporalOrder,
    pub pf_sequence: PfSequence,
    pub integration: Integration,
    pub use_flow: bool,
    pub residual_learning: bool,
    pub size_variant: SizeVariant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            scale: ScaleFactor::X4,
            context_n: 6,
            c_l: 256,
            c_m: 256,
            c_h: 64,
            sisr_stages: 3,
            resnet_blocks: 5,
            order: TemporalOrder::PF,
            pf_sequence: PfSequence::Alternating,
            integration: Integration::Concat,
            use_flow: true,
            residual_learning: false,
            size_variant: SizeVariant::Base,
        }
    }
}

impl ModelConfig {
    /// Switches to a size variant, applying its stage/block preset.
    pub fn with_size_variant(mut self, variant: SizeVariant) -> Self {
        self.size_variant = variant;
        match variant.preset() {
            Some((t, b)) => {
                self.sisr_stages = t;
                self.resnet_blocks = b;
            }
            None => {
                let d = ModelConfig::default();
                self.sisr_stages = d.sisr_stages;
                self.resnet_blocks = d.resnet_blocks;
            }
        }
        self
    }

    /// Small widths for tests and toy experiments; geometry is unchanged.
    pub fn tiny(channels: usize) -> Self {
        Self {
            c_l: channels,
            c_m: channels,
            c_h: channels,
            sisr_stages: 1,
            resnet_blocks: 1,
            ..Self::default()
        }
    }

    pub fn validate(self) -> Result<ValidatedConfig> {
        for (field, v) in [("c_l", self.c_l), ("c_m", self.c_m), ("c_h", self.c_h)] {
            if v == 0 {
                return Err(Error::config(field, "channel count must be positive"));
            }
        }
        if self.sisr_stages == 0 {
            return Err(Error::config("sisr_stages", "need at least one stage"));
        }
        if self.resnet_blocks == 0 {
            return Err(Error::config("resnet_blocks", "need at least one block"));
        }
        if self.order == TemporalOrder::PF && !self.context_n.is_multiple_of(2) {
            return Err(Error::config(
                "order",
                format!("PF needs an even context length, got n = {}", self.context_n),
            ));
        }
        if let Some((t, b)) = self.size_variant.preset() {
            if (self.sisr_stages, self.resnet_blocks) != (t, b) {
                return Err(Error::config(
                    "size_variant",
                    format!(
                        "{:?} requires sisr_stages = {t} and resnet_blocks = {b}, got {} and {}",
                        self.size_variant, self.sisr_stages, self.resnet_blocks
                    ),
                ));
            }
        }
        Ok(ValidatedConfig(self))
    }

    /// Short stable hash of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        fingerprint_of(self)
    }
}

pub(crate) fn fingerprint_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config types always serialize");
    Sha256::digest(&json)[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// A [`ModelConfig`] that passed validation. Read-only.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidatedConfig(ModelConfig);

impl ValidatedConfig {
    pub fn into_inner(self) -> ModelConfig {
        self.0
    }

    pub fn resample(&self) -> ResampleSpec {
        resample_spec(self.0.scale)
    }

    pub fn s(&self) -> usize {
        self.0.scale.get()
    }
}

impl Deref for ValidatedConfig {
    type Target = ModelConfig;
    fn deref(&self) -> &ModelConfig {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_epoch: usize,
    pub total_epochs: usize,
    pub adam_beta1: f64,
    pub patch_lr: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr_initial: 1e-4,
            lr_decay_factor: 0.1,
            lr_decay_epoch: 75,
            total_epochs: 150,
            adam_beta1: 0.9,
            patch_lr: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.total_epochs == 0 {
            return Err(Error::config("total_epochs", "must be positive"));
        }
        if !(self.lr_initial >= 0.0 && self.lr_initial.is_finite()) {
            return Err(Error::config("lr_initial", "must be a finite non-negative number"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) {
            return Err(Error::config("adam_beta1", "must lie in [0, 1)"));
        }
        if self.patch_lr == 0 {
            return Err(Error::config("patch_lr", "must be positive"));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        fingerprint_of(self)
    }
}

const MODEL_KEYS: &[&str] = &[
    "scale",
    "context_n",
    "c_l",
    "c_m",
    "c_h",
    "sisr_stages",
    "resnet_blocks",
    "order",
    "pf_sequence",
    "integration",
    "use_flow",
    "residual_learning",
    "size_variant",
];

const TRAIN_KEYS: &[&str] = &[
    "batch_size",
    "lr_initial",
    "lr_decay_factor",
    "lr_decay_epoch",
    "total_epochs",
    "adam_beta1",
    "patch_lr",
    "seed",
];

/// Parses a flat `key = value` config whose keys are the field names of
/// [`ModelConfig`] and [`TrainConfig`]. Missing keys take their defaults.
pub fn parse_config_str(text: &str) -> Result<(ModelConfig, TrainConfig)> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Serde(e.to_string()))?;
    let mut model = toml::Table::new();
    let mut train = toml::Table::new();
    for (key, value) in table {
        if MODEL_KEYS.contains(&key.as_str()) {
            model.insert(key, value);
        } else if TRAIN_KEYS.contains(&key.as_str()) {
            train.insert(key, value);
        } else {
            return Err(Error::Serde(format!("unknown config key `{key}`")));
        }
    }
    let model: ModelConfig = model.try_into().map_err(|e: toml::de::Error| Error::Serde(e.to_string()))?;
    let train: TrainConfig = train.try_into().map_err(|e: toml::de::Error| Error::Serde(e.to_string()))?;
    Ok((model, train))
}

pub fn load_config_file(path: &Path) -> Result<(ModelConfig, TrainConfig)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

/// Renders both configs back into the flat key-value format.
pub fn to_config_string(model: &ModelConfig, train: &TrainConfig) -> String {
    let mut table = toml::Table::try_from(model).expect("model config serializes");
    table.extend(toml::Table::try_from(train).expect("train config serializes"));
    toml::to_string(&table).expect("flat table serializes")
}
