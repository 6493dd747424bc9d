//! Dataset adapters, the bicubic degradation, joint augmentation and patch
//! sampling.

mod resize;
mod synthetic;

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ScaleFactor;
use crate::context::ContextPlan;
use crate::error::{Error, Result, ResultExt};
use crate::flow::{FlowField, FlowKey, FlowProvider};
use crate::frame::Frame;

pub use resize::{bicubic_resize, resized_len};
pub use synthetic::{SyntheticSequence, SyntheticSpec};

/// Downscales an HR frame by `s` and rounds to 8-bit levels, the way LR
/// inputs are produced from stored HR images.
pub fn degrade(hr: &Frame, s: ScaleFactor) -> Result<Frame> {
    let lr = bicubic_resize(hr.tensor(), 1.0 / s.get() as f64)?;
    Ok(Frame::from_tensor(lr)?.quantized())
}

/// Bicubic upscale by `s`, unclipped.
pub fn upscale(lr: &Frame, s: ScaleFactor) -> Result<Frame> {
    Frame::from_tensor(bicubic_resize(lr.tensor(), s.get() as f64)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// `<root>/sequences/<a>/<b>/im1.png..im7.png` plus a list file.
    Vimeo90k,
    /// One directory per sequence of lexicographically ordered frames.
    FrameDir,
}

/// One video sequence on disk.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SequenceRecord {
    pub id: String,
    pub frames: Vec<PathBuf>,
    pub width: u32,
    pub height: u32,
    pub split: String,
}

impl SequenceRecord {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn load_frames(&self) -> Result<Vec<Frame>> {
        self.frames
            .iter()
            .map(|p| Frame::load_png(p))
            .collect::<Result<_>>()
            .context_with(|| format!("sequence {}", self.id))
    }
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png")
    )
}

fn record(id: String, frames: Vec<PathBuf>, split: &str, min_frames: usize, dir: &Path) -> Result<SequenceRecord> {
    if frames.len() < min_frames.max(1) {
        return Err(Error::EmptySequence {
            seq: id,
            frames: frames.len(),
            needed: min_frames.max(1),
        });
    }
    let mut size = None;
    for f in &frames {
        let dims = image::image_dimensions(f).map_err(|source| Error::Image {
            path: f.clone(),
            source,
        })?;
        match size {
            None => size = Some(dims),
            Some(first) if first != dims => {
                return Err(Error::Layout {
                    path: f.clone(),
                    reason: format!(
                        "frame is {}x{} but {} starts at {}x{}",
                        dims.0,
                        dims.1,
                        dir.display(),
                        first.0,
                        first.1
                    ),
                })
            }
            Some(_) => {}
        }
    }
    let (width, height) = size.expect("at least one frame");
    Ok(SequenceRecord {
        id,
        frames,
        width,
        height,
        split: split.into(),
    })
}

fn frame_dir_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    frames.sort();
    Ok(frames)
}

/// Lists and validates the sequences under `root`. `min_frames` is the
/// shortest sequence accepted (context length + 1 for training).
pub fn load_dataset(kind: DatasetKind, root: &Path, list_file: Option<&Path>, min_frames: usize) -> Result<Vec<SequenceRecord>> {
    if !root.is_dir() {
        return Err(Error::Layout {
            path: root.to_path_buf(),
            reason: "dataset root is not a directory".into(),
        });
    }
    match kind {
        DatasetKind::FrameDir => {
            let mut dirs: Vec<PathBuf> = fs::read_dir(root)
                .map_err(|e| Error::io(root, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            dirs.sort();
            if dirs.is_empty() {
                return Err(Error::Layout {
                    path: root.to_path_buf(),
                    reason: "no sequence directories".into(),
                });
            }
            dirs.iter()
                .map(|d| {
                    let id = d.file_name().unwrap_or_default().to_string_lossy().into_owned();
                    record(id, frame_dir_frames(d)?, "all", min_frames, d)
                })
                .collect()
        }
        DatasetKind::Vimeo90k => {
            let list = list_file.map(Path::to_path_buf).unwrap_or_else(|| root.join("sep_testlist.txt"));
            let text = fs::read_to_string(&list).map_err(|e| Error::io(&list, e))?;
            let split = list
                .file_stem()
                .map(|s| s.to_string_lossy().trim_start_matches("sep_").trim_end_matches("list").to_string())
                .unwrap_or_default();
            let mut out = Vec::new();
            for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
                let dir = root.join("sequences").join(line);
                if !dir.is_dir() {
                    return Err(Error::Layout {
                        path: dir,
                        reason: format!("listed in {} but missing", list.display()),
                    });
                }
                let frames: Vec<PathBuf> = (1..=7).map(|i| dir.join(format!("im{i}.png"))).collect();
                if let Some(missing) = frames.iter().find(|p| !p.is_file()) {
                    return Err(Error::Layout {
                        path: missing.clone(),
                        reason: "septuplet frame missing".into(),
                    });
                }
                out.push(record(line.to_string(), frames, &split, min_frames, &dir)?);
            }
            if out.is_empty() {
                return Err(Error::Layout {
                    path: list,
                    reason: "list file names no sequences".into(),
                });
            }
            Ok(out)
        }
    }
}

/// One training example: the LR target with its ordered neighbours and
/// flows, and the HR ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub lr_target: Frame,
    pub lr_neighbors: Vec<Frame>,
    pub flows: Vec<FlowField>,
    pub hr_target: Frame,
    /// LR crop origin `(x, y)` relative to the full frame.
    pub origin: (usize, usize),
}

impl TrainSample {
    pub fn scale(&self) -> usize {
        self.hr_target.width() / self.lr_target.width()
    }

    fn map(&self, frame_op: impl Fn(&Frame) -> Frame, flow_op: impl Fn(&FlowField) -> FlowField) -> Self {
        Self {
            lr_target: frame_op(&self.lr_target),
            lr_neighbors: self.lr_neighbors.iter().map(&frame_op).collect(),
            flows: self.flows.iter().map(flow_op).collect(),
            hr_target: frame_op(&self.hr_target),
            origin: self.origin,
        }
    }
}

/// Builds a sample for `plan` from the HR frames of one sequence.
pub fn make_sample(seq_id: &str, hr_frames: &[Frame], plan: &ContextPlan, s: ScaleFactor, flows: &dyn FlowProvider) -> Result<TrainSample> {
    let m = s.get();
    let hr_target = hr_frames[plan.target].mod_crop(m)?;
    let lr_target = degrade(&hr_target, s)?;
    let mut lr_neighbors = Vec::with_capacity(plan.neighbors.len());
    let mut fields = Vec::with_capacity(plan.neighbors.len());
    for (&k, &replicated) in plan.neighbors.iter().zip(&plan.replicated) {
        let nb = degrade(&hr_frames[k].mod_crop(m)?, s)?;
        let flow = if replicated {
            FlowField::zeros(nb.height(), nb.width())
        } else {
            let key = FlowKey {
                seq: seq_id,
                target: plan.target,
                neighbor: k,
            };
            flows.get(&key, &lr_target, &nb)?
        };
        lr_neighbors.push(nb);
        fields.push(flow);
    }
    Ok(TrainSample {
        lr_target,
        lr_neighbors,
        flows: fields,
        hr_target,
        origin: (0, 0),
    })
}

/// A right-angle spatial transform applied jointly to frames and flows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpatialOp {
    HFlip,
    VFlip,
    Rot90,
}

pub fn apply_op(sample: &TrainSample, op: SpatialOp) -> TrainSample {
    let frame = |f: &Frame| {
        let t = match op {
            SpatialOp::HFlip => crate::frame::hflip(f.tensor()),
            SpatialOp::VFlip => crate::frame::vflip(f.tensor()),
            SpatialOp::Rot90 => crate::frame::rot90(f.tensor()),
        };
        Frame::from_tensor(t).expect("spatial ops keep three channels")
    };
    let flow = |f: &FlowField| match op {
        SpatialOp::HFlip => f.hflip(),
        SpatialOp::VFlip => f.vflip(),
        SpatialOp::Rot90 => f.rot90(),
    };
    sample.map(frame, flow)
}

/// Which random transforms [`augment`] may use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentOps {
    pub hflip: bool,
    pub vflip: bool,
    pub rot90: bool,
}

impl AugmentOps {
    pub const ALL: Self = Self {
        hflip: true,
        vflip: true,
        rot90: true,
    };
    pub const NONE: Self = Self {
        hflip: false,
        vflip: false,
        rot90: false,
    };
}

/// Applies each enabled flip with probability ½ and a rotation by a random
/// multiple of 90°.
pub fn augment(sample: &TrainSample, ops: AugmentOps, seed: u64) -> TrainSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = sample.clone();
    if ops.hflip && rng.random_bool(0.5) {
        out = apply_op(&out, SpatialOp::HFlip);
    }
    if ops.vflip && rng.random_bool(0.5) {
        out = apply_op(&out, SpatialOp::VFlip);
    }
    if ops.rot90 {
        for _ in 0..rng.random_range(0..4) {
            out = apply_op(&out, SpatialOp::Rot90);
        }
    }
    out
}

/// Crops an aligned `patch_lr × patch_lr` window (and the matching HR
/// window) at a seeded uniform origin.
pub fn sample_patch(sample: &TrainSample, patch_lr: usize, seed: u64) -> Result<TrainSample> {
    let (h, w) = (sample.lr_target.height(), sample.lr_target.width());
    if patch_lr == 0 || patch_lr > h || patch_lr > w {
        return Err(Error::PatchTooLarge {
            patch: patch_lr,
            width: w,
            height: h,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rng.random_range(0..=w - patch_lr);
    let y = rng.random_range(0..=h - patch_lr);
    crop_sample(sample, x, y, patch_lr, patch_lr)
}

/// Crops an LR window at `(x, y)` together with the aligned HR window.
pub fn crop_sample(sample: &TrainSample, x: usize, y: usize, width: usize, height: usize) -> Result<TrainSample> {
    let s = sample.scale();
    Ok(TrainSample {
        lr_target: sample.lr_target.crop(x, y, width, height)?,
        lr_neighbors: sample
            .lr_neighbors
            .iter()
            .map(|f| f.crop(x, y, width, height))
            .collect::<Result<_>>()?,
        flows: sample.flows.iter().map(|f| f.crop(x, y, width, height)).collect::<Result<_>>()?,
        hr_target: sample.hr_target.crop(s * x, s * y, s * width, s * height)?,
        origin: (sample.origin.0 + x, sample.origin.1 + y),
    })
}
