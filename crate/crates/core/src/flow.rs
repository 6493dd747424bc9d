//! Dense optical flow: the Middlebury `.flo` format, pluggable flow
//! providers, magnitude statistics and motion-tier stratification.
//!
//! Convention: a flow field is stored at LR resolution and maps pixel
//! positions of the *neighbour* frame toward the *target* frame, i.e. the
//! scene point at `p` in the neighbour appears at `p + F(p)` in the target.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;

use rbpn_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{hflip, rot90, vflip, Frame};

/// Magic number opening every `.flo` file.
pub const FLO_MAGIC: f32 = 202021.25;

/// Per-pixel displacement `(u, v)` in pixels, stored as a `[2, h, w]` map.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField(Tensor);

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Tensor::zeros(&[2, height, width]))
    }

    pub fn uniform(height: usize, width: usize, u: f64, v: f64) -> Self {
        let plane = height * width;
        Self(Tensor::from_fn(&[2, height, width], |i| if i < plane { u } else { v }))
    }

    pub fn from_components(height: usize, width: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != height * width || v.len() != height * width {
            return Err(Error::Shape(format!("flow components must hold {height}x{width} values")));
        }
        let mut data = u;
        data.extend(v);
        Self::from_tensor(Tensor::new(&[2, height, width], data)?)
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match t.shape() {
            [2, h, w] if *h > 0 && *w > 0 => {
                if !t.is_finite() {
                    return Err(Error::NonFinite("flow field".into()));
                }
                Ok(Self(t))
            }
            other => Err(Error::Shape(format!("a flow field needs shape [2, h, w], got {other:?}"))),
        }
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn u(&self) -> &[f64] {
        let plane = self.height() * self.width();
        &self.0.data()[..plane]
    }

    pub fn v(&self) -> &[f64] {
        let plane = self.height() * self.width();
        &self.0.data()[plane..]
    }

    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Self> {
        Ok(Self(crate::frame::crop(&self.0, x, y, width, height)?))
    }

    fn map_components(t: Tensor, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let (_, h, w) = t.dims3().expect("flow tensor");
        let plane = h * w;
        let mut out = t;
        let data = out.data_mut();
        for i in 0..plane {
            let (u, v) = f(data[i], data[plane + i]);
            data[i] = u;
            data[plane + i] = v;
        }
        Self(out)
    }

    /// Left-right mirror; the horizontal component changes sign.
    pub fn hflip(&self) -> Self {
        Self::map_components(hflip(&self.0), |u, v| (-u, v))
    }

    /// Top-bottom mirror; the vertical component changes sign.
    pub fn vflip(&self) -> Self {
        Self::map_components(vflip(&self.0), |u, v| (u, -v))
    }

    /// Same rotation as [`crate::frame::rot90`]; vectors map `(u, v) → (−v, u)`.
    pub fn rot90(&self) -> Self {
        Self::map_components(rot90(&self.0), |u, v| (-v, u))
    }

    /// Mean of `sqrt(u² + v²)` over all pixels.
    pub fn mean_magnitude(&self) -> f64 {
        let sum: f64 = self.u().iter().zip(self.v()).map(|(u, v)| u.hypot(*v)).sum();
        sum / (self.height() * self.width()) as f64
    }
}

fn flo_format_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads a Middlebury `.flo` file: f32 magic, i32 width, i32 height, then
/// row-major interleaved `(u, v)` f32 pairs, all little-endian.
pub fn read_flo(path: &Path) -> Result<FlowField> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 {
        return Err(flo_format_error(path, format!("header truncated ({} bytes)", bytes.len())));
    }
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().unwrap() };
    let magic = f32::from_le_bytes(word(0));
    if magic != FLO_MAGIC {
        return Err(flo_format_error(path, format!("bad magic {magic}")));
    }
    let width = i32::from_le_bytes(word(4));
    let height = i32::from_le_bytes(word(8));
    if width <= 0 || height <= 0 {
        return Err(flo_format_error(path, format!("invalid dimensions {width}x{height}")));
    }
    let (w, h) = (width as usize, height as usize);
    let expected = 12 + w * h * 8;
    if bytes.len() != expected {
        return Err(flo_format_error(
            path,
            format!("expected {expected} bytes for {w}x{h}, found {}", bytes.len()),
        ));
    }
    let mut u = Vec::with_capacity(w * h);
    let mut v = Vec::with_capacity(w * h);
    for px in bytes[12..].chunks_exact(8) {
        u.push(f32::from_le_bytes(px[0..4].try_into().unwrap()) as f64);
        v.push(f32::from_le_bytes(px[4..8].try_into().unwrap()) as f64);
    }
    FlowField::from_components(h, w, u, v).map_err(|e| flo_format_error(path, e.to_string()))
}

/// Writes a `.flo` file. Components are stored as f32.
pub fn write_flo(field: &FlowField, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut buf = Vec::with_capacity(12 + field.u().len() * 8);
    buf.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    buf.extend_from_slice(&(field.width() as i32).to_le_bytes());
    buf.extend_from_slice(&(field.height() as i32).to_le_bytes());
    for (u, v) in field.u().iter().zip(field.v()) {
        buf.extend_from_slice(&(*u as f32).to_le_bytes());
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.write_all(&buf).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

/// Identifies the flow from frame `neighbor` toward frame `target` of one
/// sequence.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FlowKey<'a> {
    pub seq: &'a str,
    pub target: usize,
    pub neighbor: usize,
}

/// Source of LR flow fields. Implementations are read-only after
/// construction and may be shared between threads.
pub trait FlowProvider: Send + Sync {
    fn get(&self, key: &FlowKey<'_>, target: &Frame, neighbor: &Frame) -> Result<FlowField>;
}

/// All-zero flow of the frame's size.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroFlow;

impl FlowProvider for ZeroFlow {
    fn get(&self, _key: &FlowKey<'_>, target: &Frame, _neighbor: &Frame) -> Result<FlowField> {
        Ok(FlowField::zeros(target.height(), target.width()))
    }
}

/// Path of a precomputed flow inside `root`: `<root>/<seq>/<t>_<k>.flo`.
pub fn flow_path(root: &Path, key: &FlowKey<'_>) -> PathBuf {
    root.join(key.seq).join(format!("{}_{}.flo", key.target, key.neighbor))
}

/// Reads `.flo` files laid out as `<root>/<seq>/<t>_<k>.flo`.
#[derive(Clone, Debug)]
pub struct PrecomputedFlow {
    root: PathBuf,
}

impl PrecomputedFlow {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.is_dir() {
            return Err(Error::Layout {
                path: root,
                reason: "flow directory does not exist".into(),
            });
        }
        Ok(Self { root })
    }
}

impl FlowProvider for PrecomputedFlow {
    fn get(&self, key: &FlowKey<'_>, target: &Frame, _neighbor: &Frame) -> Result<FlowField> {
        let path = flow_path(&self.root, key);
        if !path.is_file() {
            return Err(Error::MissingFlow {
                seq: key.seq.to_string(),
                target: key.target,
                neighbor: key.neighbor,
                path,
            });
        }
        let field = read_flo(&path)?;
        if (field.height(), field.width()) != (target.height(), target.width()) {
            return Err(Error::Shape(format!(
                "{}: flow is {}x{} but the LR frame is {}x{}",
                path.display(),
                field.width(),
                field.height(),
                target.width(),
                target.height()
            )));
        }
        Ok(field)
    }
}

/// Runs `program [args..] <neighbor.png> <target.png> <out.flo>` and reads the
/// result. Invocations through one instance are serialized.
#[derive(Debug)]
pub struct ExternalFlow {
    program: String,
    args: Vec<String>,
    lock: Mutex<()>,
}

impl ExternalFlow {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
            lock: Mutex::new(()),
        }
    }

    /// Splits a whitespace-separated command line into program and arguments.
    pub fn from_command_line(cmd: &str) -> Result<Self> {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| Error::config("flow_cmd", "empty external flow command"))?;
        Ok(Self::new(program, parts.collect()))
    }

    pub fn estimate(&self, from: &Frame, to: &Frame) -> Result<FlowField> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        let out = dir.path().join("out.flo");
        from.save_png(&a)?;
        to.save_png(&b)?;
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(&a)
            .arg(&b)
            .arg(&out)
            .output()
            .map_err(|e| Error::Subprocess(format!("could not run `{}`: {e}", self.program)))?;
        if !status.status.success() {
            return Err(Error::Subprocess(format!(
                "`{}` exited with {}: {}",
                self.program,
                status.status,
                String::from_utf8_lossy(&status.stderr).trim()
            )));
        }
        if !out.is_file() {
            return Err(Error::Subprocess(format!("`{}` did not write {}", self.program, out.display())));
        }
        read_flo(&out)
    }
}

impl FlowProvider for ExternalFlow {
    fn get(&self, _key: &FlowKey<'_>, target: &Frame, neighbor: &Frame) -> Result<FlowField> {
        self.estimate(neighbor, target)
    }
}

/// Mean magnitude over every pixel of every field.
pub fn mean_flow_magnitude(fields: &[FlowField]) -> Result<f64> {
    if fields.is_empty() {
        return Err(Error::EmptyInput("no flow fields"));
    }
    let (sum, count) = fields.iter().fold((0.0, 0usize), |(s, n), f| {
        let px = f.height() * f.width();
        (s + f.mean_magnitude() * px as f64, n + px)
    });
    Ok(sum / count as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionTier {
    Slow,
    Medium,
    Fast,
}

impl MotionTier {
    pub const ALL: [MotionTier; 3] = [MotionTier::Slow, MotionTier::Medium, MotionTier::Fast];

    pub fn name(self) -> &'static str {
        match self {
            MotionTier::Slow => "slow",
            MotionTier::Medium => "medium",
            MotionTier::Fast => "fast",
        }
    }
}

/// Cut points partitioning `[0, ∞)` into slow `[0, slow_max)`, medium
/// `[slow_max, medium_max)` and fast `[medium_max, ∞)`, in pixels/frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierThresholds {
    pub slow_max: f64,
    pub medium_max: f64,
}

impl TierThresholds {
    /// Shipped defaults: geometric means of neighbouring tier averages
    /// (0.6, 2.5 and 8.3 px/frame). Replace with [`calibrate_thresholds`]
    /// output when the test split is available.
    pub const DEFAULT: TierThresholds = TierThresholds {
        slow_max: 1.224_744_871_391_589,
        medium_max: 4.555_216_789_572_15,
    };

    pub fn new(slow_max: f64, medium_max: f64) -> Result<Self> {
        if !(slow_max > 0.0 && slow_max < medium_max && medium_max.is_finite()) {
            return Err(Error::config(
                "tiers",
                format!("need 0 < slow_max < medium_max < inf, got {slow_max}, {medium_max}"),
            ));
        }
        Ok(Self { slow_max, medium_max })
    }

    pub fn tier(&self, magnitude: f64) -> MotionTier {
        if magnitude < self.slow_max {
            MotionTier::Slow
        } else if magnitude < self.medium_max {
            MotionTier::Medium
        } else {
            MotionTier::Fast
        }
    }
}

impl Default for TierThresholds {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Assigns every sequence magnitude to exactly one tier.
pub fn stratify(magnitudes: &[f64], tiers: &TierThresholds) -> Vec<MotionTier> {
    magnitudes.iter().map(|&m| tiers.tier(m)).collect()
}

/// Finds cut points that reproduce the requested `[slow, medium, fast]`
/// population sizes, placing each cut midway between the neighbouring
/// sorted magnitudes.
pub fn calibrate_thresholds(magnitudes: &[f64], counts: [usize; 3]) -> Result<TierThresholds> {
    if magnitudes.is_empty() {
        return Err(Error::EmptyInput("no sequence magnitudes"));
    }
    if counts.iter().sum::<usize>() != magnitudes.len() {
        return Err(Error::config(
            "tiers",
            format!("tier counts sum to {} but there are {} sequences", counts.iter().sum::<usize>(), magnitudes.len()),
        ));
    }
    if counts[0] == 0 || counts[2] == 0 {
        return Err(Error::config("tiers", "slow and fast tiers must be non-empty"));
    }
    let mut sorted = magnitudes.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cut = |i: usize| -> Result<f64> {
        let (lo, hi) = (sorted[i - 1], sorted[i]);
        if lo == hi {
            return Err(Error::config("tiers", format!("tie at magnitude {lo} prevents an exact split")));
        }
        Ok(0.5 * (lo + hi))
    };
    let slow_max = cut(counts[0])?;
    let medium_max = cut(counts[0] + counts[1])?;
    TierThresholds::new(slow_max, medium_max)
}
