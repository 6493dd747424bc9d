//! Metrics, evaluation protocols, dataset evaluation, reports, plots and
//! the ablation harness.

pub mod ablation;
pub mod metrics;
pub mod plot;
pub mod report;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ScaleFactor, TemporalOrder};
use crate::context::plan_context;
use crate::dataset::{degrade, make_sample, upscale, SequenceRecord};
use crate::error::{Error, Result};
use crate::flow::{mean_flow_magnitude, FlowKey, FlowProvider, MotionTier, TierThresholds};
use crate::frame::Frame;
use crate::model::VsrModel;

pub use metrics::{gaussian_kernel, psnr, psnr_y, rgb_to_y, ssim, ssim_window, ssim_y, LumaPlane, PSNR_CAP};

/// Border crop and frame trimming applied before metrics.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub name: String,
    pub border_crop: usize,
    pub trim_head: usize,
    pub trim_tail: usize,
}

impl EvalProtocol {
    /// Crop 8 pixels, skip the first six and last three frames.
    pub fn a() -> Self {
        Self {
            name: "A".into(),
            border_crop: 8,
            trim_head: 6,
            trim_tail: 3,
        }
    }

    /// No border crop, skip the first and last two frames.
    pub fn b() -> Self {
        Self {
            name: "B".into(),
            border_crop: 0,
            trim_head: 2,
            trim_tail: 2,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_uppercase().as_str() {
            "A" => Ok(Self::a()),
            "B" => Ok(Self::b()),
            _ => Err(Error::config("protocol", format!("unknown protocol {name:?}; use A or B"))),
        }
    }

    /// Indices of evaluated frames in a sequence of `len` frames, further
    /// narrowed so that `past`/`future` context frames exist.
    pub fn frame_range(&self, len: usize, past: usize, future: usize) -> std::ops::Range<usize> {
        let start = self.trim_head.max(past);
        let end = len.saturating_sub(self.trim_tail.max(future));
        start..end.max(start)
    }
}

/// How super-resolved frames are produced.
#[derive(Clone, Copy)]
pub enum Method<'a> {
    Bicubic,
    Model {
        model: &'a VsrModel,
        flows: &'a dyn FlowProvider,
        seed: u64,
    },
}

impl Method<'_> {
    pub fn name(&self) -> String {
        match self {
            Method::Bicubic => "bicubic".into(),
            Method::Model { model, .. } => {
                format!("{}/{}", model.architecture(), model.config().context_n)
            }
        }
    }

    /// Context frames needed before and after the target.
    fn reach(&self) -> (usize, usize) {
        match self {
            Method::Bicubic => (0, 0),
            Method::Model { model, .. } => {
                let n = model.config().context_n;
                match model.config().order {
                    TemporalOrder::PF => (n / 2, n / 2),
                    TemporalOrder::P | TemporalOrder::PR => (n, 0),
                }
            }
        }
    }
}

/// Metrics of one evaluated frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub sequence: String,
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub protocol: String,
    pub tier: Option<MotionTier>,
}

/// Mean metrics of a group of frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub name: String,
    pub frames: usize,
    pub psnr: f64,
    pub ssim: f64,
}

fn aggregate<'a>(name: &str, records: impl Iterator<Item = &'a MetricRecord>) -> Aggregate {
    let (mut n, mut p, mut s) = (0usize, 0.0, 0.0);
    for r in records {
        n += 1;
        p += r.psnr;
        s += r.ssim;
    }
    let d = n.max(1) as f64;
    Aggregate {
        name: name.into(),
        frames: n,
        psnr: p / d,
        ssim: s / d,
    }
}

/// Per-frame records plus per-sequence, per-tier and overall means.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetReport {
    pub method: String,
    pub protocol: EvalProtocol,
    pub scale: ScaleFactor,
    pub records: Vec<MetricRecord>,
    pub sequences: Vec<Aggregate>,
    pub tiers: Vec<Aggregate>,
    /// Mean over all evaluated frames.
    pub overall: Aggregate,
}

/// Y-channel metrics of `sr` against `hr` after the protocol's border crop.
pub fn frame_metrics(sr: &Frame, hr: &Frame, protocol: &EvalProtocol) -> Result<(f64, f64)> {
    let a = rgb_to_y(&sr.quantized()).crop_border(protocol.border_crop)?;
    let b = rgb_to_y(hr).crop_border(protocol.border_crop)?;
    Ok((psnr(&a, &b)?, ssim(&a, &b)?))
}

/// Evaluates one sequence of HR frames.
pub fn evaluate_sequence(method: Method<'_>, seq_id: &str, hr: &[Frame], protocol: &EvalProtocol, s: ScaleFactor) -> Result<Vec<MetricRecord>> {
    let (past, future) = method.reach();
    let range = protocol.frame_range(hr.len(), past, future);
    let mut out = Vec::with_capacity(range.len());
    for t in range {
        let (sr, truth) = match method {
            Method::Bicubic => {
                let truth = hr[t].mod_crop(s.get())?;
                (upscale(&degrade(&truth, s)?, s)?, truth)
            }
            Method::Model { model, flows, seed } => {
                let cfg = model.config();
                let plan = plan_context(t, cfg.context_n, cfg.order, cfg.pf_sequence, seed, hr.len())?;
                let sample = make_sample(seq_id, hr, &plan, s, flows)?;
                let sr = model.infer(&sample.lr_target, &sample.lr_neighbors, &sample.flows, false)?;
                (sr.sr_frame, sample.hr_target)
            }
        };
        let (p, q) = frame_metrics(&sr, &truth, protocol)?;
        out.push(MetricRecord {
            sequence: seq_id.into(),
            frame: t,
            psnr: p,
            ssim: q,
            protocol: protocol.name.clone(),
            tier: None,
        });
    }
    Ok(out)
}

/// Mean LR flow magnitude from every frame toward the middle frame.
pub fn sequence_motion(seq_id: &str, hr: &[Frame], s: ScaleFactor, flows: &dyn FlowProvider) -> Result<f64> {
    let lr = hr.iter().map(|f| degrade(&f.mod_crop(s.get())?, s)).collect::<Result<Vec<_>>>()?;
    let mid = lr.len() / 2;
    let fields = (0..lr.len())
        .filter(|&k| k != mid)
        .map(|k| {
            let key = FlowKey {
                seq: seq_id,
                target: mid,
                neighbor: k,
            };
            flows.get(&key, &lr[mid], &lr[k])
        })
        .collect::<Result<Vec<_>>>()?;
    mean_flow_magnitude(&fields)
}

/// Motion stratification for [`evaluate_dataset`].
#[derive(Clone, Copy)]
pub struct TierSpec<'a> {
    pub thresholds: TierThresholds,
    pub flows: &'a dyn FlowProvider,
}

/// Evaluates every record (sequences in parallel, results in input order).
pub fn evaluate_dataset(
    method: Method<'_>,
    records: &[SequenceRecord],
    protocol: &EvalProtocol,
    s: ScaleFactor,
    tiers: Option<TierSpec<'_>>,
) -> Result<DatasetReport> {
    let per_seq = records
        .par_iter()
        .map(|rec| {
            let hr = rec.load_frames()?;
            let mut rows = evaluate_sequence(method, &rec.id, &hr, protocol, s)?;
            if let Some(spec) = tiers {
                let tier = spec.thresholds.tier(sequence_motion(&rec.id, &hr, s, spec.flows)?);
                rows.iter_mut().for_each(|r| r.tier = Some(tier));
            }
            Ok(rows)
        })
        .collect::<Vec<Result<Vec<MetricRecord>>>>();
    let mut all = Vec::new();
    for (rec, rows) in records.iter().zip(per_seq) {
        all.extend(rows.map_err(|e| e.context(format!("evaluating sequence {}", rec.id)))?);
    }
    Ok(build_report(method.name(), protocol.clone(), s, all))
}

/// Groups per-frame records into a report.
pub fn build_report(method: String, protocol: EvalProtocol, scale: ScaleFactor, records: Vec<MetricRecord>) -> DatasetReport {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&MetricRecord>> = BTreeMap::new();
    for r in &records {
        if !groups.contains_key(r.sequence.as_str()) {
            order.push(&r.sequence);
        }
        groups.entry(&r.sequence).or_default().push(r);
    }
    let sequences = order.iter().map(|name| aggregate(name, groups[name].iter().copied())).collect();
    let tiers = MotionTier::ALL
        .iter()
        .filter(|t| records.iter().any(|r| r.tier == Some(**t)))
        .map(|t| aggregate(t.name(), records.iter().filter(|r| r.tier == Some(*t))))
        .collect();
    let overall = aggregate("Average", records.iter());
    DatasetReport {
        method,
        protocol,
        scale,
        sequences,
        tiers,
        overall,
        records,
    }
}
