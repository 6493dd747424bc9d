//! Trains and evaluates a grid of model variants on procedural data under
//! one budget.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{frame_metrics, EvalProtocol};
use super::plot::line_chart;
use crate::config::{Integration, ModelConfig, ScaleFactor, SizeVariant, TemporalOrder, TrainConfig};
use crate::context::plan_context;
use crate::dataset::{SyntheticSequence, SyntheticSpec, TrainSample};
use crate::error::{Error, Result};
use crate::model::{Architecture, VsrModel};
use crate::training::Trainer;

/// Values to sweep per axis; an empty axis keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationGrid {
    pub n: Vec<usize>,
    pub order: Vec<TemporalOrder>,
    pub use_flow: Vec<bool>,
    pub integration: Vec<Integration>,
    pub size_variant: Vec<SizeVariant>,
    pub residual_learning: Vec<bool>,
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl AblationGrid {
    /// Cartesian product over the axes, applied to `base`.
    pub fn cells(&self, base: &ModelConfig) -> Vec<ModelConfig> {
        let mut out = Vec::new();
        for n in axis(&self.n, base.context_n) {
            for order in axis(&self.order, base.order) {
                for use_flow in axis(&self.use_flow, base.use_flow) {
                    for integration in axis(&self.integration, base.integration) {
                        for size in axis(&self.size_variant, base.size_variant) {
                            for residual in axis(&self.residual_learning, base.residual_learning) {
                                let cfg = ModelConfig {
                                    context_n: n,
                                    order,
                                    use_flow,
                                    integration,
                                    residual_learning: residual,
                                    ..base.clone()
                                };
                                out.push(if size == base.size_variant { cfg } else { cfg.with_size_variant(size) });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Data and optimization budget shared by every cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyTrainConfig {
    pub channels: usize,
    pub scale: ScaleFactor,
    pub hr_height: usize,
    pub hr_width: usize,
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patch_lr: usize,
    /// Shortest texture wavelength in HR pixels.
    pub min_wavelength: f64,
    pub seed: u64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            scale: ScaleFactor::X4,
            hr_height: 32,
            hr_width: 32,
            train_sequences: 16,
            test_sequences: 4,
            iterations: 120,
            batch_size: 4,
            lr: 2e-3,
            patch_lr: 8,
            min_wavelength: 3.0,
            seed: 0,
        }
    }
}

impl ToyTrainConfig {
    /// Base model for the grid: tiny widths, one stage, one block.
    pub fn base_model(&self) -> ModelConfig {
        ModelConfig {
            scale: self.scale,
            ..ModelConfig::tiny(self.channels)
        }
    }
}

/// Outcome of one grid cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub config: ModelConfig,
    pub params: Option<u64>,
    pub final_loss: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub protocol: EvalProtocol,
    pub toy: ToyTrainConfig,
    /// Mean Y-PSNR/SSIM of bicubic upscaling on the same test set.
    pub bicubic_psnr: f64,
    pub bicubic_ssim: f64,
    pub rows: Vec<AblationRow>,
}

pub fn cell_label(cfg: &ModelConfig) -> String {
    format!(
        "n={} {:?} flow={} {:?} {:?} res={}",
        cfg.context_n, cfg.order, cfg.use_flow, cfg.integration, cfg.size_variant, cfg.residual_learning
    )
}

/// Procedural train/test sequences long enough for `max_n` neighbours on
/// both sides of the middle frame.
pub struct ToyData {
    pub train: Vec<SyntheticSequence>,
    pub test: Vec<SyntheticSequence>,
    pub target: usize,
}

impl ToyData {
    pub fn generate(toy: &ToyTrainConfig, max_n: usize) -> Self {
        let spec = SyntheticSpec {
            min_wavelength: toy.min_wavelength,
            ..SyntheticSpec::small(toy.hr_height, toy.hr_width, 2 * max_n + 1)
        };
        let gen = |count: usize, offset: u64| {
            (0..count as u64)
                .map(|i| SyntheticSequence::generate(&spec, toy.seed.wrapping_mul(1_000_003).wrapping_add(offset + i)))
                .collect::<Vec<_>>()
        };
        Self {
            train: gen(toy.train_sequences, 0),
            test: gen(toy.test_sequences, 1 << 32),
            target: max_n,
        }
    }

    pub fn samples(&self, cfg: &ModelConfig, test: bool, seed: u64) -> Result<Vec<TrainSample>> {
        let seqs = if test { &self.test } else { &self.train };
        seqs.iter()
            .map(|seq| {
                let plan = plan_context(self.target, cfg.context_n, cfg.order, cfg.pf_sequence, seed, seq.hr.len())?;
                seq.sample(&plan, cfg.scale)
            })
            .collect()
    }
}

/// Trains `arch` with `cfg` on the toy data and returns the trained model
/// and its last epoch loss.
pub fn train_toy(arch: Architecture, cfg: &ModelConfig, data: &ToyData, toy: &ToyTrainConfig) -> Result<(VsrModel, f64)> {
    let valid = cfg.clone().validate()?;
    let train = data.samples(cfg, false, toy.seed)?;
    let model = VsrModel::new(arch, valid, toy.seed)?;
    let steps_per_epoch = train.len().div_ceil(toy.batch_size).max(1);
    let epochs = toy.iterations.div_ceil(steps_per_epoch).max(1);
    let tcfg = TrainConfig {
        batch_size: toy.batch_size,
        lr_initial: toy.lr,
        lr_decay_epoch: epochs,
        total_epochs: epochs,
        patch_lr: toy.patch_lr,
        seed: toy.seed,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, tcfg)?;
    let reports = trainer.fit(&train, |_, _| Ok(()))?;
    let last = reports.last().map(|r| r.mean_loss).unwrap_or(f64::NAN);
    Ok((trainer.model, last))
}

/// Mean Y-PSNR and SSIM of `model` on the toy test set.
pub fn evaluate_toy(model: &VsrModel, data: &ToyData, protocol: &EvalProtocol, seed: u64) -> Result<(f64, f64)> {
    let test = data.samples(model.config(), true, seed)?;
    let mut sums = (0.0, 0.0);
    for s in &test {
        let sr = model.infer(&s.lr_target, &s.lr_neighbors, &s.flows, false)?.sr_frame;
        let (p, q) = frame_metrics(&sr, &s.hr_target, protocol)?;
        sums.0 += p;
        sums.1 += q;
    }
    let k = test.len().max(1) as f64;
    Ok((sums.0 / k, sums.1 / k))
}

fn bicubic_baseline(data: &ToyData, toy: &ToyTrainConfig, protocol: &EvalProtocol) -> Result<(f64, f64)> {
    let cfg = ModelConfig {
        context_n: 0,
        ..toy.base_model()
    };
    let test = data.samples(&cfg, true, toy.seed)?;
    let mut sums = (0.0, 0.0);
    for s in &test {
        let up = crate::dataset::upscale(&s.lr_target, toy.scale)?;
        let (p, q) = frame_metrics(&up, &s.hr_target, protocol)?;
        sums.0 += p;
        sums.1 += q;
    }
    let k = test.len().max(1) as f64;
    Ok((sums.0 / k, sums.1 / k))
}

/// Runs every cell of `grid`; failing cells are recorded and skipped.
pub fn ablation_harness(grid: &AblationGrid, toy: &ToyTrainConfig, protocol: &EvalProtocol) -> Result<AblationReport> {
    let cells = grid.cells(&toy.base_model());
    if cells.is_empty() {
        return Err(Error::EmptyInput("ablation grid"));
    }
    let max_n = cells.iter().map(|c| c.context_n).max().unwrap_or(0);
    let data = ToyData::generate(toy, max_n);
    let (bicubic_psnr, bicubic_ssim) = bicubic_baseline(&data, toy, protocol)?;
    let rows = cells
        .into_iter()
        .map(|cfg| {
            let label = cell_label(&cfg);
            let run = || -> Result<(u64, f64, f64, f64)> {
                let (model, loss) = train_toy(Architecture::Rbpn, &cfg, &data, toy)?;
                let (p, q) = evaluate_toy(&model, &data, protocol, toy.seed)?;
                Ok((model.param_count(), loss, p, q))
            };
            match run() {
                Ok((params, loss, p, q)) => AblationRow {
                    label,
                    config: cfg,
                    params: Some(params),
                    final_loss: Some(loss),
                    psnr: Some(p),
                    ssim: Some(q),
                    error: None,
                },
                Err(e) => AblationRow {
                    label,
                    config: cfg,
                    params: None,
                    final_loss: None,
                    psnr: None,
                    ssim: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(AblationReport {
        protocol: protocol.clone(),
        toy: toy.clone(),
        bicubic_psnr,
        bicubic_ssim,
        rows,
    })
}

impl AblationReport {
    pub fn text_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "protocol {} | toy data {}", self.protocol.name, self.toy.scale);
        let _ = writeln!(
            out,
            "{:<4} {:<5} {:<6} {:<7} {:<5} {:<6} {:>9} {:>8} {:>7}",
            "n", "order", "flow", "integ", "size", "resid", "params", "PSNR", "SSIM"
        );
        for r in &self.rows {
            let c = &r.config;
            let head = format!(
                "{:<4} {:<5} {:<6} {:<7} {:<5} {:<6}",
                c.context_n,
                format!("{:?}", c.order),
                c.use_flow,
                format!("{:?}", c.integration).to_lowercase(),
                format!("{:?}", c.size_variant).to_lowercase(),
                c.residual_learning
            );
            match (&r.error, r.params, r.psnr, r.ssim) {
                (None, Some(params), Some(p), Some(q)) => {
                    let _ = writeln!(out, "{head} {params:>9} {p:>8.2} {q:>7.4}");
                }
                (err, ..) => {
                    let _ = writeln!(out, "{head} failed: {}", err.as_deref().unwrap_or("unknown"));
                }
            }
        }
        let _ = writeln!(
            out,
            "{:<36} {:>9} {:>8.2} {:>7.4}",
            "bicubic", "-", self.bicubic_psnr, self.bicubic_ssim
        );
        out
    }

    /// Mean PSNR per context length over successful cells.
    pub fn context_curve(&self) -> Vec<(usize, f64)> {
        let mut by_n: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            if let Some(p) = r.psnr {
                let e = by_n.entry(r.config.context_n).or_default();
                e.0 += p;
                e.1 += 1;
            }
        }
        by_n.into_iter().map(|(n, (s, k))| (n, s / k as f64)).collect()
    }

    pub fn context_plot(&self) -> Result<String> {
        let points: Vec<(f64, f64)> = self.context_curve().into_iter().map(|(n, p)| (n as f64, p)).collect();
        line_chart("PSNR vs context length", "context frames", "PSNR (dB)", &points)
    }
}
