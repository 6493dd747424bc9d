//! Loss, learning-rate schedule, Adam, checkpoints and training loops.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rbpn_tensor::{ParamGrads, ParamStore, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::{TrainConfig, ValidatedConfig};
use crate::context::plan_context;
use crate::dataset::{augment, make_sample, sample_patch, upscale, AugmentOps, SequenceRecord, TrainSample};
use crate::flow::FlowProvider;
use crate::error::{Error, Result};
use crate::evaluation::psnr_y;
use crate::frame::Frame;
use crate::model::{read_manifest, write_json, ModelManifest, VsrModel, MANIFEST_FILE, WEIGHTS_FILE};
use crate::nn::archive::{read_tensors, save_store, write_tensors, DType};

/// Mean absolute difference and its gradient with respect to `pred`.
pub fn l1_loss(pred: &Tensor, truth: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != truth.shape() {
        return Err(Error::Shape(format!(
            "loss inputs differ: {:?} vs {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    let n = pred.numel() as f64;
    let loss = pred.data().iter().zip(truth.data()).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let grad = pred.zip_map(truth, |p, t| {
        let d = p - t;
        if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        }
    })?;
    Ok((loss, grad))
}

/// Step schedule: `lr_initial` before `lr_decay_epoch`, multiplied by
/// `lr_decay_factor` from then on.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.total_epochs {
        return Err(Error::Range(format!(
            "epoch {epoch} outside a {}-epoch schedule",
            cfg.total_epochs
        )));
    }
    Ok(if epoch < cfg.lr_decay_epoch {
        cfg.lr_initial
    } else {
        cfg.lr_initial * cfg.lr_decay_factor
    })
}

pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, beta1: f64) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect::<Vec<_>>();
        Self {
            beta1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (id, _, p) in store.iter_mut() {
            let g = grads.get(id).data();
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    fn save(&self, path: &Path, store: &ParamStore) -> Result<()> {
        let mut tensors: Vec<(String, &Tensor)> = Vec::with_capacity(2 * self.m.len());
        for (id, name, _) in store.iter() {
            tensors.push((format!("m.{name}"), &self.m[id.index()]));
            tensors.push((format!("v.{name}"), &self.v[id.index()]));
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        write_tensors(&mut out, tensors.iter().map(|(n, t)| (n.as_str(), *t)), DType::F64)
            .map_err(|e| Error::io(path, e))
    }

    fn load(path: &Path, store: &ParamStore, beta1: f64, t: u64) -> Result<Self> {
        let (_, tensors) = read_tensors(path)?;
        let mut adam = Self::new(store, beta1);
        adam.t = t;
        let mut seen = 0;
        for (name, tensor) in tensors {
            let (slot, pname) = match name.split_once('.') {
                Some(("m", rest)) => (&mut adam.m, rest),
                Some(("v", rest)) => (&mut adam.v, rest),
                _ => {
                    return Err(Error::Layout {
                        path: path.to_path_buf(),
                        reason: format!("unexpected tensor {name}"),
                    })
                }
            };
            let id = store.id(pname).ok_or_else(|| Error::Layout {
                path: path.to_path_buf(),
                reason: format!("optimizer state for unknown parameter {pname}"),
            })?;
            if slot[id.index()].shape() != tensor.shape() {
                return Err(Error::Layout {
                    path: path.to_path_buf(),
                    reason: format!("optimizer state {name} has shape {:?}", tensor.shape()),
                });
            }
            slot[id.index()] = tensor;
            seen += 1;
        }
        if seen != 2 * store.len() {
            return Err(Error::Layout {
                path: path.to_path_buf(),
                reason: format!("expected {} optimizer tensors, found {seen}", 2 * store.len()),
            });
        }
        Ok(adam)
    }
}

/// Loss and summed parameter gradients of one sample.
fn sample_grads(model: &VsrModel, s: &TrainSample) -> Result<(f64, ParamGrads)> {
    let mut tape = Tape::new(model.params());
    let out = model.forward(&mut tape, &s.lr_target, &s.lr_neighbors, &s.flows)?;
    let (loss, seed) = l1_loss(tape.value(out.sr), s.hr_target.tensor())?;
    let mut grads = ParamGrads::zeros_like(model.params());
    tape.backward(out.sr, seed, &mut grads)?;
    Ok((loss, grads))
}

/// Mean loss over `batch` and the gradient of that mean.
pub fn batch_gradients(model: &VsrModel, batch: &[TrainSample]) -> Result<(f64, ParamGrads)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("training batch"));
    }
    let parts = batch.par_iter().map(|s| sample_grads(model, s)).collect::<Result<Vec<_>>>()?;
    let mut total = ParamGrads::zeros_like(model.params());
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add_assign(g)?;
    }
    let scale = 1.0 / batch.len() as f64;
    total.scale(scale);
    Ok((loss * scale, total))
}

/// Mean L1 loss over `samples` without gradients.
pub fn evaluate_loss(model: &VsrModel, samples: &[TrainSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("samples"));
    }
    let losses = samples
        .par_iter()
        .map(|s| {
            let sr = model.infer(&s.lr_target, &s.lr_neighbors, &s.flows, false)?.sr_frame;
            Ok(l1_loss(sr.tensor(), s.hr_target.tensor())?.0)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Indexable collection of full-frame training samples.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn get(&self, index: usize) -> Result<TrainSample>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for [TrainSample] {
    fn len(&self) -> usize {
        <[TrainSample]>::len(self)
    }

    fn get(&self, index: usize) -> Result<TrainSample> {
        Ok(self[index].clone())
    }
}

impl SampleSource for Vec<TrainSample> {
    fn len(&self) -> usize {
        <[TrainSample]>::len(self)
    }

    fn get(&self, index: usize) -> Result<TrainSample> {
        Ok(self[index].clone())
    }
}

/// Samples read from disk on demand: every frame of every record that has
/// a full context window becomes one target.
pub struct RecordSamples {
    records: Vec<SequenceRecord>,
    items: Vec<(usize, usize)>,
    cfg: ValidatedConfig,
    flows: Box<dyn FlowProvider>,
    seed: u64,
}

impl RecordSamples {
    pub fn new(records: Vec<SequenceRecord>, cfg: ValidatedConfig, flows: Box<dyn FlowProvider>, seed: u64) -> Self {
        let items = records
            .iter()
            .enumerate()
            .flat_map(|(r, rec)| {
                let cfg = &cfg;
                (0..rec.len())
                    .filter(move |&t| plan_context(t, cfg.context_n, cfg.order, cfg.pf_sequence, seed, rec.len()).is_ok())
                    .map(move |t| (r, t))
            })
            .collect();
        Self {
            records,
            items,
            cfg,
            flows,
            seed,
        }
    }
}

impl SampleSource for RecordSamples {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn get(&self, index: usize) -> Result<TrainSample> {
        let (r, t) = self.items[index];
        let rec = &self.records[r];
        let plan = plan_context(t, self.cfg.context_n, self.cfg.order, self.cfg.pf_sequence, self.seed, rec.len())?;
        let mut hr: Vec<Frame> = Vec::with_capacity(rec.len());
        for (i, path) in rec.frames.iter().enumerate() {
            let needed = i == t || plan.neighbors.contains(&i);
            hr.push(if needed {
                Frame::load_png(path)?
            } else {
                Frame::zeros(1, 1)
            });
        }
        make_sample(&rec.id, &hr, &plan, self.cfg.scale, self.flows.as_ref())
            .map_err(|e| e.context(format!("sequence {} frame {t}", rec.id)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub steps: u64,
}

/// Model, optimizer and sampling state of one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: VsrModel,
    pub cfg: TrainConfig,
    pub augment: AugmentOps,
    adam: Adam,
    rng: ChaCha8Rng,
    epoch: usize,
    step: u64,
}

impl Trainer {
    pub fn new(model: VsrModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(model.params(), cfg.adam_beta1);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            model,
            cfg,
            augment: AugmentOps::ALL,
            adam,
            rng,
            epoch: 0,
            step: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn global_step(&self) -> u64 {
        self.step
    }

    /// One optimizer update on a prepared batch; returns the batch loss
    /// before the update.
    pub fn train_step(&mut self, batch: &[TrainSample], lr: f64) -> Result<f64> {
        let (loss, grads) = batch_gradients(&self.model, batch)?;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::Divergence { step: self.step, loss });
        }
        self.adam.step(self.model.params_mut(), &grads, lr);
        self.step += 1;
        if !self.model.params().all_finite() {
            return Err(Error::Divergence { step: self.step, loss: f64::NAN });
        }
        Ok(loss)
    }

    /// Runs one epoch: seeded shuffle, random patch crop and augmentation
    /// per sample, one update per batch.
    pub fn run_epoch(&mut self, source: &dyn SampleSource) -> Result<EpochReport> {
        if source.is_empty() {
            return Err(Error::EmptyInput("training set"));
        }
        let lr = lr_schedule(self.epoch, &self.cfg)?;
        let mut order: Vec<usize> = (0..source.len()).collect();
        order.shuffle(&mut self.rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(self.cfg.batch_size) {
            let seeds: Vec<(u64, u64)> = chunk.iter().map(|_| (self.rng.random(), self.rng.random())).collect();
            let batch = chunk
                .par_iter()
                .zip(&seeds)
                .map(|(&i, &(patch_seed, aug_seed))| {
                    let full = source.get(i)?;
                    let patch = sample_patch(&full, self.cfg.patch_lr, patch_seed)?;
                    Ok(augment(&patch, self.augment, aug_seed))
                })
                .collect::<Result<Vec<_>>>()?;
            losses.push(self.train_step(&batch, lr)?);
        }
        let report = EpochReport {
            epoch: self.epoch,
            lr,
            mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            steps: losses.len() as u64,
        };
        self.epoch += 1;
        Ok(report)
    }

    /// Trains up to `total_epochs`, calling `on_epoch` after each epoch
    /// (e.g. to write a checkpoint).
    pub fn fit(
        &mut self,
        source: &dyn SampleSource,
        mut on_epoch: impl FnMut(&Trainer, &EpochReport) -> Result<()>,
    ) -> Result<Vec<EpochReport>> {
        let mut reports = Vec::new();
        while self.epoch < self.cfg.total_epochs {
            let report = self.run_epoch(source)?;
            on_epoch(self, &report)?;
            reports.push(report);
        }
        Ok(reports)
    }

    /// Writes the checkpoint directory.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_store(&dir.join(WEIGHTS_FILE), self.model.params(), DType::F64)?;
        self.adam.save(&dir.join(OPTIM_FILE), self.model.params())?;
        write_rng(&dir.join(RNG_FILE), &self.rng)?;
        let cfg = self.model.config();
        let manifest = CheckpointManifest {
            model: ModelManifest {
                format: "rbpn-model".into(),
                version: 1,
                architecture: self.model.architecture(),
                config: (**cfg).clone(),
                config_hash: cfg.fingerprint(),
                dtype: DType::F64.name().into(),
                param_count: self.model.param_count(),
            },
            train_config: self.cfg.clone(),
            train_hash: self.cfg.fingerprint(),
            epoch: self.epoch,
            global_step: self.step,
            adam_steps: self.adam.steps(),
        };
        write_json(&dir.join(MANIFEST_FILE), &manifest)
    }

    /// Restores a run saved by [`Trainer::save_checkpoint`].
    pub fn load_checkpoint(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        if manifest.train_config.fingerprint() != manifest.train_hash {
            return Err(Error::Layout {
                path,
                reason: "training config hash does not match the stored config".into(),
            });
        }
        let model = VsrModel::load(dir)?;
        let adam = Adam::load(
            &dir.join(OPTIM_FILE),
            model.params(),
            manifest.train_config.adam_beta1,
            manifest.adam_steps,
        )?;
        let rng = read_rng(&dir.join(RNG_FILE))?;
        Ok(Self {
            model,
            cfg: manifest.train_config,
            augment: AugmentOps::ALL,
            adam,
            rng,
            epoch: manifest.epoch,
            step: manifest.global_step,
        })
    }
}

pub const OPTIM_FILE: &str = "optim.bin";
pub const RNG_FILE: &str = "rng.bin";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    #[serde(flatten)]
    pub model: ModelManifest,
    pub train_config: TrainConfig,
    pub train_hash: String,
    pub epoch: usize,
    pub global_step: u64,
    pub adam_steps: u64,
}

/// True when `dir` holds a training checkpoint rather than a bare model.
pub fn is_checkpoint(dir: &Path) -> bool {
    dir.join(OPTIM_FILE).is_file() && read_manifest(dir).is_ok()
}

fn write_rng(path: &Path, rng: &ChaCha8Rng) -> Result<()> {
    let mut buf = Vec::with_capacity(56);
    buf.extend_from_slice(&rng.get_seed());
    buf.extend_from_slice(&rng.get_stream().to_le_bytes());
    buf.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn read_rng(path: &Path) -> Result<ChaCha8Rng> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() != 56 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected 56 bytes of generator state, found {}", buf.len()),
        });
    }
    let seed: [u8; 32] = buf[..32].try_into().expect("32 bytes");
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(u64::from_le_bytes(buf[32..40].try_into().expect("8 bytes")));
    rng.set_word_pos(u128::from_le_bytes(buf[40..56].try_into().expect("16 bytes")));
    Ok(rng)
}

/// Outcome of [`overfit_smoke`].
#[derive(Clone, Debug, Serialize)]
pub struct SmokeReport {
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub losses: Vec<f64>,
    /// Mean Y-PSNR of the clipped model output on the training patches.
    pub model_psnr: f64,
    /// Mean Y-PSNR of bicubic upscaling on the same patches.
    pub bicubic_psnr: f64,
}

/// Fits `model` to a fixed set of patches with full-batch Adam.
pub fn overfit_smoke(model: VsrModel, patches: &[TrainSample], iters: usize, lr: f64) -> Result<SmokeReport> {
    let cfg = TrainConfig {
        batch_size: patches.len().max(1),
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, cfg)?;
    let mut losses = Vec::with_capacity(iters + 1);
    for _ in 0..iters {
        losses.push(trainer.train_step(patches, lr)?);
    }
    let final_loss = evaluate_loss(&trainer.model, patches)?;
    losses.push(final_loss);
    let s = trainer.model.config().scale;
    let mut model_psnr = 0.0;
    let mut bicubic_psnr = 0.0;
    for p in patches {
        let sr = trainer.model.infer(&p.lr_target, &p.lr_neighbors, &p.flows, false)?.sr_frame;
        model_psnr += psnr_y(&sr.quantized(), &p.hr_target)?;
        let bic: Frame = upscale(&p.lr_target, s)?;
        bicubic_psnr += psnr_y(&bic.quantized(), &p.hr_target)?;
    }
    let k = patches.len() as f64;
    Ok(SmokeReport {
        iterations: iters,
        initial_loss: losses[0],
        final_loss,
        losses,
        model_psnr: model_psnr / k,
        bicubic_psnr: bicubic_psnr / k,
    })
}
