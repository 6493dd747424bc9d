//! End-to-end networks: the recurrent back-projection model and the
//! single-image / multi-image baselines.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rbpn_tensor::{ParamStore, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::config::{Integration, ModelConfig, ValidatedConfig};
use crate::dataset::bicubic_resize;
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::frame::Frame;
use crate::nn::archive::{load_store, save_store, DType};
use crate::nn::{
    build_feature_extractor, build_feature_extractors, build_reconstruction, build_reconstruction_from, build_sisr,
    ParamInit, Subnet,
};
use crate::projection::{ProjectionModule, ResidualPath};

/// Which network to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Full recurrent model with encoder and decoder.
    Rbpn,
    /// SISR path on the target only.
    DbpnSisr,
    /// SISR path on the channel-stacked target and neighbours.
    DbpnMisr,
    /// Projection module without decoder: every step starts from the
    /// target features.
    RbpnMisr,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [Self::Rbpn, Self::DbpnSisr, Self::DbpnMisr, Self::RbpnMisr];

    pub fn name(self) -> &'static str {
        match self {
            Self::Rbpn => "rbpn",
            Self::DbpnSisr => "dbpn_sisr",
            Self::DbpnMisr => "dbpn_misr",
            Self::RbpnMisr => "rbpn_misr",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|a| a.name() == norm)
            .ok_or_else(|| Error::config("architecture", format!("unknown architecture {s:?}")))
    }
}

#[derive(Clone, Debug)]
enum Body {
    Projection { feat_m: Subnet, module: Box<ProjectionModule> },
    Single { sisr: Subnet },
}

/// Graph handles produced by [`VsrModel::forward`].
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub sr: Var,
    /// HR feature map of each recurrence step, in plan order.
    pub per_step_h: Vec<Var>,
}

/// Output of [`VsrModel::infer`].
#[derive(Clone, Debug)]
pub struct SrResult {
    pub sr_frame: Frame,
    pub per_step_h: Option<Vec<Tensor>>,
}

/// Parameters and multiply-accumulates of one subnet over a forward pass.
#[derive(Clone, Debug, Serialize)]
pub struct SubnetCost {
    pub name: String,
    pub params: u64,
    pub calls: u64,
    pub macs_per_call: u64,
}

impl SubnetCost {
    pub fn macs(&self) -> u64 {
        self.calls * self.macs_per_call
    }
}

/// A network together with its weights.
#[derive(Clone, Debug)]
pub struct VsrModel {
    arch: Architecture,
    cfg: ValidatedConfig,
    params: ParamStore,
    feat_l: Subnet,
    body: Body,
    rec: Subnet,
}

impl VsrModel {
    /// Builds the model with He-initialized weights drawn from `seed`.
    pub fn new(arch: Architecture, cfg: ValidatedConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = ParamInit::new(&mut params, &mut rng);
        let n = cfg.context_n;
        let (feat_l, body, rec) = match arch {
            Architecture::Rbpn | Architecture::RbpnMisr => {
                let (feat_l, feat_m) = build_feature_extractors(&mut init, &cfg)?;
                let module = ProjectionModule::build(&mut init, &cfg, arch == Architecture::Rbpn)?;
                let rec = build_reconstruction(&mut init, &cfg)?;
                (feat_l, Body::Projection { feat_m, module: Box::new(module) }, rec)
            }
            Architecture::DbpnSisr | Architecture::DbpnMisr => {
                let in_c = if arch == Architecture::DbpnMisr { 3 * (n + 1) } else { 3 };
                let feat_l = build_feature_extractor(&mut init, "feat_l", in_c, cfg.c_l)?;
                let sisr = build_sisr(&mut init, &cfg)?;
                let rec = build_reconstruction_from(&mut init, cfg.c_h)?;
                (feat_l, Body::Single { sisr }, rec)
            }
        };
        Ok(Self {
            arch,
            cfg,
            params,
            feat_l,
            body,
            rec,
        })
    }

    /// Builds one of the baseline networks.
    pub fn baseline(arch: Architecture, cfg: ValidatedConfig, seed: u64) -> Result<Self> {
        if arch == Architecture::Rbpn {
            return Err(Error::config("architecture", "rbpn is not a baseline"));
        }
        Self::new(arch, cfg, seed)
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn config(&self) -> &ValidatedConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> u64 {
        self.params.num_elements() as u64
    }

    pub fn projection(&self) -> Option<&ProjectionModule> {
        match &self.body {
            Body::Projection { module, .. } => Some(module),
            Body::Single { .. } => None,
        }
    }

    fn check_inputs(&self, target: &Frame, neighbors: &[Frame], flows: &[FlowField]) -> Result<()> {
        let n = self.cfg.context_n;
        if neighbors.len() != n {
            return Err(Error::Arity {
                what: "neighbors",
                expected: n,
                got: neighbors.len(),
            });
        }
        if flows.len() != n {
            return Err(Error::Arity {
                what: "flows",
                expected: n,
                got: flows.len(),
            });
        }
        let size = (target.height(), target.width());
        for (k, f) in neighbors.iter().enumerate() {
            if (f.height(), f.width()) != size {
                return Err(Error::Shape(format!(
                    "neighbor {k} is {}x{}, target is {}x{}",
                    f.width(),
                    f.height(),
                    size.1,
                    size.0
                )));
            }
        }
        for (k, f) in flows.iter().enumerate() {
            if (f.height(), f.width()) != size {
                return Err(Error::Shape(format!(
                    "flow {k} is {}x{}, target is {}x{}",
                    f.width(),
                    f.height(),
                    size.1,
                    size.0
                )));
            }
        }
        Ok(())
    }

    fn neighbor_stack(&self, target: &Frame, neighbor: &Frame, flow: &FlowField) -> Result<Tensor> {
        let mut parts = vec![target.tensor(), neighbor.tensor()];
        if self.cfg.use_flow {
            parts.push(flow.tensor());
        }
        Ok(Tensor::concat_channels(&parts)?)
    }

    /// Records the forward pass on `tape`. Neighbours and flows are visited
    /// in the given order.
    pub fn forward(&self, tape: &mut Tape<'_>, target: &Frame, neighbors: &[Frame], flows: &[FlowField]) -> Result<ForwardVars> {
        self.forward_with(tape, target, neighbors, flows, ResidualPath::Network)
    }

    pub fn forward_with(
        &self,
        tape: &mut Tape<'_>,
        target: &Frame,
        neighbors: &[Frame],
        flows: &[FlowField],
        residual: ResidualPath,
    ) -> Result<ForwardVars> {
        self.check_inputs(target, neighbors, flows)?;
        let mut per_step_h = Vec::with_capacity(neighbors.len());
        let features = match &self.body {
            Body::Single { sisr } => {
                let input = if self.arch == Architecture::DbpnMisr {
                    let parts: Vec<&Tensor> = std::iter::once(target.tensor())
                        .chain(neighbors.iter().map(Frame::tensor))
                        .collect();
                    Tensor::concat_channels(&parts)?
                } else {
                    target.tensor().clone()
                };
                let x = tape.leaf(input);
                let l = self.feat_l.forward(tape, x)?;
                sisr.forward(tape, l)?
            }
            Body::Projection { feat_m, module } => {
                let t = tape.leaf(target.tensor().clone());
                let mut l = self.feat_l.forward(tape, t)?;
                let recurrent = module.dec.is_some();
                let h_l0 = if recurrent { None } else { Some(module.sisr.forward(tape, l)?) };
                for (k, (nb, flow)) in neighbors.iter().zip(flows).enumerate() {
                    let stack = tape.leaf(self.neighbor_stack(target, nb, flow)?);
                    let m = feat_m.forward(tape, stack)?;
                    let h = match h_l0 {
                        Some(h_l) => module.encode_from_sisr(tape, h_l, m, residual)?.0,
                        None => module.encode_with(tape, l, m, residual)?.0,
                    };
                    per_step_h.push(h);
                    if recurrent && k + 1 < neighbors.len() {
                        l = module.decode(tape, h)?;
                    }
                }
                match (per_step_h.last(), h_l0) {
                    (None, Some(h_l)) => h_l,
                    (None, None) => module.sisr.forward(tape, l)?,
                    (Some(&last), _) => match self.cfg.integration {
                        Integration::Concat => tape.concat(&per_step_h)?,
                        Integration::Last => last,
                    },
                }
            }
        };
        let mut sr = self.rec.forward(tape, features)?;
        if self.cfg.residual_learning {
            let up = bicubic_resize(target.tensor(), self.cfg.s() as f64)?;
            let up = tape.leaf(up);
            sr = tape.add(sr, up)?;
        }
        Ok(ForwardVars { sr, per_step_h })
    }

    /// Runs the network outside of training.
    pub fn infer(&self, target: &Frame, neighbors: &[Frame], flows: &[FlowField], keep_h: bool) -> Result<SrResult> {
        let mut tape = Tape::new(&self.params);
        let out = self.forward(&mut tape, target, neighbors, flows)?;
        let sr = tape.value(out.sr).clone();
        if !sr.is_finite() {
            return Err(Error::NonFinite("super-resolved frame".into()));
        }
        let per_step_h = keep_h.then(|| out.per_step_h.iter().map(|&h| tape.value(h).clone()).collect());
        Ok(SrResult {
            sr_frame: Frame::from_tensor(sr)?,
            per_step_h,
        })
    }

    /// Per-subnet cost of one forward pass on an `h × w` LR input.
    pub fn cost_breakdown(&self, h: usize, w: usize) -> Vec<SubnetCost> {
        let n = self.cfg.context_n as u64;
        let s = self.cfg.s();
        let (hh, hw) = (h * s, w * s);
        let entry = |net: &Subnet, calls: u64, hr: bool| SubnetCost {
            name: net.name.clone(),
            params: net.param_count(),
            calls,
            macs_per_call: if hr { net.macs(hh, hw) } else { net.macs(h, w) },
        };
        let mut out = vec![entry(&self.feat_l, 1, false)];
        match &self.body {
            Body::Single { sisr } => out.push(entry(sisr, 1, false)),
            Body::Projection { feat_m, module } => {
                let sisr_calls = if module.dec.is_some() { n.max(1) } else { 1 };
                out.push(entry(feat_m, n, false));
                out.push(entry(&module.sisr, sisr_calls, false));
                out.push(entry(&module.misr, n, false));
                out.push(entry(&module.res, n, true));
                if let Some(dec) = &module.dec {
                    out.push(entry(dec, n.saturating_sub(1), true));
                }
            }
        }
        out.push(entry(&self.rec, 1, true));
        out
    }

    /// Multiply-accumulate count of one forward pass on an `h × w` LR input.
    pub fn estimate_macs(&self, h: usize, w: usize) -> u64 {
        self.cost_breakdown(h, w).iter().map(SubnetCost::macs).sum()
    }

    /// Floating-point operations (two per multiply-accumulate).
    pub fn estimate_flops(&self, h: usize, w: usize) -> u64 {
        2 * self.estimate_macs(h, w)
    }

    /// Writes `manifest.json` and `weights.bin` into `dir`.
    pub fn save(&self, dir: &Path, dtype: DType) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_store(&dir.join(WEIGHTS_FILE), &self.params, dtype)?;
        let manifest = ModelManifest {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            architecture: self.arch,
            config_hash: self.cfg.fingerprint(),
            config: (*self.cfg).clone(),
            dtype: dtype.name().into(),
            param_count: self.param_count(),
        };
        write_json(&dir.join(MANIFEST_FILE), &manifest)
    }

    /// Loads a model saved by [`VsrModel::save`] (or a training checkpoint).
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        let cfg = manifest.config.clone().validate()?;
        if cfg.fingerprint() != manifest.config_hash {
            return Err(Error::Layout {
                path: dir.join(MANIFEST_FILE),
                reason: "config hash does not match the stored config".into(),
            });
        }
        let mut model = Self::new(manifest.architecture, cfg, 0)?;
        load_store(&dir.join(WEIGHTS_FILE), &mut model.params)?;
        Ok(model)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
const MANIFEST_FORMAT: &str = "rbpn-model";

/// Metadata stored next to a weight archive.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub config: ModelConfig,
    pub config_hash: String,
    pub dtype: String,
    pub param_count: u64,
}

pub fn read_manifest(dir: &Path) -> Result<ModelManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.clone(),
        reason: e.to_string(),
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
