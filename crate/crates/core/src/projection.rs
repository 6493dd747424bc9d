//! One back-projection step of the recurrence: the encoder fuses the running
//! LR target features with one neighbour's features into HR features, the
//! decoder maps them back to LR features for the next step.
//!
//! ```text
//! H_l = sisr(L_prev)          H_m = misr(M_k)
//! e   = res(H_l − H_m)        H_k = H_l + e
//! L_k = dec(H_k)
//! ```

use rbpn_tensor::{Tape, Tensor, Var};

use crate::config::ValidatedConfig;
use crate::error::{Error, Result};
use crate::nn::{build_decoder, build_misr, build_res, build_sisr, ParamInit, Subnet};

/// Intermediate maps of one encode call.
#[derive(Clone, Copy, Debug)]
pub struct EncodeInternals {
    pub h_l: Var,
    pub h_m: Var,
    pub e: Var,
}

/// What to use for the residual `e`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ResidualPath {
    #[default]
    Network,
    /// Replace `res(H_l − H_m)` by an all-zero map.
    Zero,
}

/// The encoder/decoder pair. One instance (one set of weights) serves every
/// time step.
#[derive(Clone, Debug)]
pub struct ProjectionModule {
    pub sisr: Subnet,
    pub misr: Subnet,
    pub res: Subnet,
    /// Absent in the decoder-free MISR baseline.
    pub dec: Option<Subnet>,
    c_l: usize,
    c_m: usize,
}

impl ProjectionModule {
    pub fn build(init: &mut ParamInit<'_>, cfg: &ValidatedConfig, with_decoder: bool) -> Result<Self> {
        let sisr = build_sisr(init, cfg)?;
        let misr = build_misr(init, cfg)?;
        let res = build_res(init, cfg)?;
        let dec = if with_decoder { Some(build_decoder(init, cfg)?) } else { None };
        Ok(Self {
            sisr,
            misr,
            res,
            dec,
            c_l: cfg.c_l,
            c_m: cfg.c_m,
        })
    }

    pub fn encode(&self, tape: &mut Tape<'_>, l_prev: Var, m_k: Var) -> Result<(Var, EncodeInternals)> {
        self.encode_with(tape, l_prev, m_k, ResidualPath::Network)
    }

    pub fn encode_with(&self, tape: &mut Tape<'_>, l_prev: Var, m_k: Var, residual: ResidualPath) -> Result<(Var, EncodeInternals)> {
        let ls = tape.value(l_prev).shape().to_vec();
        let ms = tape.value(m_k).shape().to_vec();
        match (&ls[..], &ms[..]) {
            ([cl, lh, lw], [cm, mh, mw]) if *cl == self.c_l && *cm == self.c_m && (lh, lw) == (mh, mw) => {}
            _ => {
                return Err(Error::Shape(format!(
                    "encode expects L [{}, h, w] and M [{}, h, w], got {ls:?} and {ms:?}",
                    self.c_l, self.c_m
                )))
            }
        }
        let h_l = self.sisr.forward(tape, l_prev)?;
        self.encode_from_sisr(tape, h_l, m_k, residual)
    }

    /// Encode step with a precomputed `H_l = sisr(L_prev)`.
    pub fn encode_from_sisr(&self, tape: &mut Tape<'_>, h_l: Var, m_k: Var, residual: ResidualPath) -> Result<(Var, EncodeInternals)> {
        let h_m = self.misr.forward(tape, m_k)?;
        let diff = tape.sub(h_l, h_m)?;
        let e = match residual {
            ResidualPath::Network => self.res.forward(tape, diff)?,
            ResidualPath::Zero => {
                let shape = tape.value(diff).shape().to_vec();
                tape.leaf(Tensor::zeros(&shape))
            }
        };
        let h_k = tape.add(h_l, e)?;
        Ok((h_k, EncodeInternals { h_l, h_m, e }))
    }

    pub fn decode(&self, tape: &mut Tape<'_>, h_k: Var) -> Result<Var> {
        let dec = self
            .dec
            .as_ref()
            .ok_or_else(|| Error::Shape("this projection module has no decoder".into()))?;
        dec.forward(tape, h_k)
    }

    pub fn subnets(&self) -> impl Iterator<Item = &Subnet> {
        [Some(&self.sisr), Some(&self.misr), Some(&self.res), self.dec.as_ref()]
            .into_iter()
            .flatten()
    }
}
