use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rbpn_tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use serde::Serialize;

use crate::error::Result;

/// Initial PReLU slope.
pub const PRELU_INIT: f64 = 0.25;

/// Registers parameters with He-normal weights, zero biases and constant
/// PReLU slopes, drawing from one seeded stream so construction order fully
/// determines the initial weights.
pub struct ParamInit<'a> {
    pub store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl<'a> ParamInit<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self { store, rng }
    }

    fn he_normal(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let rng = &mut *self.rng;
        Tensor::from_fn(shape, |_| normal.sample(rng))
    }

    pub fn rng(&mut self) -> &mut impl Rng {
        &mut *self.rng
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvKind {
    Strided,
    Transposed,
}

/// One convolution with bias and an optional trailing PReLU.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub name: String,
    pub kind: ConvKind,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    weight: ParamId,
    bias: ParamId,
    act: Option<ParamId>,
}

/// Static description of a layer used by accounting and `inspect`.
#[derive(Clone, Debug, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: ConvKind,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub params: u64,
    /// Multiply-accumulate count for the given input size.
    pub macs: u64,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &mut ParamInit<'_>,
        name: impl Into<String>,
        kind: ConvKind,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        activation: bool,
    ) -> Result<Self> {
        let name = name.into();
        let (shape, fan_in) = match kind {
            ConvKind::Strided => ([out_c, in_c, kernel, kernel], in_c * kernel * kernel),
            // fan taken from dimension 1 of the [in, out, k, k] weight
            ConvKind::Transposed => ([in_c, out_c, kernel, kernel], out_c * kernel * kernel),
        };
        let w = init.he_normal(&shape, fan_in);
        let weight = init.store.insert(format!("{name}.weight"), w)?;
        let bias = init.store.insert(format!("{name}.bias"), Tensor::zeros(&[out_c]))?;
        let act = if activation {
            Some(init.store.insert(format!("{name}.prelu"), Tensor::full(&[out_c], PRELU_INIT))?)
        } else {
            None
        };
        Ok(Self {
            name,
            kind,
            in_c,
            out_c,
            kernel,
            stride,
            pad,
            weight,
            bias,
            act,
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let y = match self.kind {
            ConvKind::Strided => tape.conv2d(x, self.weight, Some(self.bias), self.stride, self.pad)?,
            ConvKind::Transposed => tape.conv_transpose2d(x, self.weight, Some(self.bias), self.stride, self.pad)?,
        };
        Ok(match self.act {
            Some(a) => tape.prelu(y, a)?,
            None => y,
        })
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> {
        [Some(self.weight), Some(self.bias), self.act].into_iter().flatten()
    }

    pub fn has_activation(&self) -> bool {
        self.act.is_some()
    }

    pub fn param_count(&self) -> u64 {
        let k2 = (self.kernel * self.kernel) as u64;
        let (ci, co) = (self.in_c as u64, self.out_c as u64);
        k2 * ci * co + co + if self.act.is_some() { co } else { 0 }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        match self.kind {
            ConvKind::Strided => (
                (h + 2 * self.pad - self.kernel) / self.stride + 1,
                (w + 2 * self.pad - self.kernel) / self.stride + 1,
            ),
            ConvKind::Transposed => (
                (h - 1) * self.stride + self.kernel - 2 * self.pad,
                (w - 1) * self.stride + self.kernel - 2 * self.pad,
            ),
        }
    }

    /// Cost at input size `h × w`. A transposed convolution is counted on its
    /// input grid (the grid of the convolution it transposes).
    pub fn cost(&self, h: usize, w: usize) -> LayerCost {
        let (oh, ow) = self.out_size(h, w);
        let grid = match self.kind {
            ConvKind::Strided => oh * ow,
            ConvKind::Transposed => h * w,
        } as u64;
        let k2 = (self.kernel * self.kernel) as u64;
        LayerCost {
            name: self.name.clone(),
            kind: self.kind,
            in_c: self.in_c,
            out_c: self.out_c,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
            params: self.param_count(),
            macs: k2 * self.in_c as u64 * self.out_c as u64 * grid,
            out_h: oh,
            out_w: ow,
        }
    }
}

/// conv-PReLU-conv with an identity skip; no activation after the sum.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
}

impl ResidualBlock {
    pub fn new(init: &mut ParamInit<'_>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            conv1: ConvLayer::new(init, format!("{name}.conv1"), ConvKind::Strided, channels, channels, 3, 1, 1, true)?,
            conv2: ConvLayer::new(init, format!("{name}.conv2"), ConvKind::Strided, channels, channels, 3, 1, 1, false)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(tape, x)?;
        let y = self.conv2.forward(tape, y)?;
        Ok(tape.add(y, x)?)
    }
}

/// DBPN up-projection unit: LR features in, HR features out.
///
/// `h0 = up(l)`, `l0 = down(h0)`, `h1 = up(l0 − l)`, output `h0 + h1`.
#[derive(Clone, Debug)]
pub struct UpProjection {
    pub up1: ConvLayer,
    pub down: ConvLayer,
    pub up2: ConvLayer,
}

impl UpProjection {
    pub fn new(init: &mut ParamInit<'_>, name: &str, c: usize, k: usize, s: usize, p: usize) -> Result<Self> {
        Ok(Self {
            up1: ConvLayer::new(init, format!("{name}.up1"), ConvKind::Transposed, c, c, k, s, p, true)?,
            down: ConvLayer::new(init, format!("{name}.down"), ConvKind::Strided, c, c, k, s, p, true)?,
            up2: ConvLayer::new(init, format!("{name}.up2"), ConvKind::Transposed, c, c, k, s, p, true)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, l: Var) -> Result<Var> {
        let h0 = self.up1.forward(tape, l)?;
        let l0 = self.down.forward(tape, h0)?;
        let err = tape.sub(l0, l)?;
        let h1 = self.up2.forward(tape, err)?;
        Ok(tape.add(h1, h0)?)
    }

    pub fn layers(&self) -> [&ConvLayer; 3] {
        [&self.up1, &self.down, &self.up2]
    }
}

/// DBPN down-projection unit: HR features in, LR features out.
///
/// `l0 = down(h)`, `h0 = up(l0)`, `l1 = down(h0 − h)`, output `l0 + l1`.
#[derive(Clone, Debug)]
pub struct DownProjection {
    pub down1: ConvLayer,
    pub up: ConvLayer,
    pub down2: ConvLayer,
}

impl DownProjection {
    pub fn new(init: &mut ParamInit<'_>, name: &str, c: usize, k: usize, s: usize, p: usize) -> Result<Self> {
        Ok(Self {
            down1: ConvLayer::new(init, format!("{name}.down1"), ConvKind::Strided, c, c, k, s, p, true)?,
            up: ConvLayer::new(init, format!("{name}.up"), ConvKind::Transposed, c, c, k, s, p, true)?,
            down2: ConvLayer::new(init, format!("{name}.down2"), ConvKind::Strided, c, c, k, s, p, true)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, h: Var) -> Result<Var> {
        let l0 = self.down1.forward(tape, h)?;
        let h0 = self.up.forward(tape, l0)?;
        let err = tape.sub(h0, h)?;
        let l1 = self.down2.forward(tape, err)?;
        Ok(tape.add(l1, l0)?)
    }

    pub fn layers(&self) -> [&ConvLayer; 3] {
        [&self.down1, &self.up, &self.down2]
    }
}

/// `T` back-projection stages: up-projections interleaved with `T − 1`
/// down-projections; the `T` HR outputs are concatenated and fused.
#[derive(Clone, Debug)]
pub struct BackProjectionStages {
    pub ups: Vec<UpProjection>,
    pub downs: Vec<DownProjection>,
    pub fuse: ConvLayer,
}

impl BackProjectionStages {
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let mut hr = Vec::with_capacity(self.ups.len());
        let mut l = x;
        for (i, up) in self.ups.iter().enumerate() {
            let h = up.forward(tape, l)?;
            hr.push(h);
            if let Some(down) = self.downs.get(i) {
                l = down.forward(tape, h)?;
            }
        }
        let cat = tape.concat(&hr)?;
        self.fuse.forward(tape, cat)
    }
}
