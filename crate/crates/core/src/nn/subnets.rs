use rbpn_tensor::{ParamId, Tape, Var};
use serde::Serialize;

use super::layers::{BackProjectionStages, ConvKind, ConvLayer, DownProjection, LayerCost, ParamInit, ResidualBlock, UpProjection};
use crate::config::ValidatedConfig;
use crate::error::{Error, Result};

/// Spatial relation between a subnet's input and output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Spatial {
    Same,
    Up(usize),
    Down(usize),
}

#[derive(Clone, Debug)]
pub enum Block {
    Conv(ConvLayer),
    Residual(ResidualBlock),
    Stages(BackProjectionStages),
}

impl Block {
    fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        match self {
            Block::Conv(c) => c.forward(tape, x),
            Block::Residual(r) => r.forward(tape, x),
            Block::Stages(s) => s.forward(tape, x),
        }
    }

    fn layers(&self) -> Vec<&ConvLayer> {
        match self {
            Block::Conv(c) => vec![c],
            Block::Residual(r) => vec![&r.conv1, &r.conv2],
            Block::Stages(s) => {
                let mut out = Vec::new();
                for (i, up) in s.ups.iter().enumerate() {
                    out.extend(up.layers());
                    if let Some(d) = s.downs.get(i) {
                        out.extend(d.layers());
                    }
                }
                out.push(&s.fuse);
                out
            }
        }
    }

    /// Appends layer costs for an `h × w` input and returns the output size.
    fn costs(&self, h: usize, w: usize, out: &mut Vec<LayerCost>) -> (usize, usize) {
        match self {
            Block::Conv(c) => {
                let cost = c.cost(h, w);
                let size = (cost.out_h, cost.out_w);
                out.push(cost);
                size
            }
            Block::Residual(r) => {
                out.push(r.conv1.cost(h, w));
                out.push(r.conv2.cost(h, w));
                (h, w)
            }
            Block::Stages(s) => {
                let lr = (h, w);
                let hr = s.ups[0].up1.out_size(h, w);
                for (i, up) in s.ups.iter().enumerate() {
                    out.push(up.up1.cost(lr.0, lr.1));
                    out.push(up.down.cost(hr.0, hr.1));
                    out.push(up.up2.cost(lr.0, lr.1));
                    if let Some(d) = s.downs.get(i) {
                        out.push(d.down1.cost(hr.0, hr.1));
                        out.push(d.up.cost(lr.0, lr.1));
                        out.push(d.down2.cost(hr.0, hr.1));
                    }
                }
                out.push(s.fuse.cost(hr.0, hr.1));
                hr
            }
        }
    }
}

/// A sub-network: an ordered layer graph over parameters held in the
/// owning model's store, with a fixed input/output shape contract.
#[derive(Clone, Debug)]
pub struct Subnet {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub spatial: Spatial,
    blocks: Vec<Block>,
}

impl Subnet {
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        self.out_shape(&shape)?;
        let mut y = x;
        for b in &self.blocks {
            y = b.forward(tape, y)?;
        }
        Ok(y)
    }

    /// Output shape for `input = [c, h, w]`, or a shape error when the
    /// input violates the contract.
    pub fn out_shape(&self, input: &[usize]) -> Result<[usize; 3]> {
        let [c, h, w] = input[..] else {
            return Err(Error::Shape(format!("{}: expected a [c, h, w] input, got {input:?}", self.name)));
        };
        if c != self.in_channels || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "{}: expected {} input channels, got shape {input:?}",
                self.name, self.in_channels
            )));
        }
        Ok(match self.spatial {
            Spatial::Same => [self.out_channels, h, w],
            Spatial::Up(s) => [self.out_channels, s * h, s * w],
            Spatial::Down(s) => {
                if h % s != 0 || w % s != 0 {
                    return Err(Error::Shape(format!("{}: {h}x{w} is not divisible by {s}", self.name)));
                }
                [self.out_channels, h / s, w / s]
            }
        })
    }

    pub fn layers(&self) -> Vec<&ConvLayer> {
        self.blocks.iter().flat_map(Block::layers).collect()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers().into_iter().flat_map(|l| l.param_ids()).collect()
    }

    pub fn param_count(&self) -> u64 {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    pub fn costs(&self, h: usize, w: usize) -> Vec<LayerCost> {
        let mut out = Vec::new();
        let mut size = (h, w);
        for b in &self.blocks {
            size = b.costs(size.0, size.1, &mut out);
        }
        out
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.costs(h, w).iter().map(|c| c.macs).sum()
    }

    /// `2 × multiply-accumulates`, bias and activation costs ignored.
    pub fn flops(&self, h: usize, w: usize) -> u64 {
        2 * self.macs(h, w)
    }
}

fn conv(init: &mut ParamInit<'_>, name: &str, in_c: usize, out_c: usize, k: usize, act: bool) -> Result<ConvLayer> {
    ConvLayer::new(init, name, ConvKind::Strided, in_c, out_c, k, 1, k / 2, act)
}

/// Single 3×3 conv + PReLU feature extractor from `in_c` image channels.
pub fn build_feature_extractor(init: &mut ParamInit<'_>, name: &str, in_c: usize, out_c: usize) -> Result<Subnet> {
    Ok(Subnet {
        name: name.into(),
        in_channels: in_c,
        out_channels: out_c,
        spatial: Spatial::Same,
        blocks: vec![Block::Conv(conv(init, &format!("{name}.conv"), in_c, out_c, 3, true)?)],
    })
}

/// Input channels of the neighbour feature extractor: target + neighbour
/// RGB, plus the two flow components when flow is used.
pub fn neighbor_input_channels(cfg: &ValidatedConfig) -> usize {
    if cfg.use_flow {
        8
    } else {
        6
    }
}

/// `(feat_L, feat_M)`: 3 → c_l and (6 or 8) → c_m.
pub fn build_feature_extractors(init: &mut ParamInit<'_>, cfg: &ValidatedConfig) -> Result<(Subnet, Subnet)> {
    let feat_l = build_feature_extractor(init, "feat_l", 3, cfg.c_l)?;
    let feat_m = build_feature_extractor(init, "feat_m", neighbor_input_channels(cfg), cfg.c_m)?;
    Ok((feat_l, feat_m))
}

/// SISR path: 1×1 reduction c_l → c_h, `T` back-projection stages, 3×3
/// fusion of the `T` HR maps back to c_h.
pub fn build_sisr(init: &mut ParamInit<'_>, cfg: &ValidatedConfig) -> Result<Subnet> {
    let rs = cfg.resample();
    let t = cfg.sisr_stages;
    let c = cfg.c_h;
    let reduce = conv(init, "sisr.reduce", cfg.c_l, c, 1, true)?;
    let mut ups = Vec::with_capacity(t);
    let mut downs = Vec::with_capacity(t.saturating_sub(1));
    for i in 0..t {
        ups.push(UpProjection::new(init, &format!("sisr.up{i}"), c, rs.kernel, rs.stride, rs.pad)?);
        if i + 1 < t {
            downs.push(DownProjection::new(init, &format!("sisr.down{i}"), c, rs.kernel, rs.stride, rs.pad)?);
        }
    }
    let fuse = conv(init, "sisr.fuse", t * c, c, 3, true)?;
    Ok(Subnet {
        name: "sisr".into(),
        in_channels: cfg.c_l,
        out_channels: c,
        spatial: Spatial::Up(cfg.s()),
        blocks: vec![Block::Conv(reduce), Block::Stages(BackProjectionStages { ups, downs, fuse })],
    })
}

fn residual_blocks(init: &mut ParamInit<'_>, name: &str, n: usize, c: usize) -> Result<Vec<Block>> {
    (0..n)
        .map(|i| Ok(Block::Residual(ResidualBlock::new(init, &format!("{name}.block{i}"), c)?)))
        .collect()
}

/// MISR path: B residual blocks at LR on c_m, then a transposed resampling
/// conv c_m → c_h.
pub fn build_misr(init: &mut ParamInit<'_>, cfg: &ValidatedConfig) -> Result<Subnet> {
    let rs = cfg.resample();
    let mut blocks = residual_blocks(init, "misr", cfg.resnet_blocks, cfg.c_m)?;
    blocks.push(Block::Conv(ConvLayer::new(
        init,
        "misr.up",
        ConvKind::Transposed,
        cfg.c_m,
        cfg.c_h,
        rs.kernel,
        rs.stride,
        rs.pad,
        true,
    )?));
    Ok(Subnet {
        name: "misr".into(),
        in_channels: cfg.c_m,
        out_channels: cfg.c_h,
        spatial: Spatial::Up(cfg.s()),
        blocks,
    })
}

/// Residual path: B residual blocks at HR on c_h.
pub fn build_res(init: &mut ParamInit<'_>, cfg: &ValidatedConfig) -> Result<Subnet> {
    Ok(Subnet {
        name: "res".into(),
        in_channels: cfg.c_h,
        out_channels: cfg.c_h,
        spatial: Spatial::Same,
        blocks: residual_blocks(init, "res", cfg.resnet_blocks, cfg.c_h)?,
    })
}

/// Decoder: B residual blocks at HR on c_h, then a strided resampling conv
/// c_h → c_l.
pub fn build_decoder(init: &mut ParamInit<'_>, cfg: &ValidatedConfig) -> Result<Subnet> {
    let rs = cfg.resample();
    let mut blocks = residual_blocks(init, "dec", cfg.resnet_blocks, cfg.c_h)?;
    blocks.push(Block::Conv(ConvLayer::new(
        init,
        "dec.down",
        ConvKind::Strided,
        cfg.c_h,
        cfg.c_l,
        rs.kernel,
        rs.stride,
        rs.pad,
        true,
    )?));
    Ok(Subnet {
        name: "dec".into(),
        in_channels: cfg.c_h,
        out_channels: cfg.c_l,
        spatial: Spatial::Down(cfg.s()),
        blocks,
    })
}

/// Input channels of the reconstruction layer.
pub fn reconstruction_channels(cfg: &ValidatedConfig) -> usize {
    use crate::config::Integration;
    match cfg.integration {
        Integration::Concat if cfg.context_n > 0 => cfg.context_n * cfg.c_h,
        _ => cfg.c_h,
    }
}

/// Single 3×3 conv to RGB without activation.
pub fn build_reconstruction(init: &mut ParamInit<'_>, cfg: &ValidatedConfig) -> Result<Subnet> {
    build_reconstruction_from(init, reconstruction_channels(cfg))
}

pub fn build_reconstruction_from(init: &mut ParamInit<'_>, in_c: usize) -> Result<Subnet> {
    Ok(Subnet {
        name: "rec".into(),
        in_channels: in_c,
        out_channels: 3,
        spatial: Spatial::Same,
        blocks: vec![Block::Conv(conv(init, "rec.conv", in_c, 3, 3, false)?)],
    })
}
