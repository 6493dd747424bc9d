//! RGB frames and the spatial transforms shared by frames and flow fields.

use std::path::Path;

use rbpn_tensor::Tensor;

use crate::error::{Error, Result};

/// One RGB video frame, `3 × height × width`, nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame(Tensor);

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Ok(Self(Tensor::new(&[3, height, width], data)?))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Tensor::zeros(&[3, height, width]))
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self(Tensor::full(&[3, height, width], value))
    }

    /// Builds a frame from `f(channel, y, x)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let plane = height * width;
        Self(Tensor::from_fn(&[3, height, width], |i| {
            let c = i / plane;
            let r = i % plane;
            f(c, r / width, r % width)
        }))
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match t.shape() {
            [3, h, w] if *h > 0 && *w > 0 => Ok(Self(t)),
            other => Err(Error::Shape(format!("a frame needs shape [3, h, w], got {other:?}"))),
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

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.0.data()[(c * self.height() + y) * self.width() + x]
    }

    /// Clamps to `[0, 1]`.
    pub fn clipped(&self) -> Self {
        Self(self.0.map(|v| v.clamp(0.0, 1.0)))
    }

    /// Clamps and rounds to the 256 levels an 8-bit PNG can hold.
    pub fn quantized(&self) -> Self {
        Self(self.0.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0))
    }

    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Self> {
        Ok(Self(crop(&self.0, x, y, width, height)?))
    }

    /// Crops the bottom/right edge so both dimensions are multiples of `m`.
    pub fn mod_crop(&self, m: usize) -> Result<Self> {
        let (h, w) = (self.height() / m * m, self.width() / m * m);
        if h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "{}x{} frame is smaller than the scale factor {m}",
                self.width(),
                self.height()
            )));
        }
        self.crop(0, 0, w, h)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let raw = img.as_raw();
        Ok(Self::from_fn(h, w, |c, y, x| raw[(y * w + x) * 3 + c] as f64 / 255.0))
    }

    /// Writes an 8-bit RGB PNG; values are clipped to `[0, 1]` first.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        let mut raw = vec![0u8; h * w * 3];
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    raw[(y * w + x) * 3 + c] = (self.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
        let img = image::RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer matches dimensions");
        img.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Copies the window `[x, x + width) × [y, y + height)` of a `[c, h, w]`
/// tensor.
pub fn crop(t: &Tensor, x: usize, y: usize, width: usize, height: usize) -> Result<Tensor> {
    let (c, h, w) = t.dims3()?;
    if x + width > w || y + height > h || width == 0 || height == 0 {
        return Err(Error::Shape(format!(
            "crop {width}x{height}+{x}+{y} does not fit a {w}x{h} map"
        )));
    }
    let mut data = Vec::with_capacity(c * width * height);
    for ch in 0..c {
        for row in y..y + height {
            let start = (ch * h + row) * w + x;
            data.extend_from_slice(&t.data()[start..start + width]);
        }
    }
    Ok(Tensor::new(&[c, height, width], data)?)
}

/// Mirrors left-right.
pub fn hflip(t: &Tensor) -> Tensor {
    let (_, _, w) = t.dims3().expect("[c, h, w] tensor");
    let mut out = t.clone();
    for (dst, src) in out.data_mut().chunks_mut(w).zip(t.data().chunks(w)) {
        for (x, v) in dst.iter_mut().enumerate() {
            *v = src[w - 1 - x];
        }
    }
    out
}

/// Mirrors top-bottom.
pub fn vflip(t: &Tensor) -> Tensor {
    let (c, h, w) = t.dims3().expect("[c, h, w] tensor");
    let mut out = t.clone();
    for ch in 0..c {
        for y in 0..h {
            let src = (ch * h + (h - 1 - y)) * w;
            let dst = (ch * h + y) * w;
            out.data_mut()[dst..dst + w].copy_from_slice(&t.data()[src..src + w]);
        }
    }
    out
}

/// Rotates by 90° so that a pixel at `(x, y)` moves to
/// `(h − 1 − y, x)`: position offsets `(dx, dy)` become `(−dy, dx)`. With
/// the y axis pointing down this is a clockwise rotation on screen. The
/// output is `w` rows by `h` columns.
pub fn rot90(t: &Tensor) -> Tensor {
    let (c, h, w) = t.dims3().expect("[c, h, w] tensor");
    let (oh, ow) = (w, h);
    let mut data = vec![0.0; c * h * w];
    for ch in 0..c {
        for y2 in 0..oh {
            for x2 in 0..ow {
                // inverse map: x = y2, y = h − 1 − x2
                data[(ch * oh + y2) * ow + x2] = t.data()[(ch * h + (h - 1 - x2)) * w + y2];
            }
        }
    }
    Tensor::new(&[c, oh, ow], data).expect("same element count")
}
