//! Luminance PSNR and SSIM.

use crate::error::{Error, Result};
use crate::frame::Frame;

/// Reported in place of an infinite PSNR.
pub const PSNR_CAP: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const PEAK: f64 = 255.0;

/// A single-channel image with values on the 0–1 scale.
#[derive(Clone, Debug, PartialEq)]
pub struct LumaPlane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl LumaPlane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height} plane",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Removes `c` pixels from every edge.
    pub fn crop_border(&self, c: usize) -> Result<Self> {
        if 2 * c >= self.height || 2 * c >= self.width {
            return Err(Error::Shape(format!(
                "cannot crop {c} pixels from a {}x{} plane",
                self.width, self.height
            )));
        }
        let (h, w) = (self.height - 2 * c, self.width - 2 * c);
        let data = (c..c + h)
            .flat_map(|y| self.data[y * self.width + c..y * self.width + c + w].iter().copied())
            .collect();
        Ok(Self { height: h, width: w, data })
    }
}

/// BT.601 studio-swing luma: `(65.481 R + 128.553 G + 24.966 B + 16) / 255`
/// for RGB in `[0, 1]`.
pub fn rgb_to_y(frame: &Frame) -> LumaPlane {
    let (h, w) = (frame.height(), frame.width());
    let plane = h * w;
    let d = frame.data();
    let data = (0..plane)
        .map(|i| (65.481 * d[i] + 128.553 * d[plane + i] + 24.966 * d[2 * plane + i] + 16.0) / 255.0)
        .collect();
    LumaPlane { height: h, width: w, data }
}

fn same_dims(a: &LumaPlane, b: &LumaPlane) -> Result<()> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::Shape(format!(
            "metric inputs differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// PSNR in dB with the planes scaled to `[0, 255]`; identical planes give
/// [`PSNR_CAP`].
pub fn psnr(a: &LumaPlane, b: &LumaPlane) -> Result<f64> {
    same_dims(a, b)?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = (x - y) * PEAK;
            d * d
        })
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (PEAK * PEAK / mse).log10()).min(PSNR_CAP))
}

/// Side of the SSIM window for an `h × w` image: 11, or the largest odd
/// size that fits.
pub fn ssim_window(h: usize, w: usize) -> usize {
    let m = h.min(w).min(SSIM_WINDOW);
    if m.is_multiple_of(2) {
        m - 1
    } else {
        m
    }
}

/// Normalized 1-D Gaussian of the given odd size.
pub fn gaussian_kernel(size: usize) -> Vec<f64> {
    let r = (size / 2) as f64;
    let g: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean single-scale SSIM over all valid window positions, planes scaled to
/// `[0, 255]`, Gaussian window σ = 1.5.
pub fn ssim(a: &LumaPlane, b: &LumaPlane) -> Result<f64> {
    same_dims(a, b)?;
    let (h, w) = (a.height, a.width);
    let size = ssim_window(h, w);
    let k = gaussian_kernel(size);
    let x: Vec<f64> = a.data.iter().map(|v| v * PEAK).collect();
    let y: Vec<f64> = b.data.iter().map(|v| v * PEAK).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, h, w, &k));
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// PSNR between the luma of two RGB frames.
pub fn psnr_y(a: &Frame, b: &Frame) -> Result<f64> {
    psnr(&rgb_to_y(a), &rgb_to_y(b))
}

/// SSIM between the luma of two RGB frames.
pub fn ssim_y(a: &Frame, b: &Frame) -> Result<f64> {
    ssim(&rgb_to_y(a), &rgb_to_y(b))
}
