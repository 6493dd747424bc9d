//! Bicubic resizing with the kernel, antialiasing and symmetric border
//! handling of MATLAB's `imresize`.

use rbpn_tensor::Tensor;

use crate::error::{Error, Result};

fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let (ax2, ax3) = (ax * ax, ax * ax * ax);
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Per output position: source indices and normalized weights.
#[derive(Clone, Debug)]
struct Contributions {
    taps: usize,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

fn contributions(in_len: usize, out_len: usize, scale: f64) -> Contributions {
    let antialias = scale < 1.0;
    let width = if antialias { 4.0 / scale } else { 4.0 };
    let taps = width.ceil() as usize + 2;
    let mut indices = Vec::with_capacity(out_len * taps);
    let mut weights = Vec::with_capacity(out_len * taps);
    let n = in_len as isize;
    for x in 1..=out_len {
        let u = x as f64 / scale + 0.5 * (1.0 - 1.0 / scale);
        let left = (u - width / 2.0).floor() as isize;
        let start = weights.len();
        for j in 0..taps as isize {
            let idx = left + j;
            let d = u - idx as f64;
            let w = if antialias { scale * cubic(scale * d) } else { cubic(d) };
            weights.push(w);
            // 1-based index mirrored into [1, n]
            let m = (idx - 1).rem_euclid(2 * n);
            let mirrored = if m < n { m } else { 2 * n - 1 - m };
            indices.push(mirrored as usize);
        }
        let sum: f64 = weights[start..].iter().sum();
        for w in &mut weights[start..] {
            *w /= sum;
        }
    }
    Contributions { taps, indices, weights }
}

/// Output size for a scale factor, as `imresize` computes it.
pub fn resized_len(len: usize, scale: f64) -> usize {
    (len as f64 * scale - 1e-9).ceil() as usize
}

/// Resizes every channel of a `[c, h, w]` tensor by `scale` (e.g. `0.25`
/// to downscale ×4). No clipping is applied.
pub fn bicubic_resize(t: &Tensor, scale: f64) -> Result<Tensor> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Range(format!("resize scale must be positive, got {scale}")));
    }
    let (c, h, w) = t.dims3()?;
    let (oh, ow) = (resized_len(h, scale), resized_len(w, scale));
    if oh == 0 || ow == 0 {
        return Err(Error::Shape(format!("resizing {w}x{h} by {scale} leaves nothing")));
    }
    let cw = contributions(w, ow, scale);
    let ch = contributions(h, oh, scale);
    let src = t.data();
    let mut tmp = vec![0.0; c * h * ow];
    for plane in 0..c * h {
        let row = &src[plane * w..(plane + 1) * w];
        for x in 0..ow {
            let (i0, i1) = (x * cw.taps, (x + 1) * cw.taps);
            tmp[plane * ow + x] = cw.indices[i0..i1]
                .iter()
                .zip(&cw.weights[i0..i1])
                .map(|(&i, &wt)| row[i] * wt)
                .sum();
        }
    }
    let mut out = vec![0.0; c * oh * ow];
    for chan in 0..c {
        for y in 0..oh {
            let dst = &mut out[(chan * oh + y) * ow..(chan * oh + y + 1) * ow];
            for k in y * ch.taps..(y + 1) * ch.taps {
                let wt = ch.weights[k];
                let srow = &tmp[(chan * h + ch.indices[k]) * ow..(chan * h + ch.indices[k] + 1) * ow];
                for (d, s) in dst.iter_mut().zip(srow) {
                    *d += wt * s;
                }
            }
        }
    }
    Ok(Tensor::new(&[c, oh, ow], out)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert_eq!(cubic(0.5), 0.5625);
        assert_eq!(cubic(1.5), -0.0625);
    }

    #[test]
    fn weights_sum_to_one() {
        for (n, s) in [(16, 0.25), (4, 4.0), (9, 0.5), (3, 2.0)] {
            let c = contributions(n, resized_len(n, s), s);
            for row in c.weights.chunks(c.taps) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sizes() {
        let t = Tensor::zeros(&[3, 32, 24]);
        assert_eq!(bicubic_resize(&t, 0.25).unwrap().shape(), &[3, 8, 6]);
        assert_eq!(bicubic_resize(&t, 2.0).unwrap().shape(), &[3, 64, 48]);
        assert!(bicubic_resize(&t, 0.0).is_err());
    }
}
