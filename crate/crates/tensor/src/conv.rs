//! Convolution kernels over `[c, h, w]` tensors, lowered to GEMM through
//! im2col / col2im.

use crate::{Tensor, TensorError};

/// Geometry of a square-kernel 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self { kernel, stride, pad }
    }

    /// Output extent of a strided convolution, `None` when the kernel does
    /// not fit inside the padded input.
    pub fn conv_out(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.pad;
        if padded < self.kernel || self.stride == 0 {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    /// Output extent of the transposed convolution.
    pub fn transposed_out(&self, n: usize) -> Option<usize> {
        if n == 0 {
            return None;
        }
        ((n - 1) * self.stride + self.kernel).checked_sub(2 * self.pad)
    }
}

/// C = A·B with explicit strides; `accumulate` adds into C instead of
/// overwriting it.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover every index addressed by the given dimensions
    // and strides; the callers below only pass row- or column-major views of
    // contiguous buffers of the stated sizes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds `input` (`c × h × w`) into a `(c·k·k) × (oh·ow)` patch matrix.
fn im2col(input: &[f64], c: usize, h: usize, w: usize, g: ConvGeometry, oh: usize, ow: usize) -> Vec<f64> {
    let k = g.kernel;
    let cols = oh * ow;
    let mut out = vec![0.0; c * k * k * cols];
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters a patch matrix back, summing overlaps.
fn col2im(cols_buf: &[f64], c: usize, h: usize, w: usize, g: ConvGeometry, oh: usize, ow: usize) -> Vec<f64> {
    let k = g.kernel;
    let cols = oh * ow;
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let src = &cols_buf[row * cols..(row + 1) * cols];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src_row = &src[oy * ow..(oy + 1) * ow];
                    for (ox, s) in src_row.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
    out
}

fn weight_dims(weight: &Tensor) -> Result<(usize, usize, usize), TensorError> {
    match weight.shape()[..] {
        [a, b, k1, k2] if k1 == k2 => Ok((a, b, k1)),
        _ => Err(TensorError::Rank {
            expected: 4,
            shape: weight.shape().to_vec(),
        }),
    }
}

fn check_bias(bias: Option<&Tensor>, channels: usize) -> Result<(), TensorError> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(TensorError::ShapeMismatch {
                left: vec![channels],
                right: b.shape().to_vec(),
            });
        }
    }
    Ok(())
}

fn add_bias(out: &mut [f64], bias: Option<&Tensor>, plane: usize) {
    if let Some(b) = bias {
        for (chunk, &bv) in out.chunks_mut(plane).zip(b.data()) {
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
}

fn bias_grad(grad_out: &[f64], plane: usize) -> Vec<f64> {
    grad_out.chunks(plane).map(|c| c.iter().sum()).collect()
}

/// Strided convolution; weight layout `[c_out, c_in, k, k]`.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor, TensorError> {
    let (c, h, w) = input.dims3()?;
    let (c_out, c_in, k) = weight_dims(weight)?;
    if c_in != c {
        return Err(TensorError::ShapeMismatch {
            left: input.shape().to_vec(),
            right: weight.shape().to_vec(),
        });
    }
    check_bias(bias, c_out)?;
    let g = ConvGeometry::new(k, stride, pad);
    let (oh, ow) = match (g.conv_out(h), g.conv_out(w)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(TensorError::Geometry { h, w, kernel: k, stride, pad }),
    };
    let cols = im2col(input.data(), c, h, w, g, oh, ow);
    let ckk = c * k * k;
    let mut out = vec![0.0; c_out * oh * ow];
    gemm(c_out, ckk, oh * ow, weight.data(), (ckk, 1), &cols, (oh * ow, 1), &mut out, false);
    add_bias(&mut out, bias, oh * ow);
    Tensor::new(&[c_out, oh, ow], out)
}

/// Gradients of [`conv2d`] given the upstream gradient. Returns
/// `(d_input, d_weight, d_bias)`.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor, Tensor), TensorError> {
    let (c, h, w) = input.dims3()?;
    let (c_out, _, k) = weight_dims(weight)?;
    let (_, oh, ow) = grad_out.dims3()?;
    let g = ConvGeometry::new(k, stride, pad);
    let ckk = c * k * k;
    let cols = im2col(input.data(), c, h, w, g, oh, ow);

    // dW = dY · colsᵀ
    let mut d_weight = vec![0.0; c_out * ckk];
    gemm(c_out, oh * ow, ckk, grad_out.data(), (oh * ow, 1), &cols, (1, oh * ow), &mut d_weight, false);

    // dcols = Wᵀ · dY
    let mut d_cols = vec![0.0; ckk * oh * ow];
    gemm(ckk, c_out, oh * ow, weight.data(), (1, ckk), grad_out.data(), (oh * ow, 1), &mut d_cols, false);
    let d_input = col2im(&d_cols, c, h, w, g, oh, ow);

    Ok((
        Tensor::new(&[c, h, w], d_input)?,
        Tensor::new(weight.shape(), d_weight)?,
        Tensor::new(&[c_out], bias_grad(grad_out.data(), oh * ow))?,
    ))
}

/// Transposed convolution; weight layout `[c_in, c_out, k, k]`. Output
/// extent is `(n − 1)·stride − 2·pad + k`.
pub fn conv_transpose2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor, TensorError> {
    let (c, h, w) = input.dims3()?;
    let (c_in, c_out, k) = weight_dims(weight)?;
    if c_in != c {
        return Err(TensorError::ShapeMismatch {
            left: input.shape().to_vec(),
            right: weight.shape().to_vec(),
        });
    }
    check_bias(bias, c_out)?;
    let g = ConvGeometry::new(k, stride, pad);
    let (oh, ow) = match (g.transposed_out(h), g.transposed_out(w)) {
        (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
        _ => return Err(TensorError::Geometry { h, w, kernel: k, stride, pad }),
    };
    let okk = c_out * k * k;
    // cols = Wᵀ · x, (c_out·k·k) × (h·w)
    let mut cols = vec![0.0; okk * h * w];
    gemm(okk, c, h * w, weight.data(), (1, okk), input.data(), (h * w, 1), &mut cols, false);
    let mut out = col2im(&cols, c_out, oh, ow, g, h, w);
    add_bias(&mut out, bias, oh * ow);
    Tensor::new(&[c_out, oh, ow], out)
}

/// Gradients of [`conv_transpose2d`]. Returns `(d_input, d_weight, d_bias)`.
pub fn conv_transpose2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor, Tensor), TensorError> {
    let (c, h, w) = input.dims3()?;
    let (_, c_out, k) = weight_dims(weight)?;
    let (_, oh, ow) = grad_out.dims3()?;
    let g = ConvGeometry::new(k, stride, pad);
    let okk = c_out * k * k;
    let g_cols = im2col(grad_out.data(), c_out, oh, ow, g, h, w);

    // dx = W · gcols
    let mut d_input = vec![0.0; c * h * w];
    gemm(c, okk, h * w, weight.data(), (okk, 1), &g_cols, (h * w, 1), &mut d_input, false);

    // dW = x · gcolsᵀ
    let mut d_weight = vec![0.0; c * okk];
    gemm(c, h * w, okk, input.data(), (h * w, 1), &g_cols, (1, h * w), &mut d_weight, false);

    Ok((
        Tensor::new(&[c, h, w], d_input)?,
        Tensor::new(weight.shape(), d_weight)?,
        Tensor::new(&[c_out], bias_grad(grad_out.data(), oh * ow))?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook nested-loop convolution.
    fn naive_conv(x: &Tensor, wt: &Tensor, b: &Tensor, s: usize, p: usize) -> Tensor {
        let (c, h, w) = x.dims3().unwrap();
        let (co, _, k) = weight_dims(wt).unwrap();
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (w + 2 * p - k) / s + 1;
        let mut out = Tensor::zeros(&[co, oh, ow]);
        for o in 0..co {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b.data()[o];
                    for ci in 0..c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let iy = (y * s + ki) as isize - p as isize;
                                let ix = (xx * s + kj) as isize - p as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x.data()[(ci * h + iy as usize) * w + ix as usize]
                                        * wt.data()[((o * c + ci) * k + ki) * k + kj];
                                }
                            }
                        }
                    }
                    out.data_mut()[(o * oh + y) * ow + xx] = acc;
                }
            }
        }
        out
    }

    /// Scatter form of the transposed convolution.
    fn naive_conv_t(x: &Tensor, wt: &Tensor, b: &Tensor, s: usize, p: usize) -> Tensor {
        let (c, h, w) = x.dims3().unwrap();
        let (_, co, k) = weight_dims(wt).unwrap();
        let oh = (h - 1) * s + k - 2 * p;
        let ow = (w - 1) * s + k - 2 * p;
        let mut out = Tensor::zeros(&[co, oh, ow]);
        for o in 0..co {
            for v in &mut out.data_mut()[o * oh * ow..(o + 1) * oh * ow] {
                *v = b.data()[o];
            }
        }
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let val = x.data()[(ci * h + y) * w + xx];
                    for o in 0..co {
                        for ki in 0..k {
                            for kj in 0..k {
                                let oy = (y * s + ki) as isize - p as isize;
                                let ox = (xx * s + kj) as isize - p as isize;
                                if oy >= 0 && ox >= 0 && (oy as usize) < oh && (ox as usize) < ow {
                                    out.data_mut()[(o * oh + oy as usize) * ow + ox as usize] +=
                                        val * wt.data()[((ci * co + o) * k + ki) * k + kj];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn pseudo(shape: &[usize], seed: u64) -> Tensor {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Tensor::from_fn(shape, |_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    fn assert_close(a: &Tensor, b: &Tensor) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn conv_matches_naive() {
        for &(k, s, p) in &[(3, 1, 1), (8, 4, 2), (6, 2, 2), (1, 1, 0), (12, 8, 2)] {
            let x = pseudo(&[3, 16, 24], 1);
            let w = pseudo(&[5, 3, k, k], 2);
            let b = pseudo(&[5], 3);
            assert_close(&conv2d(&x, &w, Some(&b), s, p).unwrap(), &naive_conv(&x, &w, &b, s, p));
        }
    }

    #[test]
    fn transposed_conv_matches_naive() {
        for &(k, s, p) in &[(8, 4, 2), (6, 2, 2), (12, 8, 2), (3, 1, 1)] {
            let x = pseudo(&[3, 5, 7], 4);
            let w = pseudo(&[3, 2, k, k], 5);
            let b = pseudo(&[2], 6);
            let got = conv_transpose2d(&x, &w, Some(&b), s, p).unwrap();
            assert_eq!(got.shape(), &[2, s * 5, s * 7]);
            assert_close(&got, &naive_conv_t(&x, &w, &b, s, p));
        }
    }

    #[test]
    fn transposed_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_t(y)> when both share weights and geometry.
        let (k, s, p) = (8, 4, 2);
        let x = pseudo(&[2, 16, 12], 7);
        let w = pseudo(&[3, 2, k, k], 8);
        let y = pseudo(&[3, 4, 3], 9);
        let cx = conv2d(&x, &w, None, s, p).unwrap();
        let ty = conv_transpose2d(&y, &w, None, s, p).unwrap();
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn geometry_rejects_oversized_kernel() {
        let x = Tensor::zeros(&[1, 2, 2]);
        let w = Tensor::zeros(&[1, 1, 8, 8]);
        assert!(matches!(conv2d(&x, &w, None, 4, 2), Err(TensorError::Geometry { .. })));
    }
}
