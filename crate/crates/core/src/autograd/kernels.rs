//! Forward and backward kernels shared by the functional API and the tape.

use super::Tensor;
use crate::error::shape_err;
use crate::{Error, Result};

/// `c = alpha * a * b + beta * c` for row/column-strided operands.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= (m - 1) * rsa + (k.max(1) - 1) * csa + 1 || k == 0);
    assert!(b.len() >= (k.max(1) - 1) * rsb + (n - 1) * csb + 1 || k == 0);
    assert!(c.len() >= m * n);
    // SAFETY: bounds of a, b and c were checked above for the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_ch: usize,
    pub height: usize,
    pub width: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let [batch, in_ch, height, width] = *input else {
            return Err(shape_err(format!("conv2d input must be [B,C,H,W], got {input:?}")));
        };
        let [out_ch, k_in, kh, kw] = *kernel else {
            return Err(shape_err(format!("conv2d kernel must be [Cout,Cin,kH,kW], got {kernel:?}")));
        };
        if stride == 0 {
            return Err(shape_err("conv2d stride must be at least 1"));
        }
        if k_in != in_ch {
            return Err(shape_err(format!("kernel expects {k_in} input channels, input has {in_ch}")));
        }
        if height + 2 * padding < kh || width + 2 * padding < kw {
            return Err(shape_err(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                height + 2 * padding,
                width + 2 * padding
            )));
        }
        Ok(Self {
            batch,
            in_ch,
            height,
            width,
            out_ch,
            kh,
            kw,
            stride,
            padding,
            out_h: (height + 2 * padding - kh) / stride + 1,
            out_w: (width + 2 * padding - kw) / stride + 1,
        })
    }

    fn patch(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_image(&self) -> usize {
        self.in_ch * self.height * self.width
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_ch, self.out_h, self.out_w]
    }

    /// Source pixel for output position and kernel offset, if inside the image.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        let plane = self.out_plane();
        for ci in 0..self.in_ch {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((ci * self.kh + ky) * self.kw + kx) * plane;
                    for oy in 0..self.out_h {
                        let dst = &mut cols[row + oy * self.out_w..row + (oy + 1) * self.out_w];
                        match self.source(oy, ky, self.height) {
                            None => dst.fill(0.0),
                            Some(iy) => {
                                let src = &image[(ci * self.height + iy) * self.width..];
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    *d = self.source(ox, kx, self.width).map_or(0.0, |ix| src[ix]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        let plane = self.out_plane();
        for ci in 0..self.in_ch {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((ci * self.kh + ky) * self.kw + kx) * plane;
                    for oy in 0..self.out_h {
                        let Some(iy) = self.source(oy, ky, self.height) else {
                            continue;
                        };
                        let base = (ci * self.height + iy) * self.width;
                        for ox in 0..self.out_w {
                            if let Some(ix) = self.source(ox, kx, self.width) {
                                image[base + ix] += cols[row + oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, padding)?;
    if let Some(b) = bias {
        if b.shape() != [g.out_ch] {
            return Err(shape_err(format!("conv bias must be [{}], got {:?}", g.out_ch, b.shape())));
        }
    }
    let (patch, plane) = (g.patch(), g.out_plane());
    let mut out = vec![0.0; g.batch * g.out_ch * plane];
    let mut cols = vec![0.0; patch * plane];
    for b in 0..g.batch {
        g.im2col(&input.data()[b * g.in_image()..(b + 1) * g.in_image()], &mut cols);
        let dst = &mut out[b * g.out_ch * plane..(b + 1) * g.out_ch * plane];
        if let Some(bias) = bias {
            for (c, chunk) in dst.chunks_mut(plane).enumerate() {
                chunk.fill(bias.data()[c]);
            }
        }
        gemm(g.out_ch, patch, plane, kernel.data(), (patch, 1), &cols, (plane, 1), 1.0, dst);
    }
    Ok(Tensor::from_parts(g.out_shape(), out))
}

/// Gradients of a convolution. Each output is computed only when requested.
pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub kernel: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &[f64],
    stride: usize,
    padding: usize,
    want_input: bool,
    want_kernel: bool,
    want_bias: bool,
) -> Result<ConvGrads> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, padding)?;
    let (patch, plane) = (g.patch(), g.out_plane());
    let mut d_input = want_input.then(|| vec![0.0; input.len()]);
    let mut d_kernel = want_kernel.then(|| vec![0.0; kernel.len()]);
    let mut d_bias = want_bias.then(|| vec![0.0; g.out_ch]);
    let mut cols = vec![0.0; patch * plane];
    for b in 0..g.batch {
        let go = &grad_out[b * g.out_ch * plane..(b + 1) * g.out_ch * plane];
        if let Some(db) = d_bias.as_mut() {
            for (c, chunk) in go.chunks(plane).enumerate() {
                db[c] += chunk.iter().sum::<f64>();
            }
        }
        if let Some(dk) = d_kernel.as_mut() {
            g.im2col(&input.data()[b * g.in_image()..(b + 1) * g.in_image()], &mut cols);
            // dK[Cout, patch] += dOut[Cout, plane] * cols^T
            gemm(g.out_ch, plane, patch, go, (plane, 1), &cols, (1, plane), 1.0, dk);
        }
        if let Some(di) = d_input.as_mut() {
            // dCols[patch, plane] = K^T * dOut
            gemm(patch, g.out_ch, plane, kernel.data(), (1, patch), go, (plane, 1), 0.0, &mut cols);
            g.col2im(&cols, &mut di[b * g.in_image()..(b + 1) * g.in_image()]);
        }
    }
    Ok(ConvGrads {
        input: d_input,
        kernel: d_kernel,
        bias: d_bias,
    })
}

pub(crate) fn linear_check(input: &[usize], weight: &[usize], bias: Option<&[usize]>) -> Result<(usize, usize, usize)> {
    let [batch, features] = *input else {
        return Err(shape_err(format!("linear input must be [B,F], got {input:?}")));
    };
    let [out, w_in] = *weight else {
        return Err(shape_err(format!("linear weight must be [O,F], got {weight:?}")));
    };
    if w_in != features {
        return Err(shape_err(format!("weight expects {w_in} features, input has {features}")));
    }
    if let Some(b) = bias {
        if b != [out] {
            return Err(shape_err(format!("linear bias must be [{out}], got {b:?}")));
        }
    }
    Ok((batch, features, out))
}

pub(crate) fn linear_forward(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (batch, features, out) = linear_check(input.shape(), weight.shape(), bias.map(Tensor::shape))?;
    let mut y = vec![0.0; batch * out];
    if let Some(b) = bias {
        for row in y.chunks_mut(out) {
            row.copy_from_slice(b.data());
        }
    }
    gemm(batch, features, out, input.data(), (features, 1), weight.data(), (1, features), 1.0, &mut y);
    Ok(Tensor::from_parts(vec![batch, out], y))
}

pub(crate) fn avgpool_check(shape: &[usize], size: usize) -> Result<[usize; 4]> {
    let [b, c, h, w] = *shape else {
        return Err(shape_err(format!("avgpool input must be [B,C,H,W], got {shape:?}")));
    };
    if size == 0 || h % size != 0 || w % size != 0 {
        return Err(shape_err(format!("pool size {size} does not tile {h}x{w}")));
    }
    Ok([b, c, h, w])
}

pub(crate) fn avgpool_forward(input: &Tensor, size: usize) -> Result<Tensor> {
    let [b, c, h, w] = avgpool_check(input.shape(), size)?;
    let (oh, ow) = (h / size, w / size);
    let norm = 1.0 / (size * size) as f64;
    let x = input.data();
    let mut out = vec![0.0; b * c * oh * ow];
    for plane in 0..b * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for iy in 0..h {
            for ix in 0..w {
                dst[(iy / size) * ow + ix / size] += src[iy * w + ix];
            }
        }
        dst.iter_mut().for_each(|v| *v *= norm);
    }
    Ok(Tensor::from_parts(vec![b, c, oh, ow], out))
}

pub(crate) fn avgpool_backward(shape: &[usize], size: usize, grad_out: &[f64]) -> Vec<f64> {
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (oh, ow) = (h / size, w / size);
    let norm = 1.0 / (size * size) as f64;
    let mut out = vec![0.0; b * c * h * w];
    for plane in 0..b * c {
        let go = &grad_out[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut out[plane * h * w..(plane + 1) * h * w];
        for iy in 0..h {
            for ix in 0..w {
                dst[iy * w + ix] = go[(iy / size) * ow + ix / size] * norm;
            }
        }
    }
    out
}

/// Per-row cross-entropy `logsumexp(z) - z[label]`, stabilised by the row maximum.
pub(crate) fn cross_entropy_rows(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    let (batch, classes) = ce_check(logits, labels)?;
    let z = logits.data();
    Ok((0..batch)
        .map(|i| {
            let row = &z[i * classes..(i + 1) * classes];
            log_sum_exp(row) - row[labels[i]]
        })
        .collect())
}

pub(crate) fn ce_check(logits: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let [batch, classes] = *logits.shape() else {
        return Err(shape_err(format!("logits must be [B,K], got {:?}", logits.shape())));
    };
    if labels.len() != batch {
        return Err(shape_err(format!("{} labels for a batch of {batch}", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Label { label, classes });
    }
    Ok((batch, classes))
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax of one row.
pub(crate) fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}
