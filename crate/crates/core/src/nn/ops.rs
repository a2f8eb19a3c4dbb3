//! Layer kernels. All of them take and return batched tensors.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Geometry of a square 2-D convolution or pooling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Window {
    pub fn output_extent(&self, input: usize) -> Result<usize> {
        let padded = input + 2 * self.padding;
        if self.kernel == 0 || self.stride == 0 || padded < self.kernel {
            return Err(Error::ShapeMismatch(format!(
                "window {:?} does not fit input extent {}",
                self, input
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }
}

fn check_conv(
    input: &Tensor,
    weight: &[f64],
    bias: &[f64],
    out_channels: usize,
    win: Window,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    let k = win.kernel;
    if weight.len() != out_channels * c * k * k || bias.len() != out_channels {
        return Err(Error::ShapeMismatch(format!(
            "conv weights for {out_channels}x{c}x{k}x{k} have {} values (bias {})",
            weight.len(),
            bias.len()
        )));
    }
    let oh = win.output_extent(h)?;
    let ow = win.output_extent(w)?;
    Ok((n, c, h, w, oh, ow))
}

/// Reference convolution with one loop per index.
pub fn conv2d_direct(
    input: &Tensor,
    weight: &[f64],
    bias: &[f64],
    out_channels: usize,
    win: Window,
) -> Result<Tensor> {
    let (n, c, h, w, oh, ow) = check_conv(input, weight, bias, out_channels, win)?;
    let k = win.kernel;
    let x = input.data();
    let mut out = vec![0.0; n * out_channels * oh * ow];
    for b in 0..n {
        for o in 0..out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * win.stride + ky) as isize - win.padding as isize;
                                let ix = (ox * win.stride + kx) as isize - win.padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * c + ci) * h + iy as usize) * w + ix as usize];
                                acc += weight[((o * c + ci) * k + ky) * k + kx] * xv;
                            }
                        }
                    }
                    out[((b * out_channels + o) * oh + oy) * ow + ox] = acc + bias[o];
                }
            }
        }
    }
    Tensor::new(vec![n, out_channels, oh, ow], out)
}

/// Convolution lowered to a matrix product over an unfolded input.
pub fn conv2d_im2col(
    input: &Tensor,
    weight: &[f64],
    bias: &[f64],
    out_channels: usize,
    win: Window,
) -> Result<Tensor> {
    let (n, c, h, w, oh, ow) = check_conv(input, weight, bias, out_channels, win)?;
    let k = win.kernel;
    let rows = c * k * k;
    let cols = oh * ow;
    let x = input.data();
    let mut unfolded = vec![0.0; rows * cols];
    let mut out = vec![0.0; n * out_channels * cols];
    for b in 0..n {
        unfolded.fill(0.0);
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut unfolded[row * cols..(row + 1) * cols];
                    for oy in 0..oh {
                        let iy = (oy * win.stride + ky) as isize - win.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &x[((b * c + ci) * h + iy as usize) * w..][..w];
                        for ox in 0..ow {
                            let ix = (ox * win.stride + kx) as isize - win.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * ow + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        let out_b = &mut out[b * out_channels * cols..(b + 1) * out_channels * cols];
        for o in 0..out_channels {
            let acc = &mut out_b[o * cols..(o + 1) * cols];
            let w_row = &weight[o * rows..(o + 1) * rows];
            for (r, &wv) in w_row.iter().enumerate() {
                let col = &unfolded[r * cols..(r + 1) * cols];
                for (a, &u) in acc.iter_mut().zip(col) {
                    *a += wv * u;
                }
            }
            for a in acc.iter_mut() {
                *a += bias[o];
            }
        }
    }
    Tensor::new(vec![n, out_channels, oh, ow], out)
}

/// Average pooling; padded positions are excluded from the divisor.
pub fn avg_pool(input: &Tensor, win: Window) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let oh = win.output_extent(h)?;
    let ow = win.output_extent(w)?;
    let x = input.data();
    let mut out = vec![0.0; n * c * oh * ow];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let y0 = (oy * win.stride) as isize - win.padding as isize;
                let x0 = (ox * win.stride) as isize - win.padding as isize;
                let mut sum = 0.0;
                let mut count = 0usize;
                for iy in y0.max(0)..(y0 + win.kernel as isize).min(h as isize) {
                    for ix in x0.max(0)..(x0 + win.kernel as isize).min(w as isize) {
                        sum += src[iy as usize * w + ix as usize];
                        count += 1;
                    }
                }
                out[(plane * oh + oy) * ow + ox] = sum / count as f64;
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let area = (h * w) as f64;
    let data = input
        .data()
        .chunks_exact(h * w)
        .map(|plane| plane.iter().sum::<f64>() / area)
        .collect();
    Tensor::new(vec![n, c], data)
}

/// Fully connected layer over the flattened sample.
pub fn linear(input: &Tensor, weight: &[f64], bias: &[f64], out_features: usize) -> Result<Tensor> {
    let n = input.batch();
    let fan_in = input.sample_len();
    if weight.len() != out_features * fan_in || bias.len() != out_features {
        return Err(Error::ShapeMismatch(format!(
            "linear weights for {out_features}x{fan_in} have {} values",
            weight.len()
        )));
    }
    let mut out = Vec::with_capacity(n * out_features);
    for b in 0..n {
        let x = input.sample(b);
        for o in 0..out_features {
            let w_row = &weight[o * fan_in..(o + 1) * fan_in];
            let dot: f64 = w_row.iter().zip(x).map(|(a, b)| a * b).sum();
            out.push(dot + bias[o]);
        }
    }
    Tensor::new(vec![n, out_features], out)
}

pub fn add(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::ShapeMismatch("add needs at least one input".into()))?;
    let mut out = (*first).clone();
    for t in &inputs[1..] {
        if t.shape() != out.shape() {
            return Err(Error::ShapeMismatch(format!(
                "add of {:?} and {:?}",
                out.shape(),
                t.shape()
            )));
        }
        for (a, b) in out.data_mut().iter_mut().zip(t.data()) {
            *a += b;
        }
    }
    Ok(out)
}

/// Concatenation along the first non-batch axis.
pub fn concat(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::ShapeMismatch("concat needs at least one input".into()))?;
    let n = first.batch();
    let tail = &first.shape()[2..];
    let mut channels = 0;
    for t in inputs {
        if t.batch() != n || t.shape().len() != first.shape().len() || &t.shape()[2..] != tail {
            return Err(Error::ShapeMismatch(format!(
                "concat of {:?} and {:?}",
                first.shape(),
                t.shape()
            )));
        }
        channels += t.shape()[1];
    }
    let mut data = Vec::with_capacity(inputs.iter().map(|t| t.len()).sum());
    for b in 0..n {
        for t in inputs {
            data.extend_from_slice(t.sample(b));
        }
    }
    let mut shape = first.shape().to_vec();
    shape[1] = channels;
    Tensor::new(shape, data)
}
