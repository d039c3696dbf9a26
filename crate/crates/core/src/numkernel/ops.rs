//! Forward and backward passes for the primitive layers and the edge-op
//! dispatch. All inner sums accumulate in f64 in a fixed order and round to
//! f32 once per output element.

use super::{KernelError, Tensor};
use crate::space::{Activation, OpKind};

fn shape_err(what: &'static str, expected: &[usize], got: &[usize]) -> KernelError {
    KernelError::ShapeMismatch { what, expected: expected.to_vec(), got: got.to_vec() }
}

// ---------------------------------------------------------------------------
// Dense

pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, KernelError> {
    let (n, d_in) = match x.shape() {
        [n, d] => (*n, *d),
        s => return Err(shape_err("dense input", &[0, 0], s)),
    };
    let (w_in, d_out) = match w.shape() {
        [i, o] => (*i, *o),
        s => return Err(shape_err("dense weight", &[d_in, 0], s)),
    };
    if w_in != d_in || b.shape() != [d_out] {
        return Err(shape_err("dense weight", &[d_in, d_out], w.shape()));
    }
    let mut out = vec![0.0f32; n * d_out];
    for i in 0..n {
        let xi = &x.data()[i * d_in..(i + 1) * d_in];
        for o in 0..d_out {
            let mut acc = b.data()[o] as f64;
            for (k, &xv) in xi.iter().enumerate() {
                acc += xv as f64 * w.data()[k * d_out + o] as f64;
            }
            out[i * d_out + o] = acc as f32;
        }
    }
    let y = Tensor::from_vec(&[n, d_out], out);
    y.check_finite("dense")?;
    Ok(y)
}

/// Returns (grad_x, grad_w, grad_b).
pub fn dense_backward(
    x: &Tensor,
    w: &Tensor,
    grad_y: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), KernelError> {
    let (n, d_in) = (x.shape()[0], x.shape()[1]);
    let d_out = w.shape()[1];
    if grad_y.shape() != [n, d_out] {
        return Err(shape_err("dense grad", &[n, d_out], grad_y.shape()));
    }
    let mut gx = vec![0.0f64; n * d_in];
    let mut gw = vec![0.0f64; d_in * d_out];
    let mut gb = vec![0.0f64; d_out];
    for i in 0..n {
        for o in 0..d_out {
            let g = grad_y.data()[i * d_out + o] as f64;
            gb[o] += g;
            for k in 0..d_in {
                gx[i * d_in + k] += g * w.data()[k * d_out + o] as f64;
                gw[k * d_out + o] += g * x.data()[i * d_in + k] as f64;
            }
        }
    }
    Ok((
        Tensor::from_vec(&[n, d_in], gx.into_iter().map(|v| v as f32).collect()),
        Tensor::from_vec(&[d_in, d_out], gw.into_iter().map(|v| v as f32).collect()),
        Tensor::from_vec(&[d_out], gb.into_iter().map(|v| v as f32).collect()),
    ))
}

// ---------------------------------------------------------------------------
// Activations

pub fn relu_forward(x: &Tensor) -> Tensor {
    Tensor::from_vec(x.shape(), x.data().iter().map(|&v| v.max(0.0)).collect())
}

pub fn relu_backward(pre_act: &Tensor, grad_y: &Tensor) -> Tensor {
    let data = pre_act
        .data()
        .iter()
        .zip(grad_y.data())
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(grad_y.shape(), data)
}

pub fn tanh_forward(x: &Tensor) -> Tensor {
    Tensor::from_vec(x.shape(), x.data().iter().map(|&v| v.tanh()).collect())
}

pub fn tanh_backward(post_act: &Tensor, grad_y: &Tensor) -> Tensor {
    let data = post_act
        .data()
        .iter()
        .zip(grad_y.data())
        .map(|(&t, &g)| g * (1.0 - t * t))
        .collect();
    Tensor::from_vec(grad_y.shape(), data)
}

// ---------------------------------------------------------------------------
// Convolution (NHWC, weight [KH, KW, Cin, Cout], "same" padding)

fn conv_out_dim(size: usize, stride: usize) -> usize {
    size.div_ceil(stride)
}

fn conv_pad(size: usize, kernel: usize, stride: usize) -> usize {
    let out = conv_out_dim(size, stride);
    ((out - 1) * stride + kernel).saturating_sub(size) / 2
}

pub fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
) -> Result<Tensor, KernelError> {
    let (n, h, wd, c_in) = match x.shape() {
        [n, h, w, c] => (*n, *h, *w, *c),
        s => return Err(shape_err("conv input", &[0, 0, 0, 0], s)),
    };
    let (kh, kw, wc_in, c_out) = match w.shape() {
        [kh, kw, ci, co] => (*kh, *kw, *ci, *co),
        s => return Err(shape_err("conv weight", &[0, 0, c_in, 0], s)),
    };
    if wc_in != c_in || b.shape() != [c_out] {
        return Err(shape_err("conv weight", &[kh, kw, c_in, c_out], w.shape()));
    }
    let (oh, ow) = (conv_out_dim(h, stride), conv_out_dim(wd, stride));
    let (ph, pw) = (conv_pad(h, kh, stride), conv_pad(wd, kw, stride));
    let mut out = vec![0.0f32; n * oh * ow * c_out];
    let xd = x.data();
    let wdat = w.data();
    for ni in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..c_out {
                    let mut acc = b.data()[co] as f64;
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pw as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let xoff = ((ni * h + iy as usize) * wd + ix as usize) * c_in;
                            let woff = ((ky * kw + kx) * c_in) * c_out;
                            for ci in 0..c_in {
                                acc += xd[xoff + ci] as f64
                                    * wdat[woff + ci * c_out + co] as f64;
                            }
                        }
                    }
                    out[((ni * oh + oy) * ow + ox) * c_out + co] = acc as f32;
                }
            }
        }
    }
    let y = Tensor::from_vec(&[n, oh, ow, c_out], out);
    y.check_finite("conv2d")?;
    Ok(y)
}

/// Returns (grad_x, grad_w, grad_b).
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    grad_y: &Tensor,
    stride: usize,
) -> Result<(Tensor, Tensor, Tensor), KernelError> {
    let (n, h, wd, c_in) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw, c_out) = (w.shape()[0], w.shape()[1], w.shape()[3]);
    let (oh, ow) = (conv_out_dim(h, stride), conv_out_dim(wd, stride));
    if grad_y.shape() != [n, oh, ow, c_out] {
        return Err(shape_err("conv grad", &[n, oh, ow, c_out], grad_y.shape()));
    }
    let (ph, pw) = (conv_pad(h, kh, stride), conv_pad(wd, kw, stride));
    let mut gx = vec![0.0f64; n * h * wd * c_in];
    let mut gw = vec![0.0f64; kh * kw * c_in * c_out];
    let mut gb = vec![0.0f64; c_out];
    let xd = x.data();
    let wdat = w.data();
    let gy = grad_y.data();
    for ni in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..c_out {
                    let g = gy[((ni * oh + oy) * ow + ox) * c_out + co] as f64;
                    gb[co] += g;
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pw as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let xoff = ((ni * h + iy as usize) * wd + ix as usize) * c_in;
                            let woff = ((ky * kw + kx) * c_in) * c_out;
                            for ci in 0..c_in {
                                gx[xoff + ci] += g * wdat[woff + ci * c_out + co] as f64;
                                gw[woff + ci * c_out + co] += g * xd[xoff + ci] as f64;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(&[n, h, wd, c_in], gx.into_iter().map(|v| v as f32).collect()),
        Tensor::from_vec(&[kh, kw, c_in, c_out], gw.into_iter().map(|v| v as f32).collect()),
        Tensor::from_vec(&[c_out], gb.into_iter().map(|v| v as f32).collect()),
    ))
}

// ---------------------------------------------------------------------------
// Average pooling (same padding, stride 1, divide by the full window)

pub fn avgpool2d_forward(x: &Tensor, kernel: usize) -> Result<Tensor, KernelError> {
    let (n, h, wd, c) = match x.shape() {
        [n, h, w, c] => (*n, *h, *w, *c),
        s => return Err(shape_err("avgpool input", &[0, 0, 0, 0], s)),
    };
    let pad = (kernel - 1) / 2;
    let norm = 1.0 / (kernel * kernel) as f64;
    let mut out = vec![0.0f32; n * h * wd * c];
    let xd = x.data();
    for ni in 0..n {
        for oy in 0..h {
            for ox in 0..wd {
                for ci in 0..c {
                    let mut acc = 0.0f64;
                    for ky in 0..kernel {
                        let iy = (oy + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox + kx) as isize - pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            acc += xd[((ni * h + iy as usize) * wd + ix as usize) * c + ci]
                                as f64;
                        }
                    }
                    out[((ni * h + oy) * wd + ox) * c + ci] = (acc * norm) as f32;
                }
            }
        }
    }
    Ok(Tensor::from_vec(&[n, h, wd, c], out))
}

pub fn avgpool2d_backward(
    in_shape: &[usize],
    grad_y: &Tensor,
    kernel: usize,
) -> Result<Tensor, KernelError> {
    let (n, h, wd, c) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    if grad_y.shape() != in_shape {
        return Err(shape_err("avgpool grad", in_shape, grad_y.shape()));
    }
    let pad = (kernel - 1) / 2;
    let norm = 1.0 / (kernel * kernel) as f64;
    let mut gx = vec![0.0f64; n * h * wd * c];
    let gy = grad_y.data();
    for ni in 0..n {
        for oy in 0..h {
            for ox in 0..wd {
                for ci in 0..c {
                    let g = gy[((ni * h + oy) * wd + ox) * c + ci] as f64 * norm;
                    for ky in 0..kernel {
                        let iy = (oy + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox + kx) as isize - pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            gx[((ni * h + iy as usize) * wd + ix as usize) * c + ci] += g;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_vec(in_shape, gx.into_iter().map(|v| v as f32).collect()))
}

// ---------------------------------------------------------------------------
// Global average pool over spatial dims: [N,H,W,C] -> [N,C]

pub fn global_avg_pool_forward(x: &Tensor) -> Result<Tensor, KernelError> {
    let (n, h, wd, c) = match x.shape() {
        [n, h, w, c] => (*n, *h, *w, *c),
        s => return Err(shape_err("gap input", &[0, 0, 0, 0], s)),
    };
    let norm = 1.0 / (h * wd) as f64;
    let mut out = vec![0.0f32; n * c];
    for ni in 0..n {
        for ci in 0..c {
            let mut acc = 0.0f64;
            for y in 0..h {
                for xsp in 0..wd {
                    acc += x.data()[((ni * h + y) * wd + xsp) * c + ci] as f64;
                }
            }
            out[ni * c + ci] = (acc * norm) as f32;
        }
    }
    Ok(Tensor::from_vec(&[n, c], out))
}

pub fn global_avg_pool_backward(in_shape: &[usize], grad_y: &Tensor) -> Tensor {
    let (n, h, wd, c) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let norm = 1.0 / (h * wd) as f32;
    let mut gx = vec![0.0f32; n * h * wd * c];
    for ni in 0..n {
        for ci in 0..c {
            let g = grad_y.data()[ni * c + ci] * norm;
            for y in 0..h {
                for xsp in 0..wd {
                    gx[((ni * h + y) * wd + xsp) * c + ci] = g;
                }
            }
        }
    }
    Tensor::from_vec(in_shape, gx)
}

// ---------------------------------------------------------------------------
// Channel concat (last axis) and its split backward

pub fn concat_last_axis(parts: &[&Tensor]) -> Result<Tensor, KernelError> {
    assert!(!parts.is_empty());
    let lead = &parts[0].shape()[..parts[0].shape().len() - 1];
    let mut c_total = 0;
    for p in parts {
        if &p.shape()[..p.shape().len() - 1] != lead {
            return Err(shape_err("concat", parts[0].shape(), p.shape()));
        }
        c_total += *p.shape().last().unwrap();
    }
    let rows: usize = lead.iter().product();
    let mut out = vec![0.0f32; rows * c_total];
    let mut offset = 0;
    for p in parts {
        let c = *p.shape().last().unwrap();
        for r in 0..rows {
            out[r * c_total + offset..r * c_total + offset + c]
                .copy_from_slice(&p.data()[r * c..(r + 1) * c]);
        }
        offset += c;
    }
    let mut shape = lead.to_vec();
    shape.push(c_total);
    Ok(Tensor::from_vec(&shape, out))
}

pub fn split_last_axis(grad: &Tensor, widths: &[usize]) -> Vec<Tensor> {
    let lead = &grad.shape()[..grad.shape().len() - 1];
    let rows: usize = lead.iter().product();
    let c_total = *grad.shape().last().unwrap();
    debug_assert_eq!(widths.iter().sum::<usize>(), c_total);
    let mut parts = Vec::with_capacity(widths.len());
    let mut offset = 0;
    for &c in widths {
        let mut data = vec![0.0f32; rows * c];
        for r in 0..rows {
            data[r * c..(r + 1) * c]
                .copy_from_slice(&grad.data()[r * c_total + offset..r * c_total + offset + c]);
        }
        let mut shape = lead.to_vec();
        shape.push(c);
        parts.push(Tensor::from_vec(&shape, data));
        offset += c;
    }
    parts
}

pub fn add_into(acc: &mut Tensor, other: &Tensor) {
    debug_assert_eq!(acc.shape(), other.shape());
    for (a, &b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += b;
    }
}

// ---------------------------------------------------------------------------
// Edge-op dispatch

/// Cached activations needed by the backward pass of one edge op.
#[derive(Debug, Clone)]
pub enum OpCache {
    Zero { in_shape: Vec<usize> },
    Identity,
    Conv { x: Tensor, w: Tensor, pre_act: Tensor },
    AvgPool { in_shape: Vec<usize>, kernel: usize },
    Dense { x: Tensor, w: Tensor, pre_act: Tensor, post_act: Tensor, activation: Activation },
}

/// Forward pass of one edge operation. Parametric ops take (weight, bias).
pub fn op_forward(
    kind: OpKind,
    x: &Tensor,
    params: Option<(&Tensor, &Tensor)>,
) -> Result<(Tensor, OpCache), KernelError> {
    match kind {
        OpKind::Zero => {
            if params.is_some() {
                return Err(KernelError::UnexpectedParams("zero"));
            }
            Ok((Tensor::zeros(x.shape()), OpCache::Zero { in_shape: x.shape().to_vec() }))
        }
        OpKind::Identity => {
            if params.is_some() {
                return Err(KernelError::UnexpectedParams("identity"));
            }
            Ok((x.clone(), OpCache::Identity))
        }
        OpKind::Conv { .. } => {
            let (w, b) = params.ok_or(KernelError::ParamsRequired("conv"))?;
            let pre = conv2d_forward(x, w, b, 1)?;
            let y = relu_forward(&pre);
            Ok((y, OpCache::Conv { x: x.clone(), w: w.clone(), pre_act: pre }))
        }
        OpKind::AvgPool { kernel } => {
            if params.is_some() {
                return Err(KernelError::UnexpectedParams("avgpool"));
            }
            let y = avgpool2d_forward(x, kernel)?;
            Ok((y, OpCache::AvgPool { in_shape: x.shape().to_vec(), kernel }))
        }
        OpKind::Dense { activation } => {
            let (w, b) = params.ok_or(KernelError::ParamsRequired("dense"))?;
            let pre = dense_forward(x, w, b)?;
            let post = match activation {
                Activation::Relu => relu_forward(&pre),
                Activation::Tanh => tanh_forward(&pre),
            };
            Ok((
                post.clone(),
                OpCache::Dense { x: x.clone(), w: w.clone(), pre_act: pre, post_act: post, activation },
            ))
        }
    }
}

/// Backward pass; returns (grad_in, grad_params).
pub fn op_backward(
    cache: &OpCache,
    grad_out: &Tensor,
) -> Result<(Tensor, Option<(Tensor, Tensor)>), KernelError> {
    match cache {
        OpCache::Zero { in_shape } => Ok((Tensor::zeros(in_shape), None)),
        OpCache::Identity => Ok((grad_out.clone(), None)),
        OpCache::Conv { x, w, pre_act } => {
            let g = relu_backward(pre_act, grad_out);
            let (gx, gw, gb) = conv2d_backward(x, w, &g, 1)?;
            Ok((gx, Some((gw, gb))))
        }
        OpCache::AvgPool { in_shape, kernel } => {
            Ok((avgpool2d_backward(in_shape, grad_out, *kernel)?, None))
        }
        OpCache::Dense { x, w, pre_act, post_act, activation } => {
            let g = match activation {
                Activation::Relu => relu_backward(pre_act, grad_out),
                Activation::Tanh => tanh_backward(post_act, grad_out),
            };
            let (gx, gw, gb) = dense_backward(x, w, &g)?;
            Ok((gx, Some((gw, gb))))
        }
    }
}
