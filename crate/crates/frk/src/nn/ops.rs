//! Layer arithmetic: patch-unfolded convolution, linear maps, pooling,
//! batch normalization. Forward functions return whatever the matching
//! backward needs as context.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::Shape(format!(
            "kernel {kernel} exceeds padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

pub fn dims4(x: &Tensor) -> Result<(usize, usize, usize, usize)> {
    if x.rank() != 4 {
        return Err(Error::Shape(format!(
            "expected a 4-D (N,C,H,W) tensor, got {:?}",
            x.shape()
        )));
    }
    let s = x.shape();
    Ok((s[0], s[1], s[2], s[3]))
}

/// Unfolds conv patches into a `(C·k·k, N·OH·OW)` matrix with zero padding.
pub fn im2col(
    x: &Tensor,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, usize, usize)> {
    let (n, c, h, w) = dims4(x)?;
    let oh = conv_out_dim(h, kernel, stride, padding)?;
    let ow = conv_out_dim(w, kernel, stride, padding)?;
    let rows = c * kernel * kernel;
    let n_cols = n * oh * ow;
    let mut cols = vec![0.0; rows * n_cols];
    let data = x.data();
    for ci in 0..c {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (ci * kernel + ki) * kernel + kj;
                let dst = &mut cols[row * n_cols..(row + 1) * n_cols];
                for ni in 0..n {
                    let img = &data[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                    for ohi in 0..oh {
                        let ih = (ohi * stride + ki) as isize - padding as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let src_row = &img[ih as usize * w..(ih as usize + 1) * w];
                        let base = (ni * oh + ohi) * ow;
                        for owi in 0..ow {
                            let iw = (owi * stride + kj) as isize - padding as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            dst[base + owi] = src_row[iw as usize];
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::from_vec(&[rows, n_cols], cols)?, oh, ow))
}

/// Adjoint of [`im2col`]: scatter-adds column gradients back to input cells.
pub fn col2im(
    dcols: &Tensor,
    input_shape: (usize, usize, usize, usize),
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (n, c, h, w) = input_shape;
    let oh = conv_out_dim(h, kernel, stride, padding)?;
    let ow = conv_out_dim(w, kernel, stride, padding)?;
    let n_cols = n * oh * ow;
    let mut dx = Tensor::zeros(&[n, c, h, w])?;
    let src = dcols.data();
    let out = dx.data_mut();
    for ci in 0..c {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (ci * kernel + ki) * kernel + kj;
                let grads = &src[row * n_cols..(row + 1) * n_cols];
                for ni in 0..n {
                    for ohi in 0..oh {
                        let ih = (ohi * stride + ki) as isize - padding as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let base = (ni * oh + ohi) * ow;
                        for owi in 0..ow {
                            let iw = (owi * stride + kj) as isize - padding as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            out[((ni * c + ci) * h + ih as usize) * w + iw as usize] +=
                                grads[base + owi];
                        }
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// Rearranges `(N,O,OH,OW)` into the `(O, N·OH·OW)` layout of the column
/// matrix product.
pub fn nchw_to_mat(x: &Tensor) -> Result<Tensor> {
    let (n, o, oh, ow) = dims4(x)?;
    let hw = oh * ow;
    let n_cols = n * hw;
    let mut out = vec![0.0; o * n_cols];
    for ni in 0..n {
        for oi in 0..o {
            let src = &x.data()[(ni * o + oi) * hw..(ni * o + oi + 1) * hw];
            out[oi * n_cols + ni * hw..oi * n_cols + (ni + 1) * hw].copy_from_slice(src);
        }
    }
    Tensor::from_vec(&[o, n_cols], out)
}

/// Inverse of [`nchw_to_mat`].
pub fn mat_to_nchw(m: &Tensor, n: usize, oh: usize, ow: usize) -> Result<Tensor> {
    let o = m.shape()[0];
    let hw = oh * ow;
    let n_cols = n * hw;
    if m.shape()[1] != n_cols {
        return Err(Error::Shape(format!(
            "matrix has {} columns, expected {n_cols}",
            m.shape()[1]
        )));
    }
    let mut out = vec![0.0; n * o * hw];
    for ni in 0..n {
        for oi in 0..o {
            let src = &m.data()[oi * n_cols + ni * hw..oi * n_cols + (ni + 1) * hw];
            out[(ni * o + oi) * hw..(ni * o + oi + 1) * hw].copy_from_slice(src);
        }
    }
    Tensor::from_vec(&[n, o, oh, ow], out)
}

/// `y = x · Wᵀ + b` for `x (N,F)`, `W (G,F)`, `b (G)`.
pub fn linear_forward(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let mut y = x.matmul_nt(weight)?;
    if let Some(b) = bias {
        let g = weight.shape()[0];
        if b.len() != g {
            return Err(Error::Shape(format!(
                "bias length {} does not match output features {g}",
                b.len()
            )));
        }
        for row in y.data_mut().chunks_mut(g) {
            for (v, &bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
    }
    Ok(y)
}

/// Returns `(dx, dW, db)` for the linear map.
pub fn linear_backward(
    x: &Tensor,
    weight: &Tensor,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let dw = upstream.matmul_tn(x)?;
    let dx = upstream.matmul(weight)?;
    let g = weight.shape()[0];
    let mut db = vec![0.0; g];
    for row in upstream.data().chunks(g) {
        for (d, &u) in db.iter_mut().zip(row) {
            *d += u;
        }
    }
    Ok((dx, dw, Tensor::from_vec(&[g], db)?))
}

pub struct MaxPoolCtx {
    pub input_shape: (usize, usize, usize, usize),
    pub argmax: Vec<usize>,
}

pub fn maxpool_forward(x: &Tensor, kernel: usize, stride: usize) -> Result<(Tensor, MaxPoolCtx)> {
    let (n, c, h, w) = dims4(x)?;
    if h < kernel || w < kernel {
        return Err(Error::Shape(format!(
            "pool window {kernel} exceeds input {h}x{w}"
        )));
    }
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let mut out = vec![0.0; n * c * oh * ow];
    let mut argmax = vec![0usize; out.len()];
    let data = x.data();
    for nc in 0..n * c {
        let img = &data[nc * h * w..(nc + 1) * h * w];
        for ohi in 0..oh {
            for owi in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for ki in 0..kernel {
                    let ih = ohi * stride + ki;
                    for kj in 0..kernel {
                        let iw = owi * stride + kj;
                        let v = img[ih * w + iw];
                        if v > best {
                            best = v;
                            best_idx = nc * h * w + ih * w + iw;
                        }
                    }
                }
                let o_idx = nc * oh * ow + ohi * ow + owi;
                out[o_idx] = best;
                argmax[o_idx] = best_idx;
            }
        }
    }
    Ok((
        Tensor::from_vec(&[n, c, oh, ow], out)?,
        MaxPoolCtx {
            input_shape: (n, c, h, w),
            argmax,
        },
    ))
}

pub fn maxpool_backward(ctx: &MaxPoolCtx, upstream: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = ctx.input_shape;
    let mut dx = Tensor::zeros(&[n, c, h, w])?;
    for (&idx, &u) in ctx.argmax.iter().zip(upstream.data()) {
        dx.data_mut()[idx] += u;
    }
    Ok(dx)
}

fn pool_bounds(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = i * input / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end)
}

pub fn adaptive_avgpool_forward(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = dims4(x)?;
    let mut out = vec![0.0; n * c * out_h * out_w];
    let data = x.data();
    for nc in 0..n * c {
        let img = &data[nc * h * w..(nc + 1) * h * w];
        for oi in 0..out_h {
            let (h0, h1) = pool_bounds(oi, h, out_h);
            for oj in 0..out_w {
                let (w0, w1) = pool_bounds(oj, w, out_w);
                let mut sum = 0.0;
                for ih in h0..h1 {
                    for iw in w0..w1 {
                        sum += img[ih * w + iw];
                    }
                }
                out[nc * out_h * out_w + oi * out_w + oj] =
                    sum / ((h1 - h0) * (w1 - w0)) as f64;
            }
        }
    }
    Tensor::from_vec(&[n, c, out_h, out_w], out)
}

pub fn adaptive_avgpool_backward(
    input_shape: (usize, usize, usize, usize),
    out_h: usize,
    out_w: usize,
    upstream: &Tensor,
) -> Result<Tensor> {
    let (n, c, h, w) = input_shape;
    let mut dx = Tensor::zeros(&[n, c, h, w])?;
    let out = dx.data_mut();
    for nc in 0..n * c {
        for oi in 0..out_h {
            let (h0, h1) = pool_bounds(oi, h, out_h);
            for oj in 0..out_w {
                let (w0, w1) = pool_bounds(oj, w, out_w);
                let share = upstream.data()[nc * out_h * out_w + oi * out_w + oj]
                    / ((h1 - h0) * (w1 - w0)) as f64;
                for ih in h0..h1 {
                    for iw in w0..w1 {
                        out[nc * h * w + ih * w + iw] += share;
                    }
                }
            }
        }
    }
    Ok(dx)
}

pub struct BatchNormCtx {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub gamma: Vec<f64>,
}

pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var_biased: Vec<f64>,
    pub count: usize,
}

/// Training-mode batch normalization over (N,H,W) per channel.
/// Returns the output, the backward context, and the batch statistics the
/// caller folds into the running estimates.
pub fn batchnorm_forward_train(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(Tensor, BatchNormCtx, BatchNormStats)> {
    let (n, c, h, w) = dims4(x)?;
    let m = n * h * w;
    if m < 2 {
        return Err(Error::Shape(
            "batchnorm training needs more than one value per channel".into(),
        ));
    }
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    let data = x.data();
    let hw = h * w;
    for ci in 0..c {
        let mut sum = 0.0;
        for ni in 0..n {
            let ch = &data[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
            sum += ch.iter().sum::<f64>();
        }
        mean[ci] = sum / m as f64;
        let mut sq = 0.0;
        for ni in 0..n {
            let ch = &data[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
            sq += ch.iter().map(|&v| (v - mean[ci]) * (v - mean[ci])).sum::<f64>();
        }
        var[ci] = sq / m as f64;
    }
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; data.len()];
    let mut out = vec![0.0; data.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * hw;
            for k in 0..hw {
                let xh = (data[base + k] - mean[ci]) * inv_std[ci];
                xhat[base + k] = xh;
                out[base + k] = gamma[ci] * xh + beta[ci];
            }
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), out)?,
        BatchNormCtx {
            xhat: Tensor::from_vec(x.shape(), xhat)?,
            inv_std,
            gamma: gamma.to_vec(),
        },
        BatchNormStats {
            mean,
            var_biased: var,
            count: m,
        },
    ))
}

/// Evaluation-mode batch normalization with running statistics.
pub fn batchnorm_forward_eval(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Result<Tensor> {
    let (n, c, h, w) = dims4(x)?;
    let hw = h * w;
    let mut out = vec![0.0; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let inv = 1.0 / (running_var[ci] + eps).sqrt();
            let base = (ni * c + ci) * hw;
            for k in 0..hw {
                out[base + k] = gamma[ci] * (x.data()[base + k] - running_mean[ci]) * inv
                    + beta[ci];
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward(
    ctx: &BatchNormCtx,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, w) = dims4(upstream)?;
    let hw = h * w;
    let m = (n * hw) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * hw;
            for k in 0..hw {
                let u = upstream.data()[base + k];
                dgamma[ci] += u * ctx.xhat.data()[base + k];
                dbeta[ci] += u;
            }
        }
    }
    let mut dx = vec![0.0; upstream.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * hw;
            let scale = ctx.gamma[ci] * ctx.inv_std[ci];
            for k in 0..hw {
                let u = upstream.data()[base + k];
                dx[base + k] = scale
                    * (u - dbeta[ci] / m - ctx.xhat.data()[base + k] * dgamma[ci] / m);
            }
        }
    }
    Ok((
        Tensor::from_vec(upstream.shape(), dx)?,
        Tensor::from_vec(&[c], dgamma)?,
        Tensor::from_vec(&[c], dbeta)?,
    ))
}
