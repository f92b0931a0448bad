//! Backward passes of the individual block operations.
//!
//! Each function takes the upstream gradient of the operation's output and returns the
//! gradients of its inputs and parameters.

use crate::colorspace::ColorMatrix;
use crate::error::{Error, Result};
use crate::ica::{descriptor, excite_parts, AttentionVariant, ChannelStats, IcaParams};
use crate::stem::{pixel_shuffle, Activation, DwConvParams};
use crate::tensor::Tensor;

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Per-pixel `matrix^T * grad`; the offset does not contribute.
pub fn color_backward(matrix: &ColorMatrix, grad: &Tensor) -> Result<Tensor> {
    let m = &matrix.matrix;
    let transposed = ColorMatrix {
        matrix: [
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ],
        offset: [0.0; 3],
    };
    transposed.apply(grad)
}

/// Unshuffling is a permutation, so its gradient is the inverse permutation.
pub fn unshuffle_backward(grad: &Tensor, factor: usize) -> Result<Tensor> {
    pixel_shuffle(grad, factor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DwConvGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub bias: Tensor,
}

pub fn depthwise_conv_backward(
    input: &Tensor,
    p: &DwConvParams,
    grad_out: &Tensor,
) -> Result<DwConvGrads> {
    let (c, h, w) = input.dims3()?;
    if grad_out.shape() != [p.out_channels(), h, w] || p.in_channels() != c {
        return Err(Error::ShapeMismatch {
            left: vec![p.out_channels(), h, w],
            right: grad_out.shape().to_vec(),
        });
    }
    let k = p.kernel_size();
    let pad = (k / 2) as isize;
    let m = p.multiplier();
    let mut g_in = Tensor::zeros(input.shape())?;
    let mut g_k = Tensor::zeros(p.kernels.shape())?;
    let mut g_b = Tensor::zeros(p.bias.shape())?;

    for j in 0..p.out_channels() {
        let go = grad_out.channel(j);
        g_b.data_mut()[j] = go.iter().sum();
        let src = input.channel(j / m);
        let kernel = p.kernels.channel(j).to_vec();
        let gk = g_k.channel_mut(j);
        for ky in 0..k {
            let dy = ky as isize - pad;
            let y_lo = (-dy).max(0) as usize;
            let y_hi = (h as isize - dy).min(h as isize).max(0) as usize;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                let mut acc = 0.0;
                for y in y_lo..y_hi {
                    let sy = (y as isize + dy) as usize;
                    for x in x_lo..x_hi {
                        acc += go[y * w + x] * src[sy * w + (x as isize + dx) as usize];
                    }
                }
                gk[ky * k + kx] += acc;
            }
        }
        let gi = g_in.channel_mut(j / m);
        for ky in 0..k {
            let dy = ky as isize - pad;
            let y_lo = (-dy).max(0) as usize;
            let y_hi = (h as isize - dy).min(h as isize).max(0) as usize;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                let wgt = kernel[ky * k + kx];
                for y in y_lo..y_hi {
                    let sy = (y as isize + dy) as usize;
                    for x in x_lo..x_hi {
                        gi[sy * w + (x as isize + dx) as usize] += wgt * go[y * w + x];
                    }
                }
            }
        }
    }
    Ok(DwConvGrads {
        input: g_in,
        kernels: g_k,
        bias: g_b,
    })
}

pub fn activation_backward(pre: &Tensor, grad: &Tensor, act: Activation) -> Result<Tensor> {
    same_shape(pre, grad)?;
    let data = pre
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&x, &g)| g * act.derivative(x))
        .collect();
    Tensor::from_vec(pre.shape(), data)
}

/// `d mean / d x = 1 / HW`, `d var / d x = 2 (x - mean) / HW`.
pub fn stats_backward(
    f: &Tensor,
    stats: &ChannelStats,
    grad_mean: &[f64],
    grad_var: &[f64],
) -> Result<Tensor> {
    let (c, h, w) = f.dims3()?;
    if grad_mean.len() != c || grad_var.len() != c {
        return Err(Error::ChannelMismatch {
            expected: c,
            found: grad_mean.len(),
        });
    }
    let n = (h * w) as f64;
    let mut out = Tensor::zeros(f.shape())?;
    for ch in 0..c {
        let mean = stats.mean.data()[ch];
        let gm = grad_mean[ch] / n;
        let gv = 2.0 * grad_var[ch] / n;
        for (o, &x) in out.channel_mut(ch).iter_mut().zip(f.channel(ch)) {
            *o = gm + gv * (x - mean);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuseGrads {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn fuse_backward(stats: &ChannelStats, p: &IcaParams, grad_z: &[f64]) -> Result<FuseGrads> {
    let c = p.channels();
    if grad_z.len() != c {
        return Err(Error::ChannelMismatch {
            expected: c,
            found: grad_z.len(),
        });
    }
    let d = descriptor(stats, p.config.variant);
    let mut weight = Tensor::zeros(p.fuse_weight.shape())?;
    let mut g_d = vec![0.0; 2 * c];
    for (i, &gz) in grad_z.iter().enumerate() {
        let row = &p.fuse_weight.data()[i * 2 * c..(i + 1) * 2 * c];
        let g_row = &mut weight.data_mut()[i * 2 * c..(i + 1) * 2 * c];
        for j in 0..2 * c {
            g_row[j] = gz * d[j];
            g_d[j] += gz * row[j];
        }
    }
    let (first, second) = g_d.split_at(c);
    let zero = vec![0.0; c];
    let sum: Vec<f64> = first.iter().zip(second).map(|(a, b)| a + b).collect();
    let (mean, variance) = match p.config.variant {
        AttentionVariant::Ica => (first.to_vec(), second.to_vec()),
        AttentionVariant::GapOnly => (sum, zero),
        AttentionVariant::VarOnly => (zero, sum),
    };
    Ok(FuseGrads {
        mean,
        variance,
        weight,
        bias: Tensor::from_vec(&[c], grad_z.to_vec())?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExciteGrads {
    pub z: Vec<f64>,
    pub w1: Tensor,
    pub b1: Option<Tensor>,
    pub w2: Tensor,
    pub b2: Option<Tensor>,
}

/// Backward through `sigmoid(W2 relu(W1 z + b1) + b2)`. ReLU's derivative at 0 is 0.
pub fn excite_backward(z: &[f64], p: &IcaParams, grad_alpha: &[f64]) -> Result<ExciteGrads> {
    let c = p.channels();
    let hidden = p.hidden();
    if z.len() != c || grad_alpha.len() != c {
        return Err(Error::ChannelMismatch {
            expected: c,
            found: z.len().min(grad_alpha.len()),
        });
    }
    let e = excite_parts(z, p);
    let act: Vec<f64> = e.hidden_pre.iter().map(|&v| v.max(0.0)).collect();
    let g_logit: Vec<f64> = grad_alpha
        .iter()
        .zip(&e.alpha)
        .map(|(&g, &a)| g * a * (1.0 - a))
        .collect();

    let mut w2 = Tensor::zeros(p.w2.shape())?;
    let mut g_act = vec![0.0; hidden];
    for i in 0..c {
        for h in 0..hidden {
            w2.data_mut()[i * hidden + h] = g_logit[i] * act[h];
            g_act[h] += g_logit[i] * p.w2.data()[i * hidden + h];
        }
    }
    let g_pre: Vec<f64> = g_act
        .iter()
        .zip(&e.hidden_pre)
        .map(|(&g, &pre)| if pre > 0.0 { g } else { 0.0 })
        .collect();

    let mut w1 = Tensor::zeros(p.w1.shape())?;
    let mut g_z = vec![0.0; c];
    for h in 0..hidden {
        for j in 0..c {
            w1.data_mut()[h * c + j] = g_pre[h] * z[j];
            g_z[j] += g_pre[h] * p.w1.data()[h * c + j];
        }
    }
    Ok(ExciteGrads {
        z: g_z,
        b1: p
            .b1
            .as_ref()
            .map(|_| Tensor::from_vec(&[hidden], g_pre.clone()))
            .transpose()?,
        b2: p
            .b2
            .as_ref()
            .map(|_| Tensor::from_vec(&[c], g_logit.clone()))
            .transpose()?,
        w1,
        w2,
    })
}

/// Gradients of `out[c] = alpha[c] * f[c]`:
/// `d f = alpha[c] * upstream`, `d alpha[c] = sum over positions of f * upstream`.
pub fn gate_backward(f: &Tensor, alpha: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    same_shape(f, grad_out)?;
    let (c, _, _) = f.dims3()?;
    if alpha.shape() != [c] {
        return Err(Error::ChannelMismatch {
            expected: c,
            found: alpha.len(),
        });
    }
    let mut g_f = Tensor::zeros(f.shape())?;
    let mut g_a = vec![0.0; c];
    for ch in 0..c {
        let a = alpha.data()[ch];
        let up = grad_out.channel(ch);
        g_a[ch] = f.channel(ch).iter().zip(up).map(|(x, g)| x * g).sum();
        for (o, &g) in g_f.channel_mut(ch).iter_mut().zip(up) {
            *o = a * g;
        }
    }
    Ok((g_f, Tensor::from_vec(&[c], g_a)?))
}
