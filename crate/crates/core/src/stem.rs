//! Channel-isolated downsampling: pixel-unshuffle followed by a depthwise convolution.
//!
//! Unshuffling moves each `r x r` spatial block into `r^2` channels, so the stem halves
//! resolution (for `r = 2`) without mixing channels. The depthwise convolution then
//! applies `multiplier` kernels to every channel; output channel `j` reads only input
//! channel `j / multiplier`.

use serde::{Deserialize, Serialize};

use crate::colorspace::ImageYCbCr;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    #[default]
    Silu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Silu => x * sigmoid(x),
        }
    }

    /// Derivative at `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Silu => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Silu),
            _ => None,
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemConfig {
    pub unshuffle_factor: usize,
    pub activation: Activation,
    pub multiplier: usize,
    pub kernel_size: usize,
}

impl Default for StemConfig {
    fn default() -> Self {
        Self {
            unshuffle_factor: 2,
            activation: Activation::Silu,
            multiplier: 2,
            kernel_size: 3,
        }
    }
}

impl StemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.unshuffle_factor == 0 {
            return Err(Error::Config("unshuffle factor must be positive".into()));
        }
        if self.multiplier == 0 {
            return Err(Error::Config("depthwise multiplier must be positive".into()));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        Ok(())
    }

    /// Channels after unshuffling `in_channels` channels.
    pub fn unshuffled_channels(&self, in_channels: usize) -> usize {
        in_channels * self.unshuffle_factor * self.unshuffle_factor
    }

    pub fn output_channels(&self, in_channels: usize) -> usize {
        self.unshuffled_channels(in_channels) * self.multiplier
    }
}

/// Depthwise kernels `[C_in * m, k, k]` and biases `[C_in * m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DwConvParams {
    pub kernels: Tensor,
    pub bias: Tensor,
    multiplier: usize,
}

impl DwConvParams {
    pub fn new(kernels: Tensor, bias: Tensor, multiplier: usize) -> Result<Self> {
        let (out, kh, kw) = kernels.dims3()?;
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Config(format!(
                "depthwise kernels must be square with odd size, got {kh}x{kw}"
            )));
        }
        if multiplier == 0 || out % multiplier != 0 {
            return Err(Error::IndivisibleChannels {
                channels: out,
                divisor: multiplier.max(1),
            });
        }
        if bias.shape() != [out] {
            return Err(Error::ShapeMismatch {
                left: vec![out],
                right: bias.shape().to_vec(),
            });
        }
        Ok(Self {
            kernels,
            bias,
            multiplier,
        })
    }

    pub fn multiplier(&self) -> usize {
        self.multiplier
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.out_channels() / self.multiplier
    }

    pub fn param_count(&self) -> usize {
        self.kernels.len() + self.bias.len()
    }
}

/// Space-to-depth: `[C, H, W] -> [C r^2, H/r, W/r]`.
///
/// Output channel `c r^2 + dy r + dx` at `(y, x)` holds input channel `c` at
/// `(y r + dy, x r + dx)`.
pub fn pixel_unshuffle(f: &Tensor, r: usize) -> Result<Tensor> {
    let (c, h, w) = f.dims3()?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(Error::IndivisibleDimensions {
            height: h,
            width: w,
            factor: r,
        });
    }
    let (oh, ow) = (h / r, w / r);
    let src = f.data();
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for dy in 0..r {
            for dx in 0..r {
                let oc = ch * r * r + dy * r + dx;
                for y in 0..oh {
                    let src_row = (ch * h + y * r + dy) * w;
                    let dst_row = (oc * oh + y) * ow;
                    for x in 0..ow {
                        out[dst_row + x] = src[src_row + x * r + dx];
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[c * r * r, oh, ow], out)
}

/// Depth-to-space, the exact inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle(f: &Tensor, r: usize) -> Result<Tensor> {
    let (cr, h, w) = f.dims3()?;
    if r == 0 || cr % (r * r) != 0 {
        return Err(Error::IndivisibleChannels {
            channels: cr,
            divisor: (r * r).max(1),
        });
    }
    let c = cr / (r * r);
    let (oh, ow) = (h * r, w * r);
    let src = f.data();
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for dy in 0..r {
            for dx in 0..r {
                let ic = ch * r * r + dy * r + dx;
                for y in 0..h {
                    let src_row = (ic * h + y) * w;
                    let dst_row = (ch * oh + y * r + dy) * ow;
                    for x in 0..w {
                        out[dst_row + x * r + dx] = src[src_row + x];
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[c, oh, ow], out)
}

/// Stride-1, zero-padded ("same") depthwise convolution.
///
/// `out[j] = bias[j] + conv2d(f[j / m], kernels[j])`.
pub fn depthwise_conv(f: &Tensor, p: &DwConvParams) -> Result<Tensor> {
    let (c, h, w) = f.dims3()?;
    if p.in_channels() != c {
        return Err(Error::ChannelMismatch {
            expected: p.in_channels(),
            found: c,
        });
    }
    let k = p.kernel_size();
    let pad = (k / 2) as isize;
    let m = p.multiplier();
    let mut out = vec![0.0; p.out_channels() * h * w];
    for j in 0..p.out_channels() {
        let plane = f.channel(j / m);
        let kernel = p.kernels.channel(j);
        let dst = &mut out[j * h * w..(j + 1) * h * w];
        dst.fill(p.bias.data()[j]);
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
                    let src_row = &plane[sy * w..(sy + 1) * w];
                    let dst_row = &mut dst[y * w..(y + 1) * w];
                    for x in x_lo..x_hi {
                        dst_row[x] += wgt * src_row[(x as isize + dx) as usize];
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[p.out_channels(), h, w], out)
}

/// Unshuffle, depthwise convolution, then the configured activation.
pub fn stem_forward(img: &ImageYCbCr, cfg: &StemConfig, p: &DwConvParams) -> Result<Tensor> {
    stem_forward_tensor(img.pixels(), cfg, p)
}

pub(crate) fn stem_forward_tensor(
    ycc: &Tensor,
    cfg: &StemConfig,
    p: &DwConvParams,
) -> Result<Tensor> {
    cfg.validate()?;
    if p.multiplier() != cfg.multiplier || p.kernel_size() != cfg.kernel_size {
        return Err(Error::Config(format!(
            "stem parameters (multiplier {}, kernel {}) disagree with config (multiplier {}, kernel {})",
            p.multiplier(),
            p.kernel_size(),
            cfg.multiplier,
            cfg.kernel_size
        )));
    }
    let unshuffled = pixel_unshuffle(ycc, cfg.unshuffle_factor)?;
    let conv = depthwise_conv(&unshuffled, p)?;
    Ok(match cfg.activation {
        Activation::Identity => conv,
        act => conv.map(|v| act.apply(v)),
    })
}
