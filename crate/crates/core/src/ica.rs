//! Information-aware channel attention.
//!
//! Per-channel spatial mean and variance are concatenated (mean first), fused by a
//! dense `C x 2C` map, passed through a ReLU bottleneck and squashed by a sigmoid. The
//! resulting weights scale each channel of the input.

use serde::{Deserialize, Serialize};

use crate::colorspace::{rgb_to_ycbcr_with, ColorStandard, ImageRgb};
use crate::error::{Error, Result};
use crate::stem::{sigmoid, stem_forward, DwConvParams, StemConfig};
use crate::tensor::{elementwise, plane_mean, plane_variance, BinaryOp, Tensor};

/// Which statistics feed the fusion layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionVariant {
    /// Mean and variance, `[mean; var]`.
    #[default]
    Ica,
    /// Squeeze-excitation style, `[mean; mean]`.
    GapOnly,
    /// `[var; var]`.
    VarOnly,
}

impl AttentionVariant {
    pub fn code(self) -> u32 {
        match self {
            AttentionVariant::Ica => 0,
            AttentionVariant::GapOnly => 1,
            AttentionVariant::VarOnly => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(AttentionVariant::Ica),
            1 => Some(AttentionVariant::GapOnly),
            2 => Some(AttentionVariant::VarOnly),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IcaConfig {
    pub reduction: usize,
    pub variant: AttentionVariant,
    /// Whether the two bottleneck layers carry biases.
    pub mlp_bias: bool,
}

impl Default for IcaConfig {
    fn default() -> Self {
        Self {
            reduction: 4,
            variant: AttentionVariant::Ica,
            mlp_bias: true,
        }
    }
}

impl IcaConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.reduction == 0 {
            return Err(Error::Config("reduction ratio must be positive".into()));
        }
        if channels < self.reduction {
            return Err(Error::Config(format!(
                "{channels} channels with reduction {} leaves an empty bottleneck",
                self.reduction
            )));
        }
        if channels % self.reduction != 0 {
            return Err(Error::IndivisibleChannels {
                channels,
                divisor: self.reduction,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Tensor,
    pub variance: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcaParams {
    pub config: IcaConfig,
    /// `[C, 2C]`
    pub fuse_weight: Tensor,
    /// `[C]`
    pub fuse_bias: Tensor,
    /// `[C/r, C]`
    pub w1: Tensor,
    /// `[C/r]`, present iff `config.mlp_bias`
    pub b1: Option<Tensor>,
    /// `[C, C/r]`
    pub w2: Tensor,
    /// `[C]`, present iff `config.mlp_bias`
    pub b2: Option<Tensor>,
}

impl IcaParams {
    /// All-zero parameters for `channels` channels.
    pub fn zeros(channels: usize, config: IcaConfig) -> Result<Self> {
        config.validate(channels)?;
        let hidden = channels / config.reduction;
        Ok(Self {
            config,
            fuse_weight: Tensor::zeros(&[channels, 2 * channels])?,
            fuse_bias: Tensor::zeros(&[channels])?,
            w1: Tensor::zeros(&[hidden, channels])?,
            b1: config
                .mlp_bias
                .then(|| Tensor::zeros(&[hidden]))
                .transpose()?,
            w2: Tensor::zeros(&[channels, hidden])?,
            b2: config
                .mlp_bias
                .then(|| Tensor::zeros(&[channels]))
                .transpose()?,
        })
    }

    pub fn channels(&self) -> usize {
        self.fuse_bias.len()
    }

    pub fn hidden(&self) -> usize {
        self.w1.shape()[0]
    }

    /// Checks every tensor against the shapes implied by `channels()` and the config.
    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        self.config.validate(c)?;
        let h = c / self.config.reduction;
        let expect = |t: &Tensor, shape: &[usize]| {
            if t.shape() == shape {
                Ok(())
            } else {
                Err(Error::ShapeMismatch {
                    left: shape.to_vec(),
                    right: t.shape().to_vec(),
                })
            }
        };
        expect(&self.fuse_weight, &[c, 2 * c])?;
        expect(&self.fuse_bias, &[c])?;
        expect(&self.w1, &[h, c])?;
        expect(&self.w2, &[c, h])?;
        match (&self.b1, &self.b2, self.config.mlp_bias) {
            (Some(b1), Some(b2), true) => {
                expect(b1, &[h])?;
                expect(b2, &[c])?;
            }
            (None, None, false) => {}
            _ => {
                return Err(Error::Config(
                    "bottleneck biases must be present exactly when mlp_bias is set".into(),
                ))
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.fuse_weight.len()
            + self.fuse_bias.len()
            + self.w1.len()
            + self.w2.len()
            + self.b1.as_ref().map_or(0, Tensor::len)
            + self.b2.as_ref().map_or(0, Tensor::len)
    }
}

/// Sigmoid attention weights, one per channel, each in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub alpha: Tensor,
}

pub fn compute_stats(f: &Tensor) -> Result<ChannelStats> {
    let (c, _, _) = f.dims3()?;
    let mut mean = Vec::with_capacity(c);
    let mut variance = Vec::with_capacity(c);
    for ch in 0..c {
        let plane = f.channel(ch);
        let m = plane_mean(plane);
        mean.push(m);
        variance.push(plane_variance(plane, m));
    }
    Ok(ChannelStats {
        mean: Tensor::from_vec(&[c], mean)?,
        variance: Tensor::from_vec(&[c], variance)?,
    })
}

/// The length-`2C` vector the fusion layer sees for a given variant.
pub fn descriptor(s: &ChannelStats, variant: AttentionVariant) -> Vec<f64> {
    let (first, second) = match variant {
        AttentionVariant::Ica => (&s.mean, &s.variance),
        AttentionVariant::GapOnly => (&s.mean, &s.mean),
        AttentionVariant::VarOnly => (&s.variance, &s.variance),
    };
    first.data().iter().chain(second.data()).copied().collect()
}

/// `y = W x + b` for a row-major `W` of shape `[rows, cols]`.
pub(crate) fn affine(weight: &Tensor, x: &[f64], bias: Option<&Tensor>) -> Vec<f64> {
    let cols = weight.shape()[1];
    weight
        .data()
        .chunks_exact(cols)
        .enumerate()
        .map(|(i, row)| {
            let dot: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            dot + bias.map_or(0.0, |b| b.data()[i])
        })
        .collect()
}

pub fn fuse_stats(s: &ChannelStats, p: &IcaParams) -> Result<Tensor> {
    let c = p.channels();
    if s.mean.shape() != [c] || s.variance.shape() != [c] {
        return Err(Error::ChannelMismatch {
            expected: c,
            found: s.mean.len(),
        });
    }
    let d = descriptor(s, p.config.variant);
    Tensor::from_vec(&[c], affine(&p.fuse_weight, &d, Some(&p.fuse_bias)))
}

/// Intermediate values of the bottleneck, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Excitation {
    pub hidden_pre: Vec<f64>,
    pub alpha: Vec<f64>,
}

pub(crate) fn excite_parts(z: &[f64], p: &IcaParams) -> Excitation {
    let hidden_pre = affine(&p.w1, z, p.b1.as_ref());
    let hidden: Vec<f64> = hidden_pre.iter().map(|&v| v.max(0.0)).collect();
    let logits = affine(&p.w2, &hidden, p.b2.as_ref());
    Excitation {
        hidden_pre,
        alpha: logits.into_iter().map(sigmoid).collect(),
    }
}

/// `alpha = sigmoid(W2 relu(W1 z + b1) + b2)`.
pub fn excite(z: &Tensor, p: &IcaParams) -> Result<AttentionWeights> {
    let c = p.channels();
    if z.shape() != [c] {
        return Err(Error::ChannelMismatch {
            expected: c,
            found: z.len(),
        });
    }
    let e = excite_parts(z.data(), p);
    Ok(AttentionWeights {
        alpha: Tensor::from_vec(&[c], e.alpha)?,
    })
}

/// Gates every channel of `f` by its attention weight.
pub fn ica_forward(f: &Tensor, p: &IcaParams) -> Result<(Tensor, AttentionWeights)> {
    let (c, _, _) = f.dims3()?;
    if c != p.channels() {
        return Err(Error::ChannelMismatch {
            expected: p.channels(),
            found: c,
        });
    }
    let stats = compute_stats(f)?;
    let z = fuse_stats(&stats, p)?;
    let weights = excite(&z, p)?;
    let out = elementwise(f, &weights.alpha, BinaryOp::Mul)?;
    Ok((out, weights))
}

/// Color transform, stem and channel attention, end to end.
pub fn ycda_forward(
    img: &ImageRgb,
    cfg: &StemConfig,
    sp: &DwConvParams,
    ip: &IcaParams,
) -> Result<(Tensor, AttentionWeights)> {
    ycda_forward_with(img, ColorStandard::Bt601Full, cfg, sp, ip)
}

pub fn ycda_forward_with(
    img: &ImageRgb,
    standard: ColorStandard,
    cfg: &StemConfig,
    sp: &DwConvParams,
    ip: &IcaParams,
) -> Result<(Tensor, AttentionWeights)> {
    let ycc = rgb_to_ycbcr_with(img, standard);
    let features = stem_forward(&ycc, cfg, sp)?;
    ica_forward(&features, ip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stem::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_params(c: usize, config: IcaConfig, rng: &mut ChaCha8Rng) -> IcaParams {
        let mut p = IcaParams::zeros(c, config).unwrap();
        p.fuse_weight = random_tensor(p.fuse_weight.shape(), rng);
        p.fuse_bias = random_tensor(p.fuse_bias.shape(), rng);
        p.w1 = random_tensor(p.w1.shape(), rng);
        p.w2 = random_tensor(p.w2.shape(), rng);
        p.b1 = p.b1.as_ref().map(|b| random_tensor(b.shape(), rng));
        p.b2 = p.b2.as_ref().map(|b| random_tensor(b.shape(), rng));
        p
    }

    /// Selection matrix `[I | 0]` (or `[0 | I]` when `second`).
    fn selector(c: usize, second: bool) -> Tensor {
        let mut w = Tensor::zeros(&[c, 2 * c]).unwrap();
        for i in 0..c {
            w.set(&[i, if second { c + i } else { i }], 1.0);
        }
        w
    }

    #[test]
    fn stats_constant_and_hand_example() {
        let f = Tensor::full(&[3, 4, 4], 0.25).unwrap();
        let s = compute_stats(&f).unwrap();
        assert!(s.mean.data().iter().all(|&m| (m - 0.25).abs() < 1e-15));
        assert!(s.variance.data().iter().all(|&v| v == 0.0));
        let f = Tensor::from_vec(&[1, 2, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let s = compute_stats(&f).unwrap();
        assert_eq!((s.mean.data()[0], s.variance.data()[0]), (0.5, 0.25));
    }

    #[test]
    fn stats_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = random_tensor(&[2, 3, 3], &mut rng);
        let mut g = f.clone();
        for c in 0..2 {
            g.channel_mut(c).reverse();
        }
        let (a, b) = (compute_stats(&f).unwrap(), compute_stats(&g).unwrap());
        assert!(a.mean.max_abs_diff(&b.mean).unwrap() < 1e-15);
        assert!(a.variance.max_abs_diff(&b.variance).unwrap() < 1e-15);
    }

    #[test]
    fn fuse_selects_mean_or_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = random_tensor(&[4, 3, 3], &mut rng);
        let s = compute_stats(&f).unwrap();
        let mut p = IcaParams::zeros(4, IcaConfig::default()).unwrap();
        p.fuse_weight = selector(4, false);
        assert_eq!(fuse_stats(&s, &p).unwrap(), s.mean);
        p.fuse_weight = selector(4, true);
        assert_eq!(fuse_stats(&s, &p).unwrap(), s.variance);
    }

    #[test]
    fn fuse_matches_matrix_vector_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for variant in [
            AttentionVariant::Ica,
            AttentionVariant::GapOnly,
            AttentionVariant::VarOnly,
        ] {
            let cfg = IcaConfig {
                variant,
                ..IcaConfig::default()
            };
            let p = random_params(8, cfg, &mut rng);
            let s = compute_stats(&random_tensor(&[8, 3, 5], &mut rng)).unwrap();
            let z = fuse_stats(&s, &p).unwrap();
            for i in 0..8 {
                let mut acc = p.fuse_bias.get(&[i]);
                for j in 0..8 {
                    let (first, second) = match variant {
                        AttentionVariant::Ica => (s.mean.get(&[j]), s.variance.get(&[j])),
                        AttentionVariant::GapOnly => (s.mean.get(&[j]), s.mean.get(&[j])),
                        AttentionVariant::VarOnly => {
                            (s.variance.get(&[j]), s.variance.get(&[j]))
                        }
                    };
                    acc += p.fuse_weight.get(&[i, j]) * first;
                    acc += p.fuse_weight.get(&[i, 8 + j]) * second;
                }
                assert!((z.get(&[i]) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fuse_rejects_wrong_channel_count() {
        let p = IcaParams::zeros(8, IcaConfig::default()).unwrap();
        let s = compute_stats(&Tensor::zeros(&[4, 2, 2]).unwrap()).unwrap();
        assert!(matches!(
            fuse_stats(&s, &p),
            Err(Error::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn zero_mlp_gives_half() {
        let p = IcaParams::zeros(8, IcaConfig::default()).unwrap();
        let z = Tensor::from_vec(&[8], (0..8).map(f64::from).collect()).unwrap();
        let a = excite(&z, &p).unwrap();
        assert!(a.alpha.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn saturated_bias_approaches_one() {
        let mut p = IcaParams::zeros(8, IcaConfig::default()).unwrap();
        p.b2 = Some(Tensor::full(&[8], 20.0).unwrap());
        let a = excite(&Tensor::zeros(&[8]).unwrap(), &p).unwrap();
        assert!(a.alpha.data().iter().all(|&v| (1.0 - v) < 1e-8 && v < 1.0));
    }

    #[test]
    fn excite_matches_mlp_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = random_params(12, IcaConfig::default(), &mut rng);
        let z = random_tensor(&[12], &mut rng);
        let a = excite(&z, &p).unwrap();
        let (w1, b1, w2, b2) = (&p.w1, p.b1.as_ref().unwrap(), &p.w2, p.b2.as_ref().unwrap());
        for i in 0..12 {
            let mut logit = b2.get(&[i]);
            for h in 0..3 {
                let mut pre = b1.get(&[h]);
                for j in 0..12 {
                    pre += w1.get(&[h, j]) * z.get(&[j]);
                }
                logit += w2.get(&[i, h]) * if pre > 0.0 { pre } else { 0.0 };
            }
            let expected = 1.0 / (1.0 + (-logit).exp());
            assert!((a.alpha.get(&[i]) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_mlp_halves_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_tensor(&[8, 4, 4], &mut rng);
        let p = IcaParams::zeros(8, IcaConfig::default()).unwrap();
        let (out, _) = ica_forward(&f, &p).unwrap();
        assert_eq!(out, f.scale(0.5));
    }

    #[test]
    fn no_bias_mode() {
        let cfg = IcaConfig {
            mlp_bias: false,
            ..IcaConfig::default()
        };
        let p = IcaParams::zeros(24, cfg).unwrap();
        assert!(p.b1.is_none() && p.b2.is_none());
        assert_eq!(p.param_count(), 1494 - 6 - 24);
        p.validate().unwrap();
    }

    #[test]
    fn param_count_default() {
        let p = IcaParams::zeros(24, IcaConfig::default()).unwrap();
        assert_eq!(p.param_count(), 1494);
    }

    #[test]
    fn degenerate_configs_rejected() {
        assert!(IcaParams::zeros(3, IcaConfig::default()).is_err());
        assert!(IcaParams::zeros(10, IcaConfig::default()).is_err());
        let zero = IcaConfig {
            reduction: 0,
            ..IcaConfig::default()
        };
        assert!(IcaParams::zeros(8, zero).is_err());
    }

    #[test]
    fn gray_image_end_to_end() {
        let img = ImageRgb::new(Tensor::full(&[3, 8, 8], 0.5).unwrap()).unwrap();
        let cfg = StemConfig {
            activation: Activation::Identity,
            ..StemConfig::default()
        };
        let mut kernels = Tensor::zeros(&[24, 3, 3]).unwrap();
        for j in 0..24 {
            kernels.set(&[j, 1, 1], 1.0);
        }
        let sp = DwConvParams::new(kernels, Tensor::zeros(&[24]).unwrap(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ip = random_params(24, IcaConfig::default(), &mut rng);
        let (out, alpha) = ycda_forward(&img, &cfg, &sp, &ip).unwrap();
        assert_eq!(out.shape(), &[24, 4, 4]);
        assert_eq!(alpha.alpha.shape(), &[24]);
        for j in 0..24 {
            let ch = out.channel(j);
            assert!(ch.iter().all(|&v| v == ch[0]));
        }
        let ycc = rgb_to_ycbcr_with(&img, ColorStandard::Bt601Full);
        let feats = stem_forward(&ycc, &cfg, &sp).unwrap();
        assert!(compute_stats(&feats)
            .unwrap()
            .variance
            .data()
            .iter()
            .all(|&v| v < 1e-30));
    }
}
