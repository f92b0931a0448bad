//! The assembled block: configuration, parameters and deterministic initialization.

mod cost;
mod io;

pub use cost::{cost_report, ConvStem, CostReport, NextLayer, StageCost};
pub use io::{
    decode_block, decode_tensors, encode_block, encode_tensors, load_block, load_tensors,
    manifest_path, save_block, save_tensors, FormatError, Manifest, ManifestEntry,
    FORMAT_VERSION, MAGIC,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colorspace::{ColorStandard, ImageRgb};
use crate::error::{Error, Result};
use crate::ica::{ica_forward, AttentionWeights, IcaConfig, IcaParams};
use crate::stem::{stem_forward_tensor, DwConvParams, StemConfig};
use crate::tensor::Tensor;

/// The block always consumes three color channels.
pub const IN_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BlockConfig {
    pub color: ColorStandard,
    pub stem: StemConfig,
    pub ica: IcaConfig,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        self.stem.validate()?;
        self.ica.validate(self.channels())
    }

    /// Channels produced by the stem and gated by the attention, `3 r^2 m`.
    pub fn channels(&self) -> usize {
        self.stem.output_channels(IN_CHANNELS)
    }

    /// Output channels derived from one color channel.
    pub fn group_size(&self) -> usize {
        self.channels() / IN_CHANNELS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct YcdaBlock {
    pub config: BlockConfig,
    pub stem: DwConvParams,
    pub ica: IcaParams,
    pub seed: u64,
}

pub const STEM_KERNELS: &str = "stem.kernels";
pub const STEM_BIAS: &str = "stem.bias";
pub const FUSE_WEIGHT: &str = "ica.fuse_weight";
pub const FUSE_BIAS: &str = "ica.fuse_bias";
pub const MLP_W1: &str = "ica.w1";
pub const MLP_B1: &str = "ica.b1";
pub const MLP_W2: &str = "ica.w2";
pub const MLP_B2: &str = "ica.b2";

fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-bound..bound)).collect())
}

/// Fan-in scaled uniform weights, zero biases. Identical seeds give identical blocks.
pub fn init_block(config: BlockConfig, seed: u64) -> Result<YcdaBlock> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = config.channels();
    let k = config.stem.kernel_size;

    let kernels = uniform(&[c, k, k], 1.0 / (k as f64), &mut rng)?;
    let stem = DwConvParams::new(kernels, Tensor::zeros(&[c])?, config.stem.multiplier)?;

    let mut ica = IcaParams::zeros(c, config.ica)?;
    let hidden = ica.hidden();
    ica.fuse_weight = uniform(&[c, 2 * c], (2.0 * c as f64).sqrt().recip(), &mut rng)?;
    ica.w1 = uniform(&[hidden, c], (c as f64).sqrt().recip(), &mut rng)?;
    ica.w2 = uniform(&[c, hidden], (hidden as f64).sqrt().recip(), &mut rng)?;

    Ok(YcdaBlock {
        config,
        stem,
        ica,
        seed,
    })
}

impl YcdaBlock {
    /// A block whose tensors are all zero, used as the template when loading.
    pub fn zeros(config: BlockConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config.channels();
        let k = config.stem.kernel_size;
        Ok(Self {
            config,
            stem: DwConvParams::new(
                Tensor::zeros(&[c, k, k])?,
                Tensor::zeros(&[c])?,
                config.stem.multiplier,
            )?,
            ica: IcaParams::zeros(c, config.ica)?,
            seed,
        })
    }

    /// Named parameter tensors in a fixed order.
    pub fn parameters(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = vec![
            (STEM_KERNELS, &self.stem.kernels),
            (STEM_BIAS, &self.stem.bias),
            (FUSE_WEIGHT, &self.ica.fuse_weight),
            (FUSE_BIAS, &self.ica.fuse_bias),
            (MLP_W1, &self.ica.w1),
        ];
        if let Some(b1) = &self.ica.b1 {
            out.push((MLP_B1, b1));
        }
        out.push((MLP_W2, &self.ica.w2));
        if let Some(b2) = &self.ica.b2 {
            out.push((MLP_B2, b2));
        }
        out
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        match name {
            STEM_KERNELS => Some(&mut self.stem.kernels),
            STEM_BIAS => Some(&mut self.stem.bias),
            FUSE_WEIGHT => Some(&mut self.ica.fuse_weight),
            FUSE_BIAS => Some(&mut self.ica.fuse_bias),
            MLP_W1 => Some(&mut self.ica.w1),
            MLP_B1 => self.ica.b1.as_mut(),
            MLP_W2 => Some(&mut self.ica.w2),
            MLP_B2 => self.ica.b2.as_mut(),
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.stem.param_count() + self.ica.param_count()
    }

    pub fn forward(&self, img: &ImageRgb) -> Result<(Tensor, AttentionWeights)> {
        self.forward_pixels(img.pixels())
    }

    /// Forward pass on a raw `[3, H, W]` tensor, skipping the `[0, 1]` range check.
    pub fn forward_pixels(&self, rgb: &Tensor) -> Result<(Tensor, AttentionWeights)> {
        let ycc = self.config.color.matrix().apply(rgb)?;
        let features = stem_forward_tensor(&ycc, &self.config.stem, &self.stem)?;
        ica_forward(&features, &self.ica)
    }

    /// Index of the color channel (0 = Y, 1 = Cb, 2 = Cr) output channel `j` derives from.
    pub fn channel_group(&self, j: usize) -> usize {
        j / self.config.group_size()
    }

    pub(crate) fn check_consistent(&self) -> Result<()> {
        let c = self.config.channels();
        if self.stem.out_channels() != c || self.ica.channels() != c {
            return Err(Error::ChannelMismatch {
                expected: c,
                found: self.ica.channels(),
            });
        }
        self.ica.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ica::ycda_forward;
    use crate::stem::Activation;

    #[test]
    fn same_seed_same_block() {
        let a = init_block(BlockConfig::default(), 42).unwrap();
        let b = init_block(BlockConfig::default(), 42).unwrap();
        assert_eq!(a, b);
        for ((_, x), (_, y)) in a.parameters().iter().zip(b.parameters()) {
            let xb: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        let c = init_block(BlockConfig::default(), 43).unwrap();
        assert_ne!(a.stem.kernels, c.stem.kernels);
    }

    #[test]
    fn default_param_counts() {
        let b = init_block(BlockConfig::default(), 0).unwrap();
        assert_eq!(b.stem.param_count(), 240);
        assert_eq!(b.ica.param_count(), 1494);
        assert_eq!(b.param_count(), 1734);
        assert!(b.stem.bias.data().iter().all(|&v| v == 0.0));
        assert!(b.ica.fuse_bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn smaller_config_channel_arithmetic() {
        let mut cfg = BlockConfig::default();
        cfg.stem.multiplier = 1;
        let b = init_block(cfg, 0).unwrap();
        assert_eq!(b.ica.channels(), 12);
        assert_eq!(b.ica.hidden(), 3);
    }

    #[test]
    fn inconsistent_channel_arithmetic_is_rejected() {
        let mut cfg = BlockConfig::default();
        cfg.stem.unshuffle_factor = 1;
        cfg.stem.multiplier = 1;
        // three channels cannot feed a reduction-4 bottleneck
        assert!(init_block(cfg, 0).is_err());
        let mut cfg = BlockConfig::default();
        cfg.stem.kernel_size = 4;
        assert!(init_block(cfg, 0).is_err());
    }

    #[test]
    fn block_forward_matches_free_function() {
        let mut cfg = BlockConfig::default();
        cfg.stem.activation = Activation::Silu;
        let b = init_block(cfg, 5).unwrap();
        let img = ImageRgb::new(
            Tensor::from_vec(&[3, 4, 6], (0..72).map(|i| (i as f64) / 71.0).collect()).unwrap(),
        )
        .unwrap();
        let (o1, a1) = b.forward(&img).unwrap();
        let (o2, a2) = ycda_forward(&img, &cfg.stem, &b.stem, &b.ica).unwrap();
        assert_eq!(o1, o2);
        assert_eq!(a1, a2);
    }

    #[test]
    fn channel_groups() {
        let b = init_block(BlockConfig::default(), 0).unwrap();
        assert_eq!(b.channel_group(0), 0);
        assert_eq!(b.channel_group(7), 0);
        assert_eq!(b.channel_group(8), 1);
        assert_eq!(b.channel_group(23), 2);
    }
}
