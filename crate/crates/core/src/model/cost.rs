//! Parameter and multiply-accumulate accounting at stem scope.
//!
//! MAC counts are normalized per input pixel at a reference resolution, so image-level
//! stages (fusion, bottleneck) contribute a resolution-dependent fraction.

use serde::{Deserialize, Serialize};

use super::{YcdaBlock, IN_CHANNELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    pub stage: String,
    pub params: usize,
    pub macs_per_pixel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub name: String,
    pub stages: Vec<StageCost>,
    pub params: usize,
    pub macs_per_pixel: f64,
    /// Channel width handed to the next layer.
    pub output_channels: usize,
    pub output_height: usize,
    pub output_width: usize,
    /// MACs per input pixel of the reference next layer fed by this stem.
    pub next_layer_macs_per_pixel: f64,
    pub note: String,
}

/// A conventional first-layer strided convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStem {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Default for ConvStem {
    fn default() -> Self {
        Self {
            out_channels: 64,
            kernel: 3,
            stride: 2,
        }
    }
}

/// The layer both stems hand their output to; identical for the two reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NextLayer {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Default for NextLayer {
    fn default() -> Self {
        Self {
            out_channels: 128,
            kernel: 3,
            stride: 2,
        }
    }
}

const NOTE: &str = "stem-scope accounting only; whole-detector parameter and FLOP totals \
                    depend on the host network and are not modeled";

fn same_padded(extent: usize, stride: usize) -> usize {
    extent.div_ceil(stride)
}

impl CostReport {
    fn new(
        name: &str,
        stages: Vec<StageCost>,
        out: (usize, usize, usize),
        input_pixels: f64,
        next: &NextLayer,
    ) -> Self {
        let (c, h, w) = out;
        let next_macs = (c * next.kernel * next.kernel * next.out_channels) as f64
            * (same_padded(h, next.stride) * same_padded(w, next.stride)) as f64
            / input_pixels;
        Self {
            name: name.into(),
            params: stages.iter().map(|s| s.params).sum(),
            macs_per_pixel: stages.iter().map(|s| s.macs_per_pixel).sum(),
            stages,
            output_channels: c,
            output_height: h,
            output_width: w,
            next_layer_macs_per_pixel: next_macs,
            note: NOTE.into(),
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageCost> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

/// Costs of the block and of the baseline stem at `height x width` input.
pub fn cost_report(
    block: &YcdaBlock,
    baseline: &ConvStem,
    next: &NextLayer,
    height: usize,
    width: usize,
) -> (CostReport, CostReport) {
    let pixels = (height * width) as f64;
    let cfg = &block.config;
    let r = cfg.stem.unshuffle_factor;
    let k = cfg.stem.kernel_size;
    let c = cfg.channels();
    let hidden = block.ica.hidden();
    let (oh, ow) = (height / r, width / r);
    let out_elems = (c * oh * ow) as f64;
    let stage = |name: &str, params: usize, macs: f64| StageCost {
        stage: name.into(),
        params,
        macs_per_pixel: macs / pixels,
    };

    let ycda = CostReport::new(
        "ycda",
        vec![
            stage("color_transform", 0, 9.0 * pixels),
            stage(
                "depthwise",
                block.stem.param_count(),
                out_elems * (k * k) as f64,
            ),
            // one accumulate for the mean, one multiply-accumulate for the variance
            stage("statistics", 0, 2.0 * out_elems),
            stage(
                "fuse",
                block.ica.fuse_weight.len() + block.ica.fuse_bias.len(),
                (c * 2 * c) as f64,
            ),
            stage(
                "mlp",
                block.ica.w1.len()
                    + block.ica.w2.len()
                    + block.ica.b1.as_ref().map_or(0, |b| b.len())
                    + block.ica.b2.as_ref().map_or(0, |b| b.len()),
                (2 * c * hidden) as f64,
            ),
            stage("gating", 0, out_elems),
        ],
        (c, oh, ow),
        pixels,
        next,
    );

    let (bh, bw) = (
        same_padded(height, baseline.stride),
        same_padded(width, baseline.stride),
    );
    let bk = baseline.kernel * baseline.kernel;
    let conv = CostReport::new(
        "conv_stem",
        vec![stage(
            "conv",
            IN_CHANNELS * baseline.out_channels * bk + baseline.out_channels,
            (IN_CHANNELS * bk * baseline.out_channels * bh * bw) as f64,
        )],
        (baseline.out_channels, bh, bw),
        pixels,
        next,
    );
    (ycda, conv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_block, BlockConfig};

    #[test]
    fn default_counts() {
        let block = init_block(BlockConfig::default(), 0).unwrap();
        let (ycda, conv) = cost_report(
            &block,
            &ConvStem::default(),
            &NextLayer::default(),
            640,
            640,
        );
        assert_eq!(conv.params, 3 * 64 * 9 + 64);
        assert_eq!(conv.params, 1792);
        assert_eq!(ycda.params, 240 + 1494);
        assert!(ycda.params < conv.params);
        assert_eq!(ycda.output_channels, 24);
        assert_eq!(conv.output_channels, 64);
        assert_eq!(ycda.stage("depthwise").unwrap().params, 240);
        assert_eq!(ycda.stage("fuse").unwrap().params, 1176);
        assert_eq!(ycda.stage("mlp").unwrap().params, 318);
        assert!((ycda.stage("depthwise").unwrap().macs_per_pixel - 54.0).abs() < 1e-12);
        assert!((conv.macs_per_pixel - 432.0).abs() < 1e-12);
        // next layer: c_in * 9 * 128 / 16 per input pixel
        assert!((ycda.next_layer_macs_per_pixel - 24.0 * 9.0 * 128.0 / 16.0).abs() < 1e-9);
        assert!((conv.next_layer_macs_per_pixel - 64.0 * 9.0 * 128.0 / 16.0).abs() < 1e-9);
    }

    #[test]
    fn totals_are_stage_sums() {
        let block = init_block(BlockConfig::default(), 0).unwrap();
        let (ycda, conv) = cost_report(
            &block,
            &ConvStem::default(),
            &NextLayer::default(),
            64,
            48,
        );
        for report in [&ycda, &conv] {
            let mut params = 0;
            let mut macs = 0.0;
            for s in &report.stages {
                params += s.params;
                macs += s.macs_per_pixel;
            }
            assert_eq!(report.params, params);
            assert!((report.macs_per_pixel - macs).abs() < 1e-12);
        }
        assert_eq!(ycda.params, block.param_count());
    }
}
