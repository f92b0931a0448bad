//! Central finite-difference verification of the analytic gradients.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{backward, forward_traced_pixels};
use crate::colorspace::ImageRgb;
use crate::error::{Error, Result};
use crate::ica::{compute_stats, excite_parts, fuse_stats};
use crate::model::YcdaBlock;
use crate::stem::stem_forward_tensor;
use crate::tensor::Tensor;

/// Coordinates checked per tensor; larger tensors are subsampled to this many.
pub const MAX_COORDS_PER_TENSOR: usize = 200;

/// Name under which the input gradient is reported.
pub const INPUT: &str = "input";

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    /// Maximum relative error per parameter tensor (and the input).
    pub per_param: BTreeMap<String, f64>,
    pub overall_max: f64,
    pub eps: f64,
    pub coordinates: usize,
}

impl GradReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.overall_max < threshold
    }
}

fn sum_of_squares_loss(block: &YcdaBlock, rgb: &Tensor) -> Result<f64> {
    Ok(block.forward_pixels(rgb)?.0.sum_squares())
}

fn coordinates(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= MAX_COORDS_PER_TENSOR {
        (0..len).collect()
    } else {
        let mut idx = sample(rng, len, MAX_COORDS_PER_TENSOR).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// Compares analytic gradients of `sum(out^2)` against central differences
/// `(L(t + eps) - L(t - eps)) / 2 eps` for every parameter and input coordinate
/// (seeded subsample for tensors larger than [`MAX_COORDS_PER_TENSOR`]).
pub fn grad_check(block: &YcdaBlock, img: &ImageRgb, eps: f64, seed: u64) -> Result<GradReport> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    let rgb = img.pixels();
    let (out, _, tape) = forward_traced_pixels(block, rgb)?;
    let grads = backward(&tape, &out.scale(2.0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_param = BTreeMap::new();
    let mut checked = 0;

    for (name, tensor) in block.parameters() {
        let analytic = &grads.params[name];
        let mut worst: f64 = 0.0;
        for i in coordinates(tensor.len(), &mut rng) {
            let mut plus = block.clone();
            plus.parameter_mut(name).unwrap().data_mut()[i] += eps;
            let mut minus = block.clone();
            minus.parameter_mut(name).unwrap().data_mut()[i] -= eps;
            let fd = (sum_of_squares_loss(&plus, rgb)? - sum_of_squares_loss(&minus, rgb)?)
                / (2.0 * eps);
            worst = worst.max(relative_error(analytic.data()[i], fd));
            checked += 1;
        }
        per_param.insert(name.to_string(), worst);
    }

    let mut worst: f64 = 0.0;
    for i in coordinates(rgb.len(), &mut rng) {
        let mut plus = rgb.clone();
        plus.data_mut()[i] += eps;
        let mut minus = rgb.clone();
        minus.data_mut()[i] -= eps;
        let fd = (sum_of_squares_loss(block, &plus)? - sum_of_squares_loss(block, &minus)?)
            / (2.0 * eps);
        worst = worst.max(relative_error(grads.input.data()[i], fd));
        checked += 1;
    }
    per_param.insert(INPUT.to_string(), worst);

    let overall_max = per_param.values().copied().fold(0.0, f64::max);
    Ok(GradReport {
        per_param,
        overall_max,
        eps,
        coordinates: checked,
    })
}

/// Moves every bottleneck pre-activation at least `margin` away from the ReLU kink for
/// this input, through `b1` when present and otherwise along `z` in the `w1` row.
pub fn clear_relu_kink(block: &mut YcdaBlock, img: &ImageRgb, margin: f64) -> Result<()> {
    let ycc = block.config.color.matrix().apply(img.pixels())?;
    let features = stem_forward_tensor(&ycc, &block.config.stem, &block.stem)?;
    let z = fuse_stats(&compute_stats(&features)?, &block.ica)?;
    let e = excite_parts(z.data(), &block.ica);
    let c = z.len();
    let zz: f64 = z.data().iter().map(|v| v * v).sum();
    for (h, &pre) in e.hidden_pre.iter().enumerate() {
        if pre.abs() >= margin {
            continue;
        }
        let target = if pre >= 0.0 { margin } else { -margin };
        let shift = target - pre;
        match block.ica.b1.as_mut() {
            Some(b1) => b1.data_mut()[h] += shift,
            None if zz > 0.0 => {
                let row = &mut block.ica.w1.data_mut()[h * c..(h + 1) * c];
                for (w, &zj) in row.iter_mut().zip(z.data()) {
                    *w += shift * zj / zz;
                }
            }
            None => {}
        }
    }
    Ok(())
}
