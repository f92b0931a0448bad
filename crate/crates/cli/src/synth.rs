//! Seeded salient/camouflaged image pairs that differ only in object chroma.
//!
//! Images are composed in YCbCr: value-noise luminance texture for both the background
//! and the object, small per-pixel chroma noise everywhere, and a chroma offset on the
//! object of the salient member only. Both members share every random draw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use ycda::autograd::{LabeledImage, Saliency, ToyDataset};
use ycda::colorspace::{ycbcr_to_rgb_raw, ColorStandard, ImageRgb, ImageYCbCr};
use ycda::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectShape {
    Disk,
    Patch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Square image side in pixels.
    pub size: usize,
    pub shape: ObjectShape,
    /// Disk radius or half the patch side.
    pub object_radius: usize,
    /// Peak deviation of the luminance texture from its base level.
    pub texture_contrast: f64,
    /// Object offset added to Cb and subtracted from Cr in the salient member.
    pub delta_chroma: f64,
    /// Half-width of the uniform per-pixel chroma noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            size: 64,
            shape: ObjectShape::Disk,
            object_radius: 8,
            texture_contrast: 0.15,
            delta_chroma: 0.12,
            noise: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("object of radius {radius} does not fit in a {size}x{size} image")]
    ObjectTooLarge { radius: usize, size: usize },

    #[error("invalid synth parameter: {0}")]
    InvalidParameter(String),

    #[error("composed pixel falls outside the RGB gamut: {0}")]
    OutOfGamut(ycda::Error),
}

const LUMA_BASE: f64 = 0.45;
const BACKGROUND_CELL: usize = 8;
const OBJECT_CELL: usize = 3;

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.object_radius == 0 || 2 * self.object_radius + 1 > self.size {
            return Err(SynthError::ObjectTooLarge {
                radius: self.object_radius,
                size: self.size,
            });
        }
        for (name, v) in [
            ("texture_contrast", self.texture_contrast),
            ("delta_chroma", self.delta_chroma),
            ("noise", self.noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SynthError::InvalidParameter(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Bilinear value noise in `[0, 1]` on a random lattice with the given cell size.
struct ValueNoise {
    lattice: Vec<f64>,
    side: usize,
    cell: usize,
}

impl ValueNoise {
    fn new(size: usize, cell: usize, rng: &mut ChaCha8Rng) -> Self {
        let side = size / cell + 2;
        Self {
            lattice: (0..side * side).map(|_| rng.gen()).collect(),
            side,
            cell,
        }
    }

    fn at(&self, y: usize, x: usize) -> f64 {
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (gy, gx) = (y / self.cell, x / self.cell);
        let ty = smooth((y % self.cell) as f64 / self.cell as f64);
        let tx = smooth((x % self.cell) as f64 / self.cell as f64);
        let v = |i: usize, j: usize| self.lattice[i * self.side + j];
        let top = v(gy, gx) * (1.0 - tx) + v(gy, gx + 1) * tx;
        let bottom = v(gy + 1, gx) * (1.0 - tx) + v(gy + 1, gx + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

fn inside(shape: ObjectShape, dy: isize, dx: isize, r: isize) -> bool {
    match shape {
        ObjectShape::Disk => dy * dy + dx * dx <= r * r,
        ObjectShape::Patch => dy.abs() <= r && dx.abs() <= r,
    }
}

fn to_rgb(ycc: Tensor) -> Result<ImageRgb, SynthError> {
    let ycc = ImageYCbCr::new(ycc).map_err(SynthError::OutOfGamut)?;
    ImageRgb::new(ycbcr_to_rgb_raw(&ycc, ColorStandard::Bt601Full)).map_err(SynthError::OutOfGamut)
}

/// Returns `(salient, camouflaged)`.
pub fn synth_pair(spec: &SynthSpec) -> Result<(ImageRgb, ImageRgb), SynthError> {
    spec.validate()?;
    let n = spec.size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let background = ValueNoise::new(n, BACKGROUND_CELL, &mut rng);
    let object = ValueNoise::new(n, OBJECT_CELL, &mut rng);
    let r = spec.object_radius;
    let cy = rng.gen_range(r..n - r) as isize;
    let cx = rng.gen_range(r..n - r) as isize;

    let mut camo = Tensor::zeros(&[3, n, n]).expect("non-empty");
    let mut salient_offsets = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let in_object = inside(spec.shape, y as isize - cy, x as isize - cx, r as isize);
            let texture = if in_object {
                object.at(y, x)
            } else {
                background.at(y, x)
            };
            camo.set(
                &[0, y, x],
                LUMA_BASE + spec.texture_contrast * (2.0 * texture - 1.0),
            );
            camo.set(&[1, y, x], 0.5 + spec.noise * rng.gen_range(-1.0..=1.0));
            camo.set(&[2, y, x], 0.5 + spec.noise * rng.gen_range(-1.0..=1.0));
            if in_object {
                salient_offsets[y * n + x] = spec.delta_chroma;
            }
        }
    }
    let mut salient = camo.clone();
    for (v, d) in salient.channel_mut(1).iter_mut().zip(&salient_offsets) {
        *v += d;
    }
    for (v, d) in salient.channel_mut(2).iter_mut().zip(&salient_offsets) {
        *v -= d;
    }
    Ok((to_rgb(salient)?, to_rgb(camo)?))
}

/// `pairs` seeded pairs; the first `train_fraction` of the pairs go to the training split.
pub fn toy_dataset(
    template: &SynthSpec,
    pairs: usize,
    train_fraction: f64,
) -> Result<ToyDataset, SynthError> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(SynthError::InvalidParameter(format!(
            "train fraction must lie in [0, 1], got {train_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(template.seed);
    let n_train = (pairs as f64 * train_fraction).round() as usize;
    let mut dataset = ToyDataset::default();
    for i in 0..pairs {
        let spec = SynthSpec {
            seed: rng.gen(),
            ..*template
        };
        let (salient, camo) = synth_pair(&spec)?;
        let split = if i < n_train {
            &mut dataset.train
        } else {
            &mut dataset.test
        };
        split.push(LabeledImage {
            image: salient,
            label: Saliency::Salient,
        });
        split.push(LabeledImage {
            image: camo,
            label: Saliency::Camouflaged,
        });
    }
    Ok(dataset)
}
