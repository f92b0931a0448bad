//! RGB to YCbCr decoupling of luminance and chrominance.
//!
//! Values are normalized to `[0, 1]`; chroma channels are offset so that the neutral
//! (gray) point sits at 0.5.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An affine per-pixel color transform `out = matrix * rgb + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorMatrix {
    pub matrix: [[f64; 3]; 3],
    pub offset: [f64; 3],
}

/// Full-range (JPEG) BT.601.
pub const BT601_FULL: ColorMatrix = ColorMatrix {
    matrix: [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ],
    offset: [0.0, 0.5, 0.5],
};

/// Full-range BT.709, derived from Kr = 0.2126, Kb = 0.0722.
pub const BT709_FULL: ColorMatrix = ColorMatrix {
    matrix: [
        [0.2126, 0.7152, 0.0722],
        [-0.2126 / 1.8556, -0.7152 / 1.8556, 0.5],
        [0.5, -0.7152 / 1.5748, -0.0722 / 1.5748],
    ],
    offset: [0.0, 0.5, 0.5],
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorStandard {
    #[default]
    Bt601Full,
    Bt709Full,
}

impl ColorStandard {
    pub fn matrix(self) -> &'static ColorMatrix {
        match self {
            ColorStandard::Bt601Full => &BT601_FULL,
            ColorStandard::Bt709Full => &BT709_FULL,
        }
    }

    pub fn code(self) -> u32 {
        match self {
            ColorStandard::Bt601Full => 0,
            ColorStandard::Bt709Full => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(ColorStandard::Bt601Full),
            1 => Some(ColorStandard::Bt709Full),
            _ => None,
        }
    }
}

impl ColorMatrix {
    /// Exact affine inverse, via the adjugate.
    pub fn inverse(&self) -> ColorMatrix {
        let m = &self.matrix;
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| {
            m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
        };
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        let det = m[0][0] * adj[0][0] + m[0][1] * adj[1][0] + m[0][2] * adj[2][0];
        let mut inv = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                inv[r][c] = adj[r][c] / det;
            }
        }
        let mut offset = [0.0; 3];
        for (r, o) in offset.iter_mut().enumerate() {
            *o = -(0..3).map(|c| inv[r][c] * self.offset[c]).sum::<f64>();
        }
        ColorMatrix {
            matrix: inv,
            offset,
        }
    }

    #[inline]
    pub fn apply_pixel(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.matrix;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + self.offset[0],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + self.offset[1],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2] + self.offset[2],
        ]
    }

    /// Applies the transform to every pixel of a `[3, H, W]` tensor.
    pub fn apply(&self, t: &Tensor) -> Result<Tensor> {
        let (c, h, w) = t.dims3()?;
        if c != 3 {
            return Err(Error::ChannelMismatch {
                expected: 3,
                found: c,
            });
        }
        let plane = h * w;
        let src = t.data();
        let mut out = vec![0.0; 3 * plane];
        for i in 0..plane {
            let p = self.apply_pixel([src[i], src[plane + i], src[2 * plane + i]]);
            out[i] = p[0];
            out[plane + i] = p[1];
            out[2 * plane + i] = p[2];
        }
        Tensor::from_vec(&[3, h, w], out)
    }
}

/// RGB image as a `[3, H, W]` tensor with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    pixels: Tensor,
}

/// YCbCr image as a `[3, H, W]` tensor ordered Y, Cb, Cr.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageYCbCr {
    pixels: Tensor,
}

impl ImageRgb {
    /// Validates the channel count and that every element lies in `[0, 1]`.
    pub fn new(pixels: Tensor) -> Result<Self> {
        let (c, h, w) = pixels.dims3()?;
        if c != 3 {
            return Err(Error::ChannelMismatch {
                expected: 3,
                found: c,
            });
        }
        if let Some(i) = pixels
            .data()
            .iter()
            .position(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::Domain {
                channel: i / (h * w),
                y: (i % (h * w)) / w,
                x: i % w,
                value: pixels.data()[i],
            });
        }
        Ok(Self { pixels })
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn into_pixels(self) -> Tensor {
        self.pixels
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }
}

impl ImageYCbCr {
    pub fn new(pixels: Tensor) -> Result<Self> {
        let (c, _, _) = pixels.dims3()?;
        if c != 3 {
            return Err(Error::ChannelMismatch {
                expected: 3,
                found: c,
            });
        }
        Ok(Self { pixels })
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn into_pixels(self) -> Tensor {
        self.pixels
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }
}

pub fn rgb_to_ycbcr(img: &ImageRgb) -> ImageYCbCr {
    rgb_to_ycbcr_with(img, ColorStandard::Bt601Full)
}

pub fn rgb_to_ycbcr_with(img: &ImageRgb, standard: ColorStandard) -> ImageYCbCr {
    let pixels = standard
        .matrix()
        .apply(&img.pixels)
        .expect("ImageRgb is always [3, H, W]");
    ImageYCbCr { pixels }
}

/// Inverse transform without clamping.
pub fn ycbcr_to_rgb_raw(img: &ImageYCbCr, standard: ColorStandard) -> Tensor {
    standard
        .matrix()
        .inverse()
        .apply(&img.pixels)
        .expect("ImageYCbCr is always [3, H, W]")
}

/// Inverse transform; results are clamped to `[0, 1]` so the output is a valid image.
pub fn ycbcr_to_rgb(img: &ImageYCbCr) -> ImageRgb {
    ycbcr_to_rgb_with(img, ColorStandard::Bt601Full)
}

pub fn ycbcr_to_rgb_with(img: &ImageYCbCr, standard: ColorStandard) -> ImageRgb {
    let pixels = ycbcr_to_rgb_raw(img, standard).map(|v| v.clamp(0.0, 1.0));
    ImageRgb { pixels }
}
