//! Dense row-major `f64` tensors.
//!
//! Feature maps are laid out channel-first, `[C, H, W]`, everywhere in the crate.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Mul,
}

impl BinaryOp {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Mul => a * b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialStat {
    Mean,
    /// Population variance (divisor `H * W`).
    Var,
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    Ok(())
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        check_shape(shape)?;
        let len = shape.iter().product();
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_shape(shape)?;
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::DataLength {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(
            index.len(),
            self.shape.len(),
            "index rank does not match tensor rank"
        );
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| {
                assert!(i < n, "index {index:?} out of bounds for {:?}", self.shape);
                acc * n + i
            })
    }

    /// Element at a multi-index. Panics when out of bounds.
    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    /// `(C, H, W)` of a 3-D tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::Rank {
                expected: 3,
                shape: self.shape.clone(),
            }),
        }
    }

    /// Contiguous plane of channel `c` in a 3-D tensor.
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.shape[1..].iter().product::<usize>();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let plane = self.shape[1..].iter().product::<usize>();
        &mut self.data[c * plane..(c + 1) * plane]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> f64 {
        compensated_sum(self.data.iter().copied())
    }

    pub fn sum_squares(&self) -> f64 {
        compensated_sum(self.data.iter().map(|v| v * v))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

/// Elementwise `a op b`.
///
/// `b` either has the shape of `a`, or is `[C]` against a `[C, H, W]` `a`, in which
/// case `b[c]` is applied to every spatial element of channel `c`.
pub fn elementwise(a: &Tensor, b: &Tensor, op: BinaryOp) -> Result<Tensor> {
    if a.shape == b.shape {
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| op.apply(x, y))
            .collect();
        return Ok(Tensor {
            shape: a.shape.clone(),
            data,
        });
    }
    if a.rank() == 3 && b.rank() == 1 && a.shape[0] == b.shape[0] {
        let plane = a.shape[1] * a.shape[2];
        let mut data = Vec::with_capacity(a.len());
        for (c, chunk) in a.data.chunks_exact(plane).enumerate() {
            let y = b.data[c];
            data.extend(chunk.iter().map(|&x| op.apply(x, y)));
        }
        return Ok(Tensor {
            shape: a.shape.clone(),
            data,
        });
    }
    Err(Error::ShapeMismatch {
        left: a.shape.clone(),
        right: b.shape.clone(),
    })
}

/// Per-channel mean or population variance of a `[C, H, W]` tensor.
///
/// Variance is two-pass: the mean first, then the mean squared deviation.
pub fn reduce_spatial(f: &Tensor, stat: SpatialStat) -> Result<Tensor> {
    let (c, _, _) = f.dims3()?;
    let data = (0..c)
        .map(|ch| {
            let plane = f.channel(ch);
            match stat {
                SpatialStat::Mean => plane_mean(plane),
                SpatialStat::Var => plane_variance(plane, plane_mean(plane)),
            }
        })
        .collect();
    Tensor::from_vec(&[c], data)
}

/// Neumaier summation.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + carry
}

/// Mean refined by one correction pass, so a constant plane yields its value exactly.
pub(crate) fn plane_mean(plane: &[f64]) -> f64 {
    let n = plane.len() as f64;
    let rough = compensated_sum(plane.iter().copied()) / n;
    rough + compensated_sum(plane.iter().map(|&v| v - rough)) / n
}

pub(crate) fn plane_variance(plane: &[f64], mean: f64) -> f64 {
    compensated_sum(plane.iter().map(|&v| (v - mean) * (v - mean))) / plane.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeros_shapes() {
        let t = Tensor::zeros(&[2, 2]).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        assert_eq!(Tensor::zeros(&[1]).unwrap().data(), &[0.0]);
        let t = Tensor::zeros(&[3, 2, 2]).unwrap();
        assert_eq!(t.len(), 12);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_extent_is_rejected() {
        assert_eq!(
            Tensor::zeros(&[2, 0]),
            Err(Error::InvalidShape(vec![2, 0]))
        );
        assert!(Tensor::zeros(&[]).is_err());
        assert!(matches!(
            Tensor::from_vec(&[2, 2], vec![1.0; 3]),
            Err(Error::DataLength { .. })
        ));
    }

    #[test]
    fn elementwise_same_shape() {
        let a = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(elementwise(&a, &b, BinaryOp::Mul).unwrap().data(), &[3.0, 8.0]);
    }

    #[test]
    fn elementwise_channel_broadcast() {
        let a = Tensor::from_vec(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![10.0, 0.5]).unwrap();
        let out = elementwise(&a, &b, BinaryOp::Mul).unwrap();
        assert_eq!(out.shape(), &[2, 1, 2]);
        assert_eq!(out.data(), &[10.0, 20.0, 1.5, 2.0]);
    }

    #[test]
    fn add_zeros_is_identity() {
        let a = Tensor::from_vec(&[2, 2, 1], vec![0.3, -1.0, 7.5, 2.0]).unwrap();
        let z = Tensor::zeros(a.shape()).unwrap();
        assert_eq!(elementwise(&a, &z, BinaryOp::Add).unwrap(), a);
    }

    #[test]
    fn elementwise_mismatch() {
        let a = Tensor::zeros(&[2, 3]).unwrap();
        let b = Tensor::zeros(&[3]).unwrap();
        assert!(matches!(
            elementwise(&a, &b, BinaryOp::Add),
            Err(Error::ShapeMismatch { .. })
        ));
        let a = Tensor::zeros(&[2, 3, 3]).unwrap();
        assert!(elementwise(&a, &b, BinaryOp::Mul).is_err());
    }

    #[test]
    fn reduce_constant_and_hand_example() {
        let t = Tensor::full(&[2, 3, 3], 0.7).unwrap();
        let m = reduce_spatial(&t, SpatialStat::Mean).unwrap();
        let v = reduce_spatial(&t, SpatialStat::Var).unwrap();
        for c in 0..2 {
            assert!((m.data()[c] - 0.7).abs() < 1e-15);
            assert_eq!(v.data()[c], 0.0);
        }
        let t = Tensor::from_vec(&[1, 2, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(reduce_spatial(&t, SpatialStat::Mean).unwrap().data(), &[0.5]);
        assert_eq!(reduce_spatial(&t, SpatialStat::Var).unwrap().data(), &[0.25]);
    }

    #[test]
    fn reduce_requires_rank3() {
        let t = Tensor::zeros(&[4]).unwrap();
        assert!(matches!(
            reduce_spatial(&t, SpatialStat::Mean),
            Err(Error::Rank { .. })
        ));
    }

    #[test]
    fn broadcast_matches_materialized_expansion_exhaustively() {
        for c in 1..=8 {
            for h in 1..=8 {
                for w in 1..=8 {
                    let n = c * h * w;
                    let a = Tensor::from_vec(
                        &[c, h, w],
                        (0..n).map(|i| (i as f64 * 0.37).sin()).collect(),
                    )
                    .unwrap();
                    let b = Tensor::from_vec(&[c], (0..c).map(|i| 1.5 - i as f64).collect())
                        .unwrap();
                    let expanded = Tensor::from_vec(
                        &[c, h, w],
                        (0..n).map(|i| b.data()[i / (h * w)]).collect(),
                    )
                    .unwrap();
                    for op in [BinaryOp::Add, BinaryOp::Mul] {
                        assert_eq!(
                            elementwise(&a, &b, op).unwrap(),
                            elementwise(&a, &expanded, op).unwrap()
                        );
                    }
                }
            }
        }
    }

    fn channel_tensor() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>)> {
        (1usize..4, 1usize..6, 1usize..6).prop_flat_map(|(c, h, w)| {
            (
                Just(c),
                Just(h),
                Just(w),
                proptest::collection::vec(-10.0f64..10.0, c * h * w),
            )
        })
    }

    proptest! {
        #[test]
        fn variance_nonnegative_and_permutation_invariant(
            (c, h, w, data) in channel_tensor(),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let t = Tensor::from_vec(&[c, h, w], data).unwrap();
            let mean = reduce_spatial(&t, SpatialStat::Mean).unwrap();
            let var = reduce_spatial(&t, SpatialStat::Var).unwrap();
            prop_assert!(var.data().iter().all(|&v| v >= 0.0));

            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut perm: Vec<usize> = (0..h * w).collect();
            perm.shuffle(&mut rng);
            let mut p = t.clone();
            for ch in 0..c {
                let src = t.channel(ch).to_vec();
                for (dst, &s) in p.channel_mut(ch).iter_mut().zip(&perm) {
                    *dst = src[s];
                }
            }
            let pm = reduce_spatial(&p, SpatialStat::Mean).unwrap();
            let pv = reduce_spatial(&p, SpatialStat::Var).unwrap();
            for ch in 0..c {
                prop_assert!((pm.data()[ch] - mean.data()[ch]).abs() <= 1e-12 * (1.0 + mean.data()[ch].abs()));
                prop_assert!((pv.data()[ch] - var.data()[ch]).abs() <= 1e-12 * (1.0 + var.data()[ch]));
            }
        }

        #[test]
        fn variance_scales_quadratically((c, h, w, data) in channel_tensor(), a in -5.0f64..5.0) {
            let t = Tensor::from_vec(&[c, h, w], data).unwrap();
            let v = reduce_spatial(&t, SpatialStat::Var).unwrap();
            let va = reduce_spatial(&t.scale(a), SpatialStat::Var).unwrap();
            for ch in 0..c {
                let expected = a * a * v.data()[ch];
                prop_assert!((va.data()[ch] - expected).abs() <= 1e-12 * expected.abs().max(1e-300));
            }
        }
    }
}
