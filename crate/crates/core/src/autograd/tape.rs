//! Recorded forward trace of the block and its reverse sweep.

use std::collections::BTreeMap;

use super::ops::{
    activation_backward, color_backward, depthwise_conv_backward, excite_backward,
    fuse_backward, gate_backward, stats_backward, unshuffle_backward,
};
use crate::colorspace::{ColorMatrix, ImageRgb};
use crate::error::{Error, Result};
use crate::ica::{compute_stats, excite, fuse_stats, AttentionWeights, ChannelStats, IcaParams};
use crate::model::{
    YcdaBlock, FUSE_BIAS, FUSE_WEIGHT, MLP_B1, MLP_B2, MLP_W1, MLP_W2, STEM_BIAS, STEM_KERNELS,
};
use crate::stem::{depthwise_conv, pixel_unshuffle, Activation, DwConvParams};
use crate::tensor::{elementwise, BinaryOp, Tensor};

#[derive(Debug, Clone)]
enum Op {
    Color(ColorMatrix),
    Unshuffle(usize),
    DepthwiseConv(DwConvParams),
    Activation(Activation),
    /// Output is `[2, C]`: means in row 0, variances in row 1.
    Stats,
    Fuse(IcaParams),
    Excite(IcaParams),
    /// Inputs are `(features, alpha)`.
    Gate,
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    inputs: Vec<usize>,
    output: usize,
}

/// Operation list with every intermediate value it produced.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    values: Vec<Tensor>,
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every block parameter and the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: BTreeMap<&'static str, Tensor>,
    /// Gradient with respect to the RGB input, `[3, H, W]`.
    pub input: Tensor,
}

impl Tape {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_value(&mut self, t: Tensor) -> usize {
        self.values.push(t);
        self.values.len() - 1
    }

    fn record(&mut self, op: Op, inputs: Vec<usize>, output: Tensor) -> usize {
        let output = self.push_value(output);
        self.nodes.push(Node { op, inputs, output });
        output
    }

    fn output_slot(&self) -> Option<usize> {
        self.nodes.last().map(|n| n.output)
    }
}

fn split_stats(t: &Tensor) -> Result<ChannelStats> {
    let c = t.shape()[1];
    Ok(ChannelStats {
        mean: Tensor::from_vec(&[c], t.data()[..c].to_vec())?,
        variance: Tensor::from_vec(&[c], t.data()[c..].to_vec())?,
    })
}

/// Forward pass that records the trace needed by [`backward`].
pub fn forward_traced(
    block: &YcdaBlock,
    img: &ImageRgb,
) -> Result<(Tensor, AttentionWeights, Tape)> {
    forward_traced_pixels(block, img.pixels())
}

pub(crate) fn forward_traced_pixels(
    block: &YcdaBlock,
    rgb: &Tensor,
) -> Result<(Tensor, AttentionWeights, Tape)> {
    let cfg = &block.config;
    cfg.stem.validate()?;
    let mut tape = Tape::default();
    let input = tape.push_value(rgb.clone());

    let matrix = *cfg.color.matrix();
    let ycc = tape.record(Op::Color(matrix), vec![input], matrix.apply(rgb)?);

    let r = cfg.stem.unshuffle_factor;
    let unshuffled = pixel_unshuffle(&tape.values[ycc], r)?;
    let u = tape.record(Op::Unshuffle(r), vec![ycc], unshuffled);

    let conv = depthwise_conv(&tape.values[u], &block.stem)?;
    let a = tape.record(Op::DepthwiseConv(block.stem.clone()), vec![u], conv);

    let act = cfg.stem.activation;
    let activated = tape.values[a].map(|v| act.apply(v));
    let f = tape.record(Op::Activation(act), vec![a], activated);

    let stats = compute_stats(&tape.values[f])?;
    let c = stats.mean.len();
    let packed = Tensor::from_vec(
        &[2, c],
        stats
            .mean
            .data()
            .iter()
            .chain(stats.variance.data())
            .copied()
            .collect(),
    )?;
    let s = tape.record(Op::Stats, vec![f], packed);

    let z = fuse_stats(&stats, &block.ica)?;
    let z = tape.record(Op::Fuse(block.ica.clone()), vec![s], z);

    let weights = excite(&tape.values[z], &block.ica)?;
    let alpha = tape.record(Op::Excite(block.ica.clone()), vec![z], weights.alpha.clone());

    let out = elementwise(&tape.values[f], &tape.values[alpha], BinaryOp::Mul)?;
    let out_slot = tape.record(Op::Gate, vec![f, alpha], out);
    Ok((tape.values[out_slot].clone(), weights, tape))
}

fn accumulate(grads: &mut [Option<Tensor>], slot: usize, g: Tensor) -> Result<()> {
    match &mut grads[slot] {
        Some(existing) => existing.add_assign(&g),
        empty => {
            *empty = Some(g);
            Ok(())
        }
    }
}

/// Reverse sweep over the trace given `d loss / d output`.
pub fn backward(tape: &Tape, loss_grad: &Tensor) -> Result<Gradients> {
    let out = tape.output_slot().ok_or(Error::MissingTrace)?;
    if tape.values[out].shape() != loss_grad.shape() {
        return Err(Error::ShapeMismatch {
            left: tape.values[out].shape().to_vec(),
            right: loss_grad.shape().to_vec(),
        });
    }
    let mut grads: Vec<Option<Tensor>> = vec![None; tape.values.len()];
    grads[out] = Some(loss_grad.clone());
    let mut params = BTreeMap::new();

    for node in tape.nodes.iter().rev() {
        let Some(g) = grads[node.output].take() else {
            continue;
        };
        let x = node.inputs[0];
        match &node.op {
            Op::Color(m) => accumulate(&mut grads, x, color_backward(m, &g)?)?,
            Op::Unshuffle(r) => accumulate(&mut grads, x, unshuffle_backward(&g, *r)?)?,
            Op::DepthwiseConv(p) => {
                let dg = depthwise_conv_backward(&tape.values[x], p, &g)?;
                params.insert(STEM_KERNELS, dg.kernels);
                params.insert(STEM_BIAS, dg.bias);
                accumulate(&mut grads, x, dg.input)?;
            }
            Op::Activation(act) => {
                accumulate(&mut grads, x, activation_backward(&tape.values[x], &g, *act)?)?
            }
            Op::Stats => {
                let stats = split_stats(&tape.values[node.output])?;
                let c = stats.mean.len();
                let gf = stats_backward(&tape.values[x], &stats, &g.data()[..c], &g.data()[c..])?;
                accumulate(&mut grads, x, gf)?;
            }
            Op::Fuse(p) => {
                let stats = split_stats(&tape.values[x])?;
                let fg = fuse_backward(&stats, p, g.data())?;
                params.insert(FUSE_WEIGHT, fg.weight);
                params.insert(FUSE_BIAS, fg.bias);
                let c = fg.mean.len();
                let packed = Tensor::from_vec(&[2, c], [fg.mean, fg.variance].concat())?;
                accumulate(&mut grads, x, packed)?;
            }
            Op::Excite(p) => {
                let eg = excite_backward(tape.values[x].data(), p, g.data())?;
                params.insert(MLP_W1, eg.w1);
                params.insert(MLP_W2, eg.w2);
                if let Some(b1) = eg.b1 {
                    params.insert(MLP_B1, b1);
                }
                if let Some(b2) = eg.b2 {
                    params.insert(MLP_B2, b2);
                }
                let c = eg.z.len();
                accumulate(&mut grads, x, Tensor::from_vec(&[c], eg.z)?)?;
            }
            Op::Gate => {
                let a = node.inputs[1];
                let (gf, ga) = gate_backward(&tape.values[x], &tape.values[a], &g)?;
                accumulate(&mut grads, x, gf)?;
                accumulate(&mut grads, a, ga)?;
            }
        }
    }
    let input = match grads[0].take() {
        Some(g) => g,
        None => Tensor::zeros(tape.values[0].shape())?,
    };
    Ok(Gradients { params, input })
}
