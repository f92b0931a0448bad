//! Momentum gradient descent on a salient-vs-camouflaged toy classification task.
//!
//! The head pools the block output per channel and maps the pooled vector to two logits
//! with one linear layer; training minimizes mean softmax cross-entropy over the full
//! training split every step.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{backward, forward_traced};
use crate::colorspace::ImageRgb;
use crate::error::{Error, Result};
use crate::model::YcdaBlock;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Saliency {
    Salient,
    Camouflaged,
}

impl Saliency {
    pub fn class(self) -> usize {
        match self {
            Saliency::Salient => 0,
            Saliency::Camouflaged => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Saliency::Salient => "salient",
            Saliency::Camouflaged => "camouflaged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: ImageRgb,
    pub label: Saliency,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ToyDataset {
    pub train: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub step_size: f64,
    pub momentum: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            momentum: 0.937,
            steps: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// `logits = weight * pooled + bias`, `weight: [2, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearHead {
    pub fn init(channels: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (6.0 / (channels + 2) as f64).sqrt();
        let data = (0..2 * channels)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Ok(Self {
            weight: Tensor::from_vec(&[2, channels], data)?,
            bias: Tensor::zeros(&[2])?,
        })
    }

    fn logits(&self, pooled: &[f64]) -> [f64; 2] {
        let c = pooled.len();
        let w = self.weight.data();
        let mut out = [0.0; 2];
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.bias.data()[k]
                + w[k * c..(k + 1) * c]
                    .iter()
                    .zip(pooled)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
        }
        out
    }
}

/// Mean attention weight over the channels derived from each color channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupAlpha {
    pub y: f64,
    pub cb: f64,
    pub cr: f64,
}

impl GroupAlpha {
    /// Whether the luminance group receives more attention than both chroma groups.
    pub fn luma_dominant(&self) -> bool {
        self.y > self.cb && self.y > self.cr
    }

    /// Group names ordered by decreasing attention.
    pub fn ordering(&self) -> Vec<&'static str> {
        let mut v = [("Y", self.y), ("Cb", self.cb), ("Cr", self.cr)];
        v.sort_by(|a, b| b.1.total_cmp(&a.1));
        v.iter().map(|(n, _)| *n).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyOutcome {
    pub block: YcdaBlock,
    pub head: LinearHead,
    /// Training loss before the first step and after every step.
    pub loss_trace: Vec<f64>,
    pub camouflaged_alpha: GroupAlpha,
    pub salient_alpha: GroupAlpha,
    pub test_accuracy: f64,
}

fn pooled(out: &Tensor) -> Vec<f64> {
    let c = out.shape()[0];
    (0..c)
        .map(|ch| {
            let plane = out.channel(ch);
            plane.iter().sum::<f64>() / plane.len() as f64
        })
        .collect()
}

/// Softmax cross-entropy and its gradient with respect to the logits.
fn cross_entropy(logits: [f64; 2], class: usize) -> (f64, [f64; 2]) {
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let z = e[0] + e[1];
    let p = [e[0] / z, e[1] / z];
    let loss = -(logits[class] - m - z.ln());
    let mut g = p;
    g[class] -= 1.0;
    (loss, g)
}

struct Batch {
    loss: f64,
    block: BTreeMap<&'static str, Tensor>,
    head_weight: Vec<f64>,
    head_bias: [f64; 2],
}

fn evaluate(block: &YcdaBlock, head: &LinearHead, data: &[LabeledImage]) -> Result<Batch> {
    let c = block.config.channels();
    let n = data.len() as f64;
    let mut batch = Batch {
        loss: 0.0,
        block: BTreeMap::new(),
        head_weight: vec![0.0; 2 * c],
        head_bias: [0.0; 2],
    };
    for sample in data {
        let (out, _, tape) = forward_traced(block, &sample.image)?;
        let pool = pooled(&out);
        let (loss, g_logits) = cross_entropy(head.logits(&pool), sample.label.class());
        batch.loss += loss / n;

        let mut g_pool = vec![0.0; c];
        for k in 0..2 {
            let gk = g_logits[k] / n;
            batch.head_bias[k] += gk;
            for ch in 0..c {
                batch.head_weight[k * c + ch] += gk * pool[ch];
                g_pool[ch] += gk * head.weight.data()[k * c + ch];
            }
        }
        let (_, h, w) = out.dims3()?;
        let area = (h * w) as f64;
        let mut g_out = Tensor::zeros(out.shape())?;
        for ch in 0..c {
            g_out.channel_mut(ch).fill(g_pool[ch] / area);
        }
        let grads = backward(&tape, &g_out)?;
        for (name, g) in grads.params {
            match batch.block.get_mut(name) {
                Some(acc) => acc.add_assign(&g)?,
                None => {
                    batch.block.insert(name, g);
                }
            }
        }
    }
    Ok(batch)
}

fn mean_loss(block: &YcdaBlock, head: &LinearHead, data: &[LabeledImage]) -> Result<f64> {
    let mut total = 0.0;
    for sample in data {
        let (out, _) = block.forward(&sample.image)?;
        total += cross_entropy(head.logits(&pooled(&out)), sample.label.class()).0;
    }
    Ok(total / data.len() as f64)
}

fn group_alpha(block: &YcdaBlock, data: &[LabeledImage], label: Saliency) -> Result<GroupAlpha> {
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for sample in data.iter().filter(|s| s.label == label) {
        let (_, weights) = block.forward(&sample.image)?;
        for (j, &a) in weights.alpha.data().iter().enumerate() {
            let g = block.channel_group(j);
            sums[g] += a;
            counts[g] += 1;
        }
    }
    let avg = |g: usize| {
        if counts[g] == 0 {
            f64::NAN
        } else {
            sums[g] / counts[g] as f64
        }
    };
    Ok(GroupAlpha {
        y: avg(0),
        cb: avg(1),
        cr: avg(2),
    })
}

fn accuracy(block: &YcdaBlock, head: &LinearHead, data: &[LabeledImage]) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let mut correct = 0;
    for sample in data {
        let (out, _) = block.forward(&sample.image)?;
        let l = head.logits(&pooled(&out));
        let predicted = usize::from(l[1] > l[0]);
        correct += usize::from(predicted == sample.label.class());
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Trains `block` and a fresh linear head, seeded by `cfg.seed`, on `dataset.train`.
pub fn train_toy(block: &YcdaBlock, dataset: &ToyDataset, cfg: &TrainConfig) -> Result<ToyOutcome> {
    if dataset.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    let mut block = block.clone();
    let mut head = LinearHead::init(block.config.channels(), cfg.seed)?;

    let names: Vec<&'static str> = block.parameters().iter().map(|(n, _)| *n).collect();
    let mut velocity: BTreeMap<&'static str, Vec<f64>> = block
        .parameters()
        .into_iter()
        .map(|(n, t)| (n, vec![0.0; t.len()]))
        .collect();
    let mut v_head_w = vec![0.0; head.weight.len()];
    let mut v_head_b = [0.0; 2];

    let mut loss_trace = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..cfg.steps {
        let batch = evaluate(&block, &head, &dataset.train)?;
        loss_trace.push(batch.loss);
        for name in &names {
            let g = &batch.block[name];
            let v = velocity.get_mut(name).expect("velocity per parameter");
            let p = block.parameter_mut(name).expect("parameter exists");
            for ((pi, vi), gi) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g.data()) {
                *vi = cfg.momentum * *vi + gi;
                *pi -= cfg.step_size * *vi;
            }
        }
        for ((pi, vi), gi) in head
            .weight
            .data_mut()
            .iter_mut()
            .zip(v_head_w.iter_mut())
            .zip(&batch.head_weight)
        {
            *vi = cfg.momentum * *vi + gi;
            *pi -= cfg.step_size * *vi;
        }
        for k in 0..2 {
            v_head_b[k] = cfg.momentum * v_head_b[k] + batch.head_bias[k];
            head.bias.data_mut()[k] -= cfg.step_size * v_head_b[k];
        }
    }
    loss_trace.push(mean_loss(&block, &head, &dataset.train)?);

    let eval = if dataset.test.is_empty() {
        &dataset.train
    } else {
        &dataset.test
    };
    Ok(ToyOutcome {
        camouflaged_alpha: group_alpha(&block, eval, Saliency::Camouflaged)?,
        salient_alpha: group_alpha(&block, eval, Saliency::Salient)?,
        test_accuracy: accuracy(&block, &head, eval)?,
        block,
        head,
        loss_trace,
    })
}
