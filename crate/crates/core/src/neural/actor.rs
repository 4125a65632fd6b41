//! Policy network: conv → pool → conv → pool → flatten → dense → dense →
//! softmax over the N lines.
//!
//! Execution cost per decision is dominated by the two convolutions,
//! `O(Σ kernel·length·in_ch·out_ch)`, plus the two dense layers,
//! `O(Σ in·out)`.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::layers::{
    avg_pool, avg_pool_backward, conv1d, conv1d_backward, dense, dense_backward, leaky_backward,
    leaky_inplace, log_softmax, pooled_len, softmax, Conv1dShape,
};
use super::params::{ParamSet, Tensor};
use crate::error::{check_len, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActorConfig {
    pub n_lines: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub kernel: usize,
    pub pool: usize,
    pub hidden: usize,
}

impl Default for ActorConfig {
    fn default() -> Self {
        Self {
            n_lines: 0,
            conv1_channels: 8,
            conv2_channels: 16,
            kernel: 3,
            pool: 2,
            hidden: 128,
        }
    }
}

impl ActorConfig {
    pub fn for_lines(n_lines: usize) -> Self {
        Self {
            n_lines,
            ..Self::default()
        }
    }

    fn lengths(&self) -> (usize, usize) {
        let p1 = pooled_len(self.n_lines, self.pool);
        let p2 = pooled_len(p1, self.pool);
        (p1, p2)
    }

    fn flat_len(&self) -> usize {
        self.conv2_channels * self.lengths().1
    }
}

const CONV1_W: usize = 0;
const CONV1_B: usize = 1;
const CONV2_W: usize = 2;
const CONV2_B: usize = 3;
const FC1_W: usize = 4;
const FC1_B: usize = 5;
const FC2_W: usize = 6;
const FC2_B: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub config: ActorConfig,
    pub params: ParamSet,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ActorCache {
    input: Vec<f64>,
    conv1_pre: Vec<f64>,
    pool1: Vec<f64>,
    conv2_pre: Vec<f64>,
    flat: Vec<f64>,
    fc1_pre: Vec<f64>,
    fc1_act: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ActorCache {
    pub fn probs(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn log_probs(&self) -> Vec<f64> {
        log_softmax(&self.logits)
    }
}

impl Actor {
    pub fn new(config: ActorConfig, rng: &mut impl Rng) -> Self {
        let n = config.n_lines;
        let k = config.kernel;
        let (c1, c2) = (config.conv1_channels, config.conv2_channels);
        let flat = config.flat_len();
        let h = config.hidden;
        let params = ParamSet::new(vec![
            Tensor::fan_in_uniform("conv1.w", &[c1, 1, k], k, rng),
            Tensor::zeros("conv1.b", &[c1]),
            Tensor::fan_in_uniform("conv2.w", &[c2, c1, k], c1 * k, rng),
            Tensor::zeros("conv2.b", &[c2]),
            Tensor::fan_in_uniform("fc1.w", &[h, flat], flat, rng),
            Tensor::zeros("fc1.b", &[h]),
            Tensor::fan_in_uniform("fc2.w", &[n, h], h, rng),
            Tensor::zeros("fc2.b", &[n]),
        ]);
        Self { config, params }
    }

    pub fn from_params(config: ActorConfig, params: ParamSet) -> Result<Self> {
        let mut reference = Self::new(config, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        reference.params.check_compatible(&params)?;
        reference.params = params;
        Ok(reference)
    }

    pub fn n_lines(&self) -> usize {
        self.config.n_lines
    }

    /// Zeroes the output layer so the policy starts uniform.
    pub fn zero_output_layer(&mut self) {
        self.params.tensors[FC2_W].data.fill(0.0);
        self.params.tensors[FC2_B].data.fill(0.0);
    }

    fn data(&self, idx: usize) -> &[f64] {
        &self.params.tensors[idx].data
    }

    pub fn forward(&self, obs: &[f64]) -> Result<ActorCache> {
        let cfg = &self.config;
        check_len("actor input", cfg.n_lines, obs.len())?;
        let (c1, c2) = (cfg.conv1_channels, cfg.conv2_channels);
        let (p1, _) = cfg.lengths();
        let shape1 = Conv1dShape {
            in_channels: 1,
            out_channels: c1,
            kernel: cfg.kernel,
            length: cfg.n_lines,
        };
        let conv1_pre = conv1d(shape1, self.data(CONV1_W), self.data(CONV1_B), obs);
        let mut conv1_act = conv1_pre.clone();
        leaky_inplace(&mut conv1_act);
        let pool1 = avg_pool(&conv1_act, c1, cfg.n_lines, cfg.pool);
        let shape2 = Conv1dShape {
            in_channels: c1,
            out_channels: c2,
            kernel: cfg.kernel,
            length: p1,
        };
        let conv2_pre = conv1d(shape2, self.data(CONV2_W), self.data(CONV2_B), &pool1);
        let mut conv2_act = conv2_pre.clone();
        leaky_inplace(&mut conv2_act);
        let flat = avg_pool(&conv2_act, c2, p1, cfg.pool);
        let fc1_pre = dense(self.data(FC1_W), Some(self.data(FC1_B)), &flat, cfg.hidden);
        let mut fc1_act = fc1_pre.clone();
        leaky_inplace(&mut fc1_act);
        let logits = dense(self.data(FC2_W), Some(self.data(FC2_B)), &fc1_act, cfg.n_lines);
        Ok(ActorCache {
            input: obs.to_vec(),
            conv1_pre,
            pool1,
            conv2_pre,
            flat,
            fc1_pre,
            fc1_act,
            logits,
        })
    }

    pub fn probs(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(obs)?.probs())
    }

    /// Accumulates parameter gradients for an upstream gradient on the logits.
    pub fn backward(&self, cache: &ActorCache, dlogits: &[f64], grads: &mut ParamSet) {
        let cfg = &self.config;
        let (c1, c2) = (cfg.conv1_channels, cfg.conv2_channels);
        let (p1, _) = cfg.lengths();
        let g = &mut grads.tensors;

        let (w2, rest) = g.split_at_mut(FC2_B);
        let dfc1 = dense_backward(
            self.data(FC2_W),
            &cache.fc1_act,
            dlogits,
            &mut w2[FC2_W].data,
            Some(&mut rest[0].data),
            true,
        )
        .unwrap();
        let dfc1_pre = leaky_backward(&cache.fc1_pre, &dfc1);
        let (w1, rest) = g.split_at_mut(FC1_B);
        let dflat = dense_backward(
            self.data(FC1_W),
            &cache.flat,
            &dfc1_pre,
            &mut w1[FC1_W].data,
            Some(&mut rest[0].data),
            true,
        )
        .unwrap();
        let dconv2_act = avg_pool_backward(&dflat, c2, p1, cfg.pool);
        let dconv2_pre = leaky_backward(&cache.conv2_pre, &dconv2_act);
        let shape2 = Conv1dShape {
            in_channels: c1,
            out_channels: c2,
            kernel: cfg.kernel,
            length: p1,
        };
        let (cw2, rest) = g.split_at_mut(CONV2_B);
        let dpool1 = conv1d_backward(
            shape2,
            self.data(CONV2_W),
            &cache.pool1,
            &dconv2_pre,
            &mut cw2[CONV2_W].data,
            &mut rest[0].data,
            true,
        )
        .unwrap();
        let dconv1_act = avg_pool_backward(&dpool1, c1, cfg.n_lines, cfg.pool);
        let dconv1_pre = leaky_backward(&cache.conv1_pre, &dconv1_act);
        let shape1 = Conv1dShape {
            in_channels: 1,
            out_channels: c1,
            kernel: cfg.kernel,
            length: cfg.n_lines,
        };
        let (cw1, rest) = g.split_at_mut(CONV1_B);
        conv1d_backward(
            shape1,
            self.data(CONV1_W),
            &cache.input,
            &dconv1_pre,
            &mut cw1[CONV1_W].data,
            &mut rest[0].data,
            false,
        );
    }
}

/// Index of the largest probability, ties to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a categorical distribution.
pub fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}
