//! Attention critic.
//!
//! For agent i the value is `f_i(z_i(o_i), x_i)`, where `z_i` embeds the
//! agent's own observation and `x_i` attends over the other agents' embedded
//! observation-action pairs `e_j = q_j(o_j, a_j)`:
//!
//! ```text
//! κ_j = softmax_{j≠i}( (W_k e_j)ᵀ (W_q e_i) )
//! x_i = Σ_{j≠i} κ_j Φ(W_v e_j)
//! ```
//!
//! `W_k`, `W_q`, `W_v` are shared by all agents. In [`HeadMode::PerAction`]
//! the head emits one value per candidate own action and the query embedding
//! is `q_i(o_i, 0)` (own action masked), so `Q_i(o, (ã_i, a_{-i}))` for every
//! `ã_i` comes out of a single pass. [`HeadMode::Scalar`] follows the literal
//! form: the query uses `q_i(o_i, a_i)` and the head emits one scalar.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::layers::{dense, dense_backward, leaky_backward, leaky_inplace, softmax};
use super::params::{ParamSet, Tensor};
use crate::error::{check_len, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    #[default]
    PerAction,
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriticConfig {
    pub n_lines: usize,
    pub agents: usize,
    pub embed: usize,
    pub attention: usize,
    pub hidden: usize,
    pub head: HeadMode,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            n_lines: 0,
            agents: 1,
            embed: 64,
            attention: 32,
            hidden: 64,
            head: HeadMode::PerAction,
        }
    }
}

impl CriticConfig {
    pub fn new(n_lines: usize, agents: usize) -> Self {
        Self {
            n_lines,
            agents,
            ..Self::default()
        }
    }

    fn head_out(&self) -> usize {
        match self.head {
            HeadMode::PerAction => self.n_lines,
            HeadMode::Scalar => 1,
        }
    }
}

const PER_AGENT: usize = 8;
const Z_W: usize = 0;
const Z_B: usize = 1;
const Q_W: usize = 2;
const Q_B: usize = 3;
const F_W1: usize = 4;
const F_B1: usize = 5;
const F_W2: usize = 6;
const F_B2: usize = 7;
const WK: usize = 0;
const WQ: usize = 1;
const WV: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub config: CriticConfig,
    pub params: ParamSet,
}

/// Attention weights over all agents (the entry for the target agent is 0)
/// and the aggregated contribution.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionState {
    pub weights: Vec<f64>,
    pub contribution: Vec<f64>,
    keys: Vec<Vec<f64>>,
    query: Vec<f64>,
    values_pre: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct CriticCache {
    obs: Vec<Vec<f64>>,
    pair_inputs: Vec<Vec<f64>>,
    query_inputs: Vec<Vec<f64>>,
    z_pre: Vec<Vec<f64>>,
    e_pre: Vec<Vec<f64>>,
    e: Vec<Vec<f64>>,
    query_pre: Vec<Vec<f64>>,
    query_emb: Vec<Vec<f64>>,
    attention: Vec<AttentionState>,
    head_in: Vec<Vec<f64>>,
    h_pre: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    /// Head output per agent: N values (per-action mode) or 1 (scalar mode).
    pub heads: Vec<Vec<f64>>,
    mode: HeadMode,
}

impl CriticCache {
    /// `Q_i(o, a)` at the joint action of the forward pass.
    pub fn q_taken(&self, agent: usize) -> f64 {
        match self.mode {
            HeadMode::PerAction => self.heads[agent][self.actions[agent]],
            HeadMode::Scalar => self.heads[agent][0],
        }
    }

    pub fn attention(&self, agent: usize) -> &AttentionState {
        &self.attention[agent]
    }
}

impl Critic {
    pub fn new(config: CriticConfig, rng: &mut impl Rng) -> Self {
        let (n, e, a, h) = (config.n_lines, config.embed, config.attention, config.hidden);
        let out = config.head_out();
        let mut tensors = Vec::with_capacity(PER_AGENT * config.agents + 3);
        for i in 0..config.agents {
            tensors.push(Tensor::fan_in_uniform(format!("z{i}.w"), &[e, n], n, rng));
            tensors.push(Tensor::zeros(format!("z{i}.b"), &[e]));
            tensors.push(Tensor::fan_in_uniform(format!("q{i}.w"), &[e, 2 * n], 2 * n, rng));
            tensors.push(Tensor::zeros(format!("q{i}.b"), &[e]));
            tensors.push(Tensor::fan_in_uniform(format!("f{i}.w1"), &[h, e + a], e + a, rng));
            tensors.push(Tensor::zeros(format!("f{i}.b1"), &[h]));
            tensors.push(Tensor::fan_in_uniform(format!("f{i}.w2"), &[out, h], h, rng));
            tensors.push(Tensor::zeros(format!("f{i}.b2"), &[out]));
        }
        tensors.push(Tensor::fan_in_uniform("attn.wk", &[a, e], e, rng));
        tensors.push(Tensor::fan_in_uniform("attn.wq", &[a, e], e, rng));
        tensors.push(Tensor::fan_in_uniform("attn.wv", &[a, e], e, rng));
        Self {
            config,
            params: ParamSet::new(tensors),
        }
    }

    pub fn from_params(config: CriticConfig, params: ParamSet) -> Result<Self> {
        let mut reference = Self::new(config, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        reference.params.check_compatible(&params)?;
        reference.params = params;
        Ok(reference)
    }

    /// Zeroes every head's output layer, making all values 0.
    pub fn zero_heads(&mut self) {
        for i in 0..self.config.agents {
            let (w, b) = (self.agent_idx(i, F_W2), self.agent_idx(i, F_B2));
            self.params.tensors[w].data.fill(0.0);
            self.params.tensors[b].data.fill(0.0);
        }
    }

    fn agent_idx(&self, agent: usize, slot: usize) -> usize {
        agent * PER_AGENT + slot
    }

    fn shared_idx(&self, slot: usize) -> usize {
        self.config.agents * PER_AGENT + slot
    }

    fn data(&self, idx: usize) -> &[f64] {
        &self.params.tensors[idx].data
    }

    fn pair_input(&self, obs: &[f64], action: Option<usize>) -> Vec<f64> {
        let n = self.config.n_lines;
        let mut input = vec![0.0; 2 * n];
        input[..n].copy_from_slice(obs);
        if let Some(a) = action {
            input[n + a] = 1.0;
        }
        input
    }

    /// Softmax attention of agent `target` over every other agent's
    /// embedding, queried with `query` (an embedding).
    pub fn attention_aggregate(
        &self,
        embeddings: &[Vec<f64>],
        query: &[f64],
        target: usize,
    ) -> AttentionState {
        let a = self.config.attention;
        let k = embeddings.len();
        let wk = self.data(self.shared_idx(WK));
        let wq = self.data(self.shared_idx(WQ));
        let wv = self.data(self.shared_idx(WV));
        let qv = dense(wq, None, query, a);
        let keys: Vec<Vec<f64>> = embeddings.iter().map(|e| dense(wk, None, e, a)).collect();
        let values_pre: Vec<Vec<f64>> = embeddings.iter().map(|e| dense(wv, None, e, a)).collect();
        let values: Vec<Vec<f64>> = values_pre
            .iter()
            .map(|v| {
                let mut v = v.clone();
                leaky_inplace(&mut v);
                v
            })
            .collect();
        let others: Vec<usize> = (0..k).filter(|&j| j != target).collect();
        let mut weights = vec![0.0; k];
        let mut contribution = vec![0.0; a];
        if !others.is_empty() {
            let scores: Vec<f64> = others
                .iter()
                .map(|&j| keys[j].iter().zip(&qv).map(|(x, y)| x * y).sum())
                .collect();
            let soft = softmax(&scores);
            for (&j, w) in others.iter().zip(soft) {
                weights[j] = w;
                for (c, v) in contribution.iter_mut().zip(&values[j]) {
                    *c += w * v;
                }
            }
        }
        AttentionState {
            weights,
            contribution,
            keys,
            query: qv,
            values_pre,
            values,
        }
    }

    pub fn forward(&self, obs: &[&[f64]], actions: &[usize]) -> Result<CriticCache> {
        let cfg = &self.config;
        check_len("critic observations", cfg.agents, obs.len())?;
        check_len("critic actions", cfg.agents, actions.len())?;
        for o in obs {
            check_len("critic observation", cfg.n_lines, o.len())?;
        }
        if let Some(&bad) = actions.iter().find(|&&a| a >= cfg.n_lines) {
            return Err(crate::Error::Domain(format!("action {bad} out of range")));
        }
        let (e_dim, h_dim) = (cfg.embed, cfg.hidden);
        let out = cfg.head_out();
        let k = cfg.agents;

        let mut z_pre = Vec::with_capacity(k);
        let mut pair_inputs = Vec::with_capacity(k);
        let mut e_pre = Vec::with_capacity(k);
        let mut query_inputs = Vec::with_capacity(k);
        let mut query_pre = Vec::with_capacity(k);
        for i in 0..k {
            z_pre.push(dense(
                self.data(self.agent_idx(i, Z_W)),
                Some(self.data(self.agent_idx(i, Z_B))),
                obs[i],
                e_dim,
            ));
            let pair = self.pair_input(obs[i], Some(actions[i]));
            e_pre.push(dense(
                self.data(self.agent_idx(i, Q_W)),
                Some(self.data(self.agent_idx(i, Q_B))),
                &pair,
                e_dim,
            ));
            pair_inputs.push(pair);
            if cfg.head == HeadMode::PerAction {
                let masked = self.pair_input(obs[i], None);
                query_pre.push(dense(
                    self.data(self.agent_idx(i, Q_W)),
                    Some(self.data(self.agent_idx(i, Q_B))),
                    &masked,
                    e_dim,
                ));
                query_inputs.push(masked);
            }
        }
        let activate = |v: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            v.iter()
                .map(|x| {
                    let mut x = x.clone();
                    leaky_inplace(&mut x);
                    x
                })
                .collect()
        };
        let z = activate(&z_pre);
        let e = activate(&e_pre);
        let (query_pre, query_emb) = match cfg.head {
            HeadMode::PerAction => {
                let act = activate(&query_pre);
                (query_pre, act)
            }
            HeadMode::Scalar => (e_pre.clone(), e.clone()),
        };

        let mut attention = Vec::with_capacity(k);
        let mut head_in = Vec::with_capacity(k);
        let mut h_pre = Vec::with_capacity(k);
        let mut h = Vec::with_capacity(k);
        let mut heads = Vec::with_capacity(k);
        for i in 0..k {
            let att = self.attention_aggregate(&e, &query_emb[i], i);
            let mut input = z[i].clone();
            input.extend_from_slice(&att.contribution);
            let hp = dense(
                self.data(self.agent_idx(i, F_W1)),
                Some(self.data(self.agent_idx(i, F_B1))),
                &input,
                h_dim,
            );
            let mut ha = hp.clone();
            leaky_inplace(&mut ha);
            heads.push(dense(
                self.data(self.agent_idx(i, F_W2)),
                Some(self.data(self.agent_idx(i, F_B2))),
                &ha,
                out,
            ));
            attention.push(att);
            head_in.push(input);
            h_pre.push(hp);
            h.push(ha);
        }
        Ok(CriticCache {
            obs: obs.iter().map(|o| o.to_vec()).collect(),
            pair_inputs,
            query_inputs,
            z_pre,
            e_pre,
            e,
            query_pre,
            query_emb,
            attention,
            head_in,
            h_pre,
            h,
            actions: actions.to_vec(),
            heads,
            mode: cfg.head,
        })
    }

    /// `Q_i(o, (ã, a_{-i}))` for every candidate `ã` of every agent.
    pub fn action_values(&self, obs: &[&[f64]], actions: &[usize]) -> Result<Vec<Vec<f64>>> {
        match self.config.head {
            HeadMode::PerAction => Ok(self.forward(obs, actions)?.heads),
            HeadMode::Scalar => {
                let mut all = Vec::with_capacity(self.config.agents);
                let mut joint = actions.to_vec();
                for i in 0..self.config.agents {
                    let mut values = Vec::with_capacity(self.config.n_lines);
                    for cand in 0..self.config.n_lines {
                        joint[i] = cand;
                        values.push(self.forward(obs, &joint)?.heads[i][0]);
                    }
                    joint[i] = actions[i];
                    all.push(values);
                }
                Ok(all)
            }
        }
    }

    /// Accumulates parameter gradients given upstream gradients on every
    /// agent's head output.
    pub fn backward(&self, cache: &CriticCache, dheads: &[Vec<f64>], grads: &mut ParamSet) {
        let cfg = &self.config;
        let k = cfg.agents;
        let e_dim = cfg.embed;
        let mut de = vec![vec![0.0; e_dim]; k];
        let mut dquery = vec![vec![0.0; e_dim]; k];
        let wk_i = self.shared_idx(WK);
        let wq_i = self.shared_idx(WQ);
        let wv_i = self.shared_idx(WV);

        for i in 0..k {
            if dheads[i].iter().all(|&g| g == 0.0) {
                continue;
            }
            let (w2, b2) = (self.agent_idx(i, F_W2), self.agent_idx(i, F_B2));
            let dh = {
                let (lo, hi) = grads.tensors.split_at_mut(b2);
                dense_backward(self.data(w2), &cache.h[i], &dheads[i], &mut lo[w2].data, Some(&mut hi[0].data), true)
                    .unwrap()
            };
            let dh_pre = leaky_backward(&cache.h_pre[i], &dh);
            let (w1, b1) = (self.agent_idx(i, F_W1), self.agent_idx(i, F_B1));
            let du = {
                let (lo, hi) = grads.tensors.split_at_mut(b1);
                dense_backward(self.data(w1), &cache.head_in[i], &dh_pre, &mut lo[w1].data, Some(&mut hi[0].data), true)
                    .unwrap()
            };
            let (dz, dx) = du.split_at(e_dim);
            let dz_pre = leaky_backward(&cache.z_pre[i], dz);
            let (zw, zb) = (self.agent_idx(i, Z_W), self.agent_idx(i, Z_B));
            {
                let (lo, hi) = grads.tensors.split_at_mut(zb);
                dense_backward(self.data(zw), &cache.obs[i], &dz_pre, &mut lo[zw].data, Some(&mut hi[0].data), false);
            }

            let att = &cache.attention[i];
            let others: Vec<usize> = (0..k).filter(|&j| j != i).collect();
            if others.is_empty() {
                continue;
            }
            let mut dweights = vec![0.0; k];
            for &j in &others {
                let w = att.weights[j];
                dweights[j] = dx.iter().zip(&att.values[j]).map(|(a, b)| a * b).sum();
                let dphi: Vec<f64> = dx.iter().map(|g| g * w).collect();
                let dv_pre = leaky_backward(&att.values_pre[j], &dphi);
                let d = dense_backward(self.data(wv_i), &cache.e[j], &dv_pre, &mut grads.tensors[wv_i].data, None, true)
                    .unwrap();
                add_into(&mut de[j], &d);
            }
            let mean: f64 = others.iter().map(|&j| att.weights[j] * dweights[j]).sum();
            let mut dqv = vec![0.0; cfg.attention];
            for &j in &others {
                let ds = att.weights[j] * (dweights[j] - mean);
                let dk: Vec<f64> = att.query.iter().map(|q| ds * q).collect();
                let d = dense_backward(self.data(wk_i), &cache.e[j], &dk, &mut grads.tensors[wk_i].data, None, true)
                    .unwrap();
                add_into(&mut de[j], &d);
                for (acc, kv) in dqv.iter_mut().zip(&att.keys[j]) {
                    *acc += ds * kv;
                }
            }
            let d = dense_backward(self.data(wq_i), &cache.query_emb[i], &dqv, &mut grads.tensors[wq_i].data, None, true)
                .unwrap();
            add_into(&mut dquery[i], &d);
        }

        for j in 0..k {
            let (qw, qb) = (self.agent_idx(j, Q_W), self.agent_idx(j, Q_B));
            let mut de_j = std::mem::take(&mut de[j]);
            if cfg.head == HeadMode::Scalar {
                add_into(&mut de_j, &dquery[j]);
            }
            if de_j.iter().any(|&g| g != 0.0) {
                let de_pre = leaky_backward(&cache.e_pre[j], &de_j);
                let (lo, hi) = grads.tensors.split_at_mut(qb);
                dense_backward(self.data(qw), &cache.pair_inputs[j], &de_pre, &mut lo[qw].data, Some(&mut hi[0].data), false);
            }
            if cfg.head == HeadMode::PerAction && dquery[j].iter().any(|&g| g != 0.0) {
                let dq_pre = leaky_backward(&cache.query_pre[j], &dquery[j]);
                let (lo, hi) = grads.tensors.split_at_mut(qb);
                dense_backward(self.data(qw), &cache.query_inputs[j], &dq_pre, &mut lo[qw].data, Some(&mut hi[0].data), false);
            }
        }
    }

    /// Upstream head gradient that selects `Q_i` at the taken action.
    pub fn taken_gradient(&self, cache: &CriticCache, dq: &[f64]) -> Vec<Vec<f64>> {
        (0..self.config.agents)
            .map(|i| {
                let mut g = vec![0.0; cache.heads[i].len()];
                let idx = match self.config.head {
                    HeadMode::PerAction => cache.actions[i],
                    HeadMode::Scalar => 0,
                };
                g[idx] = dq[i];
                g
            })
            .collect()
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}
