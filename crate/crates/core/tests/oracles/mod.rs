//! Independent reference computations shared by the integration tests and
//! the acceptance harness. Nothing here calls into the code under test
//! beyond reading plain data.
#![allow(dead_code)]

use gridstrike::grid::{Bus, Generator, Line};
use gridstrike::neural::{Critic, HeadMode};
use gridstrike::{GridCase, LineStateVector, OperatingPoint};

/// Buses 0, 1, 2; lines 0-2, 0-1, 1-2 with equal reactance; 100 MW from
/// bus 0 to a load at bus 2.
pub fn triangle() -> GridCase {
    let line = |id, from_bus, to_bus| Line {
        id,
        from_bus,
        to_bus,
        reactance: 0.1,
        capacity: 500.0,
    };
    GridCase {
        name: "triangle".into(),
        base_mva: 100.0,
        buses: vec![
            Bus { id: 0, load: 0.0 },
            Bus { id: 1, load: 0.0 },
            Bus { id: 2, load: 100.0 },
        ],
        lines: vec![line(0, 0, 2), line(1, 0, 1), line(2, 1, 2)],
        generators: vec![Generator {
            bus: 0,
            output: 100.0,
            max_output: 200.0,
            ramp_limit: None,
        }],
    }
}

/// Hand-solved triangle flows: the direct path has half the reactance of
/// the two-line path, so it carries two thirds.
pub const TRIANGLE_FLOWS: [f64; 3] = [200.0 / 3.0, 100.0 / 3.0, 100.0 / 3.0];

pub fn injections(case: &GridCase, point: &OperatingPoint) -> Vec<f64> {
    let mut inj = vec![0.0; case.buses.len()];
    for (b, d) in point.served_load.iter().enumerate() {
        inj[b] -= d;
    }
    for (g, p) in case.generators.iter().zip(&point.dispatch) {
        inj[g.bus] += p;
    }
    inj
}

/// Largest `|injection − Σ outgoing flow|` over buses.
pub fn kcl_residual(case: &GridCase, injections: &[f64], flows: &[Option<f64>]) -> f64 {
    let mut net = vec![0.0; case.buses.len()];
    for (line, f) in case.lines.iter().zip(flows) {
        if let Some(f) = f {
            net[line.from_bus] += f;
            net[line.to_bus] -= f;
        }
    }
    net.iter()
        .zip(injections)
        .map(|(n, i)| (n - i).abs())
        .fold(0.0, f64::max)
}

/// Connected components by repeated relaxation of bus labels.
pub fn island_labels(case: &GridCase, states: &LineStateVector) -> Vec<usize> {
    let mut label: Vec<usize> = (0..case.buses.len()).collect();
    loop {
        let mut changed = false;
        for (l, line) in case.lines.iter().enumerate() {
            if !states.bits()[l] {
                continue;
            }
            let m = label[line.from_bus].min(label[line.to_bus]);
            for b in [line.from_bus, line.to_bus] {
                if label[b] != m {
                    label[b] = m;
                    changed = true;
                }
            }
        }
        if !changed {
            return label;
        }
    }
}

/// Largest `|generation − served load|` over islands.
pub fn island_imbalance(case: &GridCase, states: &LineStateVector, point: &OperatingPoint) -> f64 {
    let label = island_labels(case, states);
    let mut balance = vec![0.0; case.buses.len()];
    for (b, d) in point.served_load.iter().enumerate() {
        balance[label[b]] -= d;
    }
    for (g, p) in case.generators.iter().zip(&point.dispatch) {
        balance[label[g.bus]] += p;
    }
    balance.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.01 * x
    }
}

fn affine(critic: &Critic, w: &str, b: Option<&str>, x: &[f64]) -> Vec<f64> {
    let wt = critic.params.get(w).unwrap();
    let (rows, cols) = (wt.shape[0], wt.shape[1]);
    assert_eq!(cols, x.len());
    let mut y = vec![0.0; rows];
    for r in 0..rows {
        for c in 0..cols {
            y[r] += wt.data[r * cols + c] * x[c];
        }
        if let Some(b) = b {
            y[r] += critic.params.get(b).unwrap().data[r];
        }
    }
    y
}

fn pair(obs: &[f64], action: Option<usize>) -> Vec<f64> {
    let mut v = obs.to_vec();
    let mut onehot = vec![0.0; obs.len()];
    if let Some(a) = action {
        onehot[a] = 1.0;
    }
    v.extend(onehot);
    v
}

pub struct CriticReference {
    pub heads: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
}

/// Step-by-step critic forward pass read straight from the named tensors.
pub fn critic_reference(critic: &Critic, obs: &[Vec<f64>], actions: &[usize]) -> CriticReference {
    let k = obs.len();
    let embed = |i: usize, a: Option<usize>| -> Vec<f64> {
        affine(critic, &format!("q{i}.w"), Some(&format!("q{i}.b")), &pair(&obs[i], a))
            .into_iter()
            .map(leaky)
            .collect()
    };
    let e: Vec<Vec<f64>> = (0..k).map(|i| embed(i, Some(actions[i]))).collect();
    let mut out = CriticReference {
        heads: Vec::new(),
        weights: Vec::new(),
    };
    for i in 0..k {
        let z: Vec<f64> = affine(critic, &format!("z{i}.w"), Some(&format!("z{i}.b")), &obs[i])
            .into_iter()
            .map(leaky)
            .collect();
        let query_embedding = match critic.config.head {
            HeadMode::PerAction => embed(i, None),
            HeadMode::Scalar => e[i].clone(),
        };
        let q = affine(critic, "attn.wq", None, &query_embedding);
        let mut scores = Vec::new();
        for (j, ej) in e.iter().enumerate() {
            if j != i {
                let key = affine(critic, "attn.wk", None, ej);
                scores.push((j, key.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>()));
            }
        }
        let top = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = scores.iter().map(|s| (s.1 - top).exp()).sum();
        let mut weights = vec![0.0; k];
        let mut x = vec![0.0; critic.config.attention];
        for &(j, s) in &scores {
            let w = (s - top).exp() / denom;
            weights[j] = w;
            let v: Vec<f64> = affine(critic, "attn.wv", None, &e[j]).into_iter().map(leaky).collect();
            for (xi, vi) in x.iter_mut().zip(v) {
                *xi += w * vi;
            }
        }
        let mut input = z;
        input.extend(x);
        let h: Vec<f64> = affine(critic, &format!("f{i}.w1"), Some(&format!("f{i}.b1")), &input)
            .into_iter()
            .map(leaky)
            .collect();
        out.heads
            .push(affine(critic, &format!("f{i}.w2"), Some(&format!("f{i}.b2")), &h));
        out.weights.push(weights);
    }
    out
}

/// `p_i^α / Σ_k p_k^α`.
pub fn replay_probabilities(priorities: &[f64], alpha: f64) -> Vec<f64> {
    let powered: Vec<f64> = priorities.iter().map(|p| p.powf(alpha)).collect();
    let total: f64 = powered.iter().sum();
    powered.iter().map(|p| p / total).collect()
}

/// Pearson statistic against equal expected counts.
pub fn chi_square_uniform(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let expected = n as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum()
}
