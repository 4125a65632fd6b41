//! Greedy execution of trained attackers and frequency-based defense
//! planning.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cascade::{CascadeOptions, DefenseSet};
use crate::env::{AttackEnv, GameConfig};
use crate::error::{check_len, Error, Result};
use crate::grid::GridCase;
use crate::policy::{AttackerPolicy, Method};
use crate::stats::{mean_ci, MeanCi};
use crate::trainer::{train_method, TrainConfig};

/// Lines chosen by every attacker in one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSequence {
    /// `per_attacker[i][t]` is the line attacker i targeted at stage t.
    pub per_attacker: Vec<Vec<usize>>,
    pub loss_mw: f64,
    pub loss_fraction: f64,
}

impl AttackSequence {
    pub fn joint(&self, stage: usize) -> Vec<usize> {
        self.per_attacker.iter().map(|s| s[stage]).collect()
    }

    pub fn stages(&self) -> usize {
        self.per_attacker.first().map_or(0, Vec::len)
    }

    /// Union over attackers and stages.
    pub fn line_set(&self) -> BTreeSet<usize> {
        self.per_attacker.iter().flatten().copied().collect()
    }
}

/// Plays one episode with every attacker acting greedily.
pub fn execute(policy: &AttackerPolicy, env: &mut AttackEnv) -> Result<AttackSequence> {
    policy.check_env(env)?;
    let k = policy.attackers();
    let mut per_attacker = vec![Vec::new(); k];
    let mut obs = env.reset();
    let mut loss = 0.0;
    loop {
        let joint = policy.act_greedy(&obs)?;
        for (seq, a) in per_attacker.iter_mut().zip(&joint) {
            seq.push(*a);
        }
        let out = env.step(&joint)?;
        loss += out.reward.loss_mw;
        obs = out.observation;
        if out.done {
            break;
        }
    }
    let total = env.total_generation();
    Ok(AttackSequence {
        per_attacker,
        loss_mw: loss,
        loss_fraction: if total > 0.0 { loss / total } else { 0.0 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub counts: Vec<usize>,
    pub frequencies: Vec<f64>,
    pub experiments: usize,
}

/// Each line counts once per experiment in which any attacker targeted it.
pub fn aggregate_frequencies(n_lines: usize, experiments: &[AttackSequence]) -> Result<FrequencyTable> {
    if experiments.is_empty() {
        return Err(Error::Domain("need at least one experiment".into()));
    }
    let mut counts = vec![0usize; n_lines];
    for seq in experiments {
        for l in seq.line_set() {
            if l >= n_lines {
                return Err(Error::Domain(format!("line {l} out of range")));
            }
            counts[l] += 1;
        }
    }
    let h = experiments.len();
    Ok(FrequencyTable {
        frequencies: counts.iter().map(|&c| c as f64 / h as f64).collect(),
        counts,
        experiments: h,
    })
}

/// Euclidean distance between two frequency vectors.
pub fn stability_distance(prev: &[f64], curr: &[f64]) -> Result<f64> {
    check_len("frequency vector", prev.len(), curr.len())?;
    Ok(prev
        .iter()
        .zip(curr)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// The `w` highest-frequency lines, ties to the lower id, in ascending id
/// order.
pub fn top_lines(frequencies: &[f64], w: usize) -> Result<Vec<usize>> {
    if w > frequencies.len() {
        return Err(Error::Domain(format!(
            "cannot protect {w} of {} lines",
            frequencies.len()
        )));
    }
    let mut order: Vec<usize> = (0..frequencies.len()).collect();
    order.sort_by(|&a, &b| frequencies[b].total_cmp(&frequencies[a]).then(a.cmp(&b)));
    let mut top = order[..w].to_vec();
    top.sort_unstable();
    Ok(top)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefensePlan {
    pub selected_lines: Vec<usize>,
    pub frequencies: Vec<f64>,
    pub h: usize,
    pub stability_trace: Vec<f64>,
}

impl DefensePlan {
    pub fn defense_set(&self) -> DefenseSet {
        self.selected_lines.iter().copied().collect()
    }
}

pub fn select_defense(table: &FrequencyTable, w: usize) -> Result<DefensePlan> {
    Ok(DefensePlan {
        selected_lines: top_lines(&table.frequencies, w)?,
        frequencies: table.frequencies.clone(),
        h: table.experiments,
        stability_trace: Vec::new(),
    })
}

/// `{0, s, 2s, …}` with `s = ceil(N / W)`: W evenly spaced line ids.
pub fn spaced_defense(n_lines: usize, w: usize) -> Result<DefenseSet> {
    if w == 0 {
        return Ok(DefenseSet::none());
    }
    if w > n_lines {
        return Err(Error::Domain(format!("cannot protect {w} of {n_lines} lines")));
    }
    let step = n_lines.div_ceil(w);
    Ok((0..w).map(|i| i * step).filter(|&l| l < n_lines).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefenseConfig {
    /// W.
    pub resources: usize,
    pub max_experiments: usize,
    /// Consecutive experiments with an unchanged top-W set.
    pub stable_experiments: usize,
    pub distance_threshold: f64,
    /// Attacker retrainings per evaluated defense.
    pub repetitions: usize,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            resources: 9,
            max_experiments: 15,
            stable_experiments: 3,
            distance_threshold: 0.05,
            repetitions: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseRun {
    pub plan: DefensePlan,
    pub experiments: Vec<AttackSequence>,
    pub stopped_early: bool,
}

/// Runs experiments `0, 1, …` through `experiment` until the top-W set has
/// been unchanged for the configured number of consecutive experiments with
/// the last frequency shift below the threshold, or the cap is reached.
pub fn plan_defense(
    n_lines: usize,
    config: &DefenseConfig,
    mut experiment: impl FnMut(usize) -> Result<AttackSequence>,
) -> Result<DefenseRun> {
    let mut experiments = Vec::new();
    let mut trace = Vec::new();
    let mut prev: Option<(Vec<f64>, Vec<usize>)> = None;
    let mut unchanged = 0;
    let mut stopped_early = false;
    for h in 0..config.max_experiments.max(1) {
        experiments.push(experiment(h)?);
        let table = aggregate_frequencies(n_lines, &experiments)?;
        let top = top_lines(&table.frequencies, config.resources)?;
        if let Some((pf, pt)) = &prev {
            let d = stability_distance(pf, &table.frequencies)?;
            trace.push(d);
            unchanged = if *pt == top { unchanged + 1 } else { 0 };
            if unchanged >= config.stable_experiments && d < config.distance_threshold {
                stopped_early = h + 1 < config.max_experiments;
                break;
            }
        }
        prev = Some((table.frequencies, top));
    }
    let table = aggregate_frequencies(n_lines, &experiments)?;
    let mut plan = select_defense(&table, config.resources)?;
    plan.stability_trace = trace;
    Ok(DefenseRun {
        plan,
        experiments,
        stopped_early,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseEvaluation {
    pub defense: Vec<usize>,
    pub losses_mw: Vec<f64>,
    pub summary: MeanCi,
}

/// Trains and greedily executes a fresh attacker `repetitions` times
/// against `defense` (seeds `train.seed + r`) and summarizes the losses.
pub fn evaluate_defense(
    case: Arc<GridCase>,
    defense: &DefenseSet,
    method: Method,
    game: &GameConfig,
    train: &TrainConfig,
    cascade: CascadeOptions,
    repetitions: usize,
) -> Result<DefenseEvaluation> {
    if repetitions == 0 {
        return Err(Error::Domain("repetitions must be at least 1".into()));
    }
    let game = GameConfig {
        defense: defense.clone(),
        ..game.clone()
    };
    let mut losses = Vec::with_capacity(repetitions);
    for r in 0..repetitions {
        let cfg = TrainConfig {
            seed: train.seed + r as u64,
            ..train.clone()
        };
        let run = train_method(method, case.clone(), &game, &cfg, cascade, |_| {})?;
        let mut env = AttackEnv::new(case.clone(), run.game.clone(), cascade)?;
        losses.push(execute(&run.policy, &mut env)?.loss_mw);
    }
    Ok(DefenseEvaluation {
        defense: defense.protected_lines.iter().copied().collect(),
        summary: mean_ci(&losses, 0.95),
        losses_mw: losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(lines: &[&[usize]]) -> AttackSequence {
        AttackSequence {
            per_attacker: lines.iter().map(|l| l.to_vec()).collect(),
            loss_mw: 0.0,
            loss_fraction: 0.0,
        }
    }

    #[test]
    fn single_experiment_frequencies() {
        let t = aggregate_frequencies(5, &[seq(&[&[1, 3], &[3, 4]])]).unwrap();
        assert_eq!(t.frequencies, vec![0.0, 1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn shared_line_counts_once() {
        let t = aggregate_frequencies(3, &[seq(&[&[2], &[2]]), seq(&[&[0], &[2]])]).unwrap();
        assert_eq!(t.counts, vec![1, 0, 2]);
        assert_eq!(t.frequencies, vec![0.5, 0.0, 1.0]);
    }

    #[test]
    fn distance_cases() {
        assert_eq!(stability_distance(&[0.1, 0.2], &[0.1, 0.2]).unwrap(), 0.0);
        assert!((stability_distance(&[0.5, 0.2], &[0.4, 0.2]).unwrap() - 0.1).abs() < 1e-15);
        assert!(stability_distance(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn ties_select_low_ids() {
        assert_eq!(top_lines(&[0.5; 10], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(top_lines(&[0.1, 0.9, 0.9, 0.3], 2).unwrap(), vec![1, 2]);
        assert!(top_lines(&[0.1], 2).is_err());
    }

    #[test]
    fn spaced_set_for_186_lines() {
        let s = spaced_defense(186, 9).unwrap();
        let lines: Vec<usize> = s.protected_lines.into_iter().collect();
        assert_eq!(lines, vec![0, 21, 42, 63, 84, 105, 126, 147, 168]);
    }

    #[test]
    fn planning_stops_once_stable() {
        let cfg = DefenseConfig {
            resources: 1,
            ..DefenseConfig::default()
        };
        let run = plan_defense(4, &cfg, |_| Ok(seq(&[&[2]]))).unwrap();
        // Distances are 0 from the second experiment on; three unchanged
        // comparisons need four experiments.
        assert_eq!(run.plan.h, 4);
        assert!(run.stopped_early);
        assert_eq!(run.plan.selected_lines, vec![2]);
        assert_eq!(run.plan.stability_trace, vec![0.0; 3]);
    }

    #[test]
    fn planning_caps_experiments() {
        let cfg = DefenseConfig {
            resources: 1,
            max_experiments: 5,
            ..DefenseConfig::default()
        };
        let run = plan_defense(6, &cfg, |h| Ok(seq(&[&[h]]))).unwrap();
        assert_eq!(run.plan.h, 5);
        assert!(!run.stopped_early);
    }
}
