//! Exhaustive search for the most damaging multistage attack.
//!
//! At every stage only the set of lines the joint action actually removes
//! matters (already-tripped and protected lines are no-ops, and duplicates
//! collapse), so the search branches over distinct effective sets of at
//! most K live lines instead of all `N^K` joint actions.

use serde::{Deserialize, Serialize};

use crate::cascade::{apply_attacks, run_cascade, AttackAction, CascadeOptions, OperatingPoint};
use crate::env::GameConfig;
use crate::error::Result;
use crate::grid::{GridCase, LineStateVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Largest total generation loss over the episode.
    pub best_loss_mw: f64,
    pub best_fraction: f64,
    /// One maximizing joint action per stage.
    pub best_sequence: Vec<Vec<usize>>,
    /// Cascade simulations run.
    pub evaluated: u64,
}

/// Total generation loss of a fixed joint-action sequence.
pub fn sequence_loss(
    case: &GridCase,
    config: &GameConfig,
    options: &CascadeOptions,
    joint_actions: &[Vec<usize>],
) -> Result<f64> {
    let mut states = LineStateVector::all_in_service(case.n_lines());
    let mut point = OperatingPoint::base(case);
    let mut loss = 0.0;
    for joint in joint_actions {
        let attacks: Vec<AttackAction> = joint
            .iter()
            .enumerate()
            .map(|(attacker, &line)| AttackAction { attacker, line })
            .collect();
        let attacked = apply_attacks(&states, &attacks, &config.defense)?;
        let result = run_cascade(case, &attacked, &point, options)?;
        loss += result.generation_loss;
        states = result.next_states;
        point = result.point;
    }
    Ok(loss)
}

pub fn brute_force(
    case: &GridCase,
    config: &GameConfig,
    options: &CascadeOptions,
) -> Result<OracleResult> {
    config.check(case.n_lines())?;
    let mut search = Search {
        case,
        config,
        options,
        evaluated: 0,
    };
    let states = LineStateVector::all_in_service(case.n_lines());
    let point = OperatingPoint::base(case);
    let (best, seq) = search.stage(&states, &point, config.stages)?;
    let total = point.served_generation();
    Ok(OracleResult {
        best_loss_mw: best,
        best_fraction: if total > 0.0 { best / total } else { 0.0 },
        best_sequence: seq.into_iter().rev().collect(),
        evaluated: search.evaluated,
    })
}

struct Search<'a> {
    case: &'a GridCase,
    config: &'a GameConfig,
    options: &'a CascadeOptions,
    evaluated: u64,
}

impl Search<'_> {
    /// Best loss over the remaining stages; the sequence comes back reversed.
    fn stage(
        &mut self,
        states: &LineStateVector,
        point: &OperatingPoint,
        remaining: usize,
    ) -> Result<(f64, Vec<Vec<usize>>)> {
        if remaining == 0 {
            return Ok((0.0, Vec::new()));
        }
        let k = self.config.attackers;
        let live: Vec<usize> = (0..states.len())
            .filter(|&l| states.is_in_service(l) && !self.config.defense.contains(l))
            .collect();
        let dead = (0..states.len()).find(|&l| !live.contains(&l));

        let mut best: Option<(f64, Vec<Vec<usize>>)> = None;
        let mut consider = |this: &mut Self, set: &[usize]| -> Result<()> {
            let joint = pad_joint(set, k, dead);
            let mut attacked = states.clone();
            for &l in set {
                attacked.set_out_of_service(l);
            }
            let result = run_cascade(this.case, &attacked, point, this.options)?;
            this.evaluated += 1;
            let (rest, mut seq) = this.stage(&result.next_states, &result.point, remaining - 1)?;
            let total = result.generation_loss + rest;
            if best.as_ref().is_none_or(|(b, _)| total > *b + 1e-9) {
                seq.push(joint);
                best = Some((total, seq));
            }
            Ok(())
        };

        if dead.is_some() {
            consider(self, &[])?;
        }
        let mut combo = Vec::with_capacity(k);
        for size in 1..=k.min(live.len()) {
            for_each_combination(&live, size, &mut combo, 0, &mut |set| consider(self, set))?;
        }
        Ok(best.unwrap_or((0.0, vec![vec![0; k]])))
    }
}

/// A joint action realizing exactly `set`: remaining attackers repeat a line
/// already in the set, or hit a dead line when the set is empty.
fn pad_joint(set: &[usize], k: usize, dead: Option<usize>) -> Vec<usize> {
    let filler = set.first().copied().or(dead).unwrap_or(0);
    let mut joint = set.to_vec();
    joint.resize(k, filler);
    joint
}

fn for_each_combination(
    items: &[usize],
    size: usize,
    current: &mut Vec<usize>,
    start: usize,
    f: &mut impl FnMut(&[usize]) -> Result<()>,
) -> Result<()> {
    if current.len() == size {
        return f(current);
    }
    let need = size - current.len();
    for i in start..=items.len().saturating_sub(need) {
        current.push(items[i]);
        for_each_combination(items, size, current, i + 1, f)?;
        current.pop();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::DefenseSet;
    use crate::grid::fixtures;

    fn game(k: usize, m: usize) -> GameConfig {
        GameConfig {
            attackers: k,
            stages: m,
            ..GameConfig::default()
        }
    }

    #[test]
    fn combinations_count() {
        let mut n = 0;
        for_each_combination(&[0, 1, 2, 3, 4], 2, &mut Vec::new(), 0, &mut |_| {
            n += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(n, 10);
    }

    #[test]
    fn matches_naive_enumeration_on_triangle() {
        let case = fixtures::triangle();
        let opts = CascadeOptions::default();
        let cfg = game(1, 2);
        let oracle = brute_force(&case, &cfg, &opts).unwrap();
        let mut best: f64 = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                best = best.max(sequence_loss(&case, &cfg, &opts, &[vec![a], vec![b]]).unwrap());
            }
        }
        assert!((oracle.best_loss_mw - best).abs() < 1e-9);
        let replay = sequence_loss(&case, &cfg, &opts, &oracle.best_sequence).unwrap();
        assert!((replay - best).abs() < 1e-9);
    }

    #[test]
    fn protecting_everything_means_no_loss() {
        let case = fixtures::triangle();
        let cfg = GameConfig {
            defense: DefenseSet::from_iter([0, 1, 2]),
            ..game(2, 1)
        };
        let r = brute_force(&case, &cfg, &CascadeOptions::default()).unwrap();
        assert_eq!(r.best_loss_mw, 0.0);
    }
}
