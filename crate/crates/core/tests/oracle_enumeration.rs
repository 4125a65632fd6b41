use std::sync::Arc;

use gridstrike::case_io::builtin_case;
use gridstrike::{brute_force, AttackEnv, CascadeOptions, DefenseSet, GameConfig};

/// Plays every one of the N^(K·M) joint action sequences.
fn naive_max(game: &GameConfig) -> (f64, Vec<Vec<usize>>) {
    let case = Arc::new(builtin_case("ieee14").unwrap().unwrap());
    let n = case.n_lines();
    let budget = game.attackers * game.stages;
    let mut env = AttackEnv::new(case, game.clone(), CascadeOptions::default()).unwrap();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut digits = vec![0usize; budget];
    loop {
        env.reset();
        let mut loss = 0.0;
        let joints: Vec<Vec<usize>> = digits.chunks(game.attackers).map(<[usize]>::to_vec).collect();
        for j in &joints {
            loss += env.step(j).unwrap().reward.loss_mw;
        }
        if loss > best.0 + 1e-9 {
            best = (loss, joints);
        }
        let mut pos = 0;
        while pos < budget {
            digits[pos] += 1;
            if digits[pos] < n {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
        if pos == budget {
            return best;
        }
    }
}

fn game(defense: DefenseSet) -> GameConfig {
    GameConfig {
        attackers: 2,
        stages: 2,
        defense,
        ..GameConfig::default()
    }
}

#[test]
fn brute_force_matches_full_enumeration() {
    let case = builtin_case("ieee14").unwrap().unwrap();
    for defense in [DefenseSet::none(), [0usize, 1].into_iter().collect()] {
        let g = game(defense);
        let r = brute_force(&case, &g, &CascadeOptions::default()).unwrap();
        let (best, _) = naive_max(&g);
        assert!((r.best_loss_mw - best).abs() <= 1e-6, "{} vs {best}", r.best_loss_mw);
        let replay = gridstrike::oracle::sequence_loss(&case, &g, &CascadeOptions::default(), &r.best_sequence).unwrap();
        assert!((replay - r.best_loss_mw).abs() <= 1e-9);
    }
}
