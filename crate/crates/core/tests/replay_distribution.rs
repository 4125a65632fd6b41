mod oracles;

use gridstrike::{ReplayBuffer, ReplayConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const DRAWS: usize = 200_000;

fn filled(alpha: f64, priorities: &[f64]) -> ReplayBuffer<usize> {
    let mut buf = ReplayBuffer::new(ReplayConfig {
        capacity: priorities.len(),
        alpha,
        ..ReplayConfig::default()
    })
    .unwrap();
    for (i, &p) in priorities.iter().enumerate() {
        buf.insert(i, p).unwrap();
    }
    buf
}

fn counts(buf: &ReplayBuffer<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut counts = vec![0usize; buf.len()];
    let mut drawn = 0;
    while drawn < DRAWS {
        let batch = buf.sample(100, rng).unwrap();
        for &&item in &batch.items {
            counts[item] += 1;
        }
        drawn += 100;
    }
    counts
}

/// Four priority classes of 25 entries. Entries sharing a priority are
/// exchangeable, so each class frequency and the whole distribution (L1
/// relative error) are held to 3%.
#[test]
fn proportional_frequencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let levels = [1.0, 2.0, 4.0, 8.0];
    let priorities: Vec<f64> = (0..100).map(|i| levels[i % 4]).collect();
    let buf = filled(0.6, &priorities);
    let expected = oracles::replay_probabilities(&priorities, 0.6);
    let counts = counts(&buf, &mut rng);
    let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / DRAWS as f64).collect();

    let l1: f64 = empirical.iter().zip(&expected).map(|(e, p)| (e - p).abs()).sum();
    assert!(l1 <= 0.03, "L1 relative error {l1}");
    for class in 0..levels.len() {
        let got: f64 = empirical.iter().skip(class).step_by(4).sum();
        let want: f64 = expected.iter().skip(class).step_by(4).sum();
        assert!((got - want).abs() / want <= 0.03, "class {class}: {got} vs {want}");
    }
    for (i, p) in expected.iter().enumerate() {
        assert!((buf.probability(i) - p).abs() < 1e-12);
    }
}

#[test]
fn alpha_zero_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let priorities: Vec<f64> = (0..100).map(|_| rng.random_range(0.1..10.0)).collect();
    let buf = filled(0.0, &priorities);
    let stat = oracles::chi_square_uniform(&counts(&buf, &mut rng));
    let critical = ChiSquared::new(99.0).unwrap().inverse_cdf(0.99);
    assert!(stat < critical, "chi-square {stat} >= {critical}");
}

#[test]
fn batch_weights_are_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let priorities: Vec<f64> = (0..100).map(|_| rng.random_range(0.1..10.0)).collect();
    let buf = filled(0.6, &priorities);
    for size in [1, 7, 64] {
        let batch = buf.sample(size, &mut rng).unwrap();
        assert!((batch.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let max_p = batch.probabilities.iter().cloned().fold(0.0, f64::max);
        let min_p = batch.probabilities.iter().cloned().fold(1.0, f64::min);
        let w_of = |p: f64| batch.weights[batch.probabilities.iter().position(|&q| q == p).unwrap()];
        assert!(w_of(min_p) >= w_of(max_p));
    }
}

/// List model: a plain vector of priorities updated alongside the buffer.
#[test]
fn matches_list_model_under_updates_and_eviction() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let capacity = 16;
    let mut buf = ReplayBuffer::new(ReplayConfig {
        capacity,
        ..ReplayConfig::default()
    })
    .unwrap();
    let mut model: Vec<f64> = Vec::new();
    for step in 0..200usize {
        let p = rng.random_range(0.1..5.0);
        buf.insert(step, p).unwrap();
        if model.len() < capacity {
            model.push(p);
        } else {
            model[step % capacity] = p;
        }
        if buf.len() >= 4 && step % 3 == 0 {
            let batch = buf.sample(4, &mut rng).unwrap();
            let td: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let idx = batch.indices.clone();
            drop(batch);
            buf.update_priorities(&idx, &td).unwrap();
            for (i, d) in idx.iter().zip(&td) {
                model[i.slot] = d.abs() + 1e-6;
            }
        }
        let expected = oracles::replay_probabilities(&model, 0.6);
        for (slot, (got, want)) in buf.priorities().iter().zip(&model).enumerate() {
            assert!((got - want).abs() < 1e-12, "slot {slot}");
            assert!((buf.probability(slot) - expected[slot]).abs() < 1e-9);
        }
    }
}
