use gridstrike::neural::{gradient_check, Actor, ActorConfig, Critic, CriticConfig, ParamSet, Probe};
use gridstrike::trainer::{actor_surrogate, critic_loss};
use gridstrike::{LineStateVector, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 10;
const K: usize = 2;
const B: usize = 8;
const TOLERANCE: f64 = 1e-4;

/// Moves every parameter, biases included, off zero so no activation sits
/// exactly on the leaky-ReLU kink.
fn jitter(params: &mut ParamSet, rng: &mut ChaCha8Rng) {
    for t in &mut params.tensors {
        t.data.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    }
}

fn random_states(rng: &mut ChaCha8Rng) -> LineStateVector {
    LineStateVector::from_bits((0..N).map(|_| rng.random::<f64>() < 0.8).collect())
}

fn transitions(rng: &mut ChaCha8Rng) -> Vec<Transition> {
    (0..B)
        .map(|_| Transition {
            state: random_states(rng),
            actions: (0..K).map(|_| rng.random_range(0..N)).collect(),
            next_state: random_states(rng),
            rewards: vec![rng.random(); K],
            done: rng.random::<f64>() < 0.3,
        })
        .collect()
}

#[test]
fn critic_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let config = CriticConfig::new(N, K);
    let mut critic = Critic::new(config, &mut rng);
    jitter(&mut critic.params, &mut rng);
    let data = transitions(&mut rng);
    let batch: Vec<&Transition> = data.iter().collect();
    let targets: Vec<Vec<f64>> = (0..B).map(|_| (0..K).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let raw: Vec<f64> = (0..B).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();

    let analytic = critic_loss(&critic, &batch, &targets, &weights).unwrap().grads;
    let mut params = critic.params.clone();
    let report = gradient_check(
        &mut params,
        &analytic,
        |p: &ParamSet| {
            let c = Critic {
                config,
                params: p.clone(),
            };
            critic_loss(&c, &batch, &targets, &weights).unwrap().loss
        },
        1e-6,
        1e-6,
        &Probe::Strided { stride: 7, offset: 3 },
    )
    .unwrap();
    assert!(report.probed > 1000);
    assert!(report.max_relative_error <= TOLERANCE, "{report:?}");
}

#[test]
fn actor_surrogate_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut actors: Vec<Actor> = (0..K).map(|_| Actor::new(ActorConfig::for_lines(N), &mut rng)).collect();
    for a in &mut actors {
        jitter(&mut a.params, &mut rng);
    }
    let states: Vec<Vec<f64>> = (0..B).map(|_| random_states(&mut rng).to_features()).collect();
    let actions: Vec<Vec<usize>> = (0..B).map(|_| (0..K).map(|_| rng.random_range(0..N)).collect()).collect();
    let rho: Vec<Vec<f64>> = (0..B).map(|_| (0..K).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let (_, grads) = actor_surrogate(&actors, &states, &actions, &rho).unwrap();
    for i in 0..K {
        let mut params = actors[i].params.clone();
        let report = gradient_check(
            &mut params,
            &grads[i],
            |p: &ParamSet| {
                let mut copy = actors.clone();
                copy[i].params = p.clone();
                actor_surrogate(&copy, &states, &actions, &rho).unwrap().0
            },
            1e-5,
            1e-6,
            &Probe::Strided { stride: 3, offset: i },
        )
        .unwrap();
        assert!(report.max_relative_error <= TOLERANCE, "actor {i}: {report:?}");
    }
}
