use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gridstrike::case_io::builtin_case;
use gridstrike::neural::{Actor, ActorConfig, Adam, AdamConfig, Critic, CriticConfig};
use gridstrike::powerflow::solve_dc;
use gridstrike::trainer::critic_loss;
use gridstrike::{
    cascade::run_cascade, CascadeOptions, GridCase, LineStateVector, OperatingPoint, ReplayBuffer,
    ReplayConfig, Transition,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn case(name: &str) -> GridCase {
    builtin_case(name).expect("bundled case").expect("case parses")
}

fn power_flow(c: &mut Criterion) {
    for name in ["ieee14", "ieee118"] {
        let case = case(name);
        let states = LineStateVector::all_in_service(case.n_lines());
        let inj = OperatingPoint::base(&case).injections(&case);
        c.bench_function(&format!("dc_powerflow/{name}"), |b| {
            b.iter(|| solve_dc(black_box(&case), &states, &inj).unwrap())
        });
    }
}

fn cascade(c: &mut Criterion) {
    let case = case("ieee118");
    let base = OperatingPoint::base(&case);
    let options = CascadeOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let attacks: Vec<LineStateVector> = (0..32)
        .map(|_| {
            let mut s = LineStateVector::all_in_service(case.n_lines());
            for _ in 0..3 {
                s.set_out_of_service(rng.random_range(0..case.n_lines()));
            }
            s
        })
        .collect();
    let mut i = 0;
    c.bench_function("cascade/ieee118_three_lines", |b| {
        b.iter(|| {
            i = (i + 1) % attacks.len();
            run_cascade(&case, &attacks[i], &base, &options).unwrap()
        })
    });
}

fn replay(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut buf = ReplayBuffer::new(ReplayConfig::default()).unwrap();
    for i in 0..15_000u32 {
        buf.insert(i, 0.1 + rng.random::<f64>()).unwrap();
    }
    c.bench_function("replay/sample_128", |b| b.iter(|| buf.sample(128, &mut rng).unwrap()));
    c.bench_function("replay/sample_update_128", |b| {
        b.iter(|| {
            let batch = buf.sample(128, &mut rng).unwrap();
            let td: Vec<f64> = batch.weights.iter().map(|w| w * 3.0).collect();
            let idx = batch.indices.clone();
            buf.update_priorities(&idx, &td).unwrap();
        })
    });
}

fn networks(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in [20usize, 186] {
        let actor = Actor::new(ActorConfig::for_lines(n), &mut rng);
        let obs: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        c.bench_function(&format!("actor_forward/n{n}"), |b| {
            b.iter(|| actor.forward(black_box(&obs)).unwrap())
        });
    }

    let (n, k, batch_size) = (20, 2, 128);
    let mut critic = Critic::new(CriticConfig::new(n, k), &mut rng);
    let transitions: Vec<Transition> = (0..batch_size)
        .map(|_| {
            let mut state = LineStateVector::all_in_service(n);
            state.set_out_of_service(rng.random_range(0..n));
            let mut next_state = state.clone();
            next_state.set_out_of_service(rng.random_range(0..n));
            Transition {
                state,
                actions: (0..k).map(|_| rng.random_range(0..n)).collect(),
                next_state,
                rewards: vec![rng.random::<f64>(); k],
                done: false,
            }
        })
        .collect();
    let batch: Vec<&Transition> = transitions.iter().collect();
    let targets: Vec<Vec<f64>> = (0..batch_size).map(|_| vec![rng.random::<f64>(); k]).collect();
    let weights = vec![1.0 / batch_size as f64; batch_size];
    let mut opt = Adam::new(AdamConfig::default(), &critic.params);
    c.bench_function("critic_update/n20_k2_b128", |b| {
        b.iter(|| {
            let mut l = critic_loss(&critic, &batch, &targets, &weights).unwrap();
            opt.step(&mut critic.params, &mut l.grads).unwrap()
        })
    });
}

criterion_group!(benches, power_flow, cascade, replay, networks);
criterion_main!(benches);
