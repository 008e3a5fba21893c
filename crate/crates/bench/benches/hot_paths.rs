use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssrtb_bench::{market_ad, random_state};
use ssrtb_core::dqn::{compute_targets, train_step, RmsProp, DEFAULT_LAYER_SIZES};
use ssrtb_core::simulator::{generate_day, run_episode, DayProfile};
use ssrtb_core::{AuctionConfig, LinearBidPolicy, QNetwork, Transition, FEATURE_DIM};

fn network(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = QNetwork::new(&DEFAULT_LAYER_SIZES, &mut rng).unwrap();
    let state = random_state(&mut rng);
    c.bench_function("q_forward", |b| b.iter(|| net.forward(black_box(&state.g))));

    let batch = Array2::from_shape_fn((300, FEATURE_DIM), |_| rng.random_range(0.0..1.0));
    c.bench_function("q_forward_batch_300", |b| b.iter(|| net.forward_batch(black_box(batch.view()))));

    let transitions: Vec<Transition> = (0..300)
        .map(|_| Transition {
            state: random_state(&mut rng),
            action: rng.random_range(0..100),
            reward: rng.random_range(0.0..5.0),
            next: Some(random_state(&mut rng)),
        })
        .collect();
    let refs: Vec<&Transition> = transitions.iter().collect();
    let target = net.clone();
    c.bench_function("train_step_300", |b| {
        b.iter_batched(
            || (net.clone(), RmsProp::new(&net, 1e-4, 0.95, 1e-6)),
            |(mut n, mut opt)| {
                let targets = compute_targets(&refs, &target, 1.0);
                train_step(&mut n, &mut opt, &refs, &targets).unwrap()
            },
            BatchSize::LargeInput,
        )
    });
}

fn simulator(c: &mut Criterion) {
    let profile = DayProfile::default();
    let ads = [market_ad("a")];
    c.bench_function("generate_day", |b| b.iter(|| generate_day(black_box(7), &profile, &ads).unwrap()));

    let log = generate_day(7, &profile, &ads).unwrap();
    let config = AuctionConfig::default();
    c.bench_function("run_episode", |b| {
        b.iter(|| run_episode(&log, &"a".into(), LinearBidPolicy::new(10.0).unwrap(), 100.0, &config).unwrap())
    });
}

criterion_group!(benches, network, simulator);
criterion_main!(benches);
