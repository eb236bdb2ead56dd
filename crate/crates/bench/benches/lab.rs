//! Hot-path benchmarks: mechanism runs, equilibrium verification, exhaustive
//! OPT and the LP relaxation.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use lwlab_core::*;

fn bench_mechanism_runs(c: &mut Criterion) {
    let inst = gen_tightness(0.1).unwrap();
    let profile = BidProfile {
        bids: vec![vec![vec![0.0], vec![0.0]], vec![vec![9.95], vec![0.05]]],
    };
    let ties = TieBreakRule::lexicographic(2);
    c.bench_function("first_price_run_2x2", |b| {
        b.iter(|| run_first_price(black_box(&inst.game), black_box(&profile), &ties).unwrap())
    });
    c.bench_function("second_price_run_2x2", |b| {
        b.iter(|| run_second_price(black_box(&inst.game), black_box(&profile), &ties).unwrap())
    });
}

fn bench_verification(c: &mut Criterion) {
    let opts = SearchOptions::default();
    let tight = gen_tightness(0.1).unwrap();
    c.bench_function("verify_tightness_second_price", |b| {
        b.iter(|| {
            verify_mixed_ne(&tight.game, tight.mechanism, &tight.profile, &tight.ties, &opts)
                .unwrap()
        })
    });
    let stampede = gen_rand_tiebreak_lb(4).unwrap();
    c.bench_function("verify_stampede_uniform_ties_n4", |b| {
        b.iter(|| {
            verify_mixed_ne(
                &stampede.game,
                stampede.mechanism,
                &stampede.profile,
                &stampede.ties,
                &opts,
            )
            .unwrap()
        })
    });
}

fn bench_welfare(c: &mut Criterion) {
    let stampede = gen_rand_tiebreak_lb(6).unwrap();
    c.bench_function("opt_exact_6_shares", |b| {
        b.iter(|| opt_exact(black_box(&stampede.game)).unwrap())
    });
    let mixed = gen_mixed_shares_lb(7, 2).unwrap();
    c.bench_function("solve_llp_7x7", |b| {
        b.iter(|| solve_llp(black_box(&mixed.game)).unwrap())
    });
}

fn bench_house_distribution(c: &mut Criterion) {
    let inst = gen_rand_tiebreak_shares_lb(6, 2).unwrap();
    let actions: Vec<Action> = inst.profile.strategies.iter()
        .map(|row| row.support[0].0.clone())
        .collect();
    c.bench_function("house_tie_expansion_n6_h2", |b| {
        b.iter(|| {
            outcome_distribution(
                black_box(&inst.game),
                Mechanism::House,
                black_box(&actions),
                &inst.ties,
                1_000_000,
            )
            .unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_mechanism_runs,
    bench_verification,
    bench_welfare,
    bench_house_distribution
);
criterion_main!(benches);
