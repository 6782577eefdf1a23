use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use imbp_core::path::Discard;
use imbp_core::rng::channel;
use imbp_core::{
    build_feller_family, euler_simulate, simulate_gillespie, simulate_time_change,
    transient_distribution, ContinuousModelSpec, DiscreteModelSpec, EngineOptions, EulerConfig,
    Matrix, OffspringPmf, RandomWalkSpec, SeedTree, TimeChangeOptions,
};

fn competition() -> DiscreteModelSpec {
    DiscreteModelSpec {
        lambda: vec![1.0, 0.8],
        offspring: vec![
            OffspringPmf::new([(vec![0, 0], 0.4), (vec![2, 0], 0.4), (vec![1, 1], 0.2)]),
            OffspringPmf::new([(vec![0, 0], 0.5), (vec![0, 2], 0.5)]),
        ],
        interaction: Matrix::from_rows(&[&[0.0, -0.5], &[0.2, 0.0]]),
    }
}

fn discrete(c: &mut Criterion) {
    let mut group = c.benchmark_group("discrete");
    for n in [100u64, 1000] {
        let fam = build_feller_family(0.5, 0.0, &[n]).unwrap();
        let spec = fam.model(n);
        let z = fam.initial_state(n);
        let horizon = n as f64;
        let opts = EngineOptions::default();
        let mut path = 0;
        group.bench_with_input(BenchmarkId::new("gillespie_feller", n), &n, |b, _| {
            b.iter(|| {
                path += 1;
                let mut rng = SeedTree::new(1).stream(path, channel::GILLESPIE);
                simulate_gillespie(&spec, &z, horizon, &mut rng, &opts, &mut Discard, None).unwrap()
            })
        });
        let walks = RandomWalkSpec::all_from_model(&spec);
        let tc = TimeChangeOptions::default();
        group.bench_with_input(BenchmarkId::new("time_change_feller", n), &n, |b, _| {
            b.iter(|| {
                path += 1;
                simulate_time_change(&spec, &z, horizon, &walks, SeedTree::new(2), path, &tc, &mut Discard)
                    .unwrap()
            })
        });
    }
    let spec = competition();
    let opts = EngineOptions::default();
    let mut path = 0;
    group.bench_function("gillespie_two_type", |b| {
        b.iter(|| {
            path += 1;
            let mut rng = SeedTree::new(3).stream(path, channel::GILLESPIE);
            simulate_gillespie(&spec, &[3, 2], 1.0, &mut rng, &opts, &mut Discard, None).unwrap()
        })
    });
    group.finish();
}

fn continuous(c: &mut Criterion) {
    let spec = ContinuousModelSpec::diffusion(
        Matrix::from_rows(&[&[1.0]]),
        Matrix::from_rows(&[&[-1.0]]),
        vec![0.1],
    );
    let cfg = EulerConfig::new(1e-3);
    let mut path = 0;
    c.bench_function("euler_logistic_1000_steps", |b| {
        b.iter(|| {
            path += 1;
            euler_simulate(&spec, &[0.5], 1.0, &cfg, SeedTree::new(4), path, &mut Discard).unwrap()
        })
    });
}

fn oracle(c: &mut Criterion) {
    let spec = competition();
    c.bench_function("uniformization_two_type_cap_20", |b| {
        b.iter(|| transient_distribution(&spec, &[3, 2], 1.0, 20, 1e-3).unwrap())
    });
}

criterion_group!(benches, discrete, continuous, oracle);
criterion_main!(benches);
