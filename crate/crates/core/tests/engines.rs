use imbp_core::discrete::{gillespie_path, marginal_samples, EngineRun};
use imbp_core::{
    simulate_grid_discrete, simulate_time_change, transient_distribution, DiscreteModelSpec,
    EngineKind, EngineOptions, Ensemble, GridConfig, Matrix, OffspringPmf, Path, RandomWalkSpec,
    SeedTree, TimeChangeOptions,
};
use proptest::prelude::*;

fn birth_death(c: f64) -> DiscreteModelSpec {
    DiscreteModelSpec {
        lambda: vec![1.0],
        offspring: vec![OffspringPmf::new([(vec![0], 0.5), (vec![2], 0.5)])],
        interaction: Matrix::from_rows(&[&[c]]),
    }
}

fn two_type(c12: f64, c21: f64) -> DiscreteModelSpec {
    DiscreteModelSpec {
        lambda: vec![1.0, 0.8],
        offspring: vec![
            OffspringPmf::new([(vec![0, 0], 0.4), (vec![2, 0], 0.4), (vec![1, 1], 0.2)]),
            OffspringPmf::new([(vec![0, 0], 0.5), (vec![0, 2], 0.5)]),
        ],
        interaction: Matrix::from_rows(&[&[0.0, c12], &[c21, 0.0]]),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // c21 <= 0 keeps the model non-explosive; mutual creation blows up.
    #[test]
    fn gillespie_paths_stay_nonnegative_and_absorb_at_zero(
        seed in any::<u64>(),
        c12 in -1.0f64..0.5,
        c21 in -1.0f64..=0.0,
        z1 in 0i64..6,
        z2 in 0i64..6,
    ) {
        let spec = two_type(c12, c21);
        let (path, _) = gillespie_path(&spec, &[z1, z2], 2.0, SeedTree::new(seed), 0, &EngineOptions::default())
            .unwrap();
        let mut dead = false;
        for (_, state) in &path.breakpoints {
            prop_assert!(state.iter().all(|&x| x >= 0));
            if dead {
                prop_assert!(state.iter().all(|&x| x == 0));
            }
            dead = state.iter().all(|&x| x == 0);
        }
    }

    #[test]
    fn event_log_replays_the_path(seed in any::<u64>()) {
        let spec = two_type(-0.5, 0.2);
        let (path, log) = gillespie_path(&spec, &[3, 2], 1.0, SeedTree::new(seed), 3, &EngineOptions::default())
            .unwrap();
        prop_assert_eq!(log.replay(&[3, 2], 1.0), path);
    }
}

#[test]
fn grid_process_without_interaction_is_the_exact_process() {
    let spec = two_type(0.0, 0.0);
    let walks = RandomWalkSpec::all_from_model(&spec);
    let seeds = SeedTree::new(99);
    for p in 0..50 {
        let mut exact = Path::default();
        simulate_time_change(&spec, &[4, 3], 2.0, &walks, seeds, p, &TimeChangeOptions::default(), &mut exact)
            .unwrap();
        let mut grid = Path::default();
        simulate_grid_discrete(&spec, &[4, 3], 2.0, GridConfig::new(0.3, 2.0).unwrap(), seeds, p, &mut grid)
            .unwrap();
        assert_eq!(exact, grid, "path {p}");
    }
}

#[test]
fn samples_do_not_depend_on_worker_count() {
    let spec = two_type(-0.5, 0.2);
    for engine in [EngineKind::Gillespie, EngineKind::TimeChange] {
        let run = |workers| {
            let r = EngineRun { spec: &spec, engine, seeds: SeedTree::new(5) };
            marginal_samples(r, &[3, 2], 1.0, 400, &Ensemble::new(Some(workers))).unwrap()
        };
        assert_eq!(run(1), run(3));
    }
}

#[test]
fn critical_birth_death_extinction_matches_oracle_and_closed_form() {
    // Critical binary branching at rate 1 from one individual:
    // P(Z_t = 0) = t / (2 + t).
    let spec = birth_death(0.0);
    let t = 1.0;
    let law = transient_distribution(&spec, &[1], t, 60, 1e-6).unwrap();
    let closed = t / (2.0 + t);
    assert!((law.prob(&[0]) - closed).abs() < 1e-6, "{} vs {closed}", law.prob(&[0]));

    let n = 20_000;
    let run = EngineRun { spec: &spec, engine: EngineKind::Gillespie, seeds: SeedTree::new(8) };
    let samples = marginal_samples(run, &[1], t, n, &Ensemble::default()).unwrap();
    let dead = samples.iter().filter(|s| s[0] == 0).count() as f64 / n as f64;
    let se = (closed * (1.0 - closed) / n as f64).sqrt();
    assert!((dead - closed).abs() <= 4.0 * se, "{dead} vs {closed}");
}

#[test]
fn competition_lowers_the_mean() {
    let t = 1.0;
    let free = transient_distribution(&birth_death(0.0), &[5], t, 80, 1e-6).unwrap();
    let comp = transient_distribution(&birth_death(-0.2), &[5], t, 80, 1e-6).unwrap();
    let mean = |l: &imbp_core::TransientDistribution| -> f64 {
        l.states.iter().zip(&l.probs).map(|(s, p)| s[0] as f64 * p).sum()
    };
    assert!((mean(&free) - 5.0).abs() < 1e-4);
    assert!(mean(&comp) < mean(&free) - 0.5);
}
