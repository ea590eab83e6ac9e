//! End-to-end properties of populations, schedules and the engine.

use cycfed::datasets::GroupingMode;
use cycfed::engine::{run, Mode, RunConfig};
use cycfed::experiments::{LogisticTrack, RateExperiment};
use cycfed::quadratic::{make_population, QuadraticSpec};
use cycfed::schedule::{CycleSchedule, OrderMode};
use cycfed::Population;
use proptest::prelude::*;

fn quadratic(m: usize, k: usize, b: usize, seed: u64) -> cycfed::quadratic::QuadraticPopulation {
    let alpha = if k > 1 { 0.3 } else { 0.0 };
    let spec = QuadraticSpec::homogeneous(5, m, k, vec![1.0, 1.5, 2.0, 3.0, 4.0], seed)
        .with_components(b)
        .with_heterogeneity(0.4, alpha, if b > 1 { 0.5 } else { 0.0 });
    make_population(&spec).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rounds_follow_the_cycle(
        k in 1usize..5,
        g in 2usize..4,
        n_frac in 0.0f64..1.0,
        seed in 0u64..1000,
        shuffled in any::<bool>(),
        mode in prop_oneof![Just(Mode::Gd), Just(Mode::Sgd), Just(Mode::Ssgd)],
    ) {
        let m = k * g;
        let n = 1 + (n_frac * (g - 1) as f64).round() as usize;
        let pop = quadratic(m, k, 3, seed);
        let order = if shuffled { OrderMode::Shuffled } else { OrderMode::Identity };
        let schedule = CycleSchedule::new(pop.groups().to_vec(), order, seed).unwrap();
        let config = RunConfig {
            mode,
            eta: 0.02,
            cycle_epochs: 3,
            clients_per_round: n,
            local_steps: 2,
            minibatch: Some(2),
            seed,
            ..RunConfig::default()
        };
        let log = run(&pop, &schedule, &config).unwrap();
        prop_assert_eq!(log.rounds(), 3 * k);
        let mut expected_evals = 0u64;
        for (t, r) in log.records.iter().enumerate() {
            prop_assert_eq!(r.k, t / k + 1);
            prop_assert_eq!(r.i, t % k + 1);
            let group = schedule.group_at(r.i).unwrap();
            prop_assert_eq!(r.clients.len(), n);
            prop_assert!(r.clients.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(r.clients.iter().all(|c| group.contains(c)));
            prop_assert!(r.loss_gap >= -1e-12);
            expected_evals += match mode {
                Mode::Gd => n as u64,
                Mode::Sgd => 2 * n as u64,
                Mode::Ssgd => 3 * n as u64,
            };
            prop_assert_eq!(r.evals, expected_evals);
        }
        prop_assert!(log.max_aggregation_discrepancy <= 1e-12);
        let again = run(&pop, &schedule, &config).unwrap();
        prop_assert_eq!(&log.final_model, &again.final_model);
    }

    #[test]
    fn every_client_appears_once_per_cycle_at_full_participation(k in 1usize..5, g in 1usize..4, seed in 0u64..1000) {
        let m = k * g;
        let spec = QuadraticSpec::homogeneous(3, m, k, vec![1.0, 2.0, 3.0], seed);
        let pop = make_population(&spec).unwrap();
        let schedule = CycleSchedule::new(pop.groups().to_vec(), OrderMode::Shuffled, seed).unwrap();
        let config = RunConfig { clients_per_round: g, cycle_epochs: 2, seed, ..RunConfig::default() };
        let log = run(&pop, &schedule, &config).unwrap();
        for cycle in log.records.chunks(k) {
            let mut seen: Vec<usize> = cycle.iter().flat_map(|r| r.clients.clone()).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..m).collect::<Vec<_>>());
        }
    }
}

#[test]
fn prescribed_step_shrinks_with_horizon() {
    let exp = RateExperiment::gd_family(0.0, 0.3, 3);
    let pop = exp.population().unwrap();
    let short = exp.run_horizon(&pop, 192).unwrap();
    let long = exp.run_horizon(&pop, 1536).unwrap();
    assert!(long.eta_local < short.eta_local);
    assert!(long.mean_gap < short.mean_gap);
}

#[test]
fn logistic_training_reduces_loss_and_improves_accuracy() {
    let track = LogisticTrack {
        samples: 600,
        ..LogisticTrack::standard(1.0, 3)
    };
    let pop = track.population(4, GroupingMode::LabelSorted).unwrap();
    let schedule = CycleSchedule::new(pop.groups().to_vec(), OrderMode::Identity, 0).unwrap();
    let config = RunConfig {
        eta: 0.5,
        cycle_epochs: 20,
        clients_per_round: 2,
        ..RunConfig::default()
    };
    let log = run(&pop, &schedule, &config).unwrap();
    assert!(!log.loss_is_gap);
    assert!(log.final_loss_gap() < 0.6 * log.initial_loss_gap);
    assert!(pop.accuracy(&log.final_model) > 0.5);
}
