use afp_core::diagnostics::passes_accounting;
use afp_core::engine::*;
use afp_core::harness::{simulate_consistent, simulate_decentralized, DelayKind, DelayModel};
use afp_core::operator::{CoCoercivityProfile, FiniteSumRule, MapFn, OperatorHandle};
use afp_core::oracle::*;
use afp_core::problems::quadratic_finitesum;
use afp_core::rng::{self, streams};
use afp_core::{AfpError, Vector};
use proptest::prelude::{prop_assert, proptest, ProptestConfig};

fn ones(p: usize) -> Vector {
    Vector::from_element(p, 1.0)
}

fn cfg(tau: usize, k_max: usize, seed: u64) -> SolverConfig {
    SolverConfig {
        k_max,
        seed,
        residual_stride: Some(1),
        ..SolverConfig::heuristic(tau)
    }
}

fn slack_ok(slack: Option<f64>) -> bool {
    slack.is_none_or(|s| s >= -1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn consistent_monitor_never_negative(seed in 0u64..10_000, tau in 1usize..12) {
        let qp = quadratic_finitesum(10, 4, 50.0, seed);
        let (tr, log) = simulate_consistent(&qp.op, &cfg(tau, 300, seed), DelayModel::uniform(tau, seed), true, &ones(10)).unwrap();
        prop_assert!(tr.records.iter().all(|r| slack_ok(r.monitor_slack)));
        // the final row has no estimate behind it
        let rows = &tr.records[..tr.records.len() - 1];
        prop_assert!(rows.iter().all(|r| r.monitor_slack.is_some()));
        prop_assert!(log.max_accepted_delay() <= tau);
    }

    #[test]
    fn inconsistent_monitor_never_negative(seed in 0u64..10_000, which in 0usize..3) {
        let n = 6;
        let strategy = [Strategy::Incremental, Strategy::Shuffling, Strategy::RandomM(2)][which];
        let qp = quadratic_finitesum(8, n, 20.0, seed);
        let c = cfg(strategy.default_cap(n), 200, seed);
        let (tr, _) = simulate_decentralized(&qp.op, strategy, &c, None, true, &ones(8)).unwrap();
        prop_assert!(tr.records.iter().all(|r| slack_ok(r.monitor_slack)));
        prop_assert!(tr.max_tau_used() <= strategy.default_cap(n));
    }
}

#[test]
fn minibatch_variance_matches_sampling_theory() {
    // components G_i x = c_i with zero mean; the estimator variance is
    // at most the single-sample variance over b
    let n = 100;
    let cs: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.731).sin()).collect();
    let mean = cs.iter().sum::<f64>() / n as f64;
    let parts: Vec<MapFn> = cs
        .iter()
        .map(|&c| Box::new(move |_: &Vector| Vector::from_vec(vec![c - mean])) as MapFn)
        .collect();
    let op = OperatorHandle::new(FiniteSumRule::new(1, parts), CoCoercivityProfile::new(1.0, 0.0));
    let sigma2 = cs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n as f64;
    let mut r = rng::stream(0, streams::MINIBATCH);
    let y = Vector::zeros(1);
    let reps = 10_000;
    let mut acc = 0.0;
    for _ in 0..reps {
        acc += minibatch_estimate(&op, &y, 4, &mut r).unwrap().norm_squared();
    }
    let var = acc / reps as f64;
    assert!(var <= 1.2 * sigma2 / 4.0, "{var} vs {}", sigma2 / 4.0);
    assert!(var >= 0.5 * sigma2 / 4.0);
}

fn staleness_series(strategy: Strategy, n: usize, k_max: usize, seed: u64) -> Vec<usize> {
    let qp = quadratic_finitesum(3, n, 5.0, 0);
    let mut o = AggregatedOracle::new(strategy, n, seed);
    (0..k_max)
        .map(|k| o.estimate(&qp.op, k, &ones(3)).unwrap().tau_used)
        .collect()
}

#[test]
fn incremental_staleness_cycles() {
    let s = staleness_series(Strategy::Incremental, 3, 12, 0);
    // after the fill, the worst slot is the one refreshed n-1 steps ago
    assert_eq!(&s[..3], &[0, 1, 2]);
    assert!(s[3..].iter().all(|&t| t == 2));
}

#[test]
fn shuffling_staleness_stays_below_two_epochs() {
    for seed in 0..20 {
        let s = staleness_series(Strategy::Shuffling, 5, 200, seed);
        assert!(s.iter().all(|&t| t <= 9), "seed {seed}: {:?}", s.iter().max());
    }
}

#[test]
fn single_component_is_always_fresh() {
    for st in [Strategy::Incremental, Strategy::Shuffling, Strategy::RandomM(1)] {
        assert!(staleness_series(st, 1, 20, 0).iter().all(|&t| t == 0));
    }
}

#[test]
fn random_m_respects_forced_cap() {
    let n = 12;
    let s = staleness_series(Strategy::RandomM(3), n, 2000, 7);
    assert!(*s.iter().max().unwrap() <= 2 * n.div_ceil(3));
}

#[test]
fn pass_accounting_by_strategy() {
    let n = 10;
    let qp = quadratic_finitesum(4, n, 5.0, 0);
    let y0 = ones(4);

    let c = SolverConfig {
        k_max: 10,
        ..cfg(0, 10, 0)
    };
    run(&qp.op, &mut ExactOracle::new(), &c, &y0).unwrap();
    assert_eq!(qp.op.full_passes(), 10.0);

    qp.op.reset_counts();
    let c = SolverConfig {
        k_max: n,
        ..cfg(n, n, 0)
    };
    simulate_decentralized(&qp.op, Strategy::Incremental, &c, None, false, &y0).unwrap();
    // one pass for the synchronous fill, one for the epoch
    assert_eq!(qp.op.full_passes(), 2.0);
    assert_eq!(passes_accounting(qp.op.counts().component, n), 2.0);

    qp.op.reset_counts();
    let k = 40;
    let c = SolverConfig {
        k_max: k,
        ..cfg(1000, k, 3)
    };
    simulate_decentralized(&qp.op, Strategy::RandomM(2), &c, Some(1000), false, &y0).unwrap();
    assert_eq!(qp.op.full_passes(), 1.0 + 2.0 * k as f64 / n as f64);
}

#[test]
fn running_sum_does_not_drift() {
    let n = 50;
    let qp = quadratic_finitesum(20, n, 100.0, 5);
    let mut o = AggregatedOracle::new(Strategy::RandomM(7), n, 1);
    let mut y = ones(20);
    for k in 0..5000 {
        let e = o.estimate(&qp.op, k, &y).unwrap();
        y -= e.value * 0.01;
    }
    let buf = o.buffer().unwrap();
    assert!(buf.drift() <= 1e-12);
    let mut exact = Vector::zeros(20);
    for i in 0..n {
        exact += buf.slot(i);
    }
    assert!((buf.mean() - exact / n as f64).norm() <= 1e-12 * (1.0 + buf.mean().norm()));
}

#[test]
fn cap_below_cycle_is_rejected() {
    let n = 8;
    let qp = quadratic_finitesum(4, n, 5.0, 0);
    let c = cfg(3, 50, 0);
    let err = simulate_decentralized(&qp.op, Strategy::Incremental, &c, Some(3), false, &ones(4)).unwrap_err();
    let AfpError::Oracle { source, .. } = err else {
        panic!("unexpected {err:?}")
    };
    assert!(matches!(*source, AfpError::Staleness { cap: 3, .. }));
}

#[test]
fn event_logs_replay_exactly() {
    let go = |seed| {
        let qp = quadratic_finitesum(6, 3, 10.0, 0);
        let model = DelayModel {
            kind: DelayKind::WorkerSpeeds(vec![1.0, 3.0, 9.0]),
            tau_cap: 5,
            seed,
        };
        let (tr, log) = simulate_consistent(&qp.op, &cfg(5, 400, seed), model, false, &ones(6)).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        (tr.to_csv_string(), buf, log)
    };
    let a = go(11);
    assert_eq!(a.0, go(11).0);
    assert_eq!(a.1, go(11).1);
    assert_ne!(a.1, go(12).1);
    a.2.check(5).unwrap();
}

#[test]
fn delay_cap_must_match_solver() {
    let qp = quadratic_finitesum(4, 2, 5.0, 0);
    let err = simulate_consistent(&qp.op, &cfg(3, 10, 0), DelayModel::uniform(4, 0), false, &ones(4));
    assert!(matches!(err, Err(AfpError::Config(_))));
}
