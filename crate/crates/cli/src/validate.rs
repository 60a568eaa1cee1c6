//! Self-check suite behind `afp validate`.

use afp_core::diagnostics::{bound_check, initial_radius_sq};
use afp_core::engine::{afp_step, lyapunov_l, run, run_with_observer, schedule, schedule_prev, theory_eta, EtaMode, SolverConfig, SolverState};
use afp_core::harness::{simulate_consistent, simulate_decentralized, DelayKind, DelayModel};
use afp_core::operator::{cocoercivity_audit, CoCoercivityProfile};
use afp_core::oracle::{ExactOracle, Regime, Strategy};
use afp_core::problems::{bfs_operator, generate_game, quadratic_finitesum, simplex_project, BfsScaling};
use afp_core::rng::{self, streams};
use afp_core::{AfpError, Vector};
use rand::Rng as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    /// Declare the quadratic's beta ten times too large.
    BetaTooLarge,
    /// Give the incremental strategy a staleness cap of n - 2.
    CapBelowN,
}

#[derive(Clone, Debug)]
pub struct Check {
    pub module: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(module: &'static str, name: &'static str, f: impl FnOnce() -> Result<(bool, String), AfpError>) -> Check {
    let (passed, detail) = f().unwrap_or_else(|e| (false, e.to_string()));
    Check {
        module,
        name,
        passed,
        detail,
    }
}

/// Threshold `t` with `sum_i max(v_i - t, 0) = 1`, found by bisection.
pub fn kkt_projection(v: &[f64]) -> Vec<f64> {
    let f = |t: f64| v.iter().map(|x| (x - t).max(0.0)).sum::<f64>() - 1.0;
    let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    v.iter().map(|x| (x - t).max(0.0)).collect()
}

fn witness(v: &Option<(Vector, Vector)>) -> String {
    match v {
        Some((x, y)) => format!(" witness |x| = {:.4}, |y| = {:.4}, |x - y| = {:.4}", x.norm(), y.norm(), (x - y).norm()),
        None => String::new(),
    }
}

fn max_staleness(strategy: Strategy, n: usize, epochs: usize, cap: Option<usize>) -> Result<usize, AfpError> {
    let qp = quadratic_finitesum(4, n, 10.0, 0);
    let cfg = SolverConfig {
        k_max: epochs * n,
        residual_stride: Some(1),
        ..SolverConfig::heuristic(cap.unwrap_or_else(|| strategy.default_cap(n)))
    };
    let (tr, _) = simulate_decentralized(&qp.op, strategy, &cfg, cap, false, &Vector::from_element(4, 1.0))?;
    Ok(tr.max_tau_used())
}

pub fn cmd_validate(faults: &[Fault]) -> Vec<Check> {
    let mut out = Vec::new();

    out.push(check("operator_core", "cocoercivity_audit_quadratic", || {
        let mut qp = quadratic_finitesum(20, 8, 50.0, 2);
        if faults.contains(&Fault::BetaTooLarge) {
            let b = qp.op.profile().beta;
            qp.op.set_profile(CoCoercivityProfile::new(10.0 * b, 0.0));
        }
        let rep = cocoercivity_audit(&qp.op, 1000, 5)?;
        Ok((rep.passes(1e-10), format!("min slack {:.3e}{}", rep.min_slack, witness(&rep.violation))))
    }));

    out.push(check("problem_zoo", "cocoercivity_audit_bfs", || {
        let g = generate_game(3, 20, 0.8, 0.05, 0);
        let rep = cocoercivity_audit(&bfs_operator(&g, BfsScaling::FixedPoint), 1000, 5)?;
        Ok((rep.passes(1e-10), format!("min slack {:.3e}{}", rep.min_slack, witness(&rep.violation))))
    }));

    out.push(check("problem_zoo", "simplex_projection_kkt", || {
        let mut r = rng::stream(0, streams::AUDIT);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let d = r.random_range(1..=8);
            let v: Vec<f64> = (0..d).map(|_| r.random_range(-5.0..5.0)).collect();
            let got = simplex_project(&Vector::from_vec(v.clone()))?;
            for (a, b) in got.iter().zip(kkt_projection(&v)) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok((worst <= 1e-10, format!("max error {worst:.3e}")))
    }));

    out.push(check("problem_zoo", "finite_sum_identity", || {
        let g = generate_game(3, 10, 0.8, 0.05, 1);
        let op = bfs_operator(&g, BfsScaling::FixedPoint);
        let mut r = rng::stream(1, streams::AUDIT);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let x = Vector::from_fn(op.dim(), |_, _| r.random_range(-2.0..2.0));
            let full = op.evaluate_uncounted(&x)?;
            let idx: Vec<usize> = (0..g.n).collect();
            let parts = op.evaluate_components_uncounted(&idx, &x)?;
            let mean = parts.iter().fold(Vector::zeros(op.dim()), |a, b| a + b) / g.n as f64;
            worst = worst.max((&full - mean).norm() / (1.0 + full.norm()));
        }
        Ok((worst <= 1e-12, format!("max relative gap {worst:.3e}")))
    }));

    out.push(check("oracle_suite", "consistent_monitor", || {
        let qp = quadratic_finitesum(20, 5, 100.0, 0);
        let tau = 10;
        let cfg = SolverConfig {
            k_max: 1000,
            residual_stride: Some(1),
            ..SolverConfig::heuristic(tau)
        };
        let (tr, _) = simulate_consistent(&qp.op, &cfg, DelayModel::uniform(tau, 0), true, &Vector::from_element(20, 1.0))?;
        let slacks: Vec<f64> = tr.records.iter().filter_map(|r| r.monitor_slack).collect();
        let min = slacks.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok((slacks.len() == 1000 && min >= 0.0, format!("{} checks, min slack {min:.3e}", slacks.len())))
    }));

    for (name, strategy) in [
        ("inconsistent_monitor_incremental", Strategy::Incremental),
        ("inconsistent_monitor_shuffling", Strategy::Shuffling),
    ] {
        out.push(check("oracle_suite", name, || {
            let n = 20;
            let qp = quadratic_finitesum(10, n, 50.0, 0);
            let cfg = SolverConfig {
                k_max: 10 * n,
                residual_stride: Some(1),
                ..SolverConfig::heuristic(strategy.default_cap(n))
            };
            let (tr, _) = simulate_decentralized(&qp.op, strategy, &cfg, None, true, &Vector::from_element(10, 1.0))?;
            let slacks: Vec<f64> = tr.records.iter().filter_map(|r| r.monitor_slack).collect();
            let min = slacks.iter().cloned().fold(f64::INFINITY, f64::min);
            Ok((slacks.len() == 10 * n && min >= 0.0, format!("{} checks, min slack {min:.3e}", slacks.len())))
        }));
    }

    out.push(check("async_harness", "staleness_cap_incremental", || {
        let n = 20;
        let cap = faults.contains(&Fault::CapBelowN).then_some(n - 2);
        let got = max_staleness(Strategy::Incremental, n, 10, cap)?;
        Ok((got <= n - 1, format!("max staleness {got}, limit {}", n - 1)))
    }));

    out.push(check("async_harness", "staleness_cap_shuffling", || {
        let n = 20;
        let got = max_staleness(Strategy::Shuffling, n, 10, None)?;
        Ok((got <= 2 * n - 1, format!("max staleness {got}, limit {}", 2 * n - 1)))
    }));

    out.push(check("async_harness", "event_log_bounded_delay", || {
        let qp = quadratic_finitesum(10, 4, 20.0, 0);
        let tau = 6;
        let model = DelayModel {
            kind: DelayKind::WorkerSpeeds(vec![1.0, 2.0, 5.0, 20.0]),
            tau_cap: tau,
            seed: 3,
        };
        let cfg = SolverConfig {
            k_max: 1000,
            ..SolverConfig::heuristic(tau)
        };
        let (_, log) = simulate_consistent(&qp.op, &cfg, model, false, &Vector::from_element(10, 1.0))?;
        let worst = log.max_accepted_delay();
        Ok((worst <= tau, format!("{} events, max accepted delay {worst}", log.len())))
    }));

    out.push(check("afp_engine", "lyapunov_lower_bound", || {
        let qp = quadratic_finitesum(30, 5, 100.0, 0);
        let cfg = SolverConfig {
            s: 4.0,
            tau: 1,
            eta_mode: EtaMode::Theory,
            k_max: 2000,
            residual_stride: Some(1),
            ..SolverConfig::default()
        };
        let eta = theory_eta(qp.op.profile(), Regime::Exact, &cfg)?;
        let mut first_err = None;
        let mut count = 0;
        run_with_observer(&qp.op, &mut ExactOracle::new(), &cfg, &Vector::from_element(30, 1.0), &mut |st, gy| {
            count += 1;
            if first_err.is_none() {
                if let Err(e) = lyapunov_l(st, Some(&qp.x_star), schedule_prev(st.k, &cfg, eta), gy, cfg.s, eta) {
                    first_err = Some(e.to_string());
                }
            }
        })?;
        Ok(match first_err {
            None => (true, format!("{count} iterations")),
            Some(e) => (false, e),
        })
    }));

    out.push(check("afp_engine", "root_stationary", || {
        let y = Vector::from_vec(vec![0.3, -1.2, 4.0]);
        let mut st = SolverState::new(y.clone());
        st.k = 17;
        let cfg = SolverConfig::heuristic(3);
        afp_step(&mut st, &Vector::zeros(3), schedule(17, &cfg, 0.25), cfg.s)?;
        Ok((st.y == y, format!("|y' - y| = {:.3e}", (&st.y - &y).norm())))
    }));

    out.push(check("diagnostics", "residual_bound", || {
        let qp = quadratic_finitesum(30, 5, 100.0, 1);
        let y0 = Vector::from_element(30, 1.0);
        let mut worst = f64::NEG_INFINITY;
        for tau in [1, 5, 20] {
            let cfg = SolverConfig {
                s: 4.0,
                tau,
                eta_mode: EtaMode::Theory,
                k_max: 2000,
                residual_stride: Some(1),
                ..SolverConfig::default()
            };
            let tr = if tau == 1 {
                run(&qp.op, &mut ExactOracle::new(), &cfg, &y0)?
            } else {
                simulate_consistent(&qp.op, &cfg, DelayModel::uniform(tau, 0), false, &y0)?.0
            };
            let gy0 = qp.op.evaluate_uncounted(&y0)?;
            let r0 = initial_radius_sq(tr.eta, cfg.s, cfg.gamma, tau, &gy0, &y0, Some(&qp.x_star))?;
            worst = worst.max(bound_check(&tr, r0, tr.eta, cfg.s, tau));
        }
        Ok((worst <= 0.0, format!("max violation {worst:.3e}")))
    }));

    out
}

pub fn format_table(checks: &[Check]) -> String {
    let w_mod = checks.iter().map(|c| c.module.len()).max().unwrap_or(6).max(6);
    let w_name = checks.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
    let mut s = format!("{:<w_mod$}  {:<w_name$}  result  detail\n", "module", "check");
    for c in checks {
        s += &format!(
            "{:<w_mod$}  {:<w_name$}  {:<6}  {}\n",
            c.module,
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.detail
        );
    }
    s
}
