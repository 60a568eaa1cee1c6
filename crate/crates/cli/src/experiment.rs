//! Building problem instances and oracles from a config and running them.

use afp_core::diagnostics::Trace;
use afp_core::engine::{run_with_observer, SolverState};
use afp_core::harness::{DelaySampler, EventLog};
use afp_core::operator::OperatorHandle;
use afp_core::oracle::{AggregatedOracle, DelayedOracle, ExactOracle, MinibatchDelayedOracle, Oracle};
use afp_core::problems::{bfs_operator, duality_gap, generate_game, quadratic_finitesum, simplex_project, GameInstance};
use afp_core::Vector;
use log::info;

use crate::config::{ExperimentConfig, OracleKind, ProblemKind};
use crate::error::CliError;

pub struct Instance {
    pub op: OperatorHandle,
    pub y0: Vector,
    pub game: Option<GameInstance>,
    pub x_star: Option<Vector>,
}

pub fn build_instance(cfg: &ExperimentConfig, seed: u64) -> Instance {
    let pc = &cfg.problem;
    match pc.kind {
        ProblemKind::Quadratic => {
            let qp = quadratic_finitesum(pc.p, pc.n, pc.cond, seed);
            Instance {
                y0: Vector::from_element(pc.p, 1.0),
                op: qp.op,
                game: None,
                x_star: Some(qp.x_star),
            }
        }
        ProblemKind::Game => {
            let g = generate_game(pc.m, pc.n, pc.theta_decay, pc.noise_var, seed);
            Instance {
                op: bfs_operator(&g, pc.scaling.into()),
                y0: g.initial_point(),
                game: Some(g),
                x_star: None,
            }
        }
    }
}

enum BuiltOracle {
    Exact(ExactOracle),
    Delayed(DelayedOracle),
    Minibatch(MinibatchDelayedOracle),
    Aggregated(AggregatedOracle),
}

impl BuiltOracle {
    fn new(cfg: &ExperimentConfig, n: Option<usize>, seed: u64) -> Result<Self, CliError> {
        let mon = cfg.oracle.monitor;
        let kind = cfg.oracle.kind;
        Ok(match kind {
            OracleKind::Exact => BuiltOracle::Exact(ExactOracle::new().with_monitor(mon)),
            OracleKind::Delayed => {
                BuiltOracle::Delayed(DelayedOracle::new(DelaySampler::new(cfg.delay_model(seed))).with_monitor(mon))
            }
            OracleKind::MinibatchDelayed => BuiltOracle::Minibatch(
                MinibatchDelayedOracle::new(DelaySampler::new(cfg.delay_model(seed)), cfg.batch_rule(), cfg.solver.s, seed)
                    .with_monitor(mon),
            ),
            OracleKind::Incremental | OracleKind::Shuffling | OracleKind::RandomM => {
                let n = n.ok_or_else(|| CliError::Config("oracle.kind: needs a finite-sum problem".into()))?;
                let strategy = cfg.strategy().expect("aggregated kind");
                let mut o = AggregatedOracle::new(strategy, n, seed);
                if let Some(c) = cfg.oracle.cap {
                    o = o.with_cap(c);
                }
                BuiltOracle::Aggregated(o.with_monitor(mon))
            }
        })
    }

    fn as_dyn(&mut self) -> &mut dyn Oracle {
        match self {
            BuiltOracle::Exact(o) => o,
            BuiltOracle::Delayed(o) => o,
            BuiltOracle::Minibatch(o) => o,
            BuiltOracle::Aggregated(o) => o,
        }
    }

    /// Events so far, checked against the delay bound of the oracle.
    fn finish(&mut self, tau: usize) -> Result<EventLog, CliError> {
        let (log, bound) = match self {
            BuiltOracle::Exact(_) => (EventLog::default(), 0),
            BuiltOracle::Delayed(o) => (o.take_events(), tau),
            BuiltOracle::Minibatch(o) => (o.take_events(), tau),
            // a forced refresh replaces a slot one step past the cap
            BuiltOracle::Aggregated(o) => (o.take_events(), o.cap() + 1),
        };
        log.check(bound)?;
        Ok(log)
    }
}

pub struct RunOutcome {
    pub seed: u64,
    pub trace: Trace,
    pub events: EventLog,
    pub final_y: Vector,
    /// Duality gap at the resolvent of the final iterate, for games.
    pub gap: Option<f64>,
}

/// One instance: problem and oracle streams both keyed by `seed`.
pub fn run_instance(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutcome, CliError> {
    let inst = build_instance(cfg, seed);
    let mut oracle = BuiltOracle::new(cfg, inst.op.components(), seed)?;
    let scfg = cfg.solver_config(seed);
    let mut final_y = inst.y0.clone();
    let mut keep = |st: &SolverState, _: &Vector| final_y.clone_from(&st.y);
    let trace = run_with_observer(&inst.op, oracle.as_dyn(), &scfg, &inst.y0, &mut keep)?;
    let events = oracle.finish(scfg.tau)?;
    let gap = match &inst.game {
        Some(g) => {
            let p = g.p();
            let v = simplex_project(&final_y.rows(0, p).into_owned())?;
            let w = simplex_project(&final_y.rows(p, p).into_owned())?;
            Some(duality_gap(&g.mean_payoff(), &v, &w)?)
        }
        None => None,
    };
    info!(
        "seed {seed}: {} rows, final rel {:.3e}, {:?}",
        trace.records.len(),
        trace.final_rel(),
        trace.stop
    );
    Ok(RunOutcome {
        seed,
        trace,
        events,
        final_y,
        gap,
    })
}

pub fn instance_seeds(cfg: &ExperimentConfig) -> impl Iterator<Item = u64> + '_ {
    (0..cfg.instances as u64).map(move |i| cfg.seed.wrapping_add(i))
}
