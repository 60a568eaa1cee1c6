//! Logical-time simulation of the server/worker protocols. Every event is
//! applied in a fixed sequential order, so each read observes a fully
//! written value and runs are reproducible from the seed.

use std::io::Write;

use rand::Rng as _;
use rand_distr::{Distribution, Exp};

use crate::diagnostics::Trace;
use crate::engine::{self, SolverConfig};
use crate::operator::OperatorHandle;
use crate::oracle::{AggregatedOracle, DelayedOracle, Strategy};
use crate::rng::{self, streams, Rng};
use crate::{AfpError, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum DelayKind {
    Fixed(usize),
    /// Uniform on `0..=tau_cap`.
    Uniform,
    /// One worker per entry with exponentially distributed service time of
    /// the given mean (in logical steps). The next commit comes from the
    /// worker that finishes first; its delay is the number of server updates
    /// since it read the iterate.
    WorkerSpeeds(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DelayModel {
    pub kind: DelayKind,
    pub tau_cap: usize,
    pub seed: u64,
}

impl DelayModel {
    pub fn uniform(tau_cap: usize, seed: u64) -> Self {
        Self {
            kind: DelayKind::Uniform,
            tau_cap,
            seed,
        }
    }

    pub fn fixed(d: usize, tau_cap: usize) -> Self {
        Self {
            kind: DelayKind::Fixed(d),
            tau_cap,
            seed: 0,
        }
    }
}

/// One server-side event.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EventRecord {
    pub k: usize,
    pub worker: usize,
    /// Iteration whose data the worker used.
    pub issued: usize,
    pub commit: usize,
    pub accepted: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventLog {
    pub records: Vec<EventRecord>,
}

impl EventLog {
    pub fn push(&mut self, r: EventRecord) {
        self.records.push(r);
    }

    pub fn extend(&mut self, rs: impl IntoIterator<Item = EventRecord>) {
        self.records.extend(rs);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Largest `k - issued` over accepted events.
    pub fn max_accepted_delay(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.accepted)
            .map(|r| r.k - r.issued)
            .max()
            .unwrap_or(0)
    }

    /// Bounded delay on accepted events and per-worker commit order.
    pub fn check(&self, tau: usize) -> Result<()> {
        let mut last_commit: std::collections::HashMap<usize, usize> = Default::default();
        for r in &self.records {
            if r.accepted && r.k - r.issued > tau {
                return Err(AfpError::Staleness {
                    index: r.worker,
                    k: r.k,
                    staleness: r.k - r.issued,
                    cap: tau,
                });
            }
            let prev = last_commit.entry(r.worker).or_insert(r.commit);
            if r.commit < *prev {
                return Err(AfpError::InvalidInput(format!(
                    "commit order of worker {} went backwards at k = {}",
                    r.worker, r.k
                )));
            }
            *prev = r.commit;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["k", "worker", "issued", "commit", "accepted"])?;
        for r in &self.records {
            wr.write_record([
                r.k.to_string(),
                r.worker.to_string(),
                r.issued.to_string(),
                r.commit.to_string(),
                (r.accepted as u8).to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Raw delay draw for the stateless kinds, clamped to `k`. Threshold
/// enforcement is left to [`DelaySampler::sample`].
pub fn sample_delay(model: &DelayModel, k: usize, rng: &mut Rng) -> Result<usize> {
    let d = match model.kind {
        DelayKind::Fixed(d) => d,
        DelayKind::Uniform => rng.random_range(0..=model.tau_cap),
        DelayKind::WorkerSpeeds(_) => {
            return Err(AfpError::Unsupported(
                "worker-speed delays depend on simulation state; use DelaySampler".into(),
            ))
        }
    };
    Ok(d.min(k))
}

#[derive(Clone, Debug)]
struct Worker {
    issued: usize,
    finish: f64,
    service: Exp<f64>,
}

/// Accepted delay for one iteration plus every event that produced it.
#[derive(Clone, Debug)]
pub struct DelayDraw {
    pub tau_k: usize,
    pub events: Vec<EventRecord>,
}

/// Stateful delay source enforcing the threshold by discard and retry.
pub struct DelaySampler {
    model: DelayModel,
    rng: Rng,
    workers: Vec<Worker>,
}

impl DelaySampler {
    pub fn new(model: DelayModel) -> Self {
        let stream = match model.kind {
            DelayKind::WorkerSpeeds(_) => streams::WORKERS,
            _ => streams::DELAY,
        };
        let mut rng = rng::stream(model.seed, stream);
        let workers = match &model.kind {
            DelayKind::WorkerSpeeds(means) => means
                .iter()
                .map(|&m| {
                    let service = Exp::new(1.0 / m.max(1e-12)).expect("positive rate");
                    Worker {
                        issued: 0,
                        finish: service.sample(&mut rng),
                        service,
                    }
                })
                .collect(),
            _ => Vec::new(),
        };
        Self { model, rng, workers }
    }

    pub fn model(&self) -> &DelayModel {
        &self.model
    }

    fn next_worker(&self) -> usize {
        let mut best = 0;
        for (i, w) in self.workers.iter().enumerate() {
            if w.finish < self.workers[best].finish {
                best = i;
            }
        }
        best
    }

    /// Delay `tau_k` in `[0, min(k, tau_cap)]`. Draws above the cap are
    /// discarded and retried up to `tau_cap + 1` times, after which the cap
    /// itself is used.
    pub fn sample(&mut self, k: usize) -> DelayDraw {
        let cap = self.model.tau_cap;
        let mut events = Vec::new();
        for _ in 0..=cap {
            let (worker, delay) = if self.workers.is_empty() {
                let d = sample_delay(&self.model, k, &mut self.rng).expect("stateless kind");
                (0, d)
            } else {
                let w = self.next_worker();
                (w, k - self.workers[w].issued.min(k))
            };
            let accepted = delay <= cap;
            events.push(EventRecord {
                k,
                worker,
                issued: k - delay,
                commit: k,
                accepted,
            });
            if let Some(w) = self.workers.get_mut(worker) {
                // an accepted worker reads the next iterate, a rejected one re-reads this one
                w.issued = if accepted { k + 1 } else { k };
                w.finish += w.service.sample(&mut self.rng);
            }
            if accepted {
                return DelayDraw { tau_k: delay, events };
            }
        }
        let tau_k = cap.min(k);
        let worker = events.last().map_or(0, |e| e.worker);
        events.push(EventRecord {
            k,
            worker,
            issued: k - tau_k,
            commit: k,
            accepted: true,
        });
        DelayDraw { tau_k, events }
    }
}

/// Consistent-delay simulation: each iteration a worker commits `G y^k`, a
/// delay is drawn and the step uses `G y^{k - tau_k}`.
pub fn simulate_consistent(
    op: &OperatorHandle,
    cfg: &SolverConfig,
    model: DelayModel,
    monitor: bool,
    y0: &crate::Vector,
) -> Result<(Trace, EventLog)> {
    if model.tau_cap != cfg.tau {
        return Err(AfpError::Config(format!(
            "delay cap {} differs from solver tau {}",
            model.tau_cap, cfg.tau
        )));
    }
    let mut oracle = DelayedOracle::new(DelaySampler::new(model)).with_monitor(monitor);
    let trace = engine::run(op, &mut oracle, cfg, y0)?;
    let log = oracle.take_events();
    log.check(cfg.tau)?;
    Ok((trace, log))
}

/// Aggregated finite-sum simulation with per-component staleness. `cap`
/// overrides the strategy's staleness cap. Events record the age of the slot
/// each refresh replaces, so a forced refresh may show `cap + 1`; the
/// estimator itself never exceeds `cap`.
pub fn simulate_decentralized(
    op: &OperatorHandle,
    strategy: Strategy,
    cfg: &SolverConfig,
    cap: Option<usize>,
    monitor: bool,
    y0: &crate::Vector,
) -> Result<(Trace, EventLog)> {
    let n = op
        .components()
        .ok_or_else(|| AfpError::Unsupported("decentralized simulation needs components".into()))?;
    let mut oracle = AggregatedOracle::new(strategy, n, cfg.seed);
    if let Some(c) = cap {
        oracle = oracle.with_cap(c);
    }
    let cap = oracle.cap();
    let mut oracle = oracle.with_monitor(monitor);
    let trace = engine::run(op, &mut oracle, cfg, y0)?;
    let log = oracle.take_events();
    log.check(cap + 1)?;
    Ok((trace, log))
}
