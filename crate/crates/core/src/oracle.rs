//! Estimators of `G y^k` built from stale, partial or sampled information,
//! and monitors for their error.

use std::collections::VecDeque;

use log::trace;
use rand::seq::SliceRandom;

use crate::harness::{DelaySampler, EventLog, EventRecord};
use crate::operator::OperatorHandle;
use crate::rng::{self, streams, Rng};
use crate::{AfpError, Result, Vector};

/// Which instantiation of the error condition an oracle satisfies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Exact,
    /// A single historical value (possibly sampled around it).
    Consistent,
    /// Per-component staleness.
    Inconsistent,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonitorReport {
    pub error_sq: f64,
    pub bound: f64,
    /// `bound - error_sq`.
    pub slack: f64,
    /// Set for estimators whose error is bounded only in expectation.
    pub advisory: bool,
}

impl MonitorReport {
    fn checked(error_sq: f64, bound: f64) -> Self {
        Self {
            error_sq,
            bound,
            slack: bound - error_sq,
            advisory: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Estimate {
    pub value: Vector,
    pub tau_used: usize,
    pub monitor: Option<MonitorReport>,
}

pub trait Oracle {
    fn name(&self) -> &'static str;

    fn regime(&self) -> Regime;

    fn requires_components(&self) -> bool {
        false
    }

    /// Estimator for iteration `k` at the current point `y = y^k`.
    fn estimate(&mut self, op: &OperatorHandle, k: usize, y: &Vector) -> Result<Estimate>;
}

/// The last `capacity` values indexed by iteration. Negative indices resolve
/// to the value stored for iteration 0.
#[derive(Clone, Debug)]
pub struct HistoryRing {
    capacity: usize,
    first: Option<Vector>,
    items: VecDeque<(usize, Vector)>,
}

impl HistoryRing {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1);
        Self {
            capacity,
            first: None,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn latest_index(&self) -> Option<usize> {
        self.items.back().map(|e| e.0)
    }

    /// Stores the value for iteration `l`, which must follow the latest one.
    pub fn push(&mut self, l: usize, value: Vector) {
        let expected = self.latest_index().map_or(0, |i| i + 1);
        assert_eq!(l, expected, "history indices must be consecutive");
        if l == 0 {
            self.first = Some(value.clone());
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back((l, value));
    }

    pub fn get(&self, l: i64) -> Option<&Vector> {
        if l <= 0 {
            return self.first.as_ref();
        }
        let front = self.items.front()?.0 as i64;
        if l < front {
            return None;
        }
        self.items.get((l - front) as usize).map(|e| &e.1)
    }
}

/// Delay beyond the threshold: the caller should discard and retry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DelayRejected;

/// `G y^{k - tau_k}` from the ring.
pub fn delayed_lookup(ring: &HistoryRing, k: usize, tau_k: usize, tau: usize) -> std::result::Result<&Vector, DelayRejected> {
    if tau_k > tau {
        return Err(DelayRejected);
    }
    Ok(ring
        .get(k as i64 - tau_k as i64)
        .expect("ring holds the last tau + 1 values"))
}

/// Pointwise error check for a consistent delayed estimate:
/// `|e|^2 <= Theta * sum_{l = max(k - tau_k + 1, 0)}^{k} |G y^l - G y^{l-1}|^2`.
pub fn consistent_monitor(ring: &HistoryRing, k: usize, tau_k: usize, big_theta: f64) -> MonitorReport {
    let at = |l: i64| ring.get(l).expect("monitor window inside ring");
    let k = k as i64;
    let e = at(k - tau_k as i64) - at(k);
    let lo = (k - tau_k as i64 + 1).max(0);
    let sum: f64 = (lo..=k).map(|l| (at(l) - at(l - 1)).norm_squared()).sum();
    MonitorReport::checked(e.norm_squared(), big_theta * sum)
}

pub struct ExactOracle {
    monitor: bool,
}

impl ExactOracle {
    pub fn new() -> Self {
        Self { monitor: false }
    }

    pub fn with_monitor(mut self, on: bool) -> Self {
        self.monitor = on;
        self
    }
}

impl Default for ExactOracle {
    fn default() -> Self {
        Self::new()
    }
}

impl Oracle for ExactOracle {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn regime(&self) -> Regime {
        Regime::Exact
    }

    fn estimate(&mut self, op: &OperatorHandle, _k: usize, y: &Vector) -> Result<Estimate> {
        Ok(Estimate {
            value: op.evaluate(y)?,
            tau_used: 0,
            monitor: self.monitor.then(|| MonitorReport::checked(0.0, 0.0)),
        })
    }
}

/// Consistent delayed oracle: every iteration the fresh value `G y^k` is
/// committed to the ring and the estimator is `G y^{k - tau_k}`.
pub struct DelayedOracle {
    tau: usize,
    ring: HistoryRing,
    sampler: DelaySampler,
    monitor: bool,
    log: EventLog,
}

impl DelayedOracle {
    pub fn new(sampler: DelaySampler) -> Self {
        let tau = sampler.model().tau_cap;
        Self {
            tau,
            ring: HistoryRing::new(tau + 1),
            sampler,
            monitor: false,
            log: EventLog::default(),
        }
    }

    pub fn with_monitor(mut self, on: bool) -> Self {
        self.monitor = on;
        self
    }

    pub fn events(&self) -> &EventLog {
        &self.log
    }

    pub fn take_events(&mut self) -> EventLog {
        std::mem::take(&mut self.log)
    }
}

impl Oracle for DelayedOracle {
    fn name(&self) -> &'static str {
        "delayed"
    }

    fn regime(&self) -> Regime {
        Regime::Consistent
    }

    fn estimate(&mut self, op: &OperatorHandle, k: usize, y: &Vector) -> Result<Estimate> {
        self.ring.push(k, op.evaluate(y)?);
        let draw = self.sampler.sample(k);
        self.log.extend(draw.events);
        let value = delayed_lookup(&self.ring, k, draw.tau_k, self.tau)
            .map_err(|_| AfpError::Config(format!("delay {} above cap {}", draw.tau_k, self.tau)))?
            .clone();
        let monitor = self
            .monitor
            .then(|| consistent_monitor(&self.ring, k, draw.tau_k, self.tau as f64));
        Ok(Estimate {
            value,
            tau_used: draw.tau_k,
            monitor,
        })
    }
}

/// Mini-batch size rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BatchRule {
    /// `max(b_min, min(ceil(r (k+1)^3), n))`.
    Cubic { r: f64, b_min: usize },
    /// Smallest batch meeting the per-iteration variance target
    /// `sigma^2 / (k + r)^(1 + omega)`: `b_k >= (k + r)^(1 + omega) t_k (t_k - s)`.
    Variance { r: f64, omega: f64 },
}

pub fn batch_schedule(k: usize, r_scale: f64, n: usize, b_min: usize) -> usize {
    let grow = (r_scale * ((k + 1) as f64).powi(3)).ceil();
    let capped = if grow >= n as f64 { n } else { grow as usize };
    b_min.max(capped)
}

impl BatchRule {
    pub fn size(&self, k: usize, n: usize, t_k: f64, s: f64) -> usize {
        match *self {
            BatchRule::Cubic { r, b_min } => batch_schedule(k, r, n, b_min),
            BatchRule::Variance { r, omega } => {
                let need = ((k as f64 + r).powf(1.0 + omega) * t_k * (t_k - s)).ceil();
                if need >= n as f64 { n } else { (need as usize).max(1) }
            }
        }
    }
}

/// Mean of `b` distinct components at `y`. A batch of `n` or more is the full
/// operator value.
pub fn minibatch_estimate(op: &OperatorHandle, y: &Vector, b: usize, rng: &mut Rng) -> Result<Vector> {
    let n = op
        .components()
        .ok_or_else(|| AfpError::Unsupported("mini-batch oracle needs a finite-sum operator".into()))?;
    if b == 0 {
        return Err(AfpError::InvalidInput("batch size must be at least 1".into()));
    }
    if b >= n {
        return op.evaluate(y);
    }
    let idx = rand::seq::index::sample(rng, n, b).into_vec();
    let vals = op.evaluate_components(&idx, y)?;
    let mut acc = Vector::zeros(y.len());
    for v in &vals {
        acc += v;
    }
    Ok(acc / b as f64)
}

/// Stochastic delayed oracle: a mini-batch estimate at the delayed iterate.
pub struct MinibatchDelayedOracle {
    tau: usize,
    iterates: HistoryRing,
    sampler: DelaySampler,
    rule: BatchRule,
    s: f64,
    rng: Rng,
    monitor: bool,
    log: EventLog,
}

impl MinibatchDelayedOracle {
    /// `s` enters the schedule value `t_k` used by the variance rule.
    pub fn new(sampler: DelaySampler, rule: BatchRule, s: f64, seed: u64) -> Self {
        let tau = sampler.model().tau_cap;
        Self {
            tau,
            iterates: HistoryRing::new(tau + 1),
            sampler,
            rule,
            s,
            rng: rng::stream(seed, streams::MINIBATCH),
            monitor: false,
            log: EventLog::default(),
        }
    }

    pub fn with_monitor(mut self, on: bool) -> Self {
        self.monitor = on;
        self
    }

    pub fn take_events(&mut self) -> EventLog {
        std::mem::take(&mut self.log)
    }
}

impl Oracle for MinibatchDelayedOracle {
    fn name(&self) -> &'static str {
        "minibatch_delayed"
    }

    fn regime(&self) -> Regime {
        Regime::Consistent
    }

    fn requires_components(&self) -> bool {
        true
    }

    fn estimate(&mut self, op: &OperatorHandle, k: usize, y: &Vector) -> Result<Estimate> {
        let n = op
            .components()
            .ok_or_else(|| AfpError::Unsupported("mini-batch oracle needs a finite-sum operator".into()))?;
        self.iterates.push(k, y.clone());
        let draw = self.sampler.sample(k);
        self.log.extend(draw.events);
        let yd = delayed_lookup(&self.iterates, k, draw.tau_k, self.tau)
            .map_err(|_| AfpError::Config(format!("delay {} above cap {}", draw.tau_k, self.tau)))?
            .clone();
        let t_k = k as f64 + 3.0 * self.s + self.tau as f64;
        let b = self.rule.size(k, n, t_k, self.s);
        let value = minibatch_estimate(op, &yd, b, &mut self.rng)?;
        let monitor = if self.monitor {
            let e = &value - op.evaluate_uncounted(y)?;
            Some(MonitorReport {
                error_sq: e.norm_squared(),
                bound: f64::NAN,
                slack: f64::NAN,
                advisory: true,
            })
        } else {
            None
        };
        Ok(Estimate {
            value,
            tau_used: draw.tau_k,
            monitor,
        })
    }
}

/// Per-component memory of the aggregated oracle.
#[derive(Clone, Debug)]
pub struct ComponentBuffer {
    slots: Vec<Vector>,
    last: Vec<usize>,
    sum: Vector,
    updates_since_sync: usize,
}

impl ComponentBuffer {
    /// Synchronous fill: every slot computed at the same iterate `k0`.
    pub fn new(values: Vec<Vector>, k0: usize) -> Self {
        assert!(!values.is_empty());
        let mut sum = Vector::zeros(values[0].len());
        for v in &values {
            sum += v;
        }
        Self {
            last: vec![k0; values.len()],
            slots: values,
            sum,
            updates_since_sync: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.slots.len()
    }

    pub fn slot(&self, i: usize) -> &Vector {
        &self.slots[i]
    }

    pub fn staleness(&self, i: usize, k: usize) -> usize {
        k - self.last[i]
    }

    pub fn max_staleness(&self, k: usize) -> (usize, usize) {
        (0..self.n())
            .map(|i| (i, self.staleness(i, k)))
            .max_by_key(|&(i, s)| (s, std::cmp::Reverse(i)))
            .expect("nonempty buffer")
    }

    pub fn last_refresh(&self, i: usize) -> usize {
        self.last[i]
    }

    /// Replaces slots `indices` with `fresh` computed at iteration `k` and
    /// returns the new slot mean.
    pub fn refresh(&mut self, k: usize, indices: &[usize], fresh: Vec<Vector>) -> Vector {
        for (&i, v) in indices.iter().zip(fresh) {
            self.sum += &v - &self.slots[i];
            self.slots[i] = v;
            self.last[i] = k;
        }
        self.updates_since_sync += indices.len();
        if self.updates_since_sync >= self.n() {
            self.resync();
        }
        self.mean()
    }

    pub fn mean(&self) -> Vector {
        &self.sum / self.n() as f64
    }

    fn exact_sum(&self) -> Vector {
        let mut s = Vector::zeros(self.sum.len());
        for v in &self.slots {
            s += v;
        }
        s
    }

    /// Relative gap between the running sum and a fresh summation.
    pub fn drift(&self) -> f64 {
        let exact = self.exact_sum();
        (&self.sum - &exact).norm() / exact.norm().max(f64::MIN_POSITIVE)
    }

    pub fn resync(&mut self) {
        self.sum = self.exact_sum();
        self.updates_since_sync = 0;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Incremental,
    Shuffling,
    RandomM(usize),
}

impl Strategy {
    /// Staleness cap the mechanism guarantees (or, for random subsets,
    /// enforces): `n`, `2n`, `2 ceil(n/m)`.
    pub fn default_cap(&self, n: usize) -> usize {
        match *self {
            Strategy::Incremental => n,
            Strategy::Shuffling => 2 * n,
            Strategy::RandomM(m) => 2 * n.div_ceil(m.max(1)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Incremental => "incremental",
            Strategy::Shuffling => "shuffling",
            Strategy::RandomM(_) => "random_m",
        }
    }
}

pub enum PermutationSource {
    Random(Rng),
    /// The same permutation every epoch.
    Fixed(Vec<usize>),
}

/// Chooses the active set `I_k`.
pub struct IndexPicker {
    strategy: Strategy,
    n: usize,
    perm: Vec<usize>,
    source: PermutationSource,
}

impl IndexPicker {
    pub fn new(strategy: Strategy, n: usize, seed: u64) -> Self {
        Self::with_source(strategy, n, PermutationSource::Random(rng::stream(seed, streams::PERMUTATION)))
    }

    pub fn with_source(strategy: Strategy, n: usize, source: PermutationSource) -> Self {
        assert!(n >= 1);
        if let Strategy::RandomM(m) = strategy {
            assert!((1..=n).contains(&m), "random subset size must lie in 1..=n");
        }
        if let PermutationSource::Fixed(p) = &source {
            let mut sorted = p.clone();
            sorted.sort_unstable();
            assert!(sorted.iter().copied().eq(0..n), "fixed permutation must permute 0..n");
        }
        Self {
            strategy,
            n,
            perm: (0..n).collect(),
            source,
        }
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    /// `I_k`. `overdue` lists slots that must be refreshed now to respect the
    /// staleness cap; only the random-subset strategy honours it.
    pub fn pick(&mut self, k: usize, overdue: &[usize]) -> Vec<usize> {
        let n = self.n;
        match self.strategy {
            Strategy::Incremental => vec![k % n],
            Strategy::Shuffling => {
                if k % n == 0 {
                    match &mut self.source {
                        PermutationSource::Random(rng) => self.perm.shuffle(rng),
                        PermutationSource::Fixed(p) => self.perm.clone_from(p),
                    }
                }
                vec![self.perm[k % n]]
            }
            Strategy::RandomM(m) => {
                let rng = match &mut self.source {
                    PermutationSource::Random(rng) => rng,
                    PermutationSource::Fixed(_) => panic!("random subsets need a random source"),
                };
                let mut chosen: Vec<usize> = overdue.to_vec();
                if chosen.len() < m {
                    let mut rest: Vec<usize> = (0..n).filter(|i| !overdue.contains(i)).collect();
                    let extra = m - chosen.len();
                    let (picked, _) = rest.partial_shuffle(rng, extra);
                    chosen.extend_from_slice(picked);
                }
                chosen.sort_unstable();
                chosen
            }
        }
    }
}

/// Convenience wrapper for a single draw of `I_k`.
pub fn pick_indices(picker: &mut IndexPicker, k: usize) -> Vec<usize> {
    picker.pick(k, &[])
}

/// Pointwise check for aggregated estimates:
/// `|e|^2 <= (Theta_hat / n) sum_{l=k-Theta_hat+1}^{k} sum_i |G_i y^l - G_i y^{l-1}|^2`.
struct InconsistentMonitor {
    window: usize,
    prev: Option<Vec<Vector>>,
    diffs: VecDeque<f64>,
}

impl InconsistentMonitor {
    fn new(window: usize) -> Self {
        Self {
            window,
            prev: None,
            diffs: VecDeque::with_capacity(window),
        }
    }

    fn observe(&mut self, op: &OperatorHandle, y: &Vector, estimate: &Vector) -> Result<MonitorReport> {
        let n = op.components().expect("aggregated oracle has components");
        let all: Vec<usize> = (0..n).collect();
        let cur = op.evaluate_components_uncounted(&all, y)?;
        let d = match &self.prev {
            Some(prev) => cur.iter().zip(prev).map(|(a, b)| (a - b).norm_squared()).sum(),
            None => 0.0,
        };
        if self.diffs.len() == self.window {
            self.diffs.pop_front();
        }
        self.diffs.push_back(d);
        let mut g = Vector::zeros(y.len());
        for v in &cur {
            g += v;
        }
        g /= n as f64;
        self.prev = Some(cur);
        let bound = self.window as f64 / n as f64 * self.diffs.iter().sum::<f64>();
        Ok(MonitorReport::checked((estimate - g).norm_squared(), bound))
    }
}

/// Aggregated oracle: a synchronous fill at `k = 0`, then the slots in `I_k`
/// are refreshed at `y^k` and the estimator is the slot mean.
pub struct AggregatedOracle {
    picker: IndexPicker,
    cap: usize,
    buffer: Option<ComponentBuffer>,
    monitor: Option<InconsistentMonitor>,
    log: EventLog,
    max_staleness: usize,
}

impl AggregatedOracle {
    pub fn new(strategy: Strategy, n: usize, seed: u64) -> Self {
        Self::with_picker(IndexPicker::new(strategy, n, seed))
    }

    pub fn with_picker(picker: IndexPicker) -> Self {
        let cap = picker.strategy().default_cap(picker.n);
        Self {
            picker,
            cap,
            buffer: None,
            monitor: None,
            log: EventLog::default(),
            max_staleness: 0,
        }
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    pub fn with_monitor(mut self, on: bool) -> Self {
        self.monitor = on.then(|| InconsistentMonitor::new(self.cap));
        self
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn buffer(&self) -> Option<&ComponentBuffer> {
        self.buffer.as_ref()
    }

    /// Largest staleness seen in any estimator so far.
    pub fn max_staleness(&self) -> usize {
        self.max_staleness
    }

    pub fn take_events(&mut self) -> EventLog {
        std::mem::take(&mut self.log)
    }
}

impl Oracle for AggregatedOracle {
    fn name(&self) -> &'static str {
        self.picker.strategy().name()
    }

    fn regime(&self) -> Regime {
        Regime::Inconsistent
    }

    fn requires_components(&self) -> bool {
        true
    }

    fn estimate(&mut self, op: &OperatorHandle, k: usize, y: &Vector) -> Result<Estimate> {
        let n = op
            .components()
            .ok_or_else(|| AfpError::Unsupported("aggregated oracle needs a finite-sum operator".into()))?;
        if n != self.picker.n {
            return Err(AfpError::Config(format!(
                "oracle built for {} components, operator has {n}",
                self.picker.n
            )));
        }
        if self.buffer.is_none() {
            let all: Vec<usize> = (0..n).collect();
            self.buffer = Some(ComponentBuffer::new(op.evaluate_components(&all, y)?, k));
        }
        let buf = self.buffer.as_mut().expect("filled above");
        let overdue: Vec<usize> = if matches!(self.picker.strategy(), Strategy::RandomM(_)) {
            (0..n).filter(|&i| buf.staleness(i, k) > self.cap).collect()
        } else {
            Vec::new()
        };
        let active = self.picker.pick(k, &overdue);
        for &i in &active {
            self.log.push(EventRecord {
                k,
                worker: i,
                issued: buf.last_refresh(i),
                commit: k,
                accepted: true,
            });
        }
        let fresh = op.evaluate_components(&active, y)?;
        let value = buf.refresh(k, &active, fresh);
        let (worst, stale) = buf.max_staleness(k);
        if stale > self.cap {
            return Err(AfpError::Staleness {
                index: worst,
                k,
                staleness: stale,
                cap: self.cap,
            });
        }
        self.max_staleness = self.max_staleness.max(stale);
        let monitor = match &mut self.monitor {
            Some(m) => Some(m.observe(op, y, &value)?),
            None => None,
        };
        trace!("aggregated k={k} active={active:?} stale={stale}");
        Ok(Estimate {
            value,
            tau_used: stale,
            monitor,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{DelayKind, DelayModel};
    use crate::operator::{CoCoercivityProfile, FiniteSumRule, FnRule, MapFn};
    use approx::assert_relative_eq;

    fn v1(x: f64) -> Vector {
        Vector::from_vec(vec![x])
    }

    fn pair_op() -> OperatorHandle {
        let parts: Vec<MapFn> = vec![Box::new(|x: &Vector| x.clone()), Box::new(|x: &Vector| x * 3.0)];
        OperatorHandle::new(FiniteSumRule::new(1, parts), CoCoercivityProfile::new(1.0 / 3.0, 0.0))
    }

    #[test]
    fn ring_lookup_and_negative_indices() {
        let mut ring = HistoryRing::new(2);
        ring.push(0, v1(1.0));
        ring.push(1, v1(0.9));
        assert_eq!(delayed_lookup(&ring, 1, 1, 1).unwrap()[0], 1.0);
        assert_eq!(delayed_lookup(&ring, 1, 0, 1).unwrap()[0], 0.9);
        assert_eq!(ring.get(-3).unwrap()[0], 1.0);
        assert_eq!(delayed_lookup(&ring, 1, 2, 1), Err(DelayRejected));
        ring.push(2, v1(0.8));
        assert!(ring.get(0).is_some(), "index 0 stays reachable");
        assert!(ring.get(1).is_some());
        assert_eq!(ring.len(), 2);
    }

    #[test]
    fn clamped_lookup_at_start() {
        let mut ring = HistoryRing::new(4);
        ring.push(0, v1(2.0));
        assert_eq!(delayed_lookup(&ring, 0, 3, 3).unwrap()[0], 2.0);
    }

    #[test]
    fn consistent_monitor_example() {
        let mut ring = HistoryRing::new(3);
        for (l, v) in [1.0, 0.9, 0.85].into_iter().enumerate() {
            ring.push(l, v1(v));
        }
        let rep = consistent_monitor(&ring, 2, 2, 2.0);
        assert_relative_eq!(rep.error_sq, 0.0225, epsilon = 1e-15);
        assert_relative_eq!(rep.bound, 0.025, epsilon = 1e-15);
        assert_relative_eq!(rep.slack, 0.0025, epsilon = 1e-15);
        let rep = consistent_monitor(&ring, 2, 0, 2.0);
        assert_eq!(rep.error_sq, 0.0);
        assert!(rep.slack >= 0.0);
    }

    #[test]
    fn constant_iterates_monitor_is_zero() {
        let mut ring = HistoryRing::new(4);
        for l in 0..4 {
            ring.push(l, v1(0.5));
        }
        let rep = consistent_monitor(&ring, 3, 3, 3.0);
        assert_eq!((rep.error_sq, rep.bound), (0.0, 0.0));
    }

    #[test]
    fn exact_oracle_matches_evaluate() {
        let op = pair_op();
        let mut o = ExactOracle::new();
        let e = o.estimate(&op, 0, &v1(2.0)).unwrap();
        assert_eq!(e.value[0], 4.0);
        assert_eq!(e.tau_used, 0);
    }

    #[test]
    fn zero_delay_oracle_is_exact() {
        let op = OperatorHandle::new(FnRule::new(1, |x| x * 2.0), CoCoercivityProfile::new(0.5, 0.0));
        let model = DelayModel {
            kind: DelayKind::Fixed(0),
            tau_cap: 3,
            seed: 0,
        };
        let mut o = DelayedOracle::new(DelaySampler::new(model));
        for k in 0..5 {
            let y = v1(k as f64 + 0.5);
            assert_eq!(o.estimate(&op, k, &y).unwrap().value, op.evaluate_uncounted(&y).unwrap());
        }
    }

    #[test]
    fn batch_schedule_examples() {
        assert_eq!(batch_schedule(0, 0.01, 1000, 5), 5);
        assert_eq!(batch_schedule(9, 0.01, 1000, 5), 10);
        assert_eq!(batch_schedule(10_000, 0.01, 1000, 5), 1000);
        let mut prev = 0;
        for k in 0..200 {
            let b = batch_schedule(k, 0.01, 1000, 5);
            assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn variance_batch_rule_grows_faster_than_cubic() {
        let rule = BatchRule::Variance { r: 1.0, omega: 0.1 };
        assert_eq!(rule.size(1000, 50, 1010.0, 1.1), 50);
        assert!(rule.size(0, 1_000_000, 4.0, 1.1) >= 12);
    }

    #[test]
    fn minibatch_full_and_pair() {
        let op = pair_op();
        let mut rng = rng::stream(0, 0);
        assert_eq!(minibatch_estimate(&op, &v1(1.0), 2, &mut rng).unwrap()[0], 2.0);
        assert_eq!(minibatch_estimate(&op, &v1(1.0), 7, &mut rng).unwrap()[0], 2.0);
        assert_eq!(op.counts().component, 4);
    }

    #[test]
    fn picker_orders() {
        let mut p = IndexPicker::new(Strategy::Incremental, 3, 0);
        let got: Vec<_> = (0..6).map(|k| pick_indices(&mut p, k)[0]).collect();
        assert_eq!(got, vec![0, 1, 2, 0, 1, 2]);

        let mut p = IndexPicker::with_source(Strategy::Shuffling, 3, PermutationSource::Fixed(vec![1, 2, 0]));
        let got: Vec<_> = (0..3).map(|k| pick_indices(&mut p, k)[0]).collect();
        assert_eq!(got, vec![1, 2, 0]);

        let draw = |seed| {
            let mut p = IndexPicker::new(Strategy::RandomM(2), 4, seed);
            pick_indices(&mut p, 0)
        };
        let a = draw(11);
        assert_eq!(a, draw(11));
        assert_eq!(a.len(), 2);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn shuffling_covers_each_epoch() {
        let n = 7;
        let mut p = IndexPicker::new(Strategy::Shuffling, n, 3);
        for epoch in 0..20 {
            let mut seen: Vec<usize> = (0..n).map(|j| pick_indices(&mut p, epoch * n + j)[0]).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn aggregated_hand_example() {
        let op = pair_op();
        let mut o = AggregatedOracle::new(Strategy::Incremental, 2, 0);
        let e0 = o.estimate(&op, 0, &v1(1.0)).unwrap();
        assert_eq!(e0.value[0], 2.0);
        let e1 = o.estimate(&op, 1, &v1(0.9)).unwrap();
        assert_relative_eq!(e1.value[0], 1.85, epsilon = 1e-15);
        assert_eq!(e1.tau_used, 1);
        // init pass plus one component per iteration
        assert_eq!(op.counts().component, 4);
    }

    #[test]
    fn buffer_running_sum_tracks_slots() {
        let mut buf = ComponentBuffer::new(vec![v1(1.0), v1(2.0), v1(3.0)], 0);
        for k in 1..50 {
            buf.refresh(k, &[k % 3], vec![v1(1.0 / k as f64)]);
            assert!(buf.drift() <= 1e-10);
        }
        assert_eq!(buf.staleness(0, 49), 1);
    }

    #[test]
    fn staleness_cap_violation_is_reported() {
        let op = pair_op();
        let mut o = AggregatedOracle::new(Strategy::Incremental, 2, 0).with_cap(0);
        o.estimate(&op, 0, &v1(1.0)).unwrap();
        let err = o.estimate(&op, 1, &v1(1.0)).unwrap_err();
        assert!(matches!(err, AfpError::Staleness { index: 0, k: 1, staleness: 1, cap: 0 }));
    }
}
