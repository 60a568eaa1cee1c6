//! Evaluable operators with optional finite-sum structure.
//!
//! An [`OperatorHandle`] wraps an [`OperatorRule`] together with its declared
//! co-coercivity profile and the call counters that drive pass accounting.
//! Component indices are zero-based.

use std::cell::Cell;
use std::fmt;
use std::rc::Rc;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::rng::{self, streams};
use crate::{AfpError, Result, Vector};

/// The evaluation rule of an operator.
pub trait OperatorRule {
    fn dim(&self) -> usize;

    /// Full evaluation `Gx`. Finite-sum rules must return the component mean.
    fn apply(&self, x: &Vector) -> Vector;

    /// Number of components, `None` for a plain operator.
    fn components(&self) -> Option<usize> {
        None
    }

    fn apply_component(&self, _i: usize, _x: &Vector) -> Vector {
        panic!("apply_component called on an operator without components")
    }

    /// Several components at the same point. Rules with shared per-point work
    /// (a projection, say) override this to do it once.
    fn apply_components(&self, indices: &[usize], x: &Vector) -> Vec<Vector> {
        indices.iter().map(|&i| self.apply_component(i, x)).collect()
    }
}

pub type DRule = Rc<dyn Fn(&Vector, &Vector) -> f64>;

/// Constants of the generalized co-coercivity inequality
/// `<Gx - Gy, x - y> >= beta |Gx - Gy|^2 + beta_bar D(x, y)`.
#[derive(Clone, Default)]
pub struct CoCoercivityProfile {
    pub beta: f64,
    pub beta_bar: f64,
    /// Custom `D`; finite-sum operators fall back to the mean squared
    /// component difference, plain operators to zero.
    pub d_rule: Option<DRule>,
}

impl fmt::Debug for CoCoercivityProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoCoercivityProfile")
            .field("beta", &self.beta)
            .field("beta_bar", &self.beta_bar)
            .field("d_rule", &self.d_rule.as_ref().map(|_| "custom"))
            .finish()
    }
}

impl CoCoercivityProfile {
    pub fn new(beta: f64, beta_bar: f64) -> Self {
        Self {
            beta,
            beta_bar,
            d_rule: None,
        }
    }

    pub fn with_d_rule(mut self, rule: DRule) -> Self {
        self.d_rule = Some(rule);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta_bar >= 0.0) {
            return Err(AfpError::Config(format!(
                "co-coercivity constants must be nonnegative (beta = {}, beta_bar = {})",
                self.beta, self.beta_bar
            )));
        }
        if self.beta == 0.0 && self.beta_bar == 0.0 {
            return Err(AfpError::Config(
                "at least one of beta, beta_bar must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CallCounts {
    /// Full evaluations of a plain operator.
    pub full: u64,
    /// Component evaluations; a full evaluation of a finite-sum operator adds n.
    pub component: u64,
}

pub struct OperatorHandle {
    rule: Box<dyn OperatorRule>,
    profile: CoCoercivityProfile,
    counts: Cell<CallCounts>,
}

impl fmt::Debug for OperatorHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorHandle")
            .field("dim", &self.dim())
            .field("components", &self.components())
            .field("profile", &self.profile)
            .field("counts", &self.counts.get())
            .finish()
    }
}

impl OperatorHandle {
    pub fn new(rule: impl OperatorRule + 'static, profile: CoCoercivityProfile) -> Self {
        Self {
            rule: Box::new(rule),
            profile,
            counts: Cell::new(CallCounts::default()),
        }
    }

    pub fn dim(&self) -> usize {
        self.rule.dim()
    }

    pub fn components(&self) -> Option<usize> {
        self.rule.components()
    }

    pub fn is_finite_sum(&self) -> bool {
        self.components().is_some()
    }

    pub fn profile(&self) -> &CoCoercivityProfile {
        &self.profile
    }

    pub fn set_profile(&mut self, profile: CoCoercivityProfile) {
        self.profile = profile;
    }

    pub fn rule(&self) -> &dyn OperatorRule {
        self.rule.as_ref()
    }

    pub fn counts(&self) -> CallCounts {
        self.counts.get()
    }

    pub fn reset_counts(&self) {
        self.counts.set(CallCounts::default());
    }

    /// Work done so far in units of full passes.
    pub fn full_passes(&self) -> f64 {
        let c = self.counts.get();
        match self.components() {
            Some(n) => c.component as f64 / n as f64,
            None => c.full as f64,
        }
    }

    fn check_dim(&self, x: &Vector) -> Result<()> {
        if x.len() != self.dim() {
            return Err(AfpError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_component(&self, i: usize) -> Result<usize> {
        let n = self
            .components()
            .ok_or_else(|| AfpError::Unsupported("operator has no finite-sum structure".into()))?;
        if i >= n {
            return Err(AfpError::IndexOutOfRange { index: i, n });
        }
        Ok(n)
    }

    /// `Gx`, counted.
    pub fn evaluate(&self, x: &Vector) -> Result<Vector> {
        self.check_dim(x)?;
        let mut c = self.counts.get();
        match self.components() {
            Some(n) => c.component += n as u64,
            None => c.full += 1,
        }
        self.counts.set(c);
        Ok(self.rule.apply(x))
    }

    /// `Gx` without touching the counters, for logging and monitors.
    pub fn evaluate_uncounted(&self, x: &Vector) -> Result<Vector> {
        self.check_dim(x)?;
        Ok(self.rule.apply(x))
    }

    /// `G_i x`, counted.
    pub fn evaluate_component(&self, i: usize, x: &Vector) -> Result<Vector> {
        self.check_dim(x)?;
        self.check_component(i)?;
        self.bump_components(1);
        Ok(self.rule.apply_component(i, x))
    }

    /// `G_i x` for every `i` in `indices`, counted once per index.
    pub fn evaluate_components(&self, indices: &[usize], x: &Vector) -> Result<Vec<Vector>> {
        self.check_dim(x)?;
        for &i in indices {
            self.check_component(i)?;
        }
        self.bump_components(indices.len() as u64);
        Ok(self.rule.apply_components(indices, x))
    }

    pub fn evaluate_components_uncounted(
        &self,
        indices: &[usize],
        x: &Vector,
    ) -> Result<Vec<Vector>> {
        self.check_dim(x)?;
        for &i in indices {
            self.check_component(i)?;
        }
        Ok(self.rule.apply_components(indices, x))
    }

    fn bump_components(&self, by: u64) {
        let mut c = self.counts.get();
        c.component += by;
        self.counts.set(c);
    }

    /// `D(x, y)` under the declared profile. Uncounted.
    pub fn d_value(&self, x: &Vector, y: &Vector) -> f64 {
        if let Some(rule) = &self.profile.d_rule {
            return rule(x, y);
        }
        match self.components() {
            Some(n) => {
                let all: Vec<usize> = (0..n).collect();
                let gx = self.rule.apply_components(&all, x);
                let gy = self.rule.apply_components(&all, y);
                gx.iter()
                    .zip(&gy)
                    .map(|(a, b)| (a - b).norm_squared())
                    .sum::<f64>()
                    / n as f64
            }
            None => 0.0,
        }
    }
}

/// `Gx = Ax` for a dense square matrix.
pub struct LinearRule {
    pub matrix: DMatrix<f64>,
}

impl LinearRule {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        assert_eq!(matrix.nrows(), matrix.ncols(), "linear operator must be square");
        Self { matrix }
    }
}

impl OperatorRule for LinearRule {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, x: &Vector) -> Vector {
        &self.matrix * x
    }
}

pub type MapFn = Box<dyn Fn(&Vector) -> Vector>;

/// Operator given by a closure.
pub struct FnRule {
    dim: usize,
    map: MapFn,
}

impl FnRule {
    pub fn new(dim: usize, map: impl Fn(&Vector) -> Vector + 'static) -> Self {
        Self {
            dim,
            map: Box::new(map),
        }
    }
}

impl OperatorRule for FnRule {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &Vector) -> Vector {
        (self.map)(x)
    }
}

/// Finite sum `G = (1/n) sum_i G_i` of closures.
pub struct FiniteSumRule {
    dim: usize,
    parts: Vec<MapFn>,
}

impl FiniteSumRule {
    pub fn new(dim: usize, parts: Vec<MapFn>) -> Self {
        assert!(!parts.is_empty(), "finite sum needs at least one component");
        Self { dim, parts }
    }
}

impl OperatorRule for FiniteSumRule {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &Vector) -> Vector {
        let mut acc = Vector::zeros(self.dim);
        for part in &self.parts {
            acc += part(x);
        }
        acc / self.parts.len() as f64
    }

    fn components(&self) -> Option<usize> {
        Some(self.parts.len())
    }

    fn apply_component(&self, i: usize, x: &Vector) -> Vector {
        (self.parts[i])(x)
    }
}

#[derive(Clone, Debug)]
pub struct AuditReport {
    pub samples: usize,
    pub min_slack: f64,
    /// The pair attaining the minimum when it is negative.
    pub violation: Option<(Vector, Vector)>,
}

impl AuditReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.min_slack >= -tol
    }
}

/// Sample-based check of the declared co-coercivity constants on
/// standard-normal pairs. Does not touch the call counters.
pub fn cocoercivity_audit(op: &OperatorHandle, sample_count: usize, rng_seed: u64) -> Result<AuditReport> {
    if sample_count == 0 {
        return Err(AfpError::InvalidInput("sample_count must be at least 1".into()));
    }
    let mut rng = rng::stream(rng_seed, streams::AUDIT);
    let p = op.dim();
    let prof = op.profile();
    let mut min_slack = f64::INFINITY;
    let mut worst = None;
    for _ in 0..sample_count {
        let x = Vector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let y = Vector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let dg = op.evaluate_uncounted(&x)? - op.evaluate_uncounted(&y)?;
        let mut slack = dg.dot(&(&x - &y)) - prof.beta * dg.norm_squared();
        if prof.beta_bar != 0.0 {
            slack -= prof.beta_bar * op.d_value(&x, &y);
        }
        if slack < min_slack {
            min_slack = slack;
            worst = Some((x, y));
        }
    }
    let violation = if min_slack < 0.0 { worst } else { None };
    Ok(AuditReport {
        samples: sample_count,
        min_slack,
        violation,
    })
}
