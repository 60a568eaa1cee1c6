//! The accelerated fixed-point iteration, its parameter schedule and stepsize
//! rule, the Lyapunov diagnostic and a Krasnosel'skii-Mann baseline.

use log::debug;

use crate::diagnostics::{StopReason, Trace, TraceRecord};
use crate::operator::{CoCoercivityProfile, OperatorHandle};
use crate::oracle::{Oracle, Regime};
use crate::{AfpError, Result, Vector};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EtaMode {
    /// Largest stepsize admitted by the convergence theory for the oracle's regime.
    Theory,
    Heuristic(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub s: f64,
    pub gamma: f64,
    pub tau: usize,
    pub eta_mode: EtaMode,
    pub k_max: usize,
    pub eps_rel: f64,
    pub seed: u64,
    /// Log the true residual every `stride` iterations. `None` picks 1 for
    /// small problems and 10 otherwise.
    pub residual_stride: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            s: 1.1,
            gamma: 1.0,
            tau: 0,
            eta_mode: EtaMode::Heuristic(1.0),
            k_max: 1000,
            eps_rel: 0.0,
            seed: 0,
            residual_stride: None,
        }
    }
}

impl SolverConfig {
    /// Experiment defaults: `s = 1.1`, `gamma = 1`, `eta = 1/(1 + tau)`.
    pub fn heuristic(tau: usize) -> Self {
        Self {
            tau,
            eta_mode: EtaMode::Heuristic(1.0 / (1.0 + tau as f64)),
            ..Self::default()
        }
    }

    pub fn validate(&self, delayed: bool) -> Result<()> {
        if !(self.s > 1.0) {
            return Err(AfpError::Config(format!("s must exceed 1, got {}", self.s)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(AfpError::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if delayed && self.tau == 0 {
            return Err(AfpError::Config("tau must be at least 1 for a delayed oracle".into()));
        }
        if !(self.eps_rel >= 0.0) {
            return Err(AfpError::Config(format!("eps_rel must be nonnegative, got {}", self.eps_rel)));
        }
        match self.eta_mode {
            EtaMode::Theory => {
                if self.s < 1.0 + 3.0 * self.gamma {
                    return Err(AfpError::Config(format!(
                        "theory stepsize requires s >= 1 + 3 gamma (s = {}, gamma = {})",
                        self.s, self.gamma
                    )));
                }
                if self.gamma == 0.0 {
                    return Err(AfpError::Config("theory stepsize requires gamma > 0".into()));
                }
            }
            EtaMode::Heuristic(eta) => {
                if !(eta > 0.0 && eta.is_finite()) {
                    return Err(AfpError::Config(format!("eta must be positive, got {eta}")));
                }
            }
        }
        if self.residual_stride == Some(0) {
            return Err(AfpError::Config("residual stride must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub t: f64,
    pub gamma: f64,
    pub eta: f64,
}

/// `t_k = k + 3s + tau`, `gamma_k = gamma`, `eta_k = eta t_k / (2 (t_k - s))`.
pub fn schedule(k: usize, cfg: &SolverConfig, eta: f64) -> Schedule {
    schedule_at(k as f64 + 3.0 * cfg.s + cfg.tau as f64, cfg, eta)
}

/// Schedule for iteration `k - 1`; `k = 0` gives the pre-start value `t_{-1}`.
pub fn schedule_prev(k: usize, cfg: &SolverConfig, eta: f64) -> Schedule {
    schedule_at(k as f64 - 1.0 + 3.0 * cfg.s + cfg.tau as f64, cfg, eta)
}

fn schedule_at(t: f64, cfg: &SolverConfig, eta: f64) -> Schedule {
    assert!(t > cfg.s, "schedule requires t_k > s (t = {t}, s = {})", cfg.s);
    Schedule {
        t,
        gamma: cfg.gamma,
        eta: eta * t / (2.0 * (t - cfg.s)),
    }
}

/// Constants of the error approximation condition together with the derived
/// quantities entering the stepsize bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepsizeBound {
    pub kappa: f64,
    pub big_theta: f64,
    pub theta_hat: f64,
    pub alpha: f64,
    pub theta: f64,
    pub lambda: f64,
}

impl StepsizeBound {
    pub fn new(kappa: f64, big_theta: f64, theta_hat: f64, cfg: &SolverConfig) -> Self {
        let s = cfg.s;
        let alpha = (2.0 * s + 1.0) / ((s + 1.0) * (s + 1.0));
        Self {
            kappa,
            big_theta,
            theta_hat,
            alpha,
            theta: 1.0 - (1.0 - kappa) * alpha,
            lambda: 1.0 + s - cfg.gamma,
        }
    }

    /// Instantiation of the error condition for each oracle family.
    pub fn for_regime(regime: Regime, cfg: &SolverConfig) -> Self {
        let tau = cfg.tau as f64;
        match regime {
            Regime::Exact => Self::new(1.0, tau.max(1.0), 0.0, cfg),
            Regime::Consistent => Self::new(1.0, tau, 0.0, cfg),
            Regime::Inconsistent => Self::new(1.0, 0.0, tau, cfg),
        }
    }
}

/// Largest admissible base stepsize for the given constants. Each of the two
/// constraints applies only when its weights are active; the result is the
/// smaller of those that do.
pub fn theory_stepsize(profile: &CoCoercivityProfile, bound: &StepsizeBound, cfg: &SolverConfig) -> Result<f64> {
    let (beta, beta_bar) = (profile.beta, profile.beta_bar);
    let b = bound;
    if !(b.kappa > b.alpha && b.kappa <= 1.0) {
        return Err(AfpError::Config(format!(
            "stepsize hypothesis alpha < kappa <= 1 violated (alpha = {}, kappa = {})",
            b.alpha, b.kappa
        )));
    }
    if b.big_theta * beta_bar > b.theta_hat * beta {
        return Err(AfpError::Config(format!(
            "stepsize hypothesis Theta * beta_bar <= Theta_hat * beta violated ({} * {} > {} * {})",
            b.big_theta, beta_bar, b.theta_hat, beta
        )));
    }
    let tau = cfg.tau as f64;
    let mut eta = f64::INFINITY;
    if b.big_theta > 0.0 || beta > 0.0 {
        eta = eta.min(3.0 * b.theta * beta / (7.0 * b.lambda * b.big_theta + 3.0 * b.theta * (1.0 + tau)));
    }
    if b.theta_hat > 0.0 {
        if beta_bar <= 0.0 {
            return Err(AfpError::Config(
                "stepsize with Theta_hat > 0 requires beta_bar > 0".into(),
            ));
        }
        eta = eta.min(3.0 * b.theta * beta_bar / (7.0 * b.lambda * b.theta_hat));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(AfpError::Config(format!("no positive stepsize admitted (got {eta})")));
    }
    Ok(eta)
}

/// Theory stepsize for an oracle regime. Consistent regimes have
/// `Theta_hat = 0` and therefore use the profile with `beta_bar` dropped,
/// which is always a valid (weaker) declaration.
pub fn theory_eta(profile: &CoCoercivityProfile, regime: Regime, cfg: &SolverConfig) -> Result<f64> {
    let bound = StepsizeBound::for_regime(regime, cfg);
    let prof = match regime {
        Regime::Inconsistent => profile.clone(),
        _ => CoCoercivityProfile::new(profile.beta, 0.0),
    };
    theory_stepsize(&prof, &bound, cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    pub x: Vector,
    pub y: Vector,
    pub z: Vector,
    pub k: usize,
    pub g_tilde: Vector,
    pub sched: Option<Schedule>,
}

impl SolverState {
    pub fn new(y0: Vector) -> Self {
        let p = y0.len();
        Self {
            x: y0.clone(),
            z: y0.clone(),
            y: y0,
            k: 0,
            g_tilde: Vector::zeros(p),
            sched: None,
        }
    }
}

/// One accelerated step with estimator `est` and schedule `sched`.
pub fn afp_step(state: &mut SolverState, est: &Vector, sched: Schedule, s: f64) -> Result<()> {
    if est.len() != state.y.len() {
        return Err(AfpError::DimensionMismatch {
            expected: state.y.len(),
            got: est.len(),
        });
    }
    if est.iter().any(|v| !v.is_finite()) {
        return Err(AfpError::Numerical {
            k: state.k,
            what: "estimator".into(),
        });
    }
    let x = &state.y - est * sched.eta;
    state.z += (&x - &state.y) * (sched.gamma / s);
    // ((t - s) x + s z) / t, written so that x = z reproduces x exactly
    state.y = &x + (&state.z - &x) * (s / sched.t);
    state.x = x;
    state.g_tilde.copy_from(est);
    state.sched = Some(sched);
    state.k += 1;
    Ok(())
}

/// KM step `y - lambda_km * 2 beta * Gy`.
pub fn km_step(y: &Vector, gy: &Vector, beta: f64, lambda_km: f64) -> Result<Vector> {
    if !(lambda_km > 0.0 && lambda_km < 1.0) {
        return Err(AfpError::Config(format!("lambda_km must lie in (0, 1), got {lambda_km}")));
    }
    if gy.iter().any(|v| !v.is_finite()) {
        return Err(AfpError::Numerical {
            k: 0,
            what: "KM operator value".into(),
        });
    }
    Ok(y - gy * (lambda_km * 2.0 * beta))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LyapunovValue {
    pub value: f64,
    /// Guaranteed lower bound, present when `s >= 1 + 3 gamma`.
    pub lower_bound: Option<f64>,
}

/// Three-term potential at `state` relative to the root `x_star`, using the
/// schedule of the previous iteration and `gy = G y^k`.
pub fn lyapunov_l(
    state: &SolverState,
    x_star: Option<&Vector>,
    prev: Schedule,
    gy: &Vector,
    s: f64,
    eta: f64,
) -> Result<LyapunovValue> {
    let x_star = x_star.ok_or_else(|| AfpError::Unsupported("Lyapunov value needs a known root".into()))?;
    if prev.gamma <= 0.0 {
        return Err(AfpError::Unsupported("Lyapunov value needs gamma > 0".into()));
    }
    let t = prev.t;
    let a = prev.eta * t * (t - s);
    let zd = (&state.z - x_star).norm_squared();
    let g2 = gy.norm_squared();
    let value = 0.5 * a * g2
        + s * t * gy.dot(&(&state.y - &state.z))
        + s * s * (s - 1.0) / (2.0 * prev.eta * prev.gamma) * zd;
    let lower_bound = if s >= 1.0 + 3.0 * prev.gamma {
        let lb = eta * t * t / 8.0 * g2 + s * s * (t - 3.0 * s) / (eta * t) * zd;
        let tol = 1e-9 * (1.0 + value.abs().max(lb.abs()));
        if value < lb - tol {
            return Err(AfpError::Numerical {
                k: state.k,
                what: format!("Lyapunov value {value} below its lower bound {lb}"),
            });
        }
        Some(lb)
    } else {
        None
    };
    Ok(LyapunovValue { value, lower_bound })
}

fn default_stride(op: &OperatorHandle) -> usize {
    let work = op.dim() * op.components().unwrap_or(1);
    if work as f64 <= 1e6 { 1 } else { 10 }
}

/// Base stepsize used by `run` for this configuration and oracle.
pub fn resolve_eta(op: &OperatorHandle, regime: Regime, cfg: &SolverConfig) -> Result<f64> {
    match cfg.eta_mode {
        EtaMode::Theory => theory_eta(op.profile(), regime, cfg),
        EtaMode::Heuristic(eta) => Ok(eta),
    }
}

pub fn run(op: &OperatorHandle, oracle: &mut dyn Oracle, cfg: &SolverConfig, y0: &Vector) -> Result<Trace> {
    run_with_observer(op, oracle, cfg, y0, &mut |_, _| {})
}

/// Like [`run`], calling `observer(state, Gy)` at every logged iteration
/// before the step is taken.
pub fn run_with_observer(
    op: &OperatorHandle,
    oracle: &mut dyn Oracle,
    cfg: &SolverConfig,
    y0: &Vector,
    observer: &mut dyn FnMut(&SolverState, &Vector),
) -> Result<Trace> {
    let regime = oracle.regime();
    cfg.validate(regime != Regime::Exact)?;
    op.profile().validate()?;
    if y0.len() != op.dim() {
        return Err(AfpError::DimensionMismatch {
            expected: op.dim(),
            got: y0.len(),
        });
    }
    if oracle.requires_components() && !op.is_finite_sum() {
        return Err(AfpError::Unsupported(format!(
            "oracle '{}' needs a finite-sum operator",
            oracle.name()
        )));
    }
    let eta = resolve_eta(op, regime, cfg)?;
    let stride = cfg.residual_stride.unwrap_or_else(|| default_stride(op));
    debug!("run: oracle={} eta={eta} stride={stride}", oracle.name());

    let mut state = SolverState::new(y0.clone());
    let mut trace = Trace::new(cfg.seed);
    trace.eta = eta;
    trace.tau = cfg.tau;
    let mut r0 = f64::NAN;
    for k in 0..=cfg.k_max {
        let sched = schedule(k, cfg, eta);
        let logged = k % stride == 0 || k == cfg.k_max;
        let mut row = None;
        if logged {
            let gy = op.evaluate_uncounted(&state.y)?;
            let res = gy.norm();
            if !res.is_finite() {
                return Err(AfpError::Numerical { k, what: "residual".into() });
            }
            if k == 0 {
                r0 = res;
            }
            let rel = if r0 > 0.0 { res / r0 } else { 0.0 };
            observer(&state, &gy);
            row = Some(TraceRecord {
                k,
                t_k: sched.t,
                eta_k: sched.eta,
                res_abs: res,
                res_rel: rel,
                tau_used: 0,
                full_passes: op.full_passes(),
                monitor_slack: None,
                seed: cfg.seed,
            });
            if rel <= cfg.eps_rel {
                trace.push(row.take().unwrap());
                trace.stop = StopReason::Converged;
                return Ok(trace);
            }
        }
        if k == cfg.k_max {
            if let Some(r) = row {
                trace.push(r);
            }
            trace.stop = StopReason::MaxIterations;
            break;
        }
        let est = oracle
            .estimate(op, k, &state.y)
            .map_err(|e| AfpError::Oracle { k, source: Box::new(e) })?;
        if let Some(mut r) = row {
            r.tau_used = est.tau_used;
            r.monitor_slack = est.monitor.filter(|m| !m.advisory).map(|m| m.slack);
            trace.push(r);
        }
        afp_step(&mut state, &est.value, sched, cfg.s)?;
    }
    Ok(trace)
}

/// KM baseline `y <- y - 2 lambda beta G y` with exact evaluations.
pub fn run_km(op: &OperatorHandle, lambda_km: f64, cfg: &SolverConfig, y0: &Vector) -> Result<Trace> {
    let beta = op.profile().beta;
    if !(beta > 0.0) {
        return Err(AfpError::Config("KM baseline needs beta > 0".into()));
    }
    let stride = cfg.residual_stride.unwrap_or_else(|| default_stride(op));
    let mut trace = Trace::new(cfg.seed);
    trace.eta = 2.0 * lambda_km * beta;
    let mut y = y0.clone();
    let mut r0 = f64::NAN;
    for k in 0..=cfg.k_max {
        let gy = op.evaluate(&y)?;
        let res = gy.norm();
        if !res.is_finite() {
            return Err(AfpError::Numerical { k, what: "residual".into() });
        }
        if k == 0 {
            r0 = res;
        }
        let rel = if r0 > 0.0 { res / r0 } else { 0.0 };
        let converged = rel <= cfg.eps_rel;
        if k % stride == 0 || k == cfg.k_max || converged {
            trace.push(TraceRecord {
                k,
                t_k: 0.0,
                eta_k: trace.eta,
                res_abs: res,
                res_rel: rel,
                tau_used: 0,
                full_passes: op.full_passes(),
                monitor_slack: None,
                seed: cfg.seed,
            });
        }
        if converged {
            trace.stop = StopReason::Converged;
            return Ok(trace);
        }
        if k == cfg.k_max {
            break;
        }
        y = km_step(&y, &gy, beta, lambda_km).map_err(|e| match e {
            AfpError::Numerical { what, .. } => AfpError::Numerical { k, what },
            other => other,
        })?;
    }
    trace.stop = StopReason::MaxIterations;
    Ok(trace)
}
