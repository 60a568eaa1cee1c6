//! JSON experiment configuration. Every block except `solver` may be
//! omitted; inside `solver` only `s` is required.

use std::path::{Path, PathBuf};

use afp_core::engine::{EtaMode, SolverConfig};
use afp_core::harness::{DelayKind, DelayModel};
use afp_core::oracle::{BatchRule, Strategy};
use afp_core::problems::BfsScaling;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Problem instances per run; instance `i` uses seed `seed + i`.
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default)]
    pub problem: ProblemConfig,
    pub solver: SolverBlock,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_instances() -> usize {
    5
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Game,
    Quadratic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    Raw,
    FixedPoint,
}

impl From<Scaling> for BfsScaling {
    fn from(s: Scaling) -> Self {
        match s {
            Scaling::Raw => BfsScaling::Raw,
            Scaling::FixedPoint => BfsScaling::FixedPoint,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    /// Game grid side; the strategy sets have `m * m` points.
    pub m: usize,
    /// Number of components (observations for the game).
    pub n: usize,
    pub theta_decay: f64,
    pub noise_var: f64,
    pub cond: f64,
    /// Quadratic dimension.
    pub p: usize,
    pub scaling: Scaling,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            kind: ProblemKind::Quadratic,
            m: 5,
            n: 20,
            theta_decay: 0.8,
            noise_var: 0.05,
            cond: 100.0,
            p: 50,
            scaling: Scaling::FixedPoint,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaModeConfig {
    Theory,
    Heuristic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub s: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default)]
    pub tau: usize,
    #[serde(default = "heuristic")]
    pub eta_mode: EtaModeConfig,
    /// Heuristic stepsize; `null` means `1 / (1 + tau)`.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_eps")]
    pub eps_rel: f64,
}

fn one() -> f64 {
    1.0
}

fn heuristic() -> EtaModeConfig {
    EtaModeConfig::Heuristic
}

fn default_k_max() -> usize {
    20_000
}

fn default_eps() -> f64 {
    1e-6
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Exact,
    Delayed,
    MinibatchDelayed,
    Incremental,
    Shuffling,
    RandomM,
}

impl OracleKind {
    pub fn is_aggregated(self) -> bool {
        matches!(self, OracleKind::Incremental | OracleKind::Shuffling | OracleKind::RandomM)
    }

    pub fn is_delayed(self) -> bool {
        matches!(self, OracleKind::Delayed | OracleKind::MinibatchDelayed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchRuleKind {
    Cubic,
    Variance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayKindConfig {
    Uniform,
    Fixed,
    WorkerSpeeds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DelayModelConfig {
    pub kind: DelayKindConfig,
    /// Delay for the fixed model; defaults to `solver.tau`.
    pub d: Option<usize>,
    /// Mean service time per worker, in server steps.
    pub speeds: Vec<f64>,
}

impl Default for DelayModelConfig {
    fn default() -> Self {
        Self {
            kind: DelayKindConfig::Uniform,
            d: None,
            speeds: vec![1.0, 2.0, 4.0, 8.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub kind: OracleKind,
    /// Subset size for `random_m`.
    pub m: usize,
    /// Staleness cap override for the aggregated kinds.
    pub cap: Option<usize>,
    pub batch_rule: BatchRuleKind,
    pub r_scale: f64,
    pub b_min: usize,
    pub omega: f64,
    pub delay_model: DelayModelConfig,
    /// Record the error-condition slack in the trace (extra evaluations).
    pub monitor: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            kind: OracleKind::Exact,
            m: 10,
            cap: None,
            batch_rule: BatchRuleKind::Cubic,
            r_scale: 0.01,
            b_min: 5,
            omega: 0.5,
            delay_model: DelayModelConfig::default(),
            monitor: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Residual logging stride; `null` picks one from the problem size.
    pub stride: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: default_instances(),
            problem: ProblemConfig::default(),
            solver: SolverBlock {
                s: 1.1,
                gamma: 1.0,
                tau: 0,
                eta_mode: EtaModeConfig::Heuristic,
                eta: None,
                k_max: default_k_max(),
                eps_rel: default_eps(),
            },
            oracle: OracleConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a document, reporting the dotted path of the offending field.
    pub fn from_value(v: Value) -> Result<Self, CliError> {
        let cfg: Self = serde_path_to_error::deserialize(v).map_err(|e| {
            let path = e.path().to_string();
            let msg = e.inner().to_string();
            let field = msg
                .strip_prefix("missing field `")
                .and_then(|r| r.split('`').next())
                .map(|f| if path == "." { f.to_string() } else { format!("{path}.{f}") });
            match field {
                Some(f) => CliError::Config(format!("{f}: missing field")),
                None => CliError::Config(format!("{path}: {msg}")),
            }
        })?;
        let mut cfg = cfg;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::to_value(Self::default()).expect("default serializes"),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        Self::from_value(doc)
    }

    /// The aggregated strategies fix their own delay bound; `solver.tau = 0`
    /// is read as "use the strategy's staleness cap".
    fn resolve(&mut self) {
        if let Some(st) = self.strategy() {
            if self.solver.tau == 0 {
                self.solver.tau = self.oracle.cap.unwrap_or_else(|| st.default_cap(self.problem.n));
            }
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |f: &str, why: &str| Err(CliError::Config(format!("{f}: {why}")));
        if self.instances == 0 {
            return bad("instances", "must be at least 1");
        }
        if self.problem.n == 0 {
            return bad("problem.n", "must be at least 1");
        }
        if self.problem.kind == ProblemKind::Game && self.problem.m == 0 {
            return bad("problem.m", "must be at least 1");
        }
        if self.problem.kind == ProblemKind::Quadratic && self.problem.p == 0 {
            return bad("problem.p", "must be at least 1");
        }
        if !(self.problem.cond >= 1.0) {
            return bad("problem.cond", "must be at least 1");
        }
        if self.oracle.kind == OracleKind::RandomM && !(1..=self.problem.n).contains(&self.oracle.m) {
            return bad("oracle.m", "must lie in 1..=problem.n");
        }
        if self.oracle.delay_model.kind == DelayKindConfig::WorkerSpeeds
            && (self.oracle.delay_model.speeds.is_empty() || self.oracle.delay_model.speeds.iter().any(|&v| !(v > 0.0)))
        {
            return bad("oracle.delay_model.speeds", "needs at least one positive mean");
        }
        self.solver_config(0)
            .validate(self.oracle.kind != OracleKind::Exact)
            .map_err(|e| CliError::Config(format!("solver: {e}")))
    }

    pub fn strategy(&self) -> Option<Strategy> {
        match self.oracle.kind {
            OracleKind::Incremental => Some(Strategy::Incremental),
            OracleKind::Shuffling => Some(Strategy::Shuffling),
            OracleKind::RandomM => Some(Strategy::RandomM(self.oracle.m)),
            _ => None,
        }
    }

    pub fn solver_config(&self, seed: u64) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            s: s.s,
            gamma: s.gamma,
            tau: s.tau,
            eta_mode: match s.eta_mode {
                EtaModeConfig::Theory => EtaMode::Theory,
                EtaModeConfig::Heuristic => EtaMode::Heuristic(s.eta.unwrap_or(1.0 / (1.0 + s.tau as f64))),
            },
            k_max: s.k_max,
            eps_rel: s.eps_rel,
            seed,
            residual_stride: self.output.stride,
        }
    }

    pub fn delay_model(&self, seed: u64) -> DelayModel {
        let dm = &self.oracle.delay_model;
        let kind = match dm.kind {
            DelayKindConfig::Uniform => DelayKind::Uniform,
            DelayKindConfig::Fixed => DelayKind::Fixed(dm.d.unwrap_or(self.solver.tau)),
            DelayKindConfig::WorkerSpeeds => DelayKind::WorkerSpeeds(dm.speeds.clone()),
        };
        DelayModel {
            kind,
            tau_cap: self.solver.tau,
            seed,
        }
    }

    pub fn batch_rule(&self) -> BatchRule {
        match self.oracle.batch_rule {
            BatchRuleKind::Cubic => BatchRule::Cubic {
                r: self.oracle.r_scale,
                b_min: self.oracle.b_min,
            },
            BatchRuleKind::Variance => BatchRule::Variance {
                r: self.oracle.r_scale,
                omega: self.oracle.omega,
            },
        }
    }
}

/// `a.b.c=value`; the value is parsed as JSON and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{assignment}' is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("{}: not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}
