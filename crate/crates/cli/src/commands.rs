use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use afp_core::diagnostics::{final_decade_slope, fmt_f64, mean_std, tau_sweep_fit, LinearFit, Trace, MIN_SWEEP_POINTS};
use log::warn;

use crate::chart::residual_svg;
use crate::config::{ExperimentConfig, OracleKind};
use crate::error::CliError;
use crate::experiment::{instance_seeds, run_instance, RunOutcome};

pub const OUT_DIR_ENV: &str = "AFP_OUT_DIR";

/// `--out`, then `output.dir`, then `$AFP_OUT_DIR`, then `./afp-out`.
pub fn resolve_out_dir(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output.dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("afp-out"))
}

pub struct RunReport {
    pub outcomes: Vec<RunOutcome>,
    pub summary: Vec<(String, String)>,
}

impl RunReport {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn summarize(cfg: &ExperimentConfig, outcomes: &[RunOutcome]) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: String| out.push((k.to_string(), v));
    let slope = |t: &Trace| final_decade_slope(t).map(|f| f.slope).unwrap_or(f64::NAN);
    let finals: Vec<f64> = outcomes.iter().map(|o| o.trace.final_rel()).collect();
    let iters: Vec<f64> = outcomes.iter().map(|o| o.trace.last().map_or(0.0, |r| r.k as f64)).collect();
    let passes: Vec<f64> = outcomes.iter().map(|o| o.trace.last().map_or(0.0, |r| r.full_passes)).collect();
    let slopes: Vec<f64> = outcomes.iter().map(|o| slope(&o.trace)).filter(|s| s.is_finite()).collect();
    let (fm, fs) = mean_std(&finals);

    put("problem", format!("{:?}", cfg.problem.kind).to_lowercase());
    put("oracle", format!("{:?}", cfg.oracle.kind).to_lowercase());
    put("instances", outcomes.len().to_string());
    put("eta", fmt_f64(outcomes.first().map_or(f64::NAN, |o| o.trace.eta)));
    put("tau", cfg.solver.tau.to_string());
    put("converged", outcomes.iter().all(|o| o.trace.converged()).to_string());
    put("final_rel_mean", fmt_f64(fm));
    put("final_rel_std", fmt_f64(fs));
    put("final_rel_max", fmt_f64(finals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)));
    put("iterations_mean", fmt_f64(mean_std(&iters).0));
    put("passes_mean", fmt_f64(mean_std(&passes).0));
    put("slope_mean", fmt_f64(if slopes.is_empty() { f64::NAN } else { mean_std(&slopes).0 }));
    if outcomes.iter().any(|o| o.gap.is_some()) {
        let gaps: Vec<f64> = outcomes.iter().filter_map(|o| o.gap).collect();
        put("duality_gap_max", fmt_f64(gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max)));
    }
    for o in outcomes {
        let pre = format!("seed.{}", o.seed);
        let last = o.trace.last();
        put(&format!("{pre}.final_rel"), fmt_f64(o.trace.final_rel()));
        put(&format!("{pre}.iterations"), last.map_or(0, |r| r.k).to_string());
        put(&format!("{pre}.passes"), fmt_f64(last.map_or(0.0, |r| r.full_passes)));
        put(&format!("{pre}.slope"), fmt_f64(slope(&o.trace)));
        put(&format!("{pre}.converged"), o.trace.converged().to_string());
        put(&format!("{pre}.max_tau_used"), o.trace.max_tau_used().to_string());
        if let Some(g) = o.gap {
            put(&format!("{pre}.duality_gap"), fmt_f64(g));
        }
    }
    out
}

/// Runs every instance and writes `trace.csv`, `events_<seed>.csv`,
/// `residual.svg` and `summary.txt` into `out`.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport, CliError> {
    let outcomes = instance_seeds(cfg)
        .map(|seed| run_instance(cfg, seed))
        .collect::<Result<Vec<_>, _>>()?;
    fs::create_dir_all(out)?;

    let mut all = Trace::new(cfg.seed);
    for o in &outcomes {
        all.records.extend(o.trace.records.iter().cloned());
    }
    all.write_csv(fs::File::create(out.join("trace.csv"))?)?;
    for o in &outcomes {
        if !o.events.is_empty() {
            o.events.write_csv(fs::File::create(out.join(format!("events_{}.csv", o.seed)))?)?;
        }
    }
    let labelled: Vec<(String, &Trace)> = outcomes.iter().map(|o| (format!("seed {}", o.seed), &o.trace)).collect();
    fs::write(out.join("residual.svg"), residual_svg(&labelled))?;

    let summary = summarize(cfg, &outcomes);
    let mut f = fs::File::create(out.join("summary.txt"))?;
    for (k, v) in &summary {
        writeln!(f, "{k} = {v}")?;
    }
    Ok(RunReport { outcomes, summary })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub tau: usize,
    pub seed: u64,
    pub iterations: usize,
    pub passes: f64,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub fit: Option<LinearFit>,
}

/// Sorted, deduplicated delay list.
pub fn normalize_taus(taus: &[usize]) -> Vec<usize> {
    let mut v = taus.to_vec();
    v.sort_unstable();
    let before = v.len();
    v.dedup();
    if v.len() != before {
        warn!("dropped {} duplicate tau value(s)", before - v.len());
    }
    v
}

/// Iterations (and passes) to relative residual `eps` for each delay bound
/// and instance. A delayed oracle at `tau = 0` runs with the exact oracle.
pub fn cmd_sweep_tau(cfg: &ExperimentConfig, taus: &[usize], eps: f64, out: Option<&Path>) -> Result<SweepReport, CliError> {
    if cfg.oracle.kind.is_aggregated() {
        return Err(CliError::Config(
            "oracle.kind: sweep-tau varies the delay bound of delayed oracles; aggregated strategies fix their own".into(),
        ));
    }
    let taus = normalize_taus(taus);
    if taus.is_empty() {
        return Err(CliError::Config("taus: need at least one value".into()));
    }
    if !(eps > 0.0) {
        return Err(CliError::Config(format!("eps: must be positive, got {eps}")));
    }
    let mut rows = Vec::new();
    for &tau in &taus {
        let mut c = cfg.clone();
        c.solver.tau = tau;
        c.solver.eps_rel = eps;
        if tau == 0 && c.oracle.kind.is_delayed() {
            c.oracle.kind = OracleKind::Exact;
        }
        let c = ExperimentConfig::from_value(serde_json::to_value(&c).expect("config serializes"))
            .map_err(|e| CliError::Config(format!("tau = {tau}: {e}")))?;
        for seed in instance_seeds(&c) {
            let o = run_instance(&c, seed).map_err(|e| CliError::Run(format!("tau = {tau}, seed {seed}: {e}")))?;
            let (Some(k), Some(p)) = (o.trace.iterations_to(eps), o.trace.passes_to(eps)) else {
                return Err(CliError::Run(format!(
                    "tau = {tau}, seed {seed}: relative residual {:.3e} did not reach {eps} within k_max = {}",
                    o.trace.final_rel(),
                    c.solver.k_max
                )));
            };
            rows.push(SweepRow {
                tau,
                seed,
                iterations: k,
                passes: p,
            });
        }
    }
    let fit = if taus.len() >= 2 && rows.len() >= MIN_SWEEP_POINTS {
        let pairs: Vec<(usize, usize)> = rows.iter().map(|r| (r.tau, r.iterations)).collect();
        Some(tau_sweep_fit(&pairs)?)
    } else {
        warn!("too few sweep points for a fit ({} rows, {} distinct tau)", rows.len(), taus.len());
        None
    };

    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut f = fs::File::create(dir.join("sweep.csv"))?;
        writeln!(f, "tau,seed,iterations,passes")?;
        for r in &rows {
            writeln!(f, "{},{},{},{}", r.tau, r.seed, r.iterations, fmt_f64(r.passes))?;
        }
        if let Some(fit) = &fit {
            let mut f = fs::File::create(dir.join("sweep_fit.txt"))?;
            writeln!(f, "slope = {}", fmt_f64(fit.slope))?;
            writeln!(f, "intercept = {}", fmt_f64(fit.intercept))?;
            writeln!(f, "r2 = {}", fmt_f64(fit.r2))?;
            writeln!(f, "points = {}", fit.points)?;
        }
    }
    Ok(SweepReport { rows, fit })
}

pub fn dump_config() -> String {
    serde_json::to_string_pretty(&ExperimentConfig::default()).expect("config serializes") + "\n"
}
