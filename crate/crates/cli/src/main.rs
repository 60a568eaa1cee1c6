use std::path::PathBuf;
use std::process::ExitCode;

use afp_cli::commands::{cmd_run, cmd_sweep_tau, dump_config, resolve_out_dir};
use afp_cli::validate::{cmd_validate, format_table, Fault};
use afp_cli::{CliError, ExperimentConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "afp", version, about = "Accelerated fixed-point experiments with delayed oracles")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (falls back to output.dir, then $AFP_OUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    instances: Option<usize>,
    /// Dotted override such as solver.tau=10; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut overrides = self.set.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(n) = self.instances {
            overrides.push(format!("instances={n}"));
        }
        ExperimentConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and write trace, events, chart and summary.
    Run(Common),
    /// Iterations to a relative tolerance as a function of the delay bound.
    SweepTau {
        #[command(flatten)]
        common: Common,
        /// Comma-separated delay bounds.
        #[arg(long, value_delimiter = ',', required = true)]
        taus: Vec<usize>,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
    },
    /// Run the self-check suite.
    Validate {
        /// Deliberately break one input to see the corresponding check fail.
        #[arg(long = "inject", value_enum)]
        inject: Vec<Fault>,
    },
    /// Print the default config with every documented field.
    DumpConfig,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("afp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.cmd {
        Cmd::Run(common) => {
            let cfg = common.load()?;
            let out = resolve_out_dir(common.out.as_deref(), &cfg);
            let rep = cmd_run(&cfg, &out)?;
            for key in ["converged", "final_rel_mean", "iterations_mean", "passes_mean", "slope_mean"] {
                println!("{key} = {}", rep.get(key).unwrap_or("-"));
            }
            println!("wrote {}", out.display());
        }
        Cmd::SweepTau { common, taus, eps } => {
            let cfg = common.load()?;
            let out = resolve_out_dir(common.out.as_deref(), &cfg);
            let rep = cmd_sweep_tau(&cfg, &taus, eps, Some(&out))?;
            println!("tau,seed,iterations,passes");
            for r in &rep.rows {
                println!("{},{},{},{}", r.tau, r.seed, r.iterations, r.passes);
            }
            if let Some(f) = rep.fit {
                println!("fit: K = {:.3} tau + {:.3}, r2 = {:.4}", f.slope, f.intercept, f.r2);
            }
            println!("wrote {}", out.display());
        }
        Cmd::Validate { inject } => {
            let checks = cmd_validate(&inject);
            print!("{}", format_table(&checks));
            if let Some(c) = checks.iter().find(|c| !c.passed) {
                eprintln!("first failure: {}::{}: {}", c.module, c.name, c.detail);
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::DumpConfig => print!("{}", dump_config()),
    }
    Ok(ExitCode::SUCCESS)
}
