use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use vshp_core::harness::{self, selfcheck, Overrides, Scenario, Setup, Trace};
use vshp_core::{ControllerConfig, PlantParameters};

#[derive(Parser)]
#[command(name = "vshp", version, about = "Closed-loop scenarios for the variable-speed hydropower controller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl From<Switch> for bool {
    fn from(s: Switch) -> bool {
        matches!(s, Switch::On)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write trace.csv and metrics.txt.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        pod: Option<Switch>,
        #[arg(long, value_enum)]
        wave: Option<Switch>,
        #[arg(long, value_enum)]
        noise: Option<Switch>,
    },
    /// Difference table between two traces on the same time grid.
    Compare {
        trace_a: PathBuf,
        trace_b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Derivative and equilibrium self-tests.
    Check {
        /// Plant parameter file; shipped defaults when omitted.
        #[arg(long)]
        parameters: Option<PathBuf>,
        /// Controller configuration file; shipped defaults when omitted.
        #[arg(long)]
        controller: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { scenario, out, seed, pod, wave, noise } => {
            let mut s = Scenario::from_file(&scenario)?;
            let o = Overrides { seed, pod: pod.map(Into::into), wave: wave.map(Into::into), noise: noise.map(Into::into) };
            o.apply(&mut s);
            let setup = Setup::load(s)?;
            let files = harness::run_scenario(&setup, &out)?;
            println!("trace:   {}", files.trace.display());
            println!("metrics: {}", files.metrics.display());
            for (k, v) in &files.summary.entries {
                println!("  {k}: {v:.6e}");
            }
            println!("  control_wall_seconds: {:.2}", files.control_seconds);
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { trace_a, trace_b, out } => {
            let a = Trace::load(&trace_a).with_context(|| format!("reading {}", trace_a.display()))?;
            let b = Trace::load(&trace_b).with_context(|| format!("reading {}", trace_b.display()))?;
            let cmp = harness::compare_runs(&a, &b)?;
            std::fs::write(&out, cmp.to_text()).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { parameters, controller } => {
            let p = match parameters {
                Some(f) => PlantParameters::from_file(f)?,
                None => PlantParameters::shipped_default(),
            };
            let c = match controller {
                Some(f) => ControllerConfig::from_file(f)?,
                None => ControllerConfig::shipped_default(),
            };
            let checks = selfcheck::run_checks(&p, &c).map_err(anyhow::Error::msg)?;
            let mut ok = true;
            for ch in &checks {
                let tag = if ch.passed() { "PASS" } else { "FAIL" };
                println!("{tag} {}: {:.3e} (limit {:.0e})", ch.name, ch.value, ch.limit);
                ok &= ch.passed();
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}
