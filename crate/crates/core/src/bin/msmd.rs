use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use msmd_core::harness::{self, seed_override_from_env, ExperimentConfig, ScheduleArg, PRESETS};
use msmd_core::scenarios::EstimatorKind;
use msmd_core::verify::{self, SUITES};

#[derive(Parser)]
#[command(name = "msmd", version, about = "Distributed and marginal density estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset or a JSON config and write CSV traces.
    Run(RunArgs),
    /// Print the resolved JSON config for a preset (with any overrides applied).
    Config(RunArgs),
    /// Run proposition suites and print a JSON report; exits nonzero on violation.
    Verify {
        /// Suite names, or `all`.
        #[arg(required = true)]
        suites: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List presets and suites.
    List,
}

#[derive(Args)]
struct RunArgs {
    /// Preset name.
    #[arg(long, conflicts_with = "config")]
    scenario: Option<String>,
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single estimator instead of the config's list.
    #[arg(long)]
    estimator: Option<EstimatorKind>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Circular BP reverse-message exponent.
    #[arg(long)]
    alpha: Option<f64>,
    /// `constant:ALPHA`, `robbins-monro` or `robbins-monro:A,B,POWER`.
    #[arg(long)]
    schedule: Option<ScheduleArg>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    emit_plot: bool,
    #[arg(long)]
    jobs: Option<usize>,
}

impl RunArgs {
    fn resolve(self) -> msmd_core::Result<ExperimentConfig> {
        let mut c = match (&self.scenario, &self.config) {
            (_, Some(path)) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| msmd_core::Error::Config { path: "--config".into(), message: format!("{}: {e}", path.display()) })?;
                ExperimentConfig::from_json(&text)?
            }
            (Some(name), None) => ExperimentConfig::preset(name)?,
            (None, None) => {
                return Err(msmd_core::Error::Config {
                    path: "--scenario".into(),
                    message: format!("give a preset ({}) or --config", PRESETS.join(", ")),
                })
            }
        };
        if let Some(k) = self.estimator {
            c.override_estimator(k);
        }
        if let Some(t) = self.rounds {
            c.run.rounds = t;
        }
        if let Some(s) = self.seed {
            c.override_seed(s);
        }
        if let Some(s) = seed_override_from_env()? {
            c.override_seed(s);
        }
        if let Some(a) = self.alpha {
            c.estimator.circular_alpha = a;
        }
        if let Some(s) = self.schedule {
            c.estimator.schedule = s.0;
        }
        if let Some(o) = self.out {
            c.run.out = o;
        }
        if self.emit_plot {
            c.run.emit_plot = true;
        }
        if self.jobs.is_some() {
            c.run.jobs = self.jobs;
        }
        c.validate()?;
        Ok(c)
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> msmd_core::Result<ExitCode> {
    match cli.command {
        Command::Run(args) => {
            let config = args.resolve()?;
            let outcome = harness::execute(&config)?;
            for row in &outcome.summary {
                println!(
                    "{:<40} {:<12} seeds={:<3} error@{}={:.6}",
                    row.scenario, row.estimator, row.seeds, row.round, row.mean_error
                );
            }
            println!("wrote {} runs to {}", outcome.manifest.runs.len(), outcome.out_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Config(args) => {
            println!("{}", args.resolve()?.to_json());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { suites, seed, out } => {
            let names: Vec<String> =
                if suites.iter().any(|s| s == "all") { SUITES.iter().map(|s| s.to_string()).collect() } else { suites };
            let reports = names.iter().map(|n| verify::run_suite(n, seed)).collect::<msmd_core::Result<Vec<_>>>()?;
            let text = serde_json::to_string_pretty(&reports)?;
            println!("{text}");
            if let Some(path) = out {
                std::fs::write(&path, text + "\n")?;
            }
            Ok(if reports.iter().all(|r| r.passed) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::List => {
            println!("presets: {}", PRESETS.join(", "));
            println!("suites:  {}", SUITES.join(", "));
            Ok(ExitCode::SUCCESS)
        }
    }
}
