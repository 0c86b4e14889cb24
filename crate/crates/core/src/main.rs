//! Command-line front end: scenario selection, config loading with flag
//! overrides, and the exit-code contract (0 pass, 1 failure, 2 usage error).

use clap::Parser;
use std::process::ExitCode;

use nonsmooth_nh::config::{parse_config, Mode, RunConfig};
use nonsmooth_nh::runner;
use nonsmooth_nh::scenarios;

#[derive(Parser, Debug)]
#[command(
    name = "nonsmooth-nh",
    about = "Simulate nonholonomic Lagrangian systems with elastic collisions"
)]
struct Cli {
    /// Scenario name with default parameters (see --list).
    #[arg(long)]
    scenario: Option<String>,

    /// JSON run-configuration file; flags override its fields.
    #[arg(long)]
    config: Option<String>,

    /// Execution mode: full, reduced, compare or eps.
    #[arg(long)]
    mode: Option<String>,

    /// Integration horizon override.
    #[arg(long = "t-final")]
    t_final: Option<f64>,

    /// Step size override.
    #[arg(long = "dt")]
    dt: Option<f64>,

    /// Output directory for trajectory, events and reports.
    #[arg(long = "out-dir", default_value = "out")]
    out_dir: String,

    /// Run the verification harness after integration.
    #[arg(long)]
    audit: bool,

    /// Solve the printed (multiplier-free) vertical reduced equation.
    #[arg(long = "paper-literal-vertical")]
    paper_literal_vertical: bool,

    /// Seed for randomized audit sampling.
    #[arg(long)]
    seed: Option<u64>,

    /// List registered scenarios with their parameter schemas and exit.
    #[arg(long)]
    list: bool,
}

fn build_config(cli: &Cli) -> Result<RunConfig, String> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config `{path}`: {e}"))?;
            parse_config(&text).map_err(|e| e.to_string())?
        }
        None => {
            let name = cli
                .scenario
                .as_deref()
                .ok_or("either --scenario or --config is required")?;
            RunConfig::new(name, &cli.out_dir)
        }
    };
    if let Some(name) = &cli.scenario {
        if cli.config.is_some() && name != &cfg.scenario.name {
            cfg.scenario.name = name.clone();
            cfg.scenario.params = serde_json::json!({});
        }
    }
    if let Some(mode) = &cli.mode {
        cfg.mode = mode.parse::<Mode>()?;
    } else if cli.config.is_none() {
        // Pick the scenario's natural mode when none was requested.
        if let Some(info) = scenarios::list_scenarios()
            .into_iter()
            .find(|i| i.name == cfg.scenario.name)
        {
            cfg.mode = match info.mode {
                "reduced" => Mode::Reduced,
                "eps" => Mode::Eps,
                _ => Mode::Full,
            };
        }
    }
    if let Some(t) = cli.t_final {
        cfg.t_final = Some(t);
    }
    if let Some(h) = cli.dt {
        cfg.h = Some(h);
    }
    if cli.config.is_none() || cli.out_dir != "out" {
        cfg.out_dir = cli.out_dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.audit {
        cfg.audit = true;
    }
    if cli.paper_literal_vertical {
        cfg.paper_literal_vertical = true;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("NONSMOOTH_NH_LOG")).init();
    let cli = Cli::parse();

    if cli.list {
        for info in scenarios::list_scenarios() {
            println!(
                "{} (mode: {})\n  defaults: {}",
                info.name,
                info.mode,
                serde_json::to_string(&info.defaults).unwrap()
            );
        }
        return ExitCode::SUCCESS;
    }

    let cfg = match build_config(&cli) {
        Ok(cfg) => cfg,
        Err(message) => {
            eprintln!("usage error: {message}");
            return ExitCode::from(2);
        }
    };

    match runner::run(&cfg) {
        Ok(outcome) => ExitCode::from(outcome.exit_code as u8),
        Err(runner::RunnerError::Config(e)) => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(runner::RunnerError::Scenario(e)) => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            ExitCode::from(1)
        }
    }
}
