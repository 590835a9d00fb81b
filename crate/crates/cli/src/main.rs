use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use levy_refract_cli::commands::{self, Command, DESK_PATHS, DESK_STEPS};
use levy_refract_cli::config::load_config_str_with_seed;
use levy_refract_cli::ExperimentConfig;
use std::path::PathBuf;
use std::process::ExitCode;

/// Optimal dividends with capital injection under bounded dividend rates.
#[derive(Parser, Debug)]
#[command(name = "levy-refract", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `mc.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Reduced cost: 10^4 paths and 2000 Euler steps.
    #[arg(long, global = true)]
    desk_scale: bool,
    /// Output directory.
    #[arg(long, global = true, env = "LEVY_REFRACT_OUT", default_value = "levy-refract-out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Parse and validate the configuration.
    Validate,
    /// One raw path and its controlled trajectory.
    SamplePath,
    /// Passage transform over the barrier grid.
    NuCurve,
    /// Optimal barrier estimate.
    Bstar,
    /// Value curves on the start grid.
    ValueCurve,
    /// Values along a ladder of dividend-rate caps.
    AlphaConvergence,
    /// Pathwise and distributional property checks.
    CheckProperties,
    /// Both reference experiments end to end.
    ReproducePaper,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Validate => Command::Validate,
            Cmd::SamplePath => Command::SamplePath,
            Cmd::NuCurve => Command::NuCurve,
            Cmd::Bstar => Command::Bstar,
            Cmd::ValueCurve => Command::ValueCurve,
            Cmd::AlphaConvergence => Command::AlphaConvergence,
            Cmd::CheckProperties => Command::CheckProperties,
            Cmd::ReproducePaper => Command::ReproducePaper,
        }
    }
}

/// Settings used by `reproduce-paper` when no config is given.
const REFERENCE_CONFIG: &str = r#"
[model]
drift = 0.6
jumps = [
  { rate = 1.0, sign = "up", dist = "uniform", params = [0.0, 1.0] },
  { rate = 1.0, sign = "down", dist = "weibull", params = [2.0, 1.0] },
]
[control]
alpha = 0.5
beta = 1.5
q = 0.05
[grid]
T = 100.0
K = 10000
[mc]
N = 100000
"#;

fn load(cli: &Cli, cmd: Command) -> anyhow::Result<ExperimentConfig> {
    let text = match (&cli.config, cmd) {
        (Some(p), _) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        (None, Command::ReproducePaper) => REFERENCE_CONFIG.to_string(),
        (None, _) => bail!("--config is required for {}", cmd.name()),
    };
    let mut cfg = load_config_str_with_seed(&text, cli.seed)?;
    if cli.desk_scale {
        cfg.set_scale(DESK_PATHS, DESK_STEPS);
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd: Command = cli.command.into();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let outcome = load(&cli, cmd).and_then(|cfg| Ok(commands::run(cmd, &cfg, &cli.out)?));
    match outcome {
        Ok(o) => {
            for line in &o.summary {
                println!("{line}");
            }
            println!("wrote {} files to {}", o.manifest.files.len() + 1, cli.out.display());
            if o.checks_failed {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
