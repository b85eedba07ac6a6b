//! `formbound` — batch front end: one configuration file per run, CSV tables
//! and a plain-text summary in the output directory.

mod artifacts;
mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use formbound::config::ConfigFile;

use artifacts::Artifacts;
use error::{CliError, CliResult, EXIT_OK, EXIT_USAGE};

#[derive(Parser, Debug)]
#[command(name = "formbound", version, about = "Solvers and diagnostics for form-bounded potentials")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// Key=value configuration file with [section] headers.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (created on success only).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads for the parallel kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Random seed; overrides `[problem] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override a configuration key: `--set section.key=value` (repeatable).
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Local Dirichlet solve of the Schrödinger-type equation.
    Solve,
    /// Estimate the form-bound constant of the potential.
    Formbound,
    /// p-capacity of a ball (or the condenser preset).
    Capacity,
    /// Exhaustion/mollification construction with energy diagnostics.
    Pipeline,
    /// Build Γ with σ = div Γ.
    Decompose,
    /// Structure, doubling/BMO and Caccioppoli diagnostics.
    Diagnose,
    /// Explicit radial solutions, sharp constant and endpoint refusal.
    HardyVerify,
}

fn load(cli: &Cli, needs_config: bool) -> CliResult<ConfigFile> {
    let mut cfg = match &cli.config {
        Some(p) => {
            if !p.is_file() {
                return Err(CliError::Input(format!("config file not found: {}", p.display())));
            }
            ConfigFile::load(p)?
        }
        None => ConfigFile::default(),
    };
    for o in &cli.overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects SECTION.KEY=VALUE, got `{o}`")))?;
        let (section, key) = key
            .split_once('.')
            .ok_or_else(|| CliError::Usage(format!("--set expects SECTION.KEY=VALUE, got `{o}`")))?;
        cfg.set(section.trim(), key.trim(), value.trim());
    }
    if let Some(s) = cli.seed {
        cfg.set("problem", "seed", s.to_string());
    }
    if needs_config && cfg.is_empty() {
        return Err(CliError::Usage("empty configuration: pass --config PATH".into()));
    }
    Ok(cfg)
}

fn run(cli: &Cli, command: Command) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    // presets carry their own defaults
    let needs_config = !matches!(command, Command::HardyVerify | Command::Capacity);
    let cfg = load(cli, needs_config)?;
    if matches!(command, Command::Capacity) && cfg.is_empty() {
        return Err(CliError::Usage("empty configuration: pass --config PATH or --set capacity.preset=condenser".into()));
    }
    let mut out = Artifacts::default();
    match command {
        Command::Solve => commands::cmd_solve(&cfg, &mut out)?,
        Command::Formbound => commands::cmd_formbound(&cfg, &mut out)?,
        Command::Capacity => commands::cmd_capacity(&cfg, &mut out)?,
        Command::Pipeline => commands::cmd_pipeline(&cfg, &mut out)?,
        Command::Decompose => commands::cmd_decompose(&cfg, &mut out)?,
        Command::Diagnose => commands::cmd_diagnose(&cfg, &mut out)?,
        Command::HardyVerify => commands::cmd_hardy_verify(&cfg, &mut out)?,
    }
    out.commit(&cli.out)?;
    print!("{}", out.summary);
    let files: Vec<&str> = out.names().collect();
    println!("wrote {} ({}, summary.txt)", cli.out.display(), files.join(", "));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let Some(command) = cli.command else {
        use clap::CommandFactory;
        let _ = Cli::command().print_help();
        return ExitCode::from(EXIT_USAGE as u8);
    };
    match run(&cli, command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if matches!(e, CliError::Usage(_)) {
                use clap::CommandFactory;
                eprintln!("{}", Cli::command().render_usage());
            }
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
