use clap::{Parser, Subcommand};
use hofer_lab::{registry, run_experiment, verdict_code, write_outputs, CliError, ExperimentConfig};
use std::path::PathBuf;
use std::process::ExitCode;

/// Runs named numerical experiments and writes JSON reports and CSV curves.
///
/// `hofer-lab <module> <experiment> [--key value ...] [--seed N] [--json PATH] [--csv [PATH]]`
///
/// HOFERLAB_THREADS caps the worker threads.
#[derive(Parser)]
#[command(name = "hofer-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the registered experiments with the claims they check.
    List,
    /// Run an experiment from a JSON config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    #[command(external_subcommand)]
    Module(Vec<String>),
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("HOFERLAB_THREADS") {
        let n: usize = v.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| CliError::Config(format!("HOFERLAB_THREADS must be a positive integer, got {v}")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn config(cmd: Command) -> Result<Option<ExperimentConfig>, CliError> {
    match cmd {
        Command::List => {
            for e in registry() {
                println!("{:<18} {:<11} {:<17} {}", e.id, e.module, e.name, e.claim);
            }
            Ok(None)
        }
        Command::Run { config } => {
            let s = std::fs::read_to_string(&config).map_err(|e| CliError::Config(format!("{}: {e}", config.display())))?;
            ExperimentConfig::from_json(&s).map(Some)
        }
        Command::Module(args) => {
            let (module, rest) = args.split_first().ok_or_else(|| CliError::Config("missing module".into()))?;
            let (name, flags) = rest.split_first().ok_or_else(|| CliError::Config(format!("missing experiment name after {module}")))?;
            let reg = registry();
            let e = hofer_lab::find(&reg, Some(module), name).ok_or_else(|| CliError::Config(format!("unknown experiment {module} {name}")))?;
            ExperimentConfig::from_flags(e.id, flags).map(Some)
        }
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    init_threads()?;
    let Some(cfg) = config(cli.command)? else {
        return Ok(0);
    };
    let rep = run_experiment(&cfg)?;
    write_outputs(&cfg, &rep)?;
    if cfg.json.is_none() && cfg.csv.as_deref().map(|p| p.as_os_str() != "-").unwrap_or(true) {
        println!("{}", rep.to_json());
    }
    for v in &rep.verdicts {
        eprintln!("{} {}", if v.passed { "PASS" } else { "FAIL" }, v.name);
    }
    Ok(verdict_code(&rep))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("hofer-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
