use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use symplext_cli::config::ConfigError;
use symplext_cli::run::parse_corruption;
use symplext_cli::{gallery, run_check, run_extend, run_gallery, run_verify, Outcome, RunConfig, EXIT_CONFIG};

/// Extend symplectic embeddings of starlike domains to global symplectomorphisms.
#[derive(Debug, Parser)]
#[command(name = "symplext", version)]
struct Cli {
    /// Configuration file (sectioned TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base time steps of the integrator.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Samples per clause and time in the bound suite.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Seed for every sampler.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the resolved configuration (defaults unless a config or gallery is given) and exit.
    #[arg(long)]
    print_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the global symplectomorphism and check it.
    Extend { name: Option<String> },
    /// Run the sampled bound suite.
    Verify {
        name: Option<String>,
        /// Self-test: scale one ledger constant, e.g. `C1=half`.
        #[arg(long, value_name = "KEY=FACTOR")]
        corrupt_ledger: Option<String>,
    },
    /// Run a worked example.
    Gallery { name: String },
    /// Check the extension hypotheses only.
    Check { name: Option<String> },
}

fn load(cli: &Cli, name: Option<&str>) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError { field: None, line: None, message: format!("{}: {e}", path.display()) })?;
            RunConfig::from_toml_over(&text, name)?
        }
        None => match name {
            Some(n) => gallery::preset(n)?,
            None => RunConfig::default(),
        },
    };
    cfg.apply_overrides(cli.steps, cli.samples, cli.seed);
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Outcome {
    let name = match &cli.command {
        Some(Command::Extend { name }) | Some(Command::Verify { name, .. }) | Some(Command::Check { name }) => name.as_deref(),
        Some(Command::Gallery { name }) => Some(name.as_str()),
        None => None,
    };
    let cfg = match load(cli, name) {
        Ok(c) => c,
        Err(e) => return Outcome::config_error(&e),
    };
    if cli.print_defaults {
        return Outcome { code: 0, lines: vec![cfg.to_toml()], artifacts: vec![] };
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    match &cli.command {
        Some(Command::Extend { .. }) => run_extend(&cfg, &out),
        Some(Command::Verify { corrupt_ledger, .. }) => match corrupt_ledger.as_deref().map(parse_corruption).transpose() {
            Ok(c) => run_verify(&cfg, &out, c),
            Err(e) => Outcome::config_error(&e),
        },
        Some(Command::Gallery { name }) => run_gallery(name, &cfg, &out),
        Some(Command::Check { .. }) => run_check(&cfg, &out),
        None => Outcome::config_error(&ConfigError { field: None, line: None, message: "no subcommand given (extend, verify, gallery, check)".into() }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let outcome = execute(&cli);
    for line in &outcome.lines {
        if outcome.code == EXIT_CONFIG {
            eprintln!("{line}");
        } else {
            println!("{line}");
        }
    }
    for p in &outcome.artifacts {
        println!("wrote {}", p.display());
    }
    ExitCode::from(outcome.code as u8)
}
