use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use marc_cli::{fmt_g12, parse_config, run_sweep, write_csv, ExperimentConfig};

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIAGNOSTICS: u8 = 3;

#[derive(Parser)]
#[command(
    name = "marc-opt",
    version,
    about = "Sum-rate bounds for the ergodic multiaccess relay channel"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// No per-point progress on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the relay position and write DF and cutset sum rates as CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV; defaults to `output.path` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `ensemble.seed`.
        #[arg(long, env = "MARC_OPT_SEED")]
        seed: Option<u64>,
    },
    /// Print the default configuration.
    InitConfig {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Io(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Io(e)
    }
}

fn sweep(config: PathBuf, out: Option<PathBuf>, seed: Option<u64>, quiet: bool) -> Result<bool, Failure> {
    let text = fs::read_to_string(&config).map_err(|e| Failure::Config(format!("{}: {e}", config.display())))?;
    let mut cfg = parse_config(&text).map_err(|e| Failure::Config(format!("{}:\n{e}", config.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let Some(out) = out.or_else(|| cfg.output.clone()) else {
        return Err(Failure::Config("no output path: pass --out or set output.path".into()));
    };
    let rows = run_sweep(&cfg, |r| {
        if !quiet {
            eprintln!(
                "x={} df={} ({}) cutset={} ({}){}",
                fmt_g12(r.relay_x),
                fmt_g12(r.df_sum_rate),
                r.df_case,
                fmt_g12(r.cutset_sum_rate),
                r.cutset_case,
                if r.flagged() { " [diagnostics]" } else { "" }
            );
        }
    })
    .context("sweep failed")?;
    let file = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    write_csv(&rows, std::io::BufWriter::new(file)).with_context(|| format!("writing {}", out.display()))?;
    Ok(rows.iter().any(|r| r.flagged()))
}

fn init_config(out: Option<PathBuf>) -> anyhow::Result<()> {
    let text = ExperimentConfig::default().to_text();
    match out {
        Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display())),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .context("writing to stdout"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sweep { config, out, seed } => sweep(config, out, seed, cli.quiet),
        Command::InitConfig { out } => init_config(out).map(|()| false).map_err(Failure::Io),
    };
    match result {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("warning: solver diagnostics present, see the diagnostics column");
            ExitCode::from(EXIT_DIAGNOSTICS)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Io(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_IO)
        }
    }
}
