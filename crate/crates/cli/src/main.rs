mod commands;
mod config;
mod error;
mod output;

use clap::{Parser, Subcommand};
use commands::{Run, Selections};
use config::ExperimentConfig;
use error::{CliError, EXIT_OK, EXIT_USAGE};
use output::Emitter;
use std::path::PathBuf;

/// Gibbs measures on Cantor sets: dimensions, Fourier decay and transfer-operator diagnostics.
#[derive(Debug, Parser)]
#[command(name = "cantor-fourier", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads; overrides `jobs`.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check separation, Markov images, expansion and non-linearity.
    Validate,
    /// Bowen root of the pressure equation.
    Dimension,
    /// Equilibrium measure summary and cylinder table.
    Gibbs,
    /// Fourier transform at selected frequencies.
    Fourier {
        #[arg(long = "xi")]
        xi: Vec<f64>,
    },
    /// Frequency scan and decay-exponent fit.
    Decayfit,
    /// Regular-word counts, complement masses and the large-deviation rate.
    Regular,
    /// Non-concentration counts of the ζ map.
    Nonconc {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Exponential sums over regular blocks and the multiplicative-convolution check.
    Expsum {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Contraction profile of the complex transfer operators.
    Dolgopyat,
    /// Fourier-coefficient decomposition audit at a paired frequency.
    Audit {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        /// Frequency to audit; the paired frequency when absent.
        #[arg(long = "xi")]
        xi: Option<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Dimension => "dimension",
            Command::Gibbs => "gibbs",
            Command::Fourier { .. } => "fourier",
            Command::Decayfit => "decayfit",
            Command::Regular => "regular",
            Command::Nonconc { .. } => "nonconc",
            Command::Expsum { .. } => "expsum",
            Command::Dolgopyat => "dolgopyat",
            Command::Audit { .. } => "audit",
        }
    }

    fn selections(&self) -> Selections {
        match self {
            Command::Fourier { xi } => Selections {
                xi: xi.clone(),
                ..Selections::default()
            },
            Command::Nonconc { n } => Selections {
                n: *n,
                ..Selections::default()
            },
            Command::Expsum { n, k } => Selections {
                n: *n,
                k: *k,
                ..Selections::default()
            },
            Command::Audit { n, k, xi } => Selections {
                xi: xi.iter().copied().collect(),
                n: *n,
                k: *k,
            },
            _ => Selections::default(),
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let path = cli.config.ok_or_else(|| CliError::Usage("--config PATH is required".into()))?;
    let cfg = ExperimentConfig::load(&path)?;
    let jobs = cli.jobs.unwrap_or(cfg.jobs);
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    // A second initialisation in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    let out_dir = cli.out.unwrap_or_else(|| cfg.out_dir.clone());
    let mut out = Emitter::new(&out_dir)?;
    let sel = cli.command.selections();
    let result = {
        let mut run = Run {
            cfg: &cfg,
            sel: &sel,
            out: &mut out,
        };
        match cli.command {
            Command::Validate => run.validate(),
            Command::Dimension => run.dimension(),
            Command::Gibbs => run.gibbs_cmd(),
            Command::Fourier { .. } => run.fourier(),
            Command::Decayfit => run.decayfit(),
            Command::Regular => run.regular(),
            Command::Nonconc { .. } => run.nonconc(),
            Command::Expsum { .. } => run.expsum(),
            Command::Dolgopyat => run.dolgopyat(),
            Command::Audit { .. } => run.audit(),
        }
    };
    let selections = serde_json::to_value(&sel)?;
    out.finish(cli.command.name(), cfg.hash(), cfg.seed, selections)?;
    result
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = execute(cli) {
        eprintln!("error: {e}");
        if let CliError::Violations(v) = &e {
            eprintln!("{}", serde_json::json!({ "violations": v }));
        }
        std::process::exit(e.exit_code());
    }
}
