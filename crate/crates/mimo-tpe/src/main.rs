use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mimo_tpe::error::SimError;
use mimo_tpe::{optimize_only, report, run_experiment, theory_vs_empirical, Profile, RunConfig, Sweep};

#[derive(Parser)]
#[command(name = "mimo-tpe", version, about = "TPE precoding experiments for multi-cell massive MIMO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output CSV; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte-Carlo trials per drop.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// User drops per sweep point.
    #[arg(long, global = true)]
    drops: Option<usize>,
    /// Preset sample sizes, applied before --trials and --drops.
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
}

#[derive(Subcommand)]
enum Command {
    /// Average rates against the number of antennas.
    SweepM {
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<usize>>,
    },
    /// Average rates against the RZF regularization.
    SweepPhi {
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Average rates against the training SNR in dB.
    SweepRho {
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Empirical against deterministic rates, RZF and TPE J=5.
    TheoryVsEmp {
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<usize>>,
    },
    /// Optimized TPE coefficients per drop and order, without simulation.
    OptimizeOnly,
}

fn load(common: &Common) -> Result<RunConfig, SimError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = common.profile {
        cfg.apply_profile(p);
    }
    if let Some(s) = common.seed {
        cfg.scenario.seed = s;
    }
    if let Some(t) = common.trials {
        cfg.scenario.n_trials = t;
    }
    if let Some(d) = common.drops {
        cfg.scenario.n_drops = d;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, SimError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|source| SimError::Io { context: format!("cannot create {}", p.display()), source })?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<(), SimError> {
    let cfg = load(&cli.common)?;
    let exp = &cfg.experiment;
    let rows = match cli.command {
        Command::SweepM { values } => run_experiment(&cfg, &Sweep::Antennas(values.unwrap_or(exp.m_values.clone())))?,
        Command::SweepPhi { values } => run_experiment(&cfg, &Sweep::Phi(values.unwrap_or(exp.phi_values.clone())))?,
        Command::SweepRho { values } => run_experiment(&cfg, &Sweep::RhoTrDb(values.unwrap_or(exp.rho_tr_db.clone())))?,
        Command::TheoryVsEmp { values } => theory_vs_empirical(&cfg, &values.unwrap_or(exp.m_values.clone()))?,
        Command::OptimizeOnly => {
            let rows = optimize_only(&cfg)?;
            return report::write_optimizer(output(&cli.common.out)?, &rows);
        }
    };
    report::write_sweep(output(&cli.common.out)?, &rows)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mimo-tpe: {e}");
            ExitCode::FAILURE
        }
    }
}
