use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dgflow::scenario::{self, ReportKind, RunArchive, Scenario};
use dgflow::{Error, Result};

#[derive(Parser)]
#[command(name = "dgflow", version, about = "Allen-Cahn runs and De Giorgi diagnostics for multiphase mean curvature flow")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Archive directory for `run`; defaults to `runs/<name>`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its archive.
    Run { config: PathBuf },
    /// Print the surface tension matrix of a scenario's potential.
    Tensions { config: PathBuf },
    /// Covering errors of the last checkpoint of an archive.
    Localize {
        archive: PathBuf,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        levels: Option<usize>,
    },
    /// BV-solution certificate over an archive's checkpoints.
    VerifyBv { archive: PathBuf },
    /// Diffuse varifold lift and compatibility checks over an archive's checkpoints.
    VerifyVarifold { archive: PathBuf },
    /// Print a stored report.
    Report { archive: PathBuf, which: Which },
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Config,
    Ledger,
    Bv,
    Varifold,
    Localize,
}

fn load(config: &Path, seed: Option<u64>) -> Result<Scenario> {
    let mut s = Scenario::load(config)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let s = load(&config, cli.seed)?;
            let out = cli.out_dir.unwrap_or_else(|| PathBuf::from("runs").join(&s.name));
            let outcome = scenario::run_scenario(&s, &out)?;
            let last = outcome.ledger.rows.last().expect("ledger has the initial row");
            println!("{} steps, final energy {:.6e}", outcome.steps, last.energy);
            println!("{}", outcome.archive.root().display());
        }
        Command::Tensions { config } => {
            let sigma = load(&config, cli.seed)?.tensions()?;
            print!("{}", sigma.to_csv());
            for w in &sigma.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Localize { archive, radius, levels } => {
            let a = RunArchive::open(&archive)?;
            let d = a.scenario()?.diagnostics;
            let rep = scenario::localize(&a, radius.unwrap_or(d.localize_radius), levels.unwrap_or(d.localize_levels))?;
            println!("radius,balls,total,surrogate_total");
            for l in &rep.levels {
                println!("{:e},{},{:.6e},{:.6e}", l.radius, l.balls, l.total, l.surrogate_total);
            }
            println!("monotone: {}", rep.monotone);
        }
        Command::VerifyBv { archive } => {
            let rep = scenario::verify_bv(&RunArchive::open(&archive)?)?;
            for v in &rep.verdicts {
                println!("{:?}: {} ({:.4e} vs {:.4e})", v.status, v.name, v.value, v.threshold);
            }
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::VerifyVarifold { archive } => {
            let rep = scenario::verify_varifold(&RunArchive::open(&archive)?)?;
            if let Some(last) = rep.rows.last() {
                println!("t = {:e}: mass {:.6e}, seam mass {:?}", last.t, last.total_mass, last.seam_mass);
            }
            for c in &rep.checks {
                println!("{:?}: {} ({:.4e} vs {:.4e})", c.status, c.name, c.residual, c.threshold);
            }
        }
        Command::Report { archive, which } => {
            let kind = match which {
                Which::Config => ReportKind::Config,
                Which::Ledger => ReportKind::Ledger,
                Which::Bv => ReportKind::Bv,
                Which::Varifold => ReportKind::Varifold,
                Which::Localize => ReportKind::Localize,
            };
            print!("{}", scenario::report(&archive, kind)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::NonFinite { last_checkpoint: Some(p), .. } = &e {
                eprintln!("last checkpoint: {}", p.display());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
