use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nekhoroshev::harness::{self, Config, HarnessError, RunOptions};

#[derive(Parser)]
#[command(name = "nekh", version, about = "Resonance zones, stability sweeps, double-resonance detection and normal-form decay studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Classify a grid of actions into resonant and non-resonant zones.
    Zones(Common),
    /// Exit times and action drift over a list of ε.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Also write a gnuplot script next to the summary.
        #[arg(long)]
        plot: bool,
        /// Write every trajectory as CSV under `<out>/trajectories`.
        #[arg(long)]
        save_trajectories: bool,
    },
    /// Locate a double resonance along a stored trajectory.
    Detect {
        #[command(flatten)]
        common: Common,
        /// Trajectory file, overriding `[detect] trajectory`.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Remainder and coordinate-shift scaling of one averaging step.
    NfDecay(Common),
}

fn options(c: &Common) -> RunOptions {
    RunOptions {
        out: c.out.clone(),
        seed: c.seed,
        threads: c.threads,
        plot: false,
        save_trajectories: false,
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Zones(c) => {
            let cfg = Config::load(&c.config)?;
            let meta = harness::cmd_zones(&cfg, &options(&c))?;
            println!(
                "{} grid points, {} resonant (K_cap = {}, alpha = {})",
                meta.rows, meta.resonant_rows, meta.k_cap, meta.params.alpha
            );
        }
        Command::Sweep {
            common,
            plot,
            save_trajectories,
        } => {
            let cfg = Config::load(&common.config)?;
            let opts = RunOptions {
                plot,
                save_trajectories,
                ..options(&common)
            };
            let summary = harness::cmd_sweep(&cfg, &opts)?;
            print!("{}", harness::summary_csv(&summary));
        }
        Command::Detect { common, trajectory } => {
            let cfg = Config::load(&common.config)?;
            let w = harness::cmd_detect(&cfg, &options(&common), trajectory.as_deref())?;
            println!(
                "t* = {}, k1 = {}, k2 = {}, distance = {:e}",
                w.t_star, w.k1, w.k2, w.distance
            );
        }
        Command::NfDecay(c) => {
            let cfg = Config::load(&c.config)?;
            let table = harness::cmd_nf_decay(&cfg, &options(&c))?;
            for f in &table.fits {
                let slope = |x: Option<harness::LinearFit>| x.map(|f| f.slope.to_string()).unwrap_or("-".into());
                println!(
                    "K = {}: remainder slope {}, shift slope {}",
                    f.k_bound,
                    slope(f.remainder),
                    slope(f.shift)
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
