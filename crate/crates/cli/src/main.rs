use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cutrack_cli::config::SEED_ENV;
use cutrack_cli::{
    cmd_bench, cmd_eval, cmd_gen, cmd_gradcheck, cmd_stats, cmd_sweep, cmd_track, cmd_train,
    CliError, Result, Split, SweepParam,
};
use cutrack_core::eval::DISTRACTOR_RADIUS_M;

#[derive(Parser)]
#[command(
    name = "cutrack",
    version,
    about = "Category-unified 3D single object tracking experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Eval,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamArg {
    Alpha,
    Beta,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset into per-sequence PCF directories.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Which dataset section of the config to generate.
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
    },
    /// Train a tracker and write it as a CUTM model.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-step loss CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// One-pass tracking over every sequence; writes results.json.
    Track {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Resampling seed; defaults to $CUTRACK_SEED or 0.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Success/Precision per category plus the frame-weighted mean.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Size, motion and distractor histograms per category.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DISTRACTOR_RADIUS_M)]
        radius: f64,
    },
    /// End-to-end runs over a list of alpha or beta values.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        param: ParamArg,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Seeds to average over; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Finite-difference verification of every primitive, a block and both heads.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Multiplies every tolerance.
        #[arg(long, default_value_t = 1.0)]
        tol_factor: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-stage inference latency for several cloud sizes.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "256,512,1024")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn env_seed() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Config {
            path: format!("seed (from {SEED_ENV})"),
            message: format!("expected an unsigned integer, got {v:?}"),
        }),
        Err(_) => Ok(0),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { config, out, split } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Eval => Split::Eval,
            };
            let n = cmd_gen(&config, &out, split)?;
            println!("wrote {n} sequences to {}", out.display());
        }
        Command::Train {
            config,
            data,
            out,
            log,
        } => {
            let last = cmd_train(&config, &data, &out, log.as_deref())?;
            println!("final loss {last:.6}; model written to {}", out.display());
        }
        Command::Track {
            model,
            data,
            out,
            seed,
            jobs,
        } => {
            let seed = match seed {
                Some(s) => s,
                None => env_seed()?,
            };
            let r = cmd_track(&model, &data, &out, seed, jobs)?;
            println!(
                "tracked {} sequences; results written to {}",
                r.sequences.len(),
                out.display()
            );
        }
        Command::Eval { results, data, out } => {
            for r in cmd_eval(&results, &data, &out)? {
                println!(
                    "{:<12} {:>6} frames  success {:6.2}  precision {:6.2}",
                    r.category, r.frames, r.success, r.precision
                );
            }
        }
        Command::Stats { data, out, radius } => {
            let files = cmd_stats(&data, &out, radius)?;
            println!("wrote {} histograms to {}", files.len(), out.display());
        }
        Command::Sweep {
            config,
            param,
            values,
            seeds,
            out,
            jobs,
        } => {
            let param = match param {
                ParamArg::Alpha => SweepParam::Alpha,
                ParamArg::Beta => SweepParam::Beta,
            };
            for r in cmd_sweep(&config, param, &values, seeds.as_deref(), &out, jobs)? {
                println!(
                    "{}={:<6} seeds {}  success {:6.2}  precision {:6.2}",
                    r.param, r.value, r.seeds, r.success, r.precision
                );
            }
        }
        Command::Gradcheck {
            seeds,
            tol_factor,
            out,
        } => {
            let outcome = cmd_gradcheck(seeds, tol_factor, out.as_deref())?;
            for r in &outcome.rows {
                let verdict = if outcome.passed(r) { "PASS" } else { "FAIL" };
                println!(
                    "{verdict} {:<40} rel err {:.3e} (tol {:.0e})",
                    r.name,
                    r.max_rel_error,
                    r.tolerance * tol_factor
                );
            }
            let failed = outcome.failures();
            if !failed.is_empty() {
                let names: Vec<_> = failed.iter().map(|r| r.name.as_str()).collect();
                return Err(CliError::Gradcheck(names.join(", ")));
            }
        }
        Command::Bench {
            model,
            sizes,
            runs,
            warmup,
            out,
        } => {
            cmd_bench(&model, &sizes, runs, warmup, &out)?;
            println!("latency report written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
