use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sunsplat::pipeline::{
    cmd_eval, cmd_generate, cmd_gradcheck, cmd_render, cmd_train, gradcheck_table, write_json, EvalSplit, RenderOptions,
    RenderSource,
};
use sunsplat::Error;

/// Sun-conditioned Gaussian splatting with shadow splatting.
#[derive(Parser, Debug)]
#[command(name = "sunsplat", version)]
struct Cli {
    /// Worker threads for the parallel kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ray-trace the synthetic target along its orbit plus a random-pose split.
    Generate {
        /// Dataset generator config (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one configuration online over a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Run config (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the run config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render views from a checkpoint.
    Render(RenderArgs),
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// train-window, holdout or random-pose
        #[arg(long, default_value = "random-pose")]
        split: String,
        /// Also write the report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print JSON instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Finite-difference checks of every gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the suite reports as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Render frames of this dataset (ground truth available).
    #[arg(long, conflicts_with = "views", required_unless_present = "views")]
    dataset: Option<PathBuf>,
    /// Comma-separated frame indices; all frames when omitted.
    #[arg(long, value_delimiter = ',', requires = "dataset")]
    frames: Option<Vec<usize>>,
    /// JSON file with intrinsics and a list of poses and sun vectors.
    #[arg(long)]
    views: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Write ground truth | render side by side and an error heat image.
    #[arg(long, requires = "dataset")]
    compare: bool,
    /// Dump V, V′ and the shadow image.
    #[arg(long)]
    shadow_debug: bool,
}

/// `Ok(false)` means the command ran but reported a failure.
fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Generate { config, out, seed } => {
            cmd_generate(config.as_deref(), &out, seed)?;
            println!("dataset written to {}", out.display());
        }
        Command::Train {
            dataset,
            config,
            out,
            seed,
            resume,
        } => {
            let o = cmd_train(&dataset, &config, &out, seed, resume.as_deref())?;
            let s = &o.summary;
            println!(
                "config ({}) rounds {} steps {} gaussians {} ({:.2} steps/s)",
                s.config_id, s.rounds, s.steps, s.gaussian_count, s.steps_per_sec
            );
            println!("checkpoint {}", o.checkpoint_path.display());
            println!("log {}", o.log_path.display());
        }
        Command::Render(a) => {
            let source = match (&a.dataset, &a.views) {
                (Some(dir), _) => RenderSource::Dataset {
                    dir,
                    frames: a.frames.clone(),
                },
                (None, Some(v)) => RenderSource::Views(v),
                (None, None) => unreachable!("clap requires one source"),
            };
            let opts = RenderOptions {
                compare: a.compare,
                shadow_debug: a.shadow_debug,
            };
            let files = cmd_render(&a.checkpoint, source, &a.out, opts)?;
            println!("{} files written to {}", files.len(), a.out.display());
        }
        Command::Eval {
            checkpoint,
            dataset,
            split,
            out,
            json,
        } => {
            let split: EvalSplit = split.parse()?;
            let report = cmd_eval(&checkpoint, &dataset, split)?;
            if json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.table());
            }
            if let Some(p) = out {
                write_json(&p, &report)?;
            }
        }
        Command::Gradcheck { seed, out } => {
            let reports = cmd_gradcheck(seed);
            print!("{}", gradcheck_table(&reports));
            if let Some(p) = out {
                write_json(&p, &reports)?;
            }
            return Ok(reports.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
