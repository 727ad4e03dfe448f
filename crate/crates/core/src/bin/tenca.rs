use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};
use tenca::runner::{self, GradcheckOptions, RolloutInput, RolloutTimes};
use tenca::Result;

#[derive(Parser)]
#[command(name = "tenca", version, about = "Temporal neural cellular automata for contrast-enhancement sequences")]
struct Cli {
    /// Run single-threaded.
    #[arg(long, global = true)]
    reproducible: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a run config, optionally resuming from a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Export rollout frames and subtraction images as PNG.
    #[command(group(ArgGroup::new("input").required(true).args(["case", "image"])))]
    #[command(group(ArgGroup::new("when").required(true).args(["times", "all_steps"])))]
    Rollout {
        #[arg(long)]
        ckpt: PathBuf,
        /// Case id inside --data.
        #[arg(long, requires = "data")]
        case: Option<String>,
        /// Dataset directory holding --case.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Grayscale PNG used as the pre-contrast image.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Comma-separated times in seconds.
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
        #[arg(long)]
        all_steps: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint and the pre-contrast baseline on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare backpropagated gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = runner::GRADCHECK_EPSILON)]
        epsilon: f64,
        /// Also print the error for a range of step sizes.
        #[arg(long)]
        sweep: bool,
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData { spec, out } => {
            let s = runner::with_threads(cli.reproducible, || runner::cmd_gen_data(&spec, &out))??;
            println!("wrote {} cases ({} bytes) to {}", s.cases, s.bytes, out.display());
        }
        Command::Train { config, resume } => {
            let s = if cli.reproducible {
                let mut run = runner::RunConfig::load(&config)?;
                run.reproducible = true;
                runner::with_threads(true, || runner::train(&run, resume.as_deref()))??
            } else {
                runner::cmd_train(&config, resume.as_deref())?
            };
            if let Some(last) = s.history.last() {
                println!("epoch {} mean_loss {:e}", last.epoch, last.mean_loss);
            }
            println!("trained {} epochs; checkpoint {}", s.epochs_run, s.final_checkpoint.display());
        }
        Command::Rollout {
            ckpt,
            case,
            data,
            image,
            times,
            all_steps,
            out,
        } => {
            let input = match (case, image) {
                (Some(case_id), _) => RolloutInput::Case {
                    dataset: data.expect("clap requires --data"),
                    case_id,
                },
                (None, Some(path)) => RolloutInput::Image(path),
                (None, None) => unreachable!("clap requires an input"),
            };
            let when = if all_steps {
                RolloutTimes::AllSteps
            } else {
                RolloutTimes::Seconds(times.unwrap_or_default())
            };
            let frames = runner::with_threads(cli.reproducible, || runner::cmd_rollout(&ckpt, &input, &when, &out))??;
            println!("wrote {} frames to {}", frames.len(), out.display());
        }
        Command::Eval { ckpt, data, out } => {
            let s = runner::with_threads(cli.reproducible, || runner::cmd_eval(&ckpt, &data, &out))??;
            let (m, b) = (s.model.overall(), s.baseline.overall());
            println!("{:<9} {:>10} {:>8} {:>8} {:>8}", "method", "mse", "psnr", "ssim", "ms_ssim");
            println!("{:<9} {:>10.3e} {:>8.2} {:>8.4} {:>8.4}", "model", m.mse, m.psnr_db, m.ssim, m.ms_ssim);
            println!("{:<9} {:>10.3e} {:>8.2} {:>8.4} {:>8.4}", "baseline", b.mse, b.psnr_db, b.ssim, b.ms_ssim);
            println!("report written to {}", out.display());
        }
        Command::Gradcheck {
            trials,
            seed,
            epsilon,
            sweep,
            corrupt_backward,
        } => {
            let opts = GradcheckOptions {
                trials,
                seed,
                epsilon,
                corrupt_backward,
            };
            let results = runner::with_threads(cli.reproducible, || runner::cmd_gradcheck(&opts))??;
            let mut ok = true;
            for t in &results {
                println!(
                    "trial seed {:>3}: max relative error {:.3e} over {} parameters [{}]",
                    t.seed,
                    t.max_rel_error,
                    t.checked,
                    if t.passed() { "ok" } else { "FAIL" }
                );
                ok &= t.passed();
            }
            if sweep {
                for (eps, err) in runner::epsilon_sweep(seed, &runner::DEFAULT_SWEEP)? {
                    println!("epsilon {eps:.0e}: max relative error {err:.3e}");
                }
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
