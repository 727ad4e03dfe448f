//! Config files, checkpoints and the commands behind the `tenca` binary.

mod checkpoint;
mod config;
mod export;

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use checkpoint::{config_fingerprint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{train_config_from_text, train_config_to_text, ConfigDoc, DataSpec, RunConfig};
pub use export::{read_png, write_png, write_subtraction_png};

use crate::autodiff::TinyProblem;
use crate::dataset::{read_dataset, write_dataset, DatasetManifest};
use crate::error::{Result, TencaError};
use crate::grid::{init_state, rollout_with};
use crate::image::Image;
use crate::metrics::{self, MetricReport};
use crate::phantom::{case_rng, generate_phantom};
use crate::rng::RngKey;
use crate::trainer::{
    case_key, predict_frames, time_to_step, train_epoch, EpochStats, TrainConfig, TrainingCase, EVAL_EPOCH,
};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "TENCA_THREADS";

/// Runs `f` on a dedicated pool: one thread when `reproducible`, otherwise
/// `TENCA_THREADS` threads if set, else one per core.
pub fn with_threads<T: Send>(reproducible: bool, f: impl FnOnce() -> T + Send) -> Result<T> {
    let threads = if reproducible {
        1
    } else {
        match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| TencaError::Config(format!("{THREADS_ENV}={v:?} is not a positive integer")))?,
            Err(_) => 0,
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| TencaError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenDataSummary {
    pub cases: usize,
    pub bytes: u64,
    pub manifest: DatasetManifest,
}

/// Draws the phantoms described by `spec` and writes them to `out`.
pub fn gen_data(spec: &DataSpec, out: &Path) -> Result<GenDataSummary> {
    spec.phantom.validate()?;
    let cases: Vec<TrainingCase> = (0..spec.cases)
        .into_par_iter()
        .map(|i| generate_phantom(&spec.phantom, format!("case_{i:04}"), &mut case_rng(&spec.phantom, i)).map(|c| c.0))
        .collect::<Result<_>>()?;
    let manifest = write_dataset(out, &cases, spec.phantom.delta_t_s)?;
    let mut bytes = 0;
    for e in &manifest.cases {
        bytes += e.payload_len() as u64;
    }
    Ok(GenDataSummary {
        cases: cases.len(),
        bytes,
        manifest,
    })
}

pub fn cmd_gen_data(spec_path: &Path, out: &Path) -> Result<GenDataSummary> {
    gen_data(&DataSpec::load(spec_path)?, out)
}

fn check_delta_t(manifest: &DatasetManifest, config: &TrainConfig, dir: &Path) -> Result<()> {
    if manifest.delta_t_s != config.delta_t_s {
        return Err(TencaError::Config(format!(
            "{}: dataset was generated for delta_t_s = {} but the model uses {}",
            dir.display(),
            manifest.delta_t_s,
            config.delta_t_s
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub final_checkpoint: PathBuf,
    pub epochs_run: usize,
    pub history: Vec<EpochStats>,
}

pub const STATS_HEADER: &str = "epoch,mean_loss,grad_norm,seconds";
pub const LATEST_CHECKPOINT: &str = "latest.tnck";

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.tnck")
}

/// Trains from scratch or from `resume` up to `run.train.epochs` epochs.
///
/// A stats line is appended to `report_dir/train_stats.csv` after every
/// epoch; checkpoints go to `checkpoint_dir` every `checkpoint_every`
/// epochs and after the last one, each also copied to `latest.tnck`.
pub fn train(run: &RunConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    run.validate()?;
    let (manifest, dataset) = read_dataset(&run.dataset)?;
    check_delta_t(&manifest, &run.train, &run.dataset)?;
    run.train.check_dataset(&dataset)?;

    let mut ck = match resume {
        None => Checkpoint::start(&run.train)?,
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let (have, want) = (config_fingerprint(&ck.config), config_fingerprint(&run.train));
            if have != want {
                return Err(TencaError::Config(format!(
                    "{}: checkpoint config hash {have:08x} does not match run config hash {want:08x}; refusing to resume",
                    path.display()
                )));
            }
            ck
        }
    };
    ck.config = run.train.clone();

    fs::create_dir_all(&run.checkpoint_dir).map_err(|e| TencaError::io(&run.checkpoint_dir, e))?;
    fs::create_dir_all(&run.report_dir).map_err(|e| TencaError::io(&run.report_dir, e))?;
    let stats_path = run.report_dir.join("train_stats.csv");
    let new_log = !stats_path.exists();
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&stats_path)
        .map_err(|e| TencaError::io(&stats_path, e))?;
    if new_log {
        writeln!(log, "{STATS_HEADER}").map_err(|e| TencaError::io(&stats_path, e))?;
    }

    let start = ck.epoch;
    let mut history = Vec::new();
    let mut last_saved = None;
    while ck.epoch < run.train.epochs {
        let stats = train_epoch(&dataset, &mut ck.params, &mut ck.optimizer, &run.train, ck.epoch)?;
        log::info!(
            "epoch {} loss {:.6e} grad_norm {:.4e} ({:.1}s)",
            stats.epoch,
            stats.mean_loss,
            stats.grad_norm,
            stats.seconds
        );
        writeln!(
            log,
            "{},{:e},{:e},{:.3}",
            stats.epoch, stats.mean_loss, stats.grad_norm, stats.seconds
        )
        .map_err(|e| TencaError::io(&stats_path, e))?;
        history.push(stats);
        ck.epoch += 1;
        if ck.epoch % run.checkpoint_every == 0 || ck.epoch == run.train.epochs {
            let path = run.checkpoint_dir.join(checkpoint_name(ck.epoch));
            ck.save(&path)?;
            last_saved = Some(path);
        }
    }
    let latest = run.checkpoint_dir.join(LATEST_CHECKPOINT);
    ck.save(&latest)?;
    Ok(TrainSummary {
        final_checkpoint: last_saved.unwrap_or(latest),
        epochs_run: ck.epoch - start,
        history,
    })
}

pub fn cmd_train(config_path: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    let run = RunConfig::load(config_path)?;
    with_threads(run.reproducible, || train(&run, resume))?
}

/// Where a rollout's pre-contrast image comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum RolloutInput {
    /// A case of a dataset directory, by id.
    Case { dataset: PathBuf, case_id: String },
    /// A grayscale PNG.
    Image(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum RolloutTimes {
    Seconds(Vec<f64>),
    AllSteps,
}

/// One exported frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportedFrame {
    pub step: usize,
    pub time_s: f64,
    pub frame: PathBuf,
    pub subtraction: PathBuf,
}

/// Converts requested times to sorted, distinct steps within the horizon.
pub fn rollout_steps(config: &TrainConfig, times: &RolloutTimes) -> Result<Vec<usize>> {
    let mut steps = match times {
        RolloutTimes::AllSteps => (1..=config.n_steps).collect(),
        RolloutTimes::Seconds(ts) => {
            let horizon = config.horizon_s();
            let mut steps = Vec::with_capacity(ts.len());
            for &t in ts {
                if !(t > 0.0) || t > horizon {
                    return Err(TencaError::Config(format!(
                        "time {t} s outside the rollout horizon (0, {horizon}] s ({} steps of {} s)",
                        config.n_steps, config.delta_t_s
                    )));
                }
                steps.push(time_to_step(t, config.delta_t_s)?.min(config.n_steps));
            }
            steps
        }
    };
    steps.sort_unstable();
    steps.dedup();
    if steps.is_empty() {
        return Err(TencaError::Config("no rollout times requested".into()));
    }
    Ok(steps)
}

fn load_pre_contrast(input: &RolloutInput) -> Result<Image> {
    match input {
        RolloutInput::Image(path) => read_png(path),
        RolloutInput::Case { dataset, case_id } => {
            let manifest = DatasetManifest::read(dataset)?;
            let entry = manifest
                .cases
                .iter()
                .find(|e| &e.case_id == case_id)
                .ok_or_else(|| TencaError::Data(format!("{}: no case {case_id:?}", dataset.display())))?;
            Ok(crate::dataset::read_case(dataset, entry)?.pre_contrast)
        }
    }
}

/// Rolls the checkpointed model out from one pre-contrast image and writes
/// `frame_<step>_<seconds>s.png` plus `sub_<step>_<seconds>s.png`
/// (frame minus pre-contrast) for every requested step.
pub fn export_rollout(
    ck: &Checkpoint,
    pre_contrast: &Image,
    times: &RolloutTimes,
    out: &Path,
    seed: u64,
) -> Result<Vec<ExportedFrame>> {
    let config = &ck.config;
    let steps = rollout_steps(config, times)?;
    fs::create_dir_all(out).map_err(|e| TencaError::io(out, e))?;
    let grid = init_state(pre_contrast, config.channels)?;
    let (h, w) = pre_contrast.dims();
    let key = RngKey::new(seed, EVAL_EPOCH, 0, 0);
    let last = *steps.last().expect("non-empty");
    let mut frames = Vec::new();
    let mut next = steps.iter().peekable();
    rollout_with(&grid, &ck.params, last, key, config.rule(), |step, state| {
        if next.peek() == Some(&&step) {
            next.next();
            frames.push((step, state.visible()));
        }
    })?;
    let mut exported = Vec::with_capacity(frames.len());
    for (step, visible) in frames {
        let image = Image::from_f64(h, w, &visible)?;
        let time_s = step as f64 * config.delta_t_s;
        let stem = format!("{step:04}_{time_s}s");
        let frame = out.join(format!("frame_{stem}.png"));
        let subtraction = out.join(format!("sub_{stem}.png"));
        write_png(&frame, &image)?;
        write_subtraction_png(&subtraction, &image, pre_contrast)?;
        exported.push(ExportedFrame {
            step,
            time_s,
            frame,
            subtraction,
        });
    }
    Ok(exported)
}

pub fn cmd_rollout(ckpt: &Path, input: &RolloutInput, times: &RolloutTimes, out: &Path) -> Result<Vec<ExportedFrame>> {
    let ck = Checkpoint::load(ckpt)?;
    let pre = load_pre_contrast(input)?;
    export_rollout(&ck, &pre, times, out, ck.seed)
}

/// Model and baseline metrics for a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub model: MetricReport,
    pub baseline: MetricReport,
}

/// Predicts every case with the evaluation mask stream and scores it.
pub fn evaluate_model(ck: &Checkpoint, dataset: &[TrainingCase]) -> Result<EvalSummary> {
    ck.config.check_dataset(dataset)?;
    let predictions: Vec<Vec<Image>> = dataset
        .par_iter()
        .enumerate()
        .map(|(i, case)| predict_frames(&ck.params, case, &ck.config, case_key(ck.seed, EVAL_EPOCH, i)))
        .collect::<Result<_>>()?;
    Ok(EvalSummary {
        model: metrics::evaluate_cases(dataset, &predictions)?,
        baseline: metrics::baseline_report(dataset)?,
    })
}

/// CSV text with model rows followed by baseline rows.
pub fn eval_csv(summary: &EvalSummary) -> String {
    let mut out = metrics::csv_preamble(summary.model.ms_ssim_levels);
    out.push_str(metrics::CSV_HEADER);
    out.push('\n');
    metrics::write_csv_rows(&mut out, "model", &summary.model);
    metrics::write_csv_rows(&mut out, "baseline", &summary.baseline);
    out
}

pub fn cmd_eval(ckpt: &Path, data: &Path, out: &Path) -> Result<EvalSummary> {
    let ck = Checkpoint::load(ckpt)?;
    let (manifest, dataset) = read_dataset(data)?;
    check_delta_t(&manifest, &ck.config, data)?;
    let summary = evaluate_model(&ck, &dataset)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| TencaError::io(dir, e))?;
    }
    fs::write(out, eval_csv(&summary)).map_err(|e| TencaError::io(out, e))?;
    Ok(summary)
}

/// Largest relative error a gradient check may show.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub trials: usize,
    pub seed: u64,
    pub epsilon: f64,
    /// Negative control: scales the analytic `w1` gradient by 1.01 before
    /// comparison, which the check must catch.
    pub corrupt_backward: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            trials: 5,
            seed: 0,
            epsilon: GRADCHECK_EPSILON,
            corrupt_backward: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckTrial {
    pub seed: u64,
    pub max_rel_error: f64,
    pub checked: usize,
}

impl GradcheckTrial {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOLERANCE
    }
}

/// Trial `i` uses [`TinyProblem::new`]`(seed + i)`.
pub fn cmd_gradcheck(opts: &GradcheckOptions) -> Result<Vec<GradcheckTrial>> {
    if opts.trials == 0 {
        return Err(TencaError::Config("at least one trial required".into()));
    }
    (0..opts.trials as u64)
        .map(|i| {
            let seed = opts.seed.wrapping_add(i);
            let problem = TinyProblem::new(seed)?;
            let (_, mut grads) = problem.loss_and_grad()?;
            if opts.corrupt_backward {
                grads.w1.iter_mut().for_each(|g| *g *= 1.01);
            }
            let report = problem.check(&grads, opts.epsilon)?;
            Ok(GradcheckTrial {
                seed,
                max_rel_error: report.max_rel_error,
                checked: report.checked,
            })
        })
        .collect()
}

/// Worst relative error of the seed's problem for each step size.
pub fn epsilon_sweep(seed: u64, epsilons: &[f64]) -> Result<Vec<(f64, f64)>> {
    let problem = TinyProblem::new(seed)?;
    let (_, grads) = problem.loss_and_grad()?;
    epsilons
        .iter()
        .map(|&eps| Ok((eps, problem.check(&grads, eps)?.max_rel_error)))
        .collect()
}

pub const DEFAULT_SWEEP: [f64; 7] = [1e-3, 3e-4, 1e-4, 3e-5, 1e-5, 1e-6, 1e-7];
