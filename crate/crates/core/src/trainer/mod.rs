//! Sparse-time conditioning and the training loop.
//!
//! Each update step advances simulated time by `delta_t_s`. A frame acquired
//! at `t` seconds is compared with the visible channel after
//! `time_to_step(t)` updates; no other step contributes to the loss.

mod case;
mod optim;
mod schedule;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use case::{Frame, TrainingCase, MAX_FRAMES, MAX_TIME_S};
pub use optim::{adam_update, clip_gradients, global_norm, AdamConfig, OptimizerState};
pub use schedule::{time_to_step, Schedule};

use crate::autodiff::{loss_and_grad, BpttOptions, DEFAULT_SEGMENT_LEN};
use crate::error::{Result, TencaError};
use crate::grid::{init_state, rollout, FireRule};
use crate::image::Image;
use crate::params::{ModelParams, ParamGradients};
use crate::rng::RngKey;

/// Epoch value reserved for evaluation rollouts, so their masks never
/// coincide with a training epoch.
pub const EVAL_EPOCH: u64 = u64::MAX;

/// Hyperparameters of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub delta_t_s: f64,
    pub n_steps: usize,
    pub fire_rate: f64,
    pub channels: usize,
    pub hidden: usize,
    pub adam: AdamConfig,
    pub grad_clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub segment_len: usize,
    /// Debug mode: all cells fire, deltas scaled by the fire rate.
    pub deterministic_mask: bool,
    /// Roll every case out to `n_steps` instead of its last frame.
    pub full_horizon: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            delta_t_s: 8.0,
            n_steps: 128,
            fire_rate: 0.5,
            channels: 24,
            hidden: 128,
            adam: AdamConfig::default(),
            grad_clip_norm: 1.0,
            batch_size: 4,
            epochs: 100,
            seed: 0,
            segment_len: DEFAULT_SEGMENT_LEN,
            deterministic_mask: false,
            full_horizon: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(TencaError::Config(msg));
        if !(self.delta_t_s > 0.0 && self.delta_t_s.is_finite()) {
            return fail(format!("delta_t_s must be positive, got {}", self.delta_t_s));
        }
        if self.n_steps == 0 {
            return fail("n_steps must be at least 1".into());
        }
        if self.channels < 2 {
            return fail(format!("channels must be >= 2, got {}", self.channels));
        }
        if self.hidden == 0 {
            return fail("hidden must be at least 1".into());
        }
        if !(self.grad_clip_norm > 0.0) {
            return fail("grad_clip_norm must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.segment_len == 0 {
            return fail("segment_len must be at least 1".into());
        }
        self.rule().validate()?;
        self.adam.validate()
    }

    pub fn rule(&self) -> FireRule {
        FireRule {
            fire_rate: self.fire_rate,
            deterministic: self.deterministic_mask,
        }
    }

    pub fn bptt(&self) -> BpttOptions {
        BpttOptions::new(self.channels, self.rule()).with_segment_len(self.segment_len)
    }

    /// Simulated time covered by `n_steps` updates.
    pub fn horizon_s(&self) -> f64 {
        self.n_steps as f64 * self.delta_t_s
    }

    pub fn schedule(&self, case: &TrainingCase) -> Result<Schedule> {
        Schedule::for_case(case, self.delta_t_s, self.n_steps, self.full_horizon)
    }

    /// Rejects datasets whose last frame lies beyond the rollout horizon.
    pub fn check_dataset(&self, dataset: &[TrainingCase]) -> Result<()> {
        if dataset.is_empty() {
            return Err(TencaError::Data("dataset is empty".into()));
        }
        for case in dataset {
            case.validate()?;
            self.schedule(case)?;
        }
        Ok(())
    }

    pub fn init_params(&self) -> Result<ModelParams> {
        ModelParams::init(self.channels, self.hidden, self.seed)
    }
}

/// Mean over frames of per-frame pixel-mean squared error, plus the
/// per-frame values.
pub fn sparse_loss_planes(snapshots: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    if snapshots.len() != targets.len() || snapshots.is_empty() {
        return Err(TencaError::Contract(format!(
            "{} snapshots for {} targets",
            snapshots.len(),
            targets.len()
        )));
    }
    let mut per_frame = Vec::with_capacity(targets.len());
    for (s, t) in snapshots.iter().zip(targets) {
        if s.len() != t.len() || s.is_empty() {
            return Err(TencaError::Contract("snapshot and target sizes differ".into()));
        }
        let sse: f64 = s.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
        per_frame.push(sse / s.len() as f64);
    }
    let loss = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok((loss, per_frame))
}

/// [`sparse_loss_planes`] on images.
pub fn sparse_loss(snapshots: &[Image], targets: &[Image]) -> Result<f64> {
    let s: Vec<Vec<f64>> = snapshots.iter().map(Image::to_f64).collect();
    let t: Vec<Vec<f64>> = targets.iter().map(Image::to_f64).collect();
    Ok(sparse_loss_planes(&s, &t)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Mean pre-clip global gradient norm over the epoch's updates.
    pub grad_norm: f64,
    pub seconds: f64,
    pub updates: usize,
    pub failed_cases: usize,
}

/// Rollout key of case `case_index` in `epoch`.
pub fn case_key(seed: u64, epoch: u64, case_index: usize) -> RngKey {
    RngKey::new(seed, epoch, case_index as u64, 0)
}

/// One pass over `dataset` in minibatches of `config.batch_size`.
///
/// Per batch: every case is rolled out and differentiated independently,
/// gradients are averaged in batch order, clipped, and applied with Adam.
/// A failing case is skipped and logged; the epoch aborts when more than
/// 10% of the cases fail.
pub fn train_epoch(
    dataset: &[TrainingCase],
    params: &mut ModelParams,
    opt_state: &mut OptimizerState,
    config: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats> {
    if dataset.is_empty() {
        return Err(TencaError::Data("dataset is empty".into()));
    }
    config.validate()?;
    let started = Instant::now();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).rotate_left(32));
    order.shuffle(&mut rng);

    let options = config.bptt();
    let mut loss_sum = 0.0;
    let mut ok_cases = 0usize;
    let mut failed = 0usize;
    let mut norm_sum = 0.0;
    let mut updates = 0usize;

    for batch in order.chunks(config.batch_size) {
        let results: Vec<(usize, Result<(f64, ParamGradients)>)> = batch
            .par_iter()
            .map(|&ci| {
                let case = &dataset[ci];
                let r = config.schedule(case).and_then(|sched| {
                    loss_and_grad(case, params, &sched, case_key(config.seed, epoch as u64, ci), options)
                });
                (ci, r)
            })
            .collect();

        let mut acc = ParamGradients::zeros_like(params);
        let mut n = 0usize;
        for (ci, r) in results {
            match r {
                Ok((loss, g)) => {
                    acc.add_scaled(&g, 1.0);
                    loss_sum += loss;
                    n += 1;
                }
                Err(e) => {
                    log::warn!("epoch {epoch}: case {} skipped: {e}", dataset[ci].case_id);
                    failed += 1;
                }
            }
        }
        if failed * 10 > dataset.len() {
            return Err(TencaError::Numeric {
                step: 0,
                what: format!("epoch {epoch} aborted: {failed} of {} cases failed", dataset.len()),
            });
        }
        if n == 0 {
            continue;
        }
        ok_cases += n;
        acc.iter_mut().for_each(|g| *g /= n as f64);
        norm_sum += clip_gradients(&mut acc, config.grad_clip_norm);
        match adam_update(params, &acc, opt_state, &config.adam) {
            Ok(()) => updates += 1,
            Err(e) => log::warn!("epoch {epoch}: update skipped: {e}"),
        }
    }

    Ok(EpochStats {
        epoch,
        mean_loss: if ok_cases > 0 { loss_sum / ok_cases as f64 } else { f64::NAN },
        grad_norm: if updates > 0 { norm_sum / updates as f64 } else { 0.0 },
        seconds: started.elapsed().as_secs_f64(),
        updates,
        failed_cases: failed,
    })
}

/// Model prediction for each of the case's frames.
pub fn predict_frames(params: &ModelParams, case: &TrainingCase, config: &TrainConfig, key: RngKey) -> Result<Vec<Image>> {
    let sched = config.schedule(case)?;
    let grid = init_state(&case.pre_contrast, config.channels)?;
    let ro = rollout(&grid, params, sched.horizon, &sched.snapshot_steps, key, config.rule())?;
    let (h, w) = case.dims();
    ro.snapshots
        .iter()
        .map(|s| Image::from_f64(h, w, s))
        .collect()
}

/// Mean conditioned-frame MSE of a deterministic evaluation rollout.
pub fn eval_loss(params: &ModelParams, case: &TrainingCase, config: &TrainConfig, key: RngKey) -> Result<f64> {
    let sched = config.schedule(case)?;
    let grid = init_state(&case.pre_contrast, config.channels)?;
    let ro = rollout(&grid, params, sched.horizon, &sched.snapshot_steps, key, config.rule())?;
    let targets: Vec<Vec<f64>> = case.targets().map(Image::to_f64).collect();
    Ok(sparse_loss_planes(&ro.snapshots, &targets)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_loss_examples() {
        let a = Image::filled(2, 2, 0.3);
        assert_eq!(sparse_loss(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap(), 0.0);
        let zero = Image::zeros(2, 2);
        let half = Image::filled(2, 2, 0.5);
        assert_eq!(sparse_loss(std::slice::from_ref(&zero), std::slice::from_ref(&half)).unwrap(), 0.25);
        let two = sparse_loss(&[zero.clone(), half.clone()], &[half.clone(), half]).unwrap();
        assert_eq!(two, 0.125);
        assert!(matches!(
            sparse_loss(std::slice::from_ref(&zero), &[zero.clone(), zero.clone()]),
            Err(TencaError::Contract(_))
        ));
    }

    #[test]
    fn default_horizon_covers_max_time() {
        let c = TrainConfig::default();
        assert_eq!(c.horizon_s(), MAX_TIME_S);
        c.validate().unwrap();
        assert_eq!(crate::params::param_count(c.channels, c.hidden), 12_872);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            TrainConfig { channels: 1, ..Default::default() },
            TrainConfig { fire_rate: 1.5, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { delta_t_s: 0.0, ..Default::default() },
            TrainConfig { grad_clip_norm: 0.0, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(TencaError::Config(_))));
        }
    }
}
