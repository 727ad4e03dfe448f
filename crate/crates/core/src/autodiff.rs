//! Reverse-mode gradients of the sparse temporal loss through the unrolled
//! rollout.
//!
//! The forward pass keeps only the state at every `segment_len`-th step.
//! The backward pass walks the segments last to first, replays each one from
//! its boundary state (regenerating fire masks from their counter keys) and
//! then back-propagates through the replayed steps. Replay is the same
//! arithmetic as the original forward, so gradients do not depend on the
//! segment length.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TencaError};
use crate::grid::{init_state, rollout, CellGrid, FireRule};
use crate::params::{ModelParams, ParamGradients};
use crate::rng::RngKey;
use crate::step::{self, StepRecord};
use crate::trainer::{sparse_loss_planes, Schedule, TrainingCase};

/// Default number of steps between stored states.
pub const DEFAULT_SEGMENT_LEN: usize = 16;

/// Rollout settings shared by the taped forward pass and its replay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpttOptions {
    pub channels: usize,
    pub rule: FireRule,
    pub segment_len: usize,
}

impl BpttOptions {
    pub fn new(channels: usize, rule: FireRule) -> Self {
        Self {
            channels,
            rule,
            segment_len: DEFAULT_SEGMENT_LEN,
        }
    }

    pub fn with_segment_len(mut self, segment_len: usize) -> Self {
        self.segment_len = segment_len;
        self
    }
}

/// What the backward pass needs from a forward rollout.
#[derive(Debug, Clone)]
pub struct RolloutTape {
    options: BpttOptions,
    key: RngKey,
    schedule: Schedule,
    /// State after `0, K, 2K, ...` updates.
    boundaries: Vec<CellGrid>,
    /// `snapshot - target` per conditioned frame, row-major.
    residuals: Vec<Vec<f64>>,
    frame_losses: Vec<f64>,
    loss: f64,
    params_fingerprint: u64,
}

impl RolloutTape {
    pub fn loss(&self) -> f64 {
        self.loss
    }

    /// Per-frame MSE, in frame order.
    pub fn frame_losses(&self) -> &[f64] {
        &self.frame_losses
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    /// Number of stored boundary states.
    pub fn stored_states(&self) -> usize {
        self.boundaries.len()
    }
}

fn fingerprint(params: &ModelParams) -> u64 {
    // FNV-1a over the raw bits
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in params.iter() {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h ^ ((params.channels() as u64) << 32 | params.hidden() as u64)
}

fn target_planes(case: &TrainingCase) -> Vec<Vec<f64>> {
    case.targets().map(|t| t.to_f64()).collect()
}

/// Runs the case forward, recording boundary states, and returns the
/// mean-over-frames MSE together with the tape.
pub fn forward_with_tape(
    case: &TrainingCase,
    params: &ModelParams,
    schedule: &Schedule,
    key: RngKey,
    options: BpttOptions,
) -> Result<(f64, RolloutTape)> {
    if options.segment_len == 0 {
        return Err(TencaError::Config("segment length must be at least 1".into()));
    }
    if schedule.snapshot_steps.len() != case.k() {
        return Err(TencaError::Contract(format!(
            "schedule has {} snapshot steps for {} frames",
            schedule.snapshot_steps.len(),
            case.k()
        )));
    }
    options.rule.validate()?;
    let mut state = init_state(&case.pre_contrast, options.channels)?;
    if state.channels() != params.channels() {
        return Err(TencaError::Config(format!(
            "options use {} channels, parameters {}",
            options.channels,
            params.channels()
        )));
    }
    let (h, w) = case.dims();
    let mut boundaries = vec![state.clone()];
    let mut snapshots = Vec::with_capacity(case.k());
    for n in 1..=schedule.horizon {
        let mask = options.rule.mask(key.at_step(n as u64), h, w);
        state = step::forward(&state, params, &mask.active_cells(), options.rule.gain(), None);
        if !state.is_finite() {
            return Err(TencaError::Numeric {
                step: n,
                what: format!("non-finite state in case {}", case.case_id),
            });
        }
        if schedule.frame_at(n).is_some() {
            snapshots.push(state.visible());
        }
        if n % options.segment_len == 0 && n < schedule.horizon {
            boundaries.push(state.clone());
        }
    }

    let targets = target_planes(case);
    let (loss, frame_losses) = sparse_loss_planes(&snapshots, &targets)?;
    if !loss.is_finite() {
        return Err(TencaError::Numeric {
            step: schedule.horizon,
            what: format!("non-finite loss in case {}", case.case_id),
        });
    }
    let residuals = snapshots
        .iter()
        .zip(&targets)
        .map(|(s, t)| s.iter().zip(t).map(|(a, b)| a - b).collect())
        .collect();
    let tape = RolloutTape {
        options,
        key,
        schedule: schedule.clone(),
        boundaries,
        residuals,
        frame_losses,
        loss,
        params_fingerprint: fingerprint(params),
    };
    Ok((loss, tape))
}

/// Exact gradients of the tape's loss with respect to every parameter.
pub fn backward(tape: &RolloutTape, params: &ModelParams) -> Result<ParamGradients> {
    if tape.params_fingerprint != fingerprint(params) {
        return Err(TencaError::Contract(
            "backward called with parameters that differ from the taped forward pass".into(),
        ));
    }
    let BpttOptions {
        rule, segment_len, ..
    } = tape.options;
    let gain = rule.gain();
    let first = &tape.boundaries[0];
    let (h, w, d) = (first.height(), first.width(), first.channels());
    let horizon = tape.schedule.horizon;
    let k = tape.residuals.len();
    // d/ds of mean_i mean_px (s - y)^2
    let loss_scale = 2.0 / (k as f64 * (h * w) as f64);

    let mut grads = ParamGradients::zeros_like(params);
    let mut g = vec![0.0; h * w * d];

    for (seg, boundary) in tape.boundaries.iter().enumerate().rev() {
        let start = seg * segment_len;
        let end = (start + segment_len).min(horizon);
        let mut states = Vec::with_capacity(end - start);
        let mut records = Vec::with_capacity(end - start);
        states.push(boundary.clone());
        for n in start + 1..=end {
            let mask = rule.mask(tape.key.at_step(n as u64), h, w);
            let mut rec = StepRecord::default();
            let next = step::forward(states.last().unwrap(), params, &mask.active_cells(), gain, Some(&mut rec));
            records.push(rec);
            if n < end {
                states.push(next);
            }
        }
        for n in (start + 1..=end).rev() {
            if let Some(i) = tape.schedule.frame_at(n) {
                for (gc, r) in g.iter_mut().step_by(d).zip(&tape.residuals[i]) {
                    *gc += loss_scale * r;
                }
            }
            let local = n - start - 1;
            g = step::backward(&states[local], params, &records[local], gain, &g, &mut grads);
        }
    }

    if !grads.is_finite() {
        return Err(TencaError::Numeric {
            step: 0,
            what: "non-finite parameter gradient".into(),
        });
    }
    Ok(grads)
}

/// Loss and gradient of one case.
pub fn loss_and_grad(
    case: &TrainingCase,
    params: &ModelParams,
    schedule: &Schedule,
    key: RngKey,
    options: BpttOptions,
) -> Result<(f64, ParamGradients)> {
    let (loss, tape) = forward_with_tape(case, params, schedule, key, options)?;
    Ok((loss, backward(&tape, params)?))
}

/// Loss of one case from a plain (untaped) rollout.
pub fn case_loss(
    case: &TrainingCase,
    params: &ModelParams,
    schedule: &Schedule,
    key: RngKey,
    options: BpttOptions,
) -> Result<f64> {
    let grid = init_state(&case.pre_contrast, options.channels)?;
    let ro = rollout(&grid, params, schedule.horizon, &schedule.snapshot_steps, key, options.rule)?;
    Ok(sparse_loss_planes(&ro.snapshots, &target_planes(case))?.0)
}

/// Which parameters a finite-difference check perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    All,
    Sample { count: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat parameter index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// `|a - b| / (|a| + |b| + 1e-12)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs() + 1e-12)
}

/// Compares `analytic` against central differences of [`case_loss`].
pub fn compare_with_finite_differences(
    analytic: &ModelParams,
    params: &ModelParams,
    case: &TrainingCase,
    schedule: &Schedule,
    key: RngKey,
    options: BpttOptions,
    epsilon: f64,
    probe: Probe,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(TencaError::Config(format!(
            "finite-difference epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    let indices: Vec<usize> = match probe {
        Probe::All => (0..params.len()).collect(),
        Probe::Sample { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, params.len(), count.min(params.len())).into_vec();
            idx.sort_unstable();
            idx
        }
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: indices.len(),
    };
    let mut probe_params = params.clone();
    for &i in &indices {
        let orig = params.get_flat(i);
        probe_params.set_flat(i, orig + epsilon);
        let up = case_loss(case, &probe_params, schedule, key, options)?;
        probe_params.set_flat(i, orig - epsilon);
        let down = case_loss(case, &probe_params, schedule, key, options)?;
        probe_params.set_flat(i, orig);
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic.get_flat(i);
        let err = relative_error(a, numeric);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

/// Runs forward/backward once and reports the worst relative error against
/// central finite differences.
pub fn finite_diff_check(
    params: &ModelParams,
    case: &TrainingCase,
    schedule: &Schedule,
    key: RngKey,
    options: BpttOptions,
    epsilon: f64,
    probe: Probe,
) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_grad(case, params, schedule, key, options)?;
    compare_with_finite_differences(&grads, params, case, schedule, key, options, epsilon, probe)
}

/// A small, fully specified problem for gradient checking: an 8×8 grid
/// with random pre-contrast and targets, `d = 4`, `H = 8`, a 5-step
/// horizon with frames at steps 2 and 5, seeded masks at fire rate 0.5 and
/// dense random parameters (so no gradient is trivially zero).
#[derive(Debug, Clone)]
pub struct TinyProblem {
    pub case: TrainingCase,
    pub schedule: Schedule,
    pub params: ModelParams,
    pub key: RngKey,
    pub options: BpttOptions,
}

impl TinyProblem {
    pub const SIZE: usize = 8;
    pub const CHANNELS: usize = 4;
    pub const HIDDEN: usize = 8;
    pub const STEPS: usize = 5;

    pub fn new(seed: u64) -> Result<Self> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Self::SIZE;
        let image = |rng: &mut ChaCha8Rng| crate::image::Image::from_fn(n, n, |_, _| rng.random::<f32>());
        let pre = image(&mut rng);
        let frames = [16.0, 40.0]
            .into_iter()
            .map(|t| crate::trainer::Frame {
                target: image(&mut rng),
                time_s: t,
            })
            .collect();
        let case = TrainingCase::new(format!("tiny{seed}"), pre, frames)?;
        let schedule = Schedule::for_case(&case, 8.0, Self::STEPS, false)?;
        Ok(Self {
            case,
            schedule,
            params: ModelParams::init_dense(Self::CHANNELS, Self::HIDDEN, seed.wrapping_add(1))?,
            key: RngKey::new(seed, 0, 0, 0),
            options: BpttOptions::new(Self::CHANNELS, FireRule::stochastic(0.5)),
        })
    }

    pub fn loss_and_grad(&self) -> Result<(f64, ParamGradients)> {
        loss_and_grad(&self.case, &self.params, &self.schedule, self.key, self.options)
    }

    /// Checks every parameter against central differences with step `epsilon`.
    pub fn check(&self, analytic: &ModelParams, epsilon: f64) -> Result<GradCheckReport> {
        compare_with_finite_differences(
            analytic,
            &self.params,
            &self.case,
            &self.schedule,
            self.key,
            self.options,
            epsilon,
            Probe::All,
        )
    }
}
