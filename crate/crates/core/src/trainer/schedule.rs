use crate::error::{Result, TencaError};
use crate::trainer::case::TrainingCase;

/// Update step reached after `time_s` seconds when every step advances the
/// clock by `delta_t_s`: `time_s / delta_t_s` rounded half-up, at least 1.
pub fn time_to_step(time_s: f64, delta_t_s: f64) -> Result<usize> {
    if !(time_s > 0.0) || !time_s.is_finite() {
        return Err(TencaError::Data(format!("acquisition time must be positive, got {time_s}")));
    }
    if !(delta_t_s > 0.0) || !delta_t_s.is_finite() {
        return Err(TencaError::Config(format!("delta_t must be positive, got {delta_t_s}")));
    }
    let step = (time_s / delta_t_s + 0.5).floor().max(1.0);
    Ok(step as usize)
}

/// Where a case's rollout stops and at which steps its frames are compared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    /// Steps at which frame `i` is conditioned, strictly increasing.
    pub snapshot_steps: Vec<usize>,
    /// Number of update steps to run.
    pub horizon: usize,
}

impl Schedule {
    pub fn new(snapshot_steps: Vec<usize>, horizon: usize) -> Result<Self> {
        crate::grid::check_snapshot_steps(horizon, &snapshot_steps)?;
        Ok(Self {
            snapshot_steps,
            horizon,
        })
    }

    /// Maps each frame time onto a step. The rollout ends at the last
    /// conditioned step, or at `n_steps` when `full_horizon` is set.
    pub fn for_case(case: &TrainingCase, delta_t_s: f64, n_steps: usize, full_horizon: bool) -> Result<Self> {
        let mut steps = Vec::with_capacity(case.k());
        for f in &case.frames {
            let s = time_to_step(f.time_s, delta_t_s)?;
            if let Some(&prev) = steps.last() {
                if s == prev {
                    return Err(TencaError::Data(format!(
                        "case {}: two frames map to step {s} (delta_t = {delta_t_s} s)",
                        case.case_id
                    )));
                }
            }
            steps.push(s);
        }
        let last = *steps
            .last()
            .ok_or_else(|| TencaError::Data(format!("case {} has no frames", case.case_id)))?;
        if last > n_steps {
            return Err(TencaError::Config(format!(
                "case {}: frame at step {last} is beyond the {n_steps}-step horizon",
                case.case_id
            )));
        }
        let horizon = if full_horizon { n_steps } else { last };
        Self::new(steps, horizon)
    }

    pub fn frame_at(&self, step: usize) -> Option<usize> {
        self.snapshot_steps.binary_search(&step).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::trainer::case::Frame;

    #[test]
    fn time_to_step_examples() {
        assert_eq!(time_to_step(1024.0, 8.0).unwrap(), 128);
        assert_eq!(time_to_step(8.0, 8.0).unwrap(), 1);
        // 12.5 rounds up
        assert_eq!(time_to_step(100.0, 8.0).unwrap(), 13);
        assert_eq!(time_to_step(99.9, 8.0).unwrap(), 12);
        // clamped to at least one update
        assert_eq!(time_to_step(1.0, 8.0).unwrap(), 1);
        assert!(time_to_step(0.0, 8.0).is_err());
    }

    #[test]
    fn rounding_error_never_exceeds_half_step() {
        for t in 4..=1024 {
            let t = t as f64;
            let s = time_to_step(t, 8.0).unwrap() as f64;
            assert!((t - s * 8.0).abs() <= 4.0, "t = {t}");
        }
    }

    fn case(times: &[f64]) -> TrainingCase {
        let frames = times
            .iter()
            .map(|&t| Frame {
                target: Image::zeros(2, 2),
                time_s: t,
            })
            .collect();
        TrainingCase::new("c", Image::zeros(2, 2), frames).unwrap()
    }

    #[test]
    fn schedule_stops_at_last_frame_unless_full_horizon() {
        let c = case(&[64.0, 192.0, 448.0, 960.0]);
        let s = Schedule::for_case(&c, 8.0, 128, false).unwrap();
        assert_eq!(s.snapshot_steps, vec![8, 24, 56, 120]);
        assert_eq!(s.horizon, 120);
        let full = Schedule::for_case(&c, 8.0, 128, true).unwrap();
        assert_eq!(full.horizon, 128);
        assert_eq!(s.frame_at(56), Some(2));
        assert_eq!(s.frame_at(57), None);
    }

    #[test]
    fn colliding_frames_are_rejected() {
        let c = case(&[100.0, 102.0]);
        assert!(matches!(
            Schedule::for_case(&c, 8.0, 128, false),
            Err(TencaError::Data(_))
        ));
    }

    #[test]
    fn frames_beyond_horizon_are_rejected() {
        let c = case(&[500.0]);
        assert!(Schedule::for_case(&c, 8.0, 32, false).is_err());
    }
}
