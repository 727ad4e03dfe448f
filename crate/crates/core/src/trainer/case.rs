use crate::error::{Result, TencaError};
use crate::image::Image;

/// Most post-contrast frames a case may carry.
pub const MAX_FRAMES: usize = 5;

/// Latest admissible acquisition time after injection, in seconds.
pub const MAX_TIME_S: f64 = 1024.0;

/// One post-contrast acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub target: Image,
    pub time_s: f64,
}

/// A pre-contrast image and its sparse, time-stamped post-contrast frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCase {
    pub case_id: String,
    pub pre_contrast: Image,
    pub frames: Vec<Frame>,
}

impl TrainingCase {
    pub fn new(case_id: impl Into<String>, pre_contrast: Image, frames: Vec<Frame>) -> Result<Self> {
        let case = Self {
            case_id: case_id.into(),
            pre_contrast,
            frames,
        };
        case.validate()?;
        Ok(case)
    }

    pub fn k(&self) -> usize {
        self.frames.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pre_contrast.dims()
    }

    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.time_s).collect()
    }

    pub fn targets(&self) -> impl Iterator<Item = &Image> {
        self.frames.iter().map(|f| &f.target)
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.case_id;
        let k = self.frames.len();
        if !(1..=MAX_FRAMES).contains(&k) {
            return Err(TencaError::Data(format!(
                "case {id}: {k} frames, expected 1..={MAX_FRAMES}"
            )));
        }
        if !self.pre_contrast.is_finite() {
            return Err(TencaError::Data(format!("case {id}: non-finite pre-contrast pixels")));
        }
        let mut last = 0.0;
        for (i, f) in self.frames.iter().enumerate() {
            if !(f.time_s > 0.0 && f.time_s <= MAX_TIME_S) {
                return Err(TencaError::Data(format!(
                    "case {id}: frame {i} time {} s outside (0, {MAX_TIME_S}]",
                    f.time_s
                )));
            }
            if f.time_s <= last {
                return Err(TencaError::Data(format!(
                    "case {id}: frame times must be strictly increasing"
                )));
            }
            last = f.time_s;
            if f.target.dims() != self.pre_contrast.dims() {
                return Err(TencaError::Data(format!(
                    "case {id}: frame {i} is {:?}, pre-contrast is {:?}",
                    f.target.dims(),
                    self.pre_contrast.dims()
                )));
            }
            if !f.target.is_finite() {
                return Err(TencaError::Data(format!("case {id}: frame {i} has non-finite pixels")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(t: f64) -> Frame {
        Frame {
            target: Image::zeros(4, 4),
            time_s: t,
        }
    }

    #[test]
    fn accepts_up_to_five_increasing_frames() {
        let frames = [60.0, 120.0, 240.0, 480.0, 960.0].map(frame).to_vec();
        let c = TrainingCase::new("a", Image::zeros(4, 4), frames).unwrap();
        assert_eq!(c.k(), 5);
    }

    #[test]
    fn rejects_invalid_cases() {
        let pre = Image::zeros(4, 4);
        let bad: Vec<Vec<Frame>> = vec![
            vec![],
            [1.0, 2.0, 3.0, 4.0, 5.0, 6.0].map(frame).to_vec(),
            vec![frame(0.0)],
            vec![frame(1025.0)],
            vec![frame(100.0), frame(100.0)],
            vec![frame(200.0), frame(100.0)],
            vec![Frame {
                target: Image::zeros(3, 4),
                time_s: 8.0,
            }],
        ];
        for frames in bad {
            assert!(matches!(
                TrainingCase::new("x", pre.clone(), frames),
                Err(TencaError::Data(_))
            ));
        }
    }
}
