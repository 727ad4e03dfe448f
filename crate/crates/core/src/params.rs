//! Learnable parameters of the transition function.
//!
//! Perception uses three pathways per channel: the identity, and two
//! depthwise 3×3 kernels. The update MLP maps the `3d` perception vector
//! through one ReLU hidden layer of width `H` back to a `d` channel delta.

use std::ops::{Deref, DerefMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TencaError};

/// Number of perception pathways (identity + two learned kernels).
pub const PATHWAYS: usize = 3;

/// Taps in a 3×3 kernel.
pub const TAPS: usize = 9;

/// Total scalar count for `channels` state channels and `hidden` units.
pub const fn param_count(channels: usize, hidden: usize) -> usize {
    2 * TAPS * channels + (PATHWAYS * channels * hidden + hidden) + (hidden * channels + channels)
}

/// Parameters of the transition function.
///
/// Kernels are laid out `[tap][channel]` with tap `ky * 3 + kx`; dense
/// weights are row-major `[input][output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    channels: usize,
    hidden: usize,
    pub kernel_a: Vec<f64>,
    pub kernel_b: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(channels: usize, hidden: usize) -> Result<Self> {
        if channels < 2 {
            return Err(TencaError::Config(format!(
                "need at least 2 channels (1 visible + 1 hidden), got {channels}"
            )));
        }
        if hidden == 0 {
            return Err(TencaError::Config("hidden size must be at least 1".into()));
        }
        let d = channels;
        Ok(Self {
            channels,
            hidden,
            kernel_a: vec![0.0; TAPS * d],
            kernel_b: vec![0.0; TAPS * d],
            w1: vec![0.0; PATHWAYS * d * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * d],
            b2: vec![0.0; d],
        })
    }

    /// Kernels and first layer uniform in `±1/sqrt(fan_in)`; the output
    /// layer starts at zero so the untrained automaton is the identity map.
    pub fn init(channels: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(channels, hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fill = |v: &mut [f64], fan_in: usize, rng: &mut ChaCha8Rng| {
            let s = 1.0 / (fan_in as f64).sqrt();
            for x in v {
                *x = rng.random_range(-s..=s);
            }
        };
        fill(&mut p.kernel_a, TAPS, &mut rng);
        fill(&mut p.kernel_b, TAPS, &mut rng);
        fill(&mut p.w1, PATHWAYS * channels, &mut rng);
        Ok(p)
    }

    /// Like [`ModelParams::init`] but with a random output layer too, so that
    /// every parameter influences the loss. Used for gradient checking.
    pub fn init_dense(channels: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut p = Self::init(channels, hidden, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let s = 1.0 / (hidden as f64).sqrt();
        for x in p.w2.iter_mut().chain(p.b2.iter_mut()).chain(p.b1.iter_mut()) {
            *x = rng.random_range(-s..=s);
        }
        Ok(p)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Width of the perception vector, `3d`.
    pub fn perception_width(&self) -> usize {
        PATHWAYS * self.channels
    }

    pub fn len(&self) -> usize {
        param_count(self.channels, self.hidden)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Parameter tensors in canonical order.
    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            &self.kernel_a,
            &self.kernel_b,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            &mut self.kernel_a,
            &mut self.kernel_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> + '_ {
        self.tensors().into_iter().flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.tensors_mut().into_iter().flatten()
    }

    /// Reads scalar `index` in canonical flat order.
    pub fn get_flat(&self, index: usize) -> f64 {
        let mut i = index;
        for t in self.tensors() {
            if i < t.len() {
                return t[i];
            }
            i -= t.len();
        }
        panic!("parameter index {index} out of range")
    }

    pub fn set_flat(&mut self, index: usize, value: f64) {
        let mut i = index;
        for t in self.tensors_mut() {
            if i < t.len() {
                t[i] = value;
                return;
            }
            i -= t.len();
        }
        panic!("parameter index {index} out of range")
    }

    /// Name of the tensor holding flat index `index`.
    pub fn tensor_name(&self, index: usize) -> &'static str {
        const NAMES: [&str; 6] = ["kernel_a", "kernel_b", "w1", "b1", "w2", "b2"];
        let mut i = index;
        for (t, name) in self.tensors().into_iter().zip(NAMES) {
            if i < t.len() {
                return name;
            }
            i -= t.len();
        }
        "out-of-range"
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.channels == other.channels && self.hidden == other.hidden
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn fill(&mut self, value: f64) {
        self.iter_mut().for_each(|v| *v = value);
    }

    /// `self += other * scale`, elementwise.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b * scale;
        }
    }

    /// Checks kernel/weight sizes against the channel/hidden dims.
    pub fn validate(&self) -> Result<()> {
        let d = self.channels;
        let h = self.hidden;
        let expected = [TAPS * d, TAPS * d, PATHWAYS * d * h, h, h * d, d];
        for (t, n) in self.tensors().iter().zip(expected) {
            if t.len() != n {
                return Err(TencaError::Config(format!(
                    "parameter tensor has {} values, expected {n}",
                    t.len()
                )));
            }
        }
        Ok(())
    }
}

/// `∂L/∂θ`, laid out exactly like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients(pub ModelParams);

impl ParamGradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let mut g = params.clone();
        g.fill(0.0);
        ParamGradients(g)
    }

    pub fn into_inner(self) -> ModelParams {
        self.0
    }
}

impl Deref for ParamGradients {
    type Target = ModelParams;

    fn deref(&self) -> &ModelParams {
        &self.0
    }
}

impl DerefMut for ParamGradients {
    fn deref_mut(&mut self) -> &mut ModelParams {
        &mut self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_matches_default_architecture() {
        assert_eq!(param_count(24, 128), 432 + 9344 + 3096);
        assert_eq!(param_count(24, 128), 12_872);
        assert_eq!(param_count(2, 1), 36 + 7 + 4);
    }

    #[test]
    fn tensor_lengths_sum_to_count() {
        let p = ModelParams::zeros(5, 7).unwrap();
        let total: usize = p.tensors().iter().map(|t| t.len()).sum();
        assert_eq!(total, param_count(5, 7));
        assert_eq!(p.len(), total);
    }

    #[test]
    fn rejects_single_channel() {
        assert!(matches!(
            ModelParams::zeros(1, 8),
            Err(TencaError::Config(_))
        ));
    }

    #[test]
    fn init_output_layer_is_zero() {
        let p = ModelParams::init(24, 128, 1).unwrap();
        assert!(p.w2.iter().all(|&v| v == 0.0));
        assert!(p.b2.iter().all(|&v| v == 0.0));
        let s = 1.0 / (72f64).sqrt();
        assert!(p.w1.iter().all(|v| v.abs() <= s));
        assert!(p.kernel_a.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn flat_access_walks_tensors_in_order() {
        let mut p = ModelParams::zeros(2, 1).unwrap();
        for i in 0..p.len() {
            p.set_flat(i, i as f64);
        }
        assert_eq!(p.kernel_a[0], 0.0);
        assert_eq!(p.kernel_b[0], 18.0);
        assert_eq!(p.w1[0], 36.0);
        assert_eq!(p.b2[1], 46.0);
        assert_eq!(p.get_flat(45), 45.0);
        assert_eq!(p.len(), 47);
        assert_eq!(p.tensor_name(40), "w1");
        assert_eq!(p.tensor_name(42), "b1");
    }
}
