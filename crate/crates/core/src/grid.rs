//! Cell state, perception, masked residual update and rollouts.

use crate::error::{Result, TencaError};
use crate::image::Image;
use crate::params::{ModelParams, PATHWAYS, TAPS};
use crate::rng::{bernoulli_bits, RngKey};
use crate::step;

/// The automaton state: `height × width` cells of `channels` values.
///
/// Channel 0 is the visible image; the remaining channels are hidden
/// communication state. Values are stored cell-major (`[cell][channel]`).
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl CellGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        if channels < 2 {
            return Err(TencaError::Config(format!(
                "need at least 2 channels (1 visible + 1 hidden), got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(TencaError::Config("grid must have at least one cell".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            values: vec![0.0; height * width * channels],
        })
    }

    pub fn from_values(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        let mut g = Self::zeros(height, width, channels)?;
        if values.len() != g.values.len() {
            return Err(TencaError::Contract(format!(
                "grid buffer has {} values, expected {}",
                values.len(),
                g.values.len()
            )));
        }
        g.values = values;
        Ok(g)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.values[start..start + self.channels]
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let start = (row * self.width + col) * self.channels;
        &mut self.values[start..start + self.channels]
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[(row * self.width + col) * self.channels + channel]
    }

    /// Channel 0 as a row-major plane.
    pub fn visible(&self) -> Vec<f64> {
        self.values.iter().step_by(self.channels).copied().collect()
    }

    pub fn visible_image(&self) -> Image {
        Image::from_f64(self.height, self.width, &self.visible())
            .expect("visible plane has h*w values")
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &CellGrid) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }
}

/// Seeds the visible channel with `pre_contrast`; hidden channels start at zero.
pub fn init_state(pre_contrast: &Image, channels: usize) -> Result<CellGrid> {
    if !pre_contrast.is_finite() {
        return Err(TencaError::Data("pre-contrast image has non-finite pixels".into()));
    }
    let mut grid = CellGrid::zeros(pre_contrast.height(), pre_contrast.width(), channels)?;
    for (cell, &v) in grid.values.chunks_exact_mut(channels).zip(pre_contrast.pixels()) {
        cell[0] = f64::from(v);
    }
    Ok(grid)
}

/// Per-cell perception vectors `[s, conv_a(s), conv_b(s)]`, cell-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionField {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl PerceptionField {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Width of each perception vector (`3d`).
    pub fn width_per_cell(&self) -> usize {
        PATHWAYS * self.channels
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let n = self.width_per_cell();
        let start = (row * self.width + col) * n;
        &self.values[start..start + n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn check_compat(grid: &CellGrid, params: &ModelParams) -> Result<()> {
    if grid.channels != params.channels() {
        return Err(TencaError::Config(format!(
            "grid has {} channels but parameters expect {}",
            grid.channels,
            params.channels()
        )));
    }
    params.validate()
}

/// Identity plus the two depthwise 3×3 convolutions, with edge-clamped
/// (replicate) padding.
pub fn perceive(grid: &CellGrid, params: &ModelParams) -> Result<PerceptionField> {
    check_compat(grid, params)?;
    let n = params.perception_width();
    let mut values = vec![0.0; grid.cells() * n];
    for (cell, out) in values.chunks_exact_mut(n).enumerate() {
        step::perceive_cell(grid, params, cell / grid.width, cell % grid.width, out);
    }
    Ok(PerceptionField {
        height: grid.height,
        width: grid.width,
        channels: grid.channels,
        values,
    })
}

/// Per-cell binary gate applied to the update, broadcast over channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FireMask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl FireMask {
    pub fn ones(height: usize, width: usize) -> Self {
        Self::filled(height, width, 1)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0)
    }

    fn filled(height: usize, width: usize, bit: u8) -> Self {
        Self {
            height,
            width,
            bits: vec![bit; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != height * width || bits.iter().any(|&b| b > 1) {
            return Err(TencaError::Contract("mask bits must be h*w values in {0,1}".into()));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn fired(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    /// Indices of cells whose bit is set, ascending.
    pub fn active_cells(&self) -> Vec<u32> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 1)
            .map(|(i, _)| i as u32)
            .collect()
    }
}

/// Each cell fires independently with probability `fire_rate`, drawn from
/// the counter-based stream of `key`.
pub fn sample_mask(key: RngKey, height: usize, width: usize, fire_rate: f64) -> FireMask {
    FireMask {
        height,
        width,
        bits: bernoulli_bits(key, height * width, fire_rate),
    }
}

/// How the stochastic gate is realised during a rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FireRule {
    pub fire_rate: f64,
    /// Debug mode: every cell fires and deltas are scaled by `fire_rate`.
    pub deterministic: bool,
}

impl FireRule {
    pub fn stochastic(fire_rate: f64) -> Self {
        Self {
            fire_rate,
            deterministic: false,
        }
    }

    pub fn deterministic(fire_rate: f64) -> Self {
        Self {
            fire_rate,
            deterministic: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fire_rate) {
            return Err(TencaError::Config(format!(
                "fire rate must be within [0, 1], got {}",
                self.fire_rate
            )));
        }
        Ok(())
    }

    pub fn mask(&self, key: RngKey, height: usize, width: usize) -> FireMask {
        if self.deterministic {
            FireMask::ones(height, width)
        } else {
            sample_mask(key, height, width, self.fire_rate)
        }
    }

    /// Multiplier applied to the MLP output of firing cells.
    pub fn gain(&self) -> f64 {
        if self.deterministic {
            self.fire_rate
        } else {
            1.0
        }
    }
}

impl Default for FireRule {
    fn default() -> Self {
        Self::stochastic(0.5)
    }
}

/// One residual transition: fired cells add the MLP output of their
/// perception vector, the others keep their state bit-for-bit.
pub fn update_step(grid: &CellGrid, params: &ModelParams, mask: &FireMask) -> Result<CellGrid> {
    check_compat(grid, params)?;
    if mask.dims() != (grid.height, grid.width) {
        return Err(TencaError::Config("fire mask does not match grid size".into()));
    }
    let next = step::forward(grid, params, &mask.active_cells(), 1.0, None);
    if !next.is_finite() {
        return Err(TencaError::Numeric {
            step: 1,
            what: "non-finite cell state after update".into(),
        });
    }
    Ok(next)
}

/// Output of [`rollout`].
#[derive(Debug, Clone)]
pub struct Rollout {
    /// Visible channel after each requested step, in request order.
    pub snapshots: Vec<Vec<f64>>,
    pub final_state: CellGrid,
}

pub(crate) fn check_snapshot_steps(n_steps: usize, snapshot_steps: &[usize]) -> Result<()> {
    for (i, &s) in snapshot_steps.iter().enumerate() {
        if s == 0 || s > n_steps {
            return Err(TencaError::Config(format!(
                "snapshot step {s} outside [1, {n_steps}]"
            )));
        }
        if i > 0 && snapshot_steps[i - 1] >= s {
            return Err(TencaError::Config(
                "snapshot steps must be strictly increasing".into(),
            ));
        }
    }
    Ok(())
}

/// Applies `n_steps` updates, calling `visit(step, state)` after each one.
///
/// The mask of step `n` (1-based) is drawn from `key.at_step(n)`.
pub fn rollout_with(
    grid0: &CellGrid,
    params: &ModelParams,
    n_steps: usize,
    key: RngKey,
    rule: FireRule,
    mut visit: impl FnMut(usize, &CellGrid),
) -> Result<CellGrid> {
    check_compat(grid0, params)?;
    rule.validate()?;
    let mut state = grid0.clone();
    for n in 1..=n_steps {
        let mask = rule.mask(key.at_step(n as u64), state.height, state.width);
        state = step::forward(&state, params, &mask.active_cells(), rule.gain(), None);
        if !state.is_finite() {
            return Err(TencaError::Numeric {
                step: n,
                what: "non-finite cell state during rollout".into(),
            });
        }
        visit(n, &state);
    }
    Ok(state)
}

/// Runs `n_steps` updates and captures the visible channel after each of
/// `snapshot_steps` (strictly increasing, within `[1, n_steps]`).
pub fn rollout(
    grid0: &CellGrid,
    params: &ModelParams,
    n_steps: usize,
    snapshot_steps: &[usize],
    key: RngKey,
    rule: FireRule,
) -> Result<Rollout> {
    check_snapshot_steps(n_steps, snapshot_steps)?;
    let mut snapshots = Vec::with_capacity(snapshot_steps.len());
    let mut next = snapshot_steps.iter().peekable();
    let final_state = rollout_with(grid0, params, n_steps, key, rule, |n, state| {
        if next.peek() == Some(&&n) {
            snapshots.push(state.visible());
            next.next();
        }
    })?;
    Ok(Rollout {
        snapshots,
        final_state,
    })
}


/// Kernel tap offsets `(dy, dx)` in tap order.
pub(crate) const TAP_OFFSETS: [(isize, isize); TAPS] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

#[cfg(test)]
mod tests {
    use super::*;

    fn image(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> Image {
        Image::from_fn(h, w, f)
    }

    #[test]
    fn init_state_seeds_visible_channel_only() {
        let img = Image::new(2, 2, vec![0.0, 1.0, 0.5, 0.25]).unwrap();
        let g = init_state(&img, 24).unwrap();
        assert_eq!(g.visible(), vec![0.0, 1.0, 0.5, 0.25]);
        for r in 0..2 {
            for c in 0..2 {
                assert!(g.cell(r, c)[1..].iter().all(|&v| v == 0.0));
            }
        }
        let g2 = init_state(&img, 2).unwrap();
        assert!(g2.values().iter().skip(1).step_by(2).all(|&v| v == 0.0));
        let zero = init_state(&Image::zeros(3, 3), 24).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_state_errors() {
        let img = Image::zeros(2, 2);
        assert!(matches!(init_state(&img, 1), Err(TencaError::Config(_))));
        let bad = Image::new(1, 2, vec![0.0, f32::NAN]).unwrap();
        assert!(matches!(init_state(&bad, 4), Err(TencaError::Data(_))));
    }

    #[test]
    fn zero_kernels_leave_identity_slice_only() {
        let g = init_state(&image(4, 5, |r, c| (r * 5 + c) as f32 / 20.0), 3).unwrap();
        let p = ModelParams::zeros(3, 4).unwrap();
        let z = perceive(&g, &p).unwrap();
        for r in 0..4 {
            for c in 0..5 {
                let v = z.cell(r, c);
                assert_eq!(&v[..3], g.cell(r, c));
                assert!(v[3..].iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn center_one_hot_kernel_copies_grid() {
        let mut g = init_state(&image(4, 4, |r, c| (r as f32 - c as f32) * 0.1), 2).unwrap();
        g.cell_mut(1, 2)[1] = 0.7;
        let mut p = ModelParams::zeros(2, 1).unwrap();
        for ch in 0..2 {
            p.kernel_a[4 * 2 + ch] = 1.0;
        }
        let z = perceive(&g, &p).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(&z.cell(r, c)[2..4], g.cell(r, c));
                assert!(z.cell(r, c)[4..].iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn all_ones_kernel_under_replicate_padding() {
        // corner cell (0,0): clamped taps hit (0,0) four times, (0,1) twice,
        // (1,0) twice and (1,1) once; all ones → 9.
        let g = init_state(&Image::filled(3, 3, 1.0), 2).unwrap();
        let mut p = ModelParams::zeros(2, 1).unwrap();
        p.kernel_a.iter_mut().step_by(2).for_each(|k| *k = 1.0);
        let z = perceive(&g, &p).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(z.cell(r, c)[2], 9.0);
            }
        }
    }

    #[test]
    fn perceive_rejects_channel_mismatch() {
        let g = CellGrid::zeros(2, 2, 3).unwrap();
        let p = ModelParams::zeros(4, 2).unwrap();
        assert!(matches!(perceive(&g, &p), Err(TencaError::Config(_))));
    }

    #[test]
    fn mask_extremes() {
        let k = RngKey::new(1, 2, 3, 4);
        assert_eq!(sample_mask(k, 5, 6, 1.0).fired(), 30);
        assert_eq!(sample_mask(k, 5, 6, 0.0).fired(), 0);
    }

    #[test]
    fn mask_rate_half_on_128_square() {
        // mean of 16384 fair bits: sd = 0.5/128 ≈ 0.0039, so [0.47, 0.53]
        // is a ±7.7 sd window.
        for seed in 0..5 {
            let m = sample_mask(RngKey::new(seed, 0, 0, 1), 128, 128, 0.5);
            let mean = m.fired() as f64 / (128.0 * 128.0);
            assert!((0.47..=0.53).contains(&mean), "mean {mean}");
        }
    }

    #[test]
    fn zero_output_layer_is_identity() {
        let g = init_state(&image(6, 6, |r, c| ((r * c) % 5) as f32 / 5.0), 4).unwrap();
        let p = ModelParams::init(4, 8, 3).unwrap();
        let out = update_step(&g, &p, &FireMask::ones(6, 6)).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn closed_mask_is_identity() {
        let g = init_state(&image(6, 6, |r, c| ((r + c) % 3) as f32 / 3.0), 4).unwrap();
        let p = ModelParams::init_dense(4, 8, 3).unwrap();
        let out = update_step(&g, &p, &FireMask::zeros(6, 6)).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn single_cell_hand_evaluation() {
        // 1×1 grid, d = 2, H = 1. Replicate padding makes each conv read
        // the cell itself nine times, so conv(s)_c = s_c * Σ taps.
        let mut g = CellGrid::zeros(1, 1, 2).unwrap();
        g.cell_mut(0, 0).copy_from_slice(&[0.5, -0.25]);
        let mut p = ModelParams::zeros(2, 1).unwrap();
        // kernel_a: only the centre tap, 1.0 on channel 0, 2.0 on channel 1
        p.kernel_a[4 * 2] = 1.0;
        p.kernel_a[4 * 2 + 1] = 2.0;
        // kernel_b: 0.1 on every tap of channel 0 → 0.9 * s0
        for t in 0..9 {
            p.kernel_b[t * 2] = 0.1;
        }
        // z = [0.5, -0.25, 0.5, -0.5, 0.45, 0]
        p.w1.copy_from_slice(&[1.0, 2.0, -1.0, 0.5, 2.0, 7.0]);
        p.b1[0] = 0.1;
        // pre = 0.5 - 0.5 - 0.5 - 0.25 + 0.9 + 0 + 0.1 = 0.25 → relu 0.25
        p.w2.copy_from_slice(&[2.0, -4.0]);
        p.b2.copy_from_slice(&[0.01, 0.02]);
        let out = update_step(&g, &p, &FireMask::ones(1, 1)).unwrap();
        let want0 = 0.5 + (0.25 * 2.0 + 0.01);
        let want1 = -0.25 + (0.25 * -4.0 + 0.02);
        assert!((out.get(0, 0, 0) - want0).abs() < 1e-12);
        assert!((out.get(0, 0, 1) - want1).abs() < 1e-12);
    }

    #[test]
    fn rollout_single_step_matches_update_step() {
        let g = init_state(&image(5, 5, |r, c| ((r * 3 + c) % 7) as f32 / 7.0), 4).unwrap();
        let p = ModelParams::init_dense(4, 8, 11).unwrap();
        let key = RngKey::new(1, 0, 0, 0);
        let rule = FireRule::stochastic(0.5);
        let ro = rollout(&g, &p, 1, &[1], key, rule).unwrap();
        let mask = sample_mask(key.at_step(1), 5, 5, 0.5);
        let direct = update_step(&g, &p, &mask).unwrap();
        assert_eq!(ro.snapshots[0], direct.visible());
        assert_eq!(ro.final_state, direct);
    }

    #[test]
    fn rollout_rejects_bad_snapshot_steps() {
        let g = CellGrid::zeros(2, 2, 2).unwrap();
        let p = ModelParams::zeros(2, 1).unwrap();
        let key = RngKey::new(0, 0, 0, 0);
        for steps in [vec![0], vec![5], vec![2, 2], vec![3, 1]] {
            assert!(matches!(
                rollout(&g, &p, 4, &steps, key, FireRule::default()),
                Err(TencaError::Config(_))
            ));
        }
    }

    #[test]
    fn identity_rollout_snapshots_equal_input() {
        let img = image(8, 8, |r, c| ((r + 2 * c) % 9) as f32 / 9.0);
        let g = init_state(&img, 24).unwrap();
        let p = ModelParams::init(24, 16, 0).unwrap();
        let ro = rollout(&g, &p, 12, &[3, 7, 12], RngKey::new(5, 0, 0, 0), FireRule::default()).unwrap();
        for s in &ro.snapshots {
            assert_eq!(s, &g.visible());
        }
    }

    #[test]
    fn deterministic_rule_scales_delta() {
        let g = init_state(&image(4, 4, |r, c| (r + c) as f32 / 8.0), 3).unwrap();
        let p = ModelParams::init_dense(3, 5, 2).unwrap();
        let full = update_step(&g, &p, &FireMask::ones(4, 4)).unwrap();
        let half = rollout(&g, &p, 1, &[1], RngKey::new(0, 0, 0, 0), FireRule::deterministic(0.5))
            .unwrap()
            .final_state;
        for ((a, b), s) in full.values().iter().zip(half.values()).zip(g.values()) {
            assert!(((a - s) * 0.5 - (b - s)).abs() < 1e-14);
        }
    }
}
