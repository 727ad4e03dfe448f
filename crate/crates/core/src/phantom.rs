//! Synthetic contrast-enhancement cases with known ground truth.
//!
//! A phantom is a smooth tissue background with a few elliptical lesions.
//! Every region enhances after injection following
//! `A · (1 - exp(-α t)) · exp(-β t)`, so the noise-free image is available
//! at any time `t`, not only at the sampled acquisition times.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, TencaError};
use crate::image::Image;
use crate::trainer::{time_to_step, Frame, TrainingCase, MAX_FRAMES, MAX_TIME_S};

/// Contrast enhancement `t_s` seconds after injection.
pub fn enhancement_curve(amplitude: f64, uptake: f64, washout: f64, t_s: f64) -> f64 {
    amplitude * (1.0 - (-uptake * t_s).exp()) * (-washout * t_s).exp()
}

/// Time of maximum enhancement, `ln((α + β) / β) / α`; `None` without
/// washout (the curve then saturates monotonically).
pub fn peak_time(uptake: f64, washout: f64) -> Option<f64> {
    (washout > 0.0).then(|| ((uptake + washout) / washout).ln() / uptake)
}

/// Uptake/washout parameters of one region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinetics {
    pub amplitude: f64,
    pub uptake: f64,
    pub washout: f64,
}

impl Kinetics {
    pub fn at(&self, t_s: f64) -> f64 {
        enhancement_curve(self.amplitude, self.uptake, self.washout, t_s)
    }
}

/// Closed range a parameter is drawn from uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..=self.max)
        } else {
            self.min
        }
    }
}

/// Parameter ranges for the kinetics of one region type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KineticsRange {
    pub amplitude: Range,
    pub uptake: Range,
    pub washout: Range,
}

impl KineticsRange {
    fn sample(&self, rng: &mut impl Rng) -> Kinetics {
        Kinetics {
            amplitude: self.amplitude.sample(rng),
            uptake: self.uptake.sample(rng),
            washout: self.washout.sample(rng),
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let bad = |field: &str, why: &str| Err(TencaError::Config(format!("{name}.{field}: {why}")));
        for (field, r) in [
            ("amplitude", self.amplitude),
            ("uptake", self.uptake),
            ("washout", self.washout),
        ] {
            if !(r.min.is_finite() && r.max.is_finite()) || r.min > r.max {
                return bad(field, "min must not exceed max");
            }
        }
        if self.amplitude.min < 0.0 {
            return bad("amplitude_min", "amplitude must be >= 0");
        }
        if self.washout.min < 0.0 {
            return bad("washout_min", "washout rate must be >= 0");
        }
        if self.uptake.min <= self.washout.max {
            return bad("uptake_min", "uptake rate must exceed washout rate (uptake_min > washout_max)");
        }
        Ok(())
    }
}

/// Everything that defines a family of phantoms.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    /// Mean pre-contrast tissue level.
    pub background: Range,
    /// Peak amplitude of the smooth background modulation.
    pub texture_amplitude: f64,
    pub lesion_count: (usize, usize),
    /// Lesion semi-axis length in pixels.
    pub lesion_radius: Range,
    /// Pre-contrast lesion intensity.
    pub lesion_level: Range,
    pub lesion_kinetics: KineticsRange,
    pub background_kinetics: KineticsRange,
    pub noise_sigma: f64,
    pub frame_count: (usize, usize),
    pub max_time_s: f64,
    /// Sampled times never share a step at this resolution.
    pub delta_t_s: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            background: Range::new(0.15, 0.3),
            texture_amplitude: 0.05,
            lesion_count: (1, 3),
            lesion_radius: Range::new(4.0, 9.0),
            lesion_level: Range::new(0.45, 0.55),
            lesion_kinetics: KineticsRange {
                amplitude: Range::new(0.25, 0.35),
                uptake: Range::new(0.01, 0.03),
                washout: Range::new(0.0005, 0.0015),
            },
            background_kinetics: KineticsRange {
                amplitude: Range::new(0.03, 0.08),
                uptake: Range::new(0.002, 0.006),
                washout: Range::new(0.0, 0.0),
            },
            noise_sigma: 0.005,
            frame_count: (2, 5),
            max_time_s: MAX_TIME_S,
            delta_t_s: 8.0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(TencaError::Config(format!("phantom.{field}: {why}")));
        if self.height < 16 || self.width < 16 {
            return bad("size", format!("{}x{} is below the 16x16 minimum", self.height, self.width));
        }
        let (kmin, kmax) = self.frame_count;
        if kmin < 1 || kmin > kmax || kmax > MAX_FRAMES {
            return bad("frames", format!("range [{kmin}, {kmax}] must lie within [1, {MAX_FRAMES}]"));
        }
        if !(self.max_time_s > 0.0 && self.max_time_s <= MAX_TIME_S) {
            return bad("max_time_s", format!("must lie in (0, {MAX_TIME_S}]"));
        }
        if !(self.delta_t_s > 0.0) {
            return bad("delta_t_s", "must be positive".into());
        }
        let steps = (self.max_time_s / self.delta_t_s).floor() as usize;
        if steps < kmax {
            return bad("frames", format!("{kmax} frames do not fit into {steps} distinct steps"));
        }
        if self.lesion_count.0 > self.lesion_count.1 {
            return bad("lesions", "min exceeds max".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma", "must be >= 0".into());
        }
        for (name, r) in [
            ("background", self.background),
            ("lesion_radius", self.lesion_radius),
            ("lesion_level", self.lesion_level),
        ] {
            if r.min > r.max {
                return bad(name, "min exceeds max".into());
            }
        }
        self.lesion_kinetics.validate("lesion")?;
        self.background_kinetics.validate("background")
    }
}

/// An enhancing region: a binary pixel mask and its kinetics.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub mask: Vec<bool>,
    pub kinetics: Kinetics,
}

/// Noise-free description of a phantom, evaluable at any time.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomTruth {
    pub pre_contrast: Image,
    pub regions: Vec<Region>,
}

impl PhantomTruth {
    /// Summed regional enhancement per pixel at `t_s`.
    pub fn enhancement(&self, t_s: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.pre_contrast.len()];
        for region in &self.regions {
            let e = region.kinetics.at(t_s);
            for (o, &inside) in out.iter_mut().zip(&region.mask) {
                if inside {
                    *o += e;
                }
            }
        }
        out
    }

    /// Noise-free image `t_s` seconds after injection.
    pub fn at(&self, t_s: f64) -> Image {
        self.with_noise(t_s, None)
    }

    fn with_noise(&self, t_s: f64, noise: Option<&[f64]>) -> Image {
        let enh = self.enhancement(t_s);
        let (h, w) = self.pre_contrast.dims();
        let data = self
            .pre_contrast
            .pixels()
            .iter()
            .zip(&enh)
            .enumerate()
            .map(|(i, (&p, e))| {
                let n = noise.map_or(0.0, |n| n[i]);
                (f64::from(p) + e + n).clamp(0.0, 1.0) as f32
            })
            .collect();
        Image::new(h, w, data).expect("size preserved")
    }
}

/// Acquisition times: `k` distinct update steps, each jittered by less than
/// half a step, strictly increasing and within `(0, max_time_s]`.
pub fn sample_times(spec: &PhantomSpec, rng: &mut impl Rng) -> Vec<f64> {
    let (kmin, kmax) = spec.frame_count;
    let k = rng.random_range(kmin..=kmax);
    let max_step = (spec.max_time_s / spec.delta_t_s).floor() as usize;
    let mut steps: Vec<usize> = sample(rng, max_step, k).into_iter().map(|s| s + 1).collect();
    steps.sort_unstable();
    steps
        .into_iter()
        .map(|s| {
            let jitter: f64 = rng.random_range(-0.5..0.5);
            let t = ((s as f64 + jitter) * spec.delta_t_s).round();
            let ok = t > 0.0
                && t <= spec.max_time_s
                && time_to_step(t, spec.delta_t_s).is_ok_and(|back| back == s);
            if ok {
                t
            } else {
                s as f64 * spec.delta_t_s
            }
        })
        .collect()
}

fn ellipse_mask(h: usize, w: usize, cy: f64, cx: f64, ry: f64, rx: f64, angle: f64) -> Vec<bool> {
    let (s, c) = angle.sin_cos();
    let mut mask = Vec::with_capacity(h * w);
    for r in 0..h {
        for col in 0..w {
            let dy = r as f64 - cy;
            let dx = col as f64 - cx;
            let u = (c * dx + s * dy) / rx;
            let v = (-s * dx + c * dy) / ry;
            mask.push(u * u + v * v <= 1.0);
        }
    }
    mask
}

/// Draws one phantom case and its noise-free truth.
pub fn generate_phantom(spec: &PhantomSpec, case_id: impl Into<String>, rng: &mut impl Rng) -> Result<(TrainingCase, PhantomTruth)> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);

    // smooth tissue: mean level plus two low-frequency waves
    let level = spec.background.sample(rng);
    let waves: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.random_range(0.5..2.0) * std::f64::consts::TAU / h as f64,
                rng.random_range(0.5..2.0) * std::f64::consts::TAU / w as f64,
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.5..1.0),
            )
        })
        .collect();
    let mut base: Vec<f64> = (0..h * w)
        .map(|i| {
            let (r, c) = ((i / w) as f64, (i % w) as f64);
            let t: f64 = waves.iter().map(|&(fy, fx, ph, a)| a * (fy * r + fx * c + ph).sin()).sum();
            level + spec.texture_amplitude * t / 2.0
        })
        .collect();

    let mut regions = vec![Region {
        mask: vec![true; h * w],
        kinetics: spec.background_kinetics.sample(rng),
    }];
    let n_lesions = rng.random_range(spec.lesion_count.0..=spec.lesion_count.1);
    for _ in 0..n_lesions {
        let ry = spec.lesion_radius.sample(rng);
        let rx = spec.lesion_radius.sample(rng);
        let margin = ry.max(rx) + 1.0;
        let cy = rng.random_range(margin.min(h as f64 / 2.0)..=(h as f64 - margin).max(h as f64 / 2.0));
        let cx = rng.random_range(margin.min(w as f64 / 2.0)..=(w as f64 - margin).max(w as f64 / 2.0));
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let mask = ellipse_mask(h, w, cy, cx, ry, rx, angle);
        let lesion_level = spec.lesion_level.sample(rng);
        for (b, &inside) in base.iter_mut().zip(&mask) {
            if inside {
                *b = lesion_level;
            }
        }
        regions.push(Region {
            mask,
            kinetics: spec.lesion_kinetics.sample(rng),
        });
    }

    let normal = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma > 0"));
    let draw_noise = |rng: &mut _| -> Vec<f64> {
        match &normal {
            Some(n) => (0..h * w).map(|_| n.sample(rng)).collect(),
            None => vec![0.0; h * w],
        }
    };

    let pre_noise = draw_noise(rng);
    let pre: Vec<f64> = base.iter().zip(&pre_noise).map(|(b, n)| (b + n).clamp(0.0, 1.0)).collect();
    let truth = PhantomTruth {
        pre_contrast: Image::from_f64(h, w, &pre)?,
        regions,
    };

    let times = sample_times(spec, rng);
    let frames = times
        .into_iter()
        .map(|t| {
            let noise = draw_noise(rng);
            Frame {
                target: truth.with_noise(t, Some(&noise)),
                time_s: t,
            }
        })
        .collect();
    let case = TrainingCase::new(case_id, truth.pre_contrast.clone(), frames)?;
    Ok((case, truth))
}

/// Generator for case `index` of the dataset described by `spec`.
pub fn case_rng(spec: &PhantomSpec, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    rng
}

/// `count` phantoms, case `i` drawn from its own stream of `spec.seed`.
pub fn generate_dataset(spec: &PhantomSpec, count: usize) -> Result<Vec<(TrainingCase, PhantomTruth)>> {
    (0..count)
        .map(|i| generate_phantom(spec, format!("case_{i:04}"), &mut case_rng(spec, i)))
        .collect()
}

/// Linear-interpolation percentile (`q` in percent) of unsorted values.
pub fn percentile(values: &[f32], q: f64) -> f64 {
    let mut sorted: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
    sorted.sort_by(f64::total_cmp);
    percentile_sorted(&sorted, q)
}

fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Lower and upper percentile used for intensity rescaling.
pub const NORMALIZE_PERCENTILES: (f64, f64) = (0.02, 99.98);

/// Linear intensity window derived once from a pre-contrast image and
/// applied to it and all of its post-contrast frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityWindow {
    pub lo: f64,
    pub hi: f64,
}

impl IntensityWindow {
    pub fn from_reference(reference: &Image) -> Result<Self> {
        if reference.is_empty() {
            return Err(TencaError::Data("empty reference image".into()));
        }
        let mut sorted: Vec<f64> = reference.pixels().iter().map(|&v| f64::from(v)).collect();
        sorted.sort_by(f64::total_cmp);
        let lo = percentile_sorted(&sorted, NORMALIZE_PERCENTILES.0);
        let hi = percentile_sorted(&sorted, NORMALIZE_PERCENTILES.1);
        if !(hi > lo) {
            return Err(TencaError::Data(format!(
                "reference image has no intensity range (p_lo = {lo}, p_hi = {hi})"
            )));
        }
        Ok(Self { lo, hi })
    }

    /// `(x - lo) / (hi - lo)`, clipped to `[0, 1]`.
    pub fn apply(&self, image: &Image) -> Image {
        let scale = self.hi - self.lo;
        image.map(|v| ((f64::from(v) - self.lo) / scale).clamp(0.0, 1.0) as f32)
    }
}

/// Rescales `image` with the percentile window of `reference`.
pub fn normalize_intensity(image: &Image, reference: &Image) -> Result<Image> {
    Ok(IntensityWindow::from_reference(reference)?.apply(image))
}

/// Normalises a case with the window of its own pre-contrast image.
pub fn normalize_case(case: &TrainingCase) -> Result<TrainingCase> {
    let window = IntensityWindow::from_reference(&case.pre_contrast)?;
    let frames = case
        .frames
        .iter()
        .map(|f| Frame {
            target: window.apply(&f.target),
            time_s: f.time_s,
        })
        .collect();
    TrainingCase::new(case.case_id.clone(), window.apply(&case.pre_contrast), frames)
}

/// Top-left corner of a `size`-long window centred on `center`, shifted
/// inward so it stays inside `[0, len)`.
fn window_start(center: usize, size: usize, len: usize) -> usize {
    center.saturating_sub(size / 2).min(len - size)
}

/// `size × size` patch around `center = (row, col)`; windows that would
/// cross the border are shifted inward instead of padded.
pub fn crop_patch(image: &Image, center: (usize, usize), size: usize) -> Result<Image> {
    let (h, w) = image.dims();
    if size == 0 || size > h || size > w {
        return Err(TencaError::Data(format!("patch size {size} does not fit a {h}x{w} image")));
    }
    let r0 = window_start(center.0, size, h);
    let c0 = window_start(center.1, size, w);
    Ok(Image::from_fn(size, size, |r, c| image.get(r0 + r, c0 + c)))
}

/// Crops the pre-contrast image and every frame with the same window.
pub fn crop_case(case: &TrainingCase, center: (usize, usize), size: usize) -> Result<TrainingCase> {
    let frames = case
        .frames
        .iter()
        .map(|f| {
            Ok(Frame {
                target: crop_patch(&f.target, center, size)?,
                time_s: f.time_s,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TrainingCase::new(case.case_id.clone(), crop_patch(&case.pre_contrast, center, size)?, frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_basics() {
        assert_eq!(enhancement_curve(0.8, 0.01, 0.001, 0.0), 0.0);
        // no washout: saturates towards A from below
        let mut last = 0.0;
        for t in 1..2000 {
            let v = enhancement_curve(0.6, 0.01, 0.0, t as f64);
            assert!(v > last && v < 0.6);
            last = v;
        }
        assert!((enhancement_curve(0.6, 0.01, 0.0, 1e4) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn peak_time_matches_dense_scan() {
        let t_star = peak_time(0.01, 0.001).unwrap();
        assert!((t_star - 239.789527).abs() < 1e-5, "{t_star}");
        // scan at 0.01 s resolution
        let (mut best_t, mut best) = (0.0, f64::MIN);
        for i in 0..100_000 {
            let t = i as f64 * 0.01;
            let v = enhancement_curve(0.8, 0.01, 0.001, t);
            if v > best {
                best = v;
                best_t = t;
            }
        }
        assert!((best_t - t_star).abs() < 0.01);
        assert_eq!(peak_time(0.01, 0.0), None);
    }

    #[test]
    fn spec_validation_names_field() {
        let mut spec = PhantomSpec::default();
        spec.lesion_kinetics.washout = Range::new(0.02, 0.05);
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("lesion.uptake_min"), "{err}");
        let small = PhantomSpec { height: 8, ..PhantomSpec::default() };
        assert!(small.validate().is_err());
        PhantomSpec::default().validate().unwrap();
    }

    #[test]
    fn noiseless_frames_are_pre_plus_masked_curves() {
        let spec = PhantomSpec { noise_sigma: 0.0, ..PhantomSpec::default() };
        let (case, truth) = generate_phantom(&spec, "c", &mut case_rng(&spec, 3)).unwrap();
        for f in &case.frames {
            assert_eq!(f.target, truth.at(f.time_s));
            let enh = truth.enhancement(f.time_s);
            for ((y, x), e) in f.target.pixels().iter().zip(case.pre_contrast.pixels()).zip(&enh) {
                assert!((f64::from(*y) - f64::from(*x) - e).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn same_seed_same_case() {
        let spec = PhantomSpec::default();
        let a = generate_phantom(&spec, "x", &mut case_rng(&spec, 5)).unwrap();
        let b = generate_phantom(&spec, "x", &mut case_rng(&spec, 5)).unwrap();
        assert_eq!(a, b);
        let c = generate_phantom(&spec, "x", &mut case_rng(&spec, 6)).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn uniform_sample_percentiles() {
        // 1e6 evenly spaced values on [200, 1200]: the interpolated
        // 0.02th percentile sits at 200 + 1000 * 0.0002 = 200.2
        let n = 1_000_000;
        let values: Vec<f32> = (0..n).map(|i| 200.0 + 1000.0 * i as f32 / (n - 1) as f32).collect();
        let img = Image::new(1000, 1000, values).unwrap();
        let win = IntensityWindow::from_reference(&img).unwrap();
        assert!((win.lo - 200.2).abs() < 1e-3, "{}", win.lo);
        assert!((win.hi - 1199.8).abs() < 1e-3, "{}", win.hi);
        let mid = win.apply(&Image::filled(1, 1, 700.0)).get(0, 0);
        assert!((mid - 0.5).abs() < 1e-6);
    }

    #[test]
    fn normalization_clips_and_rejects_constant() {
        let reference = Image::from_fn(10, 10, |r, c| (r * 10 + c) as f32);
        let bright = Image::filled(2, 2, 1e6);
        let out = normalize_intensity(&bright, &reference).unwrap();
        assert!(out.pixels().iter().all(|&v| v == 1.0));
        let flat = Image::filled(4, 4, 3.0);
        assert!(matches!(
            normalize_intensity(&flat, &flat),
            Err(TencaError::Data(_))
        ));
    }

    #[test]
    fn unit_window_is_identity() {
        let win = IntensityWindow { lo: 0.0, hi: 1.0 };
        let img = Image::from_fn(5, 5, |r, c| (r * 5 + c) as f32 / 24.0);
        assert_eq!(win.apply(&img), img);
    }

    #[test]
    fn crop_examples() {
        let img = Image::from_fn(256, 256, |r, c| (r * 256 + c) as f32);
        let p = crop_patch(&img, (128, 128), 168).unwrap();
        assert_eq!(p.dims(), (168, 168));
        assert_eq!(p.get(0, 0), img.get(44, 44));
        assert_eq!(p.get(167, 167), img.get(211, 211));

        assert_eq!(crop_patch(&img, (128, 128), 256).unwrap(), img);

        let small = Image::from_fn(128, 128, |r, c| (r * 128 + c) as f32);
        let corner = crop_patch(&small, (0, 0), 64).unwrap();
        assert_eq!(corner.get(0, 0), small.get(0, 0));
        assert_eq!(corner.get(63, 63), small.get(63, 63));
        let far = crop_patch(&small, (127, 127), 64).unwrap();
        assert_eq!(far.get(0, 0), small.get(64, 64));

        assert!(matches!(crop_patch(&small, (0, 0), 129), Err(TencaError::Data(_))));
    }
}
