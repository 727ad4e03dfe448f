//! Full-reference image fidelity metrics.
//!
//! SSIM uses the usual defaults: an 11×11 Gaussian window with σ = 1.5,
//! `K1 = 0.01`, `K2 = 0.03`, dynamic range 1, averaged over the valid
//! (unpadded) window positions. MS-SSIM combines contrast–structure terms of
//! the finer scales with the full SSIM of the coarsest one, downsampling by
//! 2×2 mean pooling between scales.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Result, TencaError};
use crate::image::Image;
use crate::trainer::TrainingCase;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Standard five-scale MS-SSIM exponents, finest scale first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

pub fn mae(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).abs())
        .sum();
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB; `+∞` for identical images.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - c;
        *t = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable valid-mode filtering of an `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let n = SSIM_WINDOW;
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        let src = &plane[r * w..(r + 1) * w];
        for c in 0..ow {
            rows[r * ow + c] = taps.iter().zip(&src[c..c + n]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|k| taps[k] * rows[(r + k) * ow + c]).sum();
        }
    }
    out
}

/// Mean SSIM and mean contrast–structure term of two planes.
fn ssim_terms(a: &[f64], b: &[f64], h: usize, w: usize) -> (f64, f64) {
    let taps = gaussian_taps();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, h, w, &taps);
    let mu_b = filter_valid(b, h, w, &taps);
    let e_aa = filter_valid(&aa, h, w, &taps);
    let e_bb = filter_valid(&bb, h, w, &taps);
    let e_ab = filter_valid(&ab, h, w, &taps);
    let n = mu_a.len() as f64;
    let (mut ssim_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        let lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        ssim_sum += lum * cs;
        cs_sum += cs;
    }
    (ssim_sum / n, cs_sum / n)
}

fn check_window(a: &Image) -> Result<()> {
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(TencaError::Data(format!(
            "{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    Ok(())
}

/// Mean local structural similarity over all valid window positions.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    check_window(a)?;
    let (h, w) = a.dims();
    Ok(ssim_terms(&a.to_f64(), &b.to_f64(), h, w).0)
}

/// Smallest side length accepted by [`ms_ssim`] with `levels` scales.
pub fn ms_ssim_min_size(levels: usize) -> usize {
    (1 << (levels.max(1) - 1)) * SSIM_WINDOW
}

/// Largest level count (at most 5) an `h × w` image supports.
pub fn ms_ssim_levels_for(h: usize, w: usize) -> usize {
    (1..=MS_SSIM_WEIGHTS.len())
        .rev()
        .find(|&l| h.min(w) >= ms_ssim_min_size(l))
        .unwrap_or(0)
}

/// Leading `levels` standard weights, renormalised to sum to one.
pub fn ms_ssim_weights(levels: usize) -> Vec<f64> {
    let w = &MS_SSIM_WEIGHTS[..levels];
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

fn mean_pool(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        for c in 0..ow {
            let i = 2 * r * w + 2 * c;
            out.push(0.25 * (plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]));
        }
    }
    (out, oh, ow)
}

/// Multi-scale SSIM with `levels` scales (1..=5).
///
/// Negative per-scale terms are clamped to zero before exponentiation.
pub fn ms_ssim(a: &Image, b: &Image, levels: usize) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if !(1..=MS_SSIM_WEIGHTS.len()).contains(&levels) {
        return Err(TencaError::Config(format!("ms-ssim levels must be 1..=5, got {levels}")));
    }
    let (mut h, mut w) = a.dims();
    let need = ms_ssim_min_size(levels);
    if h.min(w) < need {
        return Err(TencaError::Data(format!(
            "{h}x{w} image too small for {levels}-level MS-SSIM (needs at least {need}x{need})"
        )));
    }
    let weights = ms_ssim_weights(levels);
    let (mut pa, mut pb) = (a.to_f64(), b.to_f64());
    let mut result = 1.0;
    for (level, &weight) in weights.iter().enumerate() {
        let (s, cs) = ssim_terms(&pa, &pb, h, w);
        let term = if level + 1 == levels { s } else { cs };
        result *= term.max(0.0).powf(weight);
        if level + 1 < levels {
            let (na, nh, nw) = mean_pool(&pa, h, w);
            pa = na;
            pb = mean_pool(&pb, h, w).0;
            h = nh;
            w = nw;
        }
    }
    Ok(result)
}

/// Metrics of one predicted frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetrics {
    pub case_id: String,
    /// 1-based frame index within the case.
    pub phase: usize,
    pub time_s: f64,
    pub mse: f64,
    pub mae: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
}

/// Means of the five metrics over a set of frames.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricMeans {
    pub count: usize,
    pub mse: f64,
    pub mae: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
}

impl MetricMeans {
    fn of<'a>(rows: impl Iterator<Item = &'a FrameMetrics>) -> Self {
        let mut m = MetricMeans::default();
        for r in rows {
            m.count += 1;
            m.mse += r.mse;
            m.mae += r.mae;
            m.psnr_db += r.psnr_db;
            m.ssim += r.ssim;
            m.ms_ssim += r.ms_ssim;
        }
        if m.count > 0 {
            let n = m.count as f64;
            m.mse /= n;
            m.mae /= n;
            m.psnr_db /= n;
            m.ssim /= n;
            m.ms_ssim /= n;
        }
        m
    }
}

/// Per-frame rows plus per-phase and overall means.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<FrameMetrics>,
    /// MS-SSIM scale count used for every row.
    pub ms_ssim_levels: usize,
}

impl MetricReport {
    pub fn per_phase(&self) -> BTreeMap<usize, MetricMeans> {
        let phases: std::collections::BTreeSet<usize> = self.rows.iter().map(|r| r.phase).collect();
        phases
            .into_iter()
            .map(|p| (p, MetricMeans::of(self.rows.iter().filter(|r| r.phase == p))))
            .collect()
    }

    pub fn overall(&self) -> MetricMeans {
        MetricMeans::of(self.rows.iter())
    }

    /// Means over the frames of each case, in first-appearance order.
    pub fn per_case(&self) -> Vec<(String, MetricMeans)> {
        let mut ids: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !ids.contains(&r.case_id.as_str()) {
                ids.push(&r.case_id);
            }
        }
        ids.into_iter()
            .map(|id| (id.to_string(), MetricMeans::of(self.rows.iter().filter(|r| r.case_id == id))))
            .collect()
    }
}

/// Scores predictions against targets. Each item is
/// `(case_id, phase, time_s, prediction, target)`.
pub fn evaluate<'a>(
    items: impl IntoIterator<Item = (String, usize, f64, &'a Image, &'a Image)>,
) -> Result<MetricReport> {
    let mut rows = Vec::new();
    let mut levels = None;
    for (case_id, phase, time_s, pred, target) in items {
        pred.ensure_same_shape(target)?;
        let (h, w) = target.dims();
        let l = ms_ssim_levels_for(h, w);
        if l == 0 {
            return Err(TencaError::Data(format!(
                "case {case_id}: {h}x{w} frames are smaller than the SSIM window"
            )));
        }
        let l = *levels.get_or_insert(l);
        let m = mse(pred, target)?;
        rows.push(FrameMetrics {
            case_id,
            phase,
            time_s,
            mse: m,
            mae: mae(pred, target)?,
            psnr_db: psnr_from_mse(m, 1.0),
            ssim: ssim(pred, target)?,
            ms_ssim: ms_ssim(pred, target, l)?,
        });
    }
    Ok(MetricReport {
        rows,
        ms_ssim_levels: levels.unwrap_or(0),
    })
}

/// Scores each case's predictions (one image per frame, in frame order).
pub fn evaluate_cases(cases: &[TrainingCase], predictions: &[Vec<Image>]) -> Result<MetricReport> {
    if cases.len() != predictions.len() {
        return Err(TencaError::Contract("one prediction list per case required".into()));
    }
    let mut items = Vec::new();
    for (case, preds) in cases.iter().zip(predictions) {
        if preds.len() != case.k() {
            return Err(TencaError::Contract(format!(
                "case {}: {} predictions for {} frames",
                case.case_id,
                preds.len(),
                case.k()
            )));
        }
        for (i, (frame, pred)) in case.frames.iter().zip(preds).enumerate() {
            items.push((case.case_id.clone(), i + 1, frame.time_s, pred, &frame.target));
        }
    }
    evaluate(items)
}

/// Scores the pre-contrast image as the prediction for every frame.
pub fn baseline_report(dataset: &[TrainingCase]) -> Result<MetricReport> {
    if dataset.is_empty() {
        return Err(TencaError::Data("dataset is empty".into()));
    }
    let preds: Vec<Vec<Image>> = dataset
        .iter()
        .map(|c| vec![c.pre_contrast.clone(); c.k()])
        .collect();
    evaluate_cases(dataset, &preds)
}

fn fmt_value(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.6}")
    }
}

pub const CSV_HEADER: &str = "method,case_id,phase,time_s,mse,mae,psnr_db,ssim,ms_ssim";

/// Writes the report rows, then per-phase (`case_id = mean`) and overall
/// (`case_id = mean, phase = all`) aggregates, tagged with `method`.
pub fn write_csv_rows(out: &mut String, method: &str, report: &MetricReport) {
    let line = |out: &mut String, case: &str, phase: &str, time: &str, m: (f64, f64, f64, f64, f64)| {
        let _ = writeln!(
            out,
            "{method},{case},{phase},{time},{},{},{},{},{}",
            fmt_value(m.0),
            fmt_value(m.1),
            fmt_value(m.2),
            fmt_value(m.3),
            fmt_value(m.4)
        );
    };
    for r in &report.rows {
        line(out, &r.case_id, &r.phase.to_string(), &format!("{}", r.time_s), (r.mse, r.mae, r.psnr_db, r.ssim, r.ms_ssim));
    }
    for (phase, m) in report.per_phase() {
        line(out, "mean", &phase.to_string(), "", (m.mse, m.mae, m.psnr_db, m.ssim, m.ms_ssim));
    }
    let m = report.overall();
    line(out, "mean", "all", "", (m.mse, m.mae, m.psnr_db, m.ssim, m.ms_ssim));
}

/// Comment lines documenting the SSIM settings, for the top of a CSV.
pub fn csv_preamble(ms_ssim_levels: usize) -> String {
    format!(
        "# ssim: gaussian window {SSIM_WINDOW}x{SSIM_WINDOW} sigma {SSIM_SIGMA}, k1 {SSIM_K1}, k2 {SSIM_K2}, data range 1\n\
         # ms_ssim: {ms_ssim_levels} levels, weights {:?}, 2x2 mean-pool downsampling\n",
        ms_ssim_weights(ms_ssim_levels.max(1))
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(h: usize, w: usize, seed: f32) -> Image {
        Image::from_fn(h, w, |r, c| {
            (0.5 + 0.4 * ((r as f32 * 0.37 + seed).sin() * (c as f32 * 0.23 - seed).cos())).clamp(0.0, 1.0)
        })
    }

    /// Direct evaluation of every 11×11 window with the 2-D Gaussian.
    fn brute_ssim_terms(a: &[f64], b: &[f64], h: usize, w: usize) -> (f64, f64) {
        let n = SSIM_WINDOW;
        let mut g = vec![0.0; n * n];
        let c = (n / 2) as f64;
        for i in 0..n {
            for j in 0..n {
                let (y, x) = (i as f64 - c, j as f64 - c);
                g[i * n + j] = (-(x * x + y * y) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            }
        }
        let total: f64 = g.iter().sum();
        g.iter_mut().for_each(|v| *v /= total);
        let (c1, c2) = (1e-4, 9e-4);
        let (mut s_sum, mut cs_sum, mut count) = (0.0, 0.0, 0.0);
        for r0 in 0..=h - n {
            for c0 in 0..=w - n {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let k = g[i * n + j];
                        let x = a[(r0 + i) * w + c0 + j];
                        let y = b[(r0 + i) * w + c0 + j];
                        ma += k * x;
                        mb += k * y;
                        saa += k * x * x;
                        sbb += k * y * y;
                        sab += k * x * y;
                    }
                }
                let va = saa - ma * ma;
                let vb = sbb - mb * mb;
                let cov = sab - ma * mb;
                let cs = (2.0 * cov + c2) / (va + vb + c2);
                s_sum += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1) * cs;
                cs_sum += cs;
                count += 1.0;
            }
        }
        (s_sum / count, cs_sum / count)
    }

    #[test]
    fn psnr_examples() {
        assert!((psnr_from_mse(0.01, 1.0) - 20.0).abs() < 1e-12);
        assert!((psnr_from_mse(1e-4, 1.0) - 40.0).abs() < 1e-12);
        let a = pattern(4, 4, 0.0);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &Image::zeros(3, 4), 1.0).is_err());
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = pattern(32, 40, 0.3);
        let b = pattern(32, 40, 1.7);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab < 1.0 && ab > -1.0);
    }

    #[test]
    fn ssim_matches_brute_force_windows() {
        let a = pattern(24, 30, 0.1);
        let b = pattern(24, 30, 0.9);
        let (want, _) = brute_ssim_terms(&a.to_f64(), &b.to_f64(), 24, 30);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-12);

        // constant 0 vs constant 1: only the C1 term survives
        let zero = Image::zeros(16, 16);
        let one = Image::filled(16, 16, 1.0);
        let (want, _) = brute_ssim_terms(&zero.to_f64(), &one.to_f64(), 16, 16);
        let got = ssim(&zero, &one).unwrap();
        assert!((got - want).abs() < 1e-15);
        assert!((got - 1e-4 / (1.0 + 1e-4)).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Image::zeros(10, 20);
        assert!(matches!(ssim(&a, &a), Err(TencaError::Data(_))));
    }

    #[test]
    fn ms_ssim_identity_and_single_level() {
        let a = pattern(64, 64, 0.2);
        let b = pattern(64, 64, 0.5);
        assert!((ms_ssim(&a, &a, 3).unwrap() - 1.0).abs() < 1e-12);
        assert!((ms_ssim(&a, &b, 1).unwrap() - ssim(&a, &b).unwrap()).abs() < 1e-12);
        assert!((ms_ssim(&a, &b, 3).unwrap() - ms_ssim(&b, &a, 3).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ms_ssim_three_levels_matches_per_level_oracle() {
        let a = pattern(64, 64, 0.2);
        let b = pattern(64, 64, 1.1);
        let weights = [0.0448, 0.2856, 0.3001];
        let total: f64 = weights.iter().sum();
        let (mut pa, mut pb, mut n) = (a.to_f64(), b.to_f64(), 64usize);
        let mut want = 1.0;
        for (l, wgt) in weights.iter().enumerate() {
            let (s, cs) = brute_ssim_terms(&pa, &pb, n, n);
            want *= if l == 2 { s } else { cs }.max(0.0).powf(wgt / total);
            let pool = |p: &[f64]| -> Vec<f64> {
                let m = n / 2;
                (0..m * m)
                    .map(|i| {
                        let (r, c) = (i / m, i % m);
                        (p[2 * r * n + 2 * c] + p[2 * r * n + 2 * c + 1] + p[(2 * r + 1) * n + 2 * c] + p[(2 * r + 1) * n + 2 * c + 1]) / 4.0
                    })
                    .collect()
            };
            pa = pool(&pa);
            pb = pool(&pb);
            n /= 2;
        }
        assert!((ms_ssim(&a, &b, 3).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn ms_ssim_level_selection() {
        assert_eq!(ms_ssim_levels_for(64, 64), 3);
        assert_eq!(ms_ssim_levels_for(168, 168), 4);
        assert_eq!(ms_ssim_levels_for(176, 200), 5);
        assert_eq!(ms_ssim_levels_for(10, 64), 0);
        let a = Image::zeros(64, 64);
        let err = ms_ssim(&a, &a, 5).unwrap_err().to_string();
        assert!(err.contains("176x176"), "{err}");
        let w = ms_ssim_weights(3);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mae_bounded_by_rmse() {
        let a = pattern(16, 16, 0.0);
        let b = pattern(16, 16, 2.0);
        assert!(mae(&a, &b).unwrap() <= mse(&a, &b).unwrap().sqrt());
        assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        assert_eq!(mae(&a, &b).unwrap(), mae(&b, &a).unwrap());
    }
}
