//! Property suites over the public API.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tenca::autodiff::{case_loss, forward_with_tape, loss_and_grad, BpttOptions};
use tenca::dataset::{decode_case, encode_case, CaseEntry};
use tenca::grid::{init_state, rollout, rollout_with, update_step, CellGrid, FireMask, FireRule};
use tenca::metrics::{mae, ms_ssim, mse, psnr, ssim};
use tenca::phantom::{case_rng, generate_phantom, IntensityWindow, PhantomSpec};
use tenca::runner::{train_config_from_text, train_config_to_text, Checkpoint};
use tenca::trainer::{time_to_step, Frame, OptimizerState, Schedule, TrainConfig, TrainingCase};
use tenca::{Image, ModelParams, RngKey};

fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(h, w, |_, _| rng.random::<f32>())
}

fn random_grid(h: usize, w: usize, d: usize, seed: u64) -> CellGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..h * w * d).map(|_| rng.random::<f64>() - 0.5).collect();
    CellGrid::from_values(h, w, d, values).unwrap()
}

/// Frames at the given steps (Δt = 8 s) with random targets.
fn case_with_steps(h: usize, w: usize, steps: &[usize], seed: u64) -> TrainingCase {
    let frames = steps
        .iter()
        .enumerate()
        .map(|(i, &s)| Frame {
            target: random_image(h, w, seed.wrapping_mul(31).wrapping_add(i as u64 + 1)),
            time_s: s as f64 * 8.0,
        })
        .collect();
    TrainingCase::new("p", random_image(h, w, seed), frames).unwrap()
}

fn proptest_config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(proptest_config(24))]

    #[test]
    fn updates_stay_within_radius(r in 1usize..=3, seed in any::<u64>(), row in 0usize..14, col in 0usize..14, stochastic in any::<bool>()) {
        let (h, w, d) = (14, 14, 4);
        let params = ModelParams::init_dense(d, 8, seed).unwrap();
        let grid = random_grid(h, w, d, seed);
        let mut bumped = grid.clone();
        bumped.cell_mut(row, col)[1] += 0.75;
        let rule = if stochastic { FireRule::stochastic(0.5) } else { FireRule::deterministic(0.5) };
        let key = RngKey::new(seed, 0, 0, 0);
        let a = rollout_with(&grid, &params, r, key, rule, |_, _| ()).unwrap();
        let b = rollout_with(&bumped, &params, r, key, rule, |_, _| ()).unwrap();
        for y in 0..h {
            for x in 0..w {
                let far = y.abs_diff(row) > r || x.abs_diff(col) > r;
                if far {
                    prop_assert_eq!(a.cell(y, x), b.cell(y, x), "cell ({}, {}) changed", y, x);
                }
            }
        }
    }

    #[test]
    fn zero_output_layer_is_identity(seed in any::<u64>(), rate in 0.05f64..=1.0) {
        let grid = random_grid(9, 11, 5, seed);
        let mut params = ModelParams::init_dense(5, 6, seed ^ 1).unwrap();
        params.w2.fill(0.0);
        params.b2.fill(0.0);
        let mask = tenca::sample_mask(RngKey::new(seed, 1, 2, 3), 9, 11, rate);
        prop_assert_eq!(update_step(&grid, &params, &mask).unwrap(), grid);
    }

    #[test]
    fn unfired_cells_keep_their_state(seed in any::<u64>()) {
        let grid = random_grid(10, 10, 4, seed);
        let params = ModelParams::init_dense(4, 8, seed).unwrap();
        let mask = tenca::sample_mask(RngKey::new(seed, 0, 0, 1), 10, 10, 0.5);
        let next = update_step(&grid, &params, &mask).unwrap();
        for (i, &bit) in mask.bits().iter().enumerate() {
            let (y, x) = (i / 10, i % 10);
            if bit == 0 {
                prop_assert_eq!(next.cell(y, x), grid.cell(y, x));
            }
        }
    }

    #[test]
    fn rollouts_are_deterministic(seed in any::<u64>(), steps in 1usize..12) {
        let grid = random_grid(8, 8, 4, seed);
        let params = ModelParams::init_dense(4, 8, seed).unwrap();
        let key = RngKey::new(seed, 3, 1, 0);
        let a = rollout(&grid, &params, steps, &[steps], key, FireRule::default()).unwrap();
        let b = rollout(&grid, &params, steps, &[steps], key, FireRule::default()).unwrap();
        prop_assert_eq!(a.final_state, b.final_state);
        prop_assert_eq!(a.snapshots, b.snapshots);
    }

    #[test]
    fn loss_reads_only_conditioned_steps(seed in any::<u64>(), k in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut steps: Vec<usize> = rand::seq::index::sample(&mut rng, 12, k).into_iter().map(|s| s + 1).collect();
        steps.sort_unstable();
        let case = case_with_steps(8, 8, &steps, seed);
        let params = ModelParams::init_dense(4, 8, seed).unwrap();
        let key = RngKey::new(seed, 0, 0, 0);
        let opts = BpttOptions::new(4, FireRule::default());

        // Oracle: every visible state, then pick the frame steps by time.
        let grid = init_state(&case.pre_contrast, 4).unwrap();
        let mut visible = vec![grid.visible()];
        rollout_with(&grid, &params, 12, key, FireRule::default(), |_, s| visible.push(s.visible())).unwrap();
        let mut want = 0.0;
        for f in &case.frames {
            let s = time_to_step(f.time_s, 8.0).unwrap();
            let t = f.target.to_f64();
            want += visible[s].iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / t.len() as f64;
        }
        want /= k as f64;

        let short = Schedule::for_case(&case, 8.0, 12, false).unwrap();
        let full = Schedule::for_case(&case, 8.0, 12, true).unwrap();
        let got = case_loss(&case, &params, &short, key, opts).unwrap();
        prop_assert!((got - want).abs() <= 1e-12 * want.max(1.0));
        prop_assert_eq!(case_loss(&case, &params, &full, key, opts).unwrap(), got);
    }

    #[test]
    fn variable_frame_counts_train(seed in any::<u64>(), k in 1usize..=5) {
        let steps: Vec<usize> = (1..=k).map(|i| i * 2).collect();
        let case = case_with_steps(8, 8, &steps, seed);
        let sched = Schedule::for_case(&case, 8.0, 16, false).unwrap();
        prop_assert_eq!(&sched.snapshot_steps, &steps);
        prop_assert_eq!(sched.horizon, 2 * k);
        let params = ModelParams::init_dense(4, 8, seed).unwrap();
        let opts = BpttOptions::new(4, FireRule::default());
        let key = RngKey::new(seed, 0, 0, 0);
        let (_, tape) = forward_with_tape(&case, &params, &sched, key, opts).unwrap();
        prop_assert_eq!(tape.frame_losses().len(), k);
        let (_, g) = loss_and_grad(&case, &params, &sched, key, opts).unwrap();
        prop_assert!(g.is_finite());
    }

    #[test]
    fn time_maps_to_nearest_step(t in 4.0f64..=1024.0, dt in prop::sample::select(vec![4.0, 8.0, 16.0])) {
        let s = time_to_step(t, dt).unwrap();
        prop_assert!(s >= 1);
        prop_assert!((s as f64 * dt - t).abs() <= dt / 2.0 + 1e-9);
    }

    #[test]
    fn payload_round_trip_is_bit_exact(seed in any::<u64>(), k in 1usize..=5, h in 1usize..9, w in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = || Image::from_fn(h, w, |_, _| f32::from_bits(rng.random::<u32>() & 0x3fff_ffff));
        let pre = img();
        let frames = (0..k).map(|i| Frame { target: img(), time_s: 60.0 * (i + 1) as f64 + 0.25 }).collect();
        let case = TrainingCase::new("rt", pre, frames).unwrap();
        let bytes = encode_case(&case).unwrap();
        let entry = CaseEntry {
            case_id: "rt".into(),
            height: h,
            width: w,
            times: case.times(),
            file: "rt.tnca".into(),
            checksum: crc32fast::hash(&bytes),
        };
        let back = decode_case(&bytes, &entry, "rt.tnca".as_ref()).unwrap();
        prop_assert_eq!(encode_case(&back).unwrap(), bytes);
        prop_assert_eq!(back, case);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), epoch in 0usize..1000, step in any::<u64>()) {
        let config = TrainConfig { channels: 3, hidden: 5, seed, ..Default::default() };
        let mut ck = Checkpoint::start(&config).unwrap();
        ck.params = ModelParams::init_dense(3, 5, seed).unwrap();
        ck.optimizer = OptimizerState { m: ModelParams::init_dense(3, 5, !seed).unwrap(), v: ModelParams::init(3, 5, seed).unwrap(), step };
        ck.epoch = epoch;
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, "x".as_ref()).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, ck);
    }

    #[test]
    fn train_config_text_round_trip(lr in 1e-6f64..1.0, rate in 0.01f64..=1.0, dt in 0.5f64..32.0, seed in any::<u64>(), det in any::<bool>()) {
        let mut c = TrainConfig { fire_rate: rate, delta_t_s: dt, seed, deterministic_mask: det, ..Default::default() };
        c.adam.learning_rate = lr;
        let text = train_config_to_text(&c);
        let back = train_config_from_text(&text, "c".as_ref()).unwrap();
        prop_assert_eq!(train_config_to_text(&back), text);
        prop_assert_eq!(back, c);
    }

    #[test]
    fn metric_identities_and_symmetry(seed in any::<u64>(), h in 11usize..40, w in 11usize..40) {
        let a = random_image(h, w, seed);
        let b = random_image(h, w, seed ^ 0xabcd);
        prop_assert_eq!(mse(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((ms_ssim(&a, &a, 1).unwrap() - 1.0).abs() < 1e-12);
        prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        prop_assert_eq!(mae(&a, &b).unwrap(), mae(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(ssim(&a, &b).unwrap() <= 1.0);
    }

    #[test]
    fn unit_window_is_identity_on_unit_data(seed in any::<u64>()) {
        let img = random_image(7, 9, seed);
        let window = IntensityWindow { lo: 0.0, hi: 1.0 };
        prop_assert_eq!(window.apply(&img), img);
    }
}

#[test]
fn phantom_frame_counts_and_times_over_many_seeds() {
    let spec = PhantomSpec {
        height: 16,
        width: 16,
        ..Default::default()
    };
    for seed in 0..1000u64 {
        let spec = PhantomSpec { seed, ..spec.clone() };
        let (case, _) = generate_phantom(&spec, "s", &mut case_rng(&spec, 0)).unwrap();
        let t = case.times();
        assert!((2..=5).contains(&t.len()), "seed {seed}: k = {}", t.len());
        assert!(t.windows(2).all(|p| p[0] < p[1]), "seed {seed}: {t:?}");
        assert!(t.iter().all(|&x| x > 0.0 && x <= 1024.0), "seed {seed}: {t:?}");
    }
}

#[test]
fn dense_truth_matches_noiseless_frames() {
    for seed in 0..20u64 {
        let spec = PhantomSpec {
            height: 24,
            width: 24,
            noise_sigma: 0.0,
            seed,
            ..Default::default()
        };
        let (case, truth) = generate_phantom(&spec, "n", &mut case_rng(&spec, 0)).unwrap();
        for f in &case.frames {
            assert_eq!(f.target, truth.at(f.time_s));
        }
    }
}

#[test]
fn masks_are_counter_based() {
    let key = RngKey::new(1, 2, 3, 4);
    let a = tenca::sample_mask(key, 16, 16, 0.5);
    assert_eq!(a, tenca::sample_mask(key, 16, 16, 0.5));
    assert_ne!(a, tenca::sample_mask(key.at_step(5), 16, 16, 0.5));
    assert_eq!(FireMask::ones(4, 4).fired(), 16);
}
