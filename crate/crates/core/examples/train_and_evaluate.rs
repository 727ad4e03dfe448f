//! Trains on one phantom set, evaluates on a disjoint one and prints the
//! model against the pre-contrast copy baseline, overall and per phase.
//!
//! cargo run --release --example train_and_evaluate -- [size] [train_cases] [test_cases] [epochs]

use tenca::metrics::{baseline_report, evaluate_cases};
use tenca::phantom::{generate_dataset, PhantomSpec};
use tenca::trainer::{case_key, predict_frames, train_epoch, OptimizerState, TrainConfig, EVAL_EPOCH};

fn main() -> tenca::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let arg = |i: usize, default: usize| args.get(i).copied().unwrap_or(default);
    let (size, n_train, n_test, epochs) = (arg(0, 32), arg(1, 200), arg(2, 50), arg(3, 2));

    let spec = PhantomSpec { height: size, width: size, seed: 1, ..Default::default() };
    let train: Vec<_> = generate_dataset(&spec, n_train)?.into_iter().map(|c| c.0).collect();
    let test: Vec<_> = generate_dataset(&PhantomSpec { seed: 2, ..spec }, n_test)?.into_iter().map(|c| c.0).collect();

    let config = TrainConfig::default();
    let mut params = config.init_params()?;
    let mut opt = OptimizerState::new(&params);
    for epoch in 0..epochs {
        let s = train_epoch(&train, &mut params, &mut opt, &config, epoch)?;
        println!("epoch {epoch}: loss {:.3e}, grad norm {:.3e}, {:.0}s", s.mean_loss, s.grad_norm, s.seconds);
    }

    let preds = test
        .iter()
        .enumerate()
        .map(|(i, c)| predict_frames(&params, c, &config, case_key(config.seed, EVAL_EPOCH, i)))
        .collect::<tenca::Result<Vec<_>>>()?;
    let model = evaluate_cases(&test, &preds)?;
    let base = baseline_report(&test)?;

    println!("{:<9} {:>10} {:>8} {:>8} {:>8}", "", "MSE", "PSNR", "SSIM", "MS-SSIM");
    for (name, r) in [("model", &model), ("baseline", &base)] {
        let m = r.overall();
        println!("{name:<9} {:>10.3e} {:>8.2} {:>8.4} {:>8.4}", m.mse, m.psnr_db, m.ssim, m.ms_ssim);
    }
    println!("per-phase SSIM (model / baseline):");
    for ((phase, m), (_, b)) in model.per_phase().iter().zip(base.per_phase()) {
        println!("  phase {phase}: {:.4} / {:.4} ({} frames)", m.ssim, b.ssim, m.count);
    }
    Ok(())
}
