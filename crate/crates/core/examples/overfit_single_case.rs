//! Fits one 64×64 phantom observed at four irregular times, then compares
//! the rollout with the analytic truth at times it never saw.
//!
//! cargo run --release --example overfit_single_case -- [max_steps]

use std::time::Instant;

use tenca::grid::{init_state, rollout_with};
use tenca::metrics::mse;
use tenca::phantom::{case_rng, generate_phantom, PhantomSpec};
use tenca::trainer::{case_key, eval_loss, train_epoch, Frame, OptimizerState, TrainConfig, TrainingCase, EVAL_EPOCH};
use tenca::Image;

fn main() -> tenca::Result<()> {
    let max_steps: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(2000);
    let spec = PhantomSpec::default();
    let (_, truth) = generate_phantom(&spec, "overfit", &mut case_rng(&spec, 0))?;
    let times = [64.0, 192.0, 448.0, 960.0];
    let frames = times.iter().map(|&t| Frame { target: truth.at(t), time_s: t }).collect();
    let case = TrainingCase::new("overfit", truth.pre_contrast.clone(), frames)?;

    let config = TrainConfig::default();
    let mut params = config.init_params()?;
    let mut opt = OptimizerState::new(&params);
    let key = case_key(config.seed, EVAL_EPOCH, 0);
    let started = Instant::now();
    for step in 0..max_steps {
        let stats = train_epoch(std::slice::from_ref(&case), &mut params, &mut opt, &config, step)?;
        if (step + 1) % 10 == 0 {
            let eval = eval_loss(&params, &case, &config, key)?;
            println!("step {:>4}: train {:.3e} eval {eval:.3e} ({:.0}s)", step + 1, stats.mean_loss, started.elapsed().as_secs_f64());
            if eval < 1e-3 {
                break;
            }
        }
    }

    let grid = init_state(&case.pre_contrast, config.channels)?;
    let mut states = vec![grid.visible()];
    rollout_with(&grid, &params, 120, key, config.rule(), |_, s| states.push(s.visible()))?;
    println!("{:>6} {:>12} {:>12}", "t (s)", "model MSE", "copy MSE");
    for t in [32.0, 128.0, 320.0, 640.0, 960.0] {
        let step = (t / config.delta_t_s) as usize;
        let model = Image::from_f64(64, 64, &states[step])?;
        let dense = truth.at(t);
        let tag = if times.contains(&t) { " (conditioned)" } else { "" };
        println!("{t:>6} {:>12.3e} {:>12.3e}{tag}", mse(&model, &dense)?, mse(&case.pre_contrast, &dense)?);
    }
    Ok(())
}
