//! Backpropagation through time against central finite differences,
//! including the step-size sweep.
//!
//! cargo run --example gradient_check

use tenca::autodiff::{loss_and_grad, TinyProblem};
use tenca::runner::{cmd_gradcheck, epsilon_sweep, GradcheckOptions, DEFAULT_SWEEP};

fn main() -> tenca::Result<()> {
    for trial in cmd_gradcheck(&GradcheckOptions::default())? {
        println!("seed {}: max relative error {:.2e} over {} parameters", trial.seed, trial.max_rel_error, trial.checked);
    }

    println!("step-size sweep (seed 0):");
    for (eps, err) in epsilon_sweep(0, &DEFAULT_SWEEP)? {
        println!("  {eps:>7.0e}  {err:.2e}");
    }

    let p = TinyProblem::new(3)?;
    let grads = |k| loss_and_grad(&p.case, &p.params, &p.schedule, p.key, p.options.with_segment_len(k)).map(|r| r.1);
    println!("segment length 1 vs 16 identical: {}", grads(1)? == grads(16)?);
    Ok(())
}
