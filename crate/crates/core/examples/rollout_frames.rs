//! Exports rollout frames and subtraction images from a checkpoint, here a
//! briefly trained one, at chosen times and at every step.
//!
//! cargo run --release --example rollout_frames -- [out_dir]

use std::path::PathBuf;

use tenca::phantom::{case_rng, generate_phantom, PhantomSpec};
use tenca::runner::{export_rollout, Checkpoint, RolloutTimes};
use tenca::trainer::{train_epoch, TrainConfig};

fn main() -> tenca::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("tenca_rollout"));
    let spec = PhantomSpec { height: 32, width: 32, ..Default::default() };
    let (case, _) = generate_phantom(&spec, "demo", &mut case_rng(&spec, 3))?;

    let config = TrainConfig { n_steps: 128, ..Default::default() };
    let mut ck = Checkpoint::start(&config)?;
    for epoch in 0..20 {
        train_epoch(std::slice::from_ref(&case), &mut ck.params, &mut ck.optimizer, &config, epoch)?;
        ck.epoch += 1;
    }
    ck.save(&out.join("demo.tnck"))?;

    let picked = export_rollout(&ck, &case.pre_contrast, &RolloutTimes::Seconds(vec![60.0, 100.0, 480.0]), &out.join("picked"), 0)?;
    for f in &picked {
        println!("t = {:>5} s -> step {:>3}: {}", f.time_s, f.step, f.frame.display());
    }
    let all = export_rollout(&ck, &case.pre_contrast, &RolloutTimes::AllSteps, &out.join("all"), 0)?;
    println!("{} frames (+ subtraction images) in {}", all.len(), out.join("all").display());

    match export_rollout(&ck, &case.pre_contrast, &RolloutTimes::Seconds(vec![2000.0]), &out.join("bad"), 0) {
        Err(e) => println!("beyond the horizon: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
