//! Config-driven training through the runner: generates a dataset, trains
//! two epochs, resumes for two more and checks the result matches an
//! uninterrupted four-epoch run bit for bit.
//!
//! cargo run --release --example resume_training

use tenca::runner::{gen_data, train, with_threads, Checkpoint, DataSpec, RunConfig};
use tenca::phantom::PhantomSpec;
use tenca::trainer::TrainConfig;

fn main() -> tenca::Result<()> {
    let dir = std::env::temp_dir().join("tenca_resume");
    let _ = std::fs::remove_dir_all(&dir);
    let spec = DataSpec {
        phantom: PhantomSpec { height: 16, width: 16, seed: 3, ..Default::default() },
        cases: 8,
    };
    gen_data(&spec, &dir.join("data"))?;

    let base = TrainConfig { channels: 8, hidden: 32, batch_size: 4, ..Default::default() };
    let run_for = |epochs: usize, name: &str| {
        let mut run = RunConfig::new(TrainConfig { epochs, ..base.clone() }, dir.join("data"));
        run.checkpoint_dir = dir.join(name);
        run.report_dir = dir.join(name);
        run.reproducible = true;
        run
    };

    let straight = with_threads(true, || train(&run_for(4, "straight"), None))??;
    println!("config for the first leg:\n{}", run_for(2, "split").to_text());
    let first = with_threads(true, || train(&run_for(2, "split"), None))??;
    let second = with_threads(true, || train(&run_for(4, "split"), Some(&first.final_checkpoint)))??;
    for s in first.history.iter().chain(&second.history) {
        println!("epoch {}: loss {:.4e}", s.epoch, s.mean_loss);
    }

    let a = Checkpoint::load(&straight.final_checkpoint)?.to_bytes();
    let b = Checkpoint::load(&second.final_checkpoint)?.to_bytes();
    println!("resumed run identical to uninterrupted run: {}", a == b);
    Ok(())
}
