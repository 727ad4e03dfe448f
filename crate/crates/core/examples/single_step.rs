//! One masked update of a freshly initialised automaton on a phantom.
//!
//! cargo run --example single_step

use tenca::grid::{init_state, perceive, sample_mask, update_step};
use tenca::phantom::{case_rng, generate_phantom, PhantomSpec};
use tenca::{param_count, ModelParams, RngKey};

fn main() -> tenca::Result<()> {
    let spec = PhantomSpec::default();
    let (case, _) = generate_phantom(&spec, "demo", &mut case_rng(&spec, 0))?;
    let (d, h) = (24, 128);
    let params = ModelParams::init_dense(d, h, 1)?;
    println!("{} parameters (d = {d}, H = {h})", param_count(d, h));

    let grid = init_state(&case.pre_contrast, d)?;
    let field = perceive(&grid, &params)?;
    println!("perception: {}x{} cells, {} values each", field.height(), field.width(), field.width_per_cell());

    let mask = sample_mask(RngKey::new(0, 0, 0, 1), grid.height(), grid.width(), 0.5);
    let next = update_step(&grid, &params, &mask)?;
    let changed = grid
        .values()
        .chunks(d)
        .zip(next.values().chunks(d))
        .filter(|(a, b)| a != b)
        .count();
    let delta = next
        .visible()
        .iter()
        .zip(grid.visible())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("{} of {} cells fired, {changed} changed; max visible change {delta:.4}", mask.fired(), grid.cells());
    Ok(())
}
