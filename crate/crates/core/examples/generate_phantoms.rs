//! Draws a small phantom dataset, writes it to disk, reads it back and
//! shows intensity normalisation and patch cropping on one case.
//!
//! cargo run --example generate_phantoms -- [out_dir] [cases]

use std::path::PathBuf;

use tenca::dataset::{read_dataset, write_dataset};
use tenca::phantom::{crop_case, generate_dataset, normalize_case, peak_time, PhantomSpec};

fn main() -> tenca::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("tenca_phantoms"));
    let count: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(8);

    let spec = PhantomSpec { seed: 7, ..Default::default() };
    let generated = generate_dataset(&spec, count)?;
    let cases: Vec<_> = generated.iter().map(|(c, _)| c.clone()).collect();
    let manifest = write_dataset(&out, &cases, spec.delta_t_s)?;
    println!("wrote {} cases to {}", manifest.cases.len(), out.display());

    for (case, truth) in generated.iter().take(3) {
        let peaks: Vec<String> = truth
            .regions
            .iter()
            .map(|r| match peak_time(r.kinetics.uptake, r.kinetics.washout) {
                Some(t) => format!("{t:.0}s"),
                None => "none".into(),
            })
            .collect();
        println!("  {}: k={} times {:?} region peaks [{}]", case.case_id, case.k(), case.times(), peaks.join(", "));
    }

    let (_, back) = read_dataset(&out)?;
    assert_eq!(back, cases);
    println!("read back {} cases bit-exactly", back.len());

    let normalized = normalize_case(&cases[0])?;
    let patch = crop_case(&normalized, (32, 32), 40)?;
    let max = patch.frames.last().unwrap().target.pixels().iter().cloned().fold(0.0f32, f32::max);
    println!("normalised and cropped {} to {:?}; last-frame max {max:.3}", patch.case_id, patch.dims());
    Ok(())
}
