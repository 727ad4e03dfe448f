//! Fidelity metrics of the pre-contrast copy baseline on a phantom, and
//! how they respond to blur and noise.
//!
//! cargo run --example image_metrics

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use tenca::metrics::{mae, ms_ssim, ms_ssim_levels_for, mse, psnr, ssim};
use tenca::phantom::{case_rng, generate_phantom, PhantomSpec};
use tenca::Image;

fn row(name: &str, a: &Image, b: &Image) -> tenca::Result<()> {
    let levels = ms_ssim_levels_for(a.height(), a.width());
    println!(
        "{name:<22} {:>10.3e} {:>9.3e} {:>8.2} {:>7.4} {:>8.4}",
        mse(a, b)?,
        mae(a, b)?,
        psnr(a, b, 1.0)?,
        ssim(a, b)?,
        ms_ssim(a, b, levels)?
    );
    Ok(())
}

fn main() -> tenca::Result<()> {
    let spec = PhantomSpec::default();
    let (case, _) = generate_phantom(&spec, "m", &mut case_rng(&spec, 4))?;
    let target = &case.frames.last().unwrap().target;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let noise = Normal::new(0.0f32, 0.02).unwrap();
    let noisy = Image::from_fn(target.height(), target.width(), |r, c| (target.get(r, c) + noise.sample(&mut rng)).clamp(0.0, 1.0));
    let blurred = Image::from_fn(target.height(), target.width(), |r, c| {
        let (h, w) = target.dims();
        let mut s = 0.0;
        for (dr, dc) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            s += target.get((r + dr).min(h - 1), (c + dc).min(w - 1));
        }
        s / 4.0
    });

    println!("{:<22} {:>10} {:>9} {:>8} {:>7} {:>8}", "prediction", "MSE", "MAE", "PSNR", "SSIM", "MS-SSIM");
    row("target itself", target, target)?;
    row("pre-contrast copy", &case.pre_contrast, target)?;
    row("target + noise 0.02", &noisy, target)?;
    row("target, 2x2 box blur", &blurred, target)?;
    Ok(())
}
