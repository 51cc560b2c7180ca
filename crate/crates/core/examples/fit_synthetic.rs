//! Fit the moving-disk test video and report per-frame PSNR.
//!
//! `cargo run --release --example fit_synthetic -- [steps] [n_init] [key=value ...]`

use foldsplat::config::TrainConfig;
use foldsplat::synthetic::moving_disk;
use foldsplat::trainer::{fit, initialize_model};
use foldsplat::video_io::psnr;

fn main() -> foldsplat::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = TrainConfig::default();
    cfg.model.poly_degree = 3;
    cfg.model.n_init = 2000;
    cfg.train.steps = 5000;
    cfg.train.log_interval = 250;
    for a in &args {
        cfg.apply_override(a)?;
    }
    let frames = moving_disk(96, 96, 32);
    let start = std::time::Instant::now();
    let model = initialize_model(&frames, &cfg)?;
    let (model, log) = fit(model, &frames, &cfg)?;
    for r in &log {
        println!("{:>6} {:.3e} {:6.2} {:>6} {:>8}", r.step, r.loss, r.psnr_probe, r.n_gaussians, r.wall_ms);
    }
    let mean: f64 = (0..frames.len())
        .map(|k| psnr(&model.render_frame(k).unwrap(), &frames[k]).unwrap())
        .sum::<f64>()
        / frames.len() as f64;
    println!("mean PSNR {mean:.3} dB, {} components, {:.1}s", model.len(), start.elapsed().as_secs_f64());
    Ok(())
}
