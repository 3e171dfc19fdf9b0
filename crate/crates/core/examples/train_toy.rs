//! Fits a voxel grid to the synthetic box scene and reports held-out PSNR.
//! The full default run (3000 steps, 64³) takes a few minutes; pass a step
//! count for a quicker look.
//!
//!     cargo run --release --example train_toy -- [steps] [out_dir]

use std::path::PathBuf;

use voxfield::datasets::{gen_synthetic_scene, SceneSpec};
use voxfield::trainer::{train, TrainConfig};

fn main() -> voxfield::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut config = TrainConfig::default();
    if let Some(steps) = args.next() {
        config.iterations = steps
            .parse()
            .map_err(|_| voxfield::Error::Config(format!("bad step count '{steps}'")))?;
        let scale = config.iterations as f64 / 3000.0;
        config.grid.upscale_steps = config
            .grid
            .upscale_steps
            .iter()
            .map(|&s| (s as f64 * scale) as usize)
            .collect();
    }
    let out = PathBuf::from(args.next().unwrap_or_else(|| "train_toy_out".into()));

    let scene = gen_synthetic_scene(config.seed, &SceneSpec::default())?;
    let report = train(&config, &scene.dataset, Some(&out))?;
    for row in &report.rows {
        println!(
            "step {:>5}  mse {:.5}  eval PSNR {:.2}",
            row.step, row.mse, row.psnr
        );
    }
    println!(
        "test PSNR {:.2} dB, weight entropy {:.3}",
        report.test_psnr, report.weight_entropy
    );
    println!("checkpoint {}", out.join("final.vxck").display());
    Ok(())
}
