//! Trains on an inward-out capture of boxes scattered beyond the unit ball,
//! using the contracted grid.
//!
//!     cargo run --release --example unbounded_scene -- [steps]

use voxfield::contraction::{CaptureMode, ContractionConfig, RigidTransform};
use voxfield::datasets::{gen_synthetic_scene, SceneSpec};
use voxfield::trainer::{train, TrainConfig};

fn main() -> voxfield::Result<()> {
    let steps: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1500);
    let spec = SceneSpec {
        width: 48,
        height: 48,
        ..SceneSpec::unbounded()
    };
    let scene = gen_synthetic_scene(1, &spec)?;
    assert_eq!(scene.dataset.mode, CaptureMode::Unbounded);

    let mut config = TrainConfig {
        iterations: steps,
        contraction: ContractionConfig::unbounded(1.0, f64::INFINITY, RigidTransform::identity()),
        ..TrainConfig::default()
    };
    config.grid.upscale_steps = vec![steps / 4, steps / 2];
    config.grid.fit_dataset_aabb = false;
    let report = train(&config, &scene.dataset, None)?;
    println!("{} boxes, {} steps", scene.boxes.len(), steps);
    println!(
        "test PSNR per view: {:?}",
        report
            .view_psnr
            .iter()
            .map(|p| format!("{p:.2}"))
            .collect::<Vec<_>>()
    );
    println!("mean {:.2} dB", report.test_psnr);
    Ok(())
}
