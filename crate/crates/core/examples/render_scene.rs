//! Renders a synthetic ground-truth field with the batched renderer and the
//! independent reference renderer, and writes both as PNGs.
//!
//!     cargo run --release --example render_scene -- [out_dir]

use std::path::PathBuf;

use voxfield::datasets::{
    gen_synthetic_scene, reference_render, ReferenceSettings, SceneSpec, Split,
};
use voxfield::image_io::{mse, psnr_from_mse, write_png};
use voxfield::rendering::RenderConfig;

fn main() -> voxfield::Result<()> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "render_scene_out".into()),
    );
    std::fs::create_dir_all(&out).map_err(|source| voxfield::Error::Io {
        path: out.clone(),
        source,
    })?;
    let scene = gen_synthetic_scene(0, &SceneSpec::default())?;
    let frame = scene.dataset.indices(Split::Test)[0];
    let cam = scene.dataset.camera(frame).scaled(2);

    let fast = scene.field.render_image(&cam, &RenderConfig::default())?;
    let reference = reference_render(&scene.field, &cam, &ReferenceSettings::default())?;
    write_png(&out.join("fast.png"), &fast.rgb)?;
    write_png(&out.join("reference.png"), &reference)?;
    println!(
        "{} boxes, {}x{} view",
        scene.boxes.len(),
        cam.width,
        cam.height
    );
    println!(
        "fast vs reference: {:.1} dB",
        psnr_from_mse(mse(&fast.rgb, &reference)?)
    );
    println!("wrote {}", out.display());
    Ok(())
}
