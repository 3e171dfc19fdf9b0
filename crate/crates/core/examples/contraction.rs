//! Scene parameterizations: unbounded contraction for both norms, the
//! forward-facing inverse-depth warp, and camera alignment.
//!
//!     cargo run --release --example contraction

use voxfield::contraction::{
    compute_alignment, contract_unbounded, forward_facing_warp, layer_index, ContractionConfig,
    RigidTransform,
};

fn main() -> voxfield::Result<()> {
    println!("{:>10} {:>22} {:>22}", "x", "p = 2", "p = inf");
    for r in [0.5, 1.0, 2.0, 10.0, 1e3, 1e6] {
        let x = [r, 0.5 * r, 0.0];
        let a = contract_unbounded(x, 1.0, 2.0);
        let b = contract_unbounded(x, 1.0, f64::INFINITY);
        println!(
            "{r:>10} {:>22} {:>22}",
            format!("({:.3}, {:.3})", a[0], a[1]),
            format!("({:.3}, {:.3})", b[0], b[1])
        );
    }

    let ff = ContractionConfig::forward_facing(64, 1.0, [1.0, 1.0], RigidTransform::identity());
    println!("\ndepth -> layer (64 layers, near 1)");
    for depth in [1.0, 2.0, 4.0, 100.0] {
        let u = forward_facing_warp(depth, &ff)?;
        println!("{depth:>8} -> u {u:.3}, layer {:.1}", layer_index(u, 64));
    }

    // cameras on a tilted ring, 5 units from the origin
    let ring: Vec<[f64; 3]> = (0..16)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / 16.0;
            [
                5.0 * a.cos(),
                3.0 + 5.0 * a.sin() * 0.6,
                5.0 * a.sin() * 0.8,
            ]
        })
        .collect();
    let align = compute_alignment(&ring, &[])?;
    let moved: Vec<[f64; 3]> = ring.iter().map(|p| align.apply_point(*p)).collect();
    let max_z = moved.iter().map(|p| p[2].abs()).fold(0.0, f64::max);
    println!(
        "\nalignment scale {:.4}, largest |z| after alignment {max_z:.2e}",
        align.scale
    );
    Ok(())
}
