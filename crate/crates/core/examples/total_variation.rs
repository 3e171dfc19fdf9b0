//! Huber TV gradients in dense and sparse mode.
//!
//!     cargo run --release --example total_variation

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxfield::grid::{
    neighbor_pair_count, tv_add_grad, tv_value, Aabb, ActiveSet, GradBuffer, TotalVariation,
    VoxelGrid,
};

fn main() -> voxfield::Result<()> {
    let res = [32, 32, 32];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = (0..res.iter().product::<usize>())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let grid = VoxelGrid::from_data(res, 1, Aabb::centered_cube(1.0)?, data)?;
    let tv = TotalVariation::new(1e-5);
    println!(
        "TV value {:.6} over {} pairs",
        tv_value(&grid, tv.huber_delta),
        neighbor_pair_count(res)
    );

    let mut dense = GradBuffer::for_grid(&grid);
    let stats = tv_add_grad(&grid, &mut dense, &tv, true, &ActiveSet::empty(res))?;
    println!("dense:  {} pairs", stats.pairs_evaluated);

    // only nodes touched this step, as after a ray batch
    let mut active = ActiveSet::empty(res);
    for _ in 0..500 {
        active.insert(rng.gen_range(0..grid.num_nodes()));
    }
    let mut sparse = GradBuffer::for_grid(&grid);
    let stats = tv_add_grad(&grid, &mut sparse, &tv, false, &active)?;
    let changed = sparse.data().iter().filter(|g| **g != 0.0).count();
    println!(
        "sparse: {} pairs, {} of {} entries changed",
        stats.pairs_evaluated,
        changed,
        grid.num_nodes()
    );
    Ok(())
}
