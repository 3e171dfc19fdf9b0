//! Linear-time distortion loss on a ragged batch, checked against the
//! pairwise definition, plus a small timing sweep.
//!
//!     cargo run --release --example distortion_loss

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use voxfield::distortion::{
    distloss_backward, distloss_forward, distloss_oracle, distloss_oracle_with_limit,
    RaySampleBatch,
};

fn main() -> voxfield::Result<()> {
    // two rays: three samples, then one sample
    let batch = RaySampleBatch::from_boundaries(
        vec![0, 3, 4],
        &[0.0, 0.2, 0.5, 1.0, 0.0, 1.0],
        vec![0.1, 0.6, 0.2, 1.0],
    )?;
    println!("loss      {:.6}", distloss_forward(&batch));
    println!("oracle    {:.6}", distloss_oracle(&batch)?);
    println!("gradient  {:?}", distloss_backward(&batch));

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    println!("\n{:>6} {:>12} {:>12}", "N", "fast (s)", "pairwise (s)");
    for n in [64, 128, 256, 512] {
        let batch = RaySampleBatch::random(&mut rng, 1024, n..=n);
        let t = Instant::now();
        let fast = distloss_forward(&batch);
        let t_fast = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let slow = distloss_oracle_with_limit(&batch, usize::MAX)?;
        let t_slow = t.elapsed().as_secs_f64();
        assert!((fast - slow).abs() <= 1e-9 * slow);
        println!("{n:>6} {t_fast:>12.2e} {t_slow:>12.2e}");
    }
    Ok(())
}
