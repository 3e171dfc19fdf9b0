//! Adam that leaves zero-gradient entries untouched, next to the textbook
//! step that keeps decaying their moments.
//!
//!     cargo run --release --example sparse_adam

use voxfield::optimizer::{adam_reference_step, adam_step, AdamConfig, AdamState};

fn main() -> voxfield::Result<()> {
    let cfg = AdamConfig::default();
    let mut skip = vec![0.0; 3];
    let mut plain = skip.clone();
    let mut s_skip = AdamState::new(3, cfg);
    let mut s_plain = AdamState::new(3, cfg);

    // entry 2 only sees a gradient in the first step
    let schedule = [
        [1.0, -0.5, 2.0],
        [1.0, -0.5, 0.0],
        [1.0, -0.5, 0.0],
        [1.0, -0.5, 0.0],
    ];
    for (t, g) in schedule.iter().enumerate() {
        adam_step(&mut skip, g, &mut s_skip, 1.0)?;
        adam_reference_step(&mut plain, g, &mut s_plain, 1.0)?;
        println!("step {}: skip {skip:+.4?}  plain {plain:+.4?}", t + 1);
    }
    println!(
        "entry 2 moments, skip:  m={:.4} v={:.4}",
        s_skip.m[2], s_skip.v[2]
    );
    println!(
        "entry 2 moments, plain: m={:.4} v={:.4}",
        s_plain.m[2], s_plain.v[2]
    );
    Ok(())
}
