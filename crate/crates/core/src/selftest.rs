//! Quick oracle and invariant checks bundled into the binary.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::contraction::{contract_unbounded, p_norm};
use crate::distortion::{distloss_backward, distloss_forward, distloss_oracle, RaySampleBatch};
use crate::gradcheck::check_gradient;
use crate::grid::{tv_add_grad, tv_value, Aabb, ActiveSet, GradBuffer, TotalVariation, VoxelGrid};
use crate::optimizer::{adam_reference_step, adam_step, AdamConfig, AdamState};
use crate::rendering::{composite, HALT_TRANSMITTANCE};

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub checks: usize,
    pub failures: Vec<String>,
}

impl SuiteResult {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            checks: 0,
            failures: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures.push(what());
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "pass" } else { "FAIL" };
        write!(f, "{:<12} {status} ({} checks)", self.name, self.checks)?;
        for m in &self.failures {
            write!(f, "\n    {m}")?;
        }
        Ok(())
    }
}

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn distortion_suite() -> SuiteResult {
    let mut s = SuiteResult::new("distortion");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..50 {
        let rays = rng.gen_range(1..=16);
        let batch = RaySampleBatch::random(&mut rng, rays, 1..=64);
        let fast = distloss_forward(&batch);
        let oracle = distloss_oracle(&batch).expect("small batch");
        s.check(rel(fast, oracle, 1e-12) <= 1e-6, || {
            format!("batch {k}: forward {fast} vs oracle {oracle}")
        });
    }
    for k in 0..5 {
        let batch = RaySampleBatch::random(&mut rng, 3, 1..=16);
        let grad = distloss_backward(&batch);
        let idx: Vec<usize> = (0..batch.num_samples()).collect();
        let r = check_gradient(
            |w| {
                let mut b = batch.clone();
                b.weights_mut().copy_from_slice(w);
                distloss_forward(&b)
            },
            batch.weights(),
            &grad,
            &idx,
            1e-5,
            1e-8,
        );
        s.check(r.max_rel_err <= 1e-5, || {
            format!("gradient batch {k}: rel err {:.2e}", r.max_rel_err)
        });
    }
    s
}

fn grid_suite() -> SuiteResult {
    let mut s = SuiteResult::new("grid");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let res = [5, 4, 6];
    let data: Vec<f64> = (0..res.iter().product::<usize>())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let grid = VoxelGrid::from_data(res, 1, Aabb::unit(), data).expect("valid grid");

    let mut grad = GradBuffer::for_grid(&grid);
    tv_add_grad(
        &grid,
        &mut grad,
        &TotalVariation::new(1.0),
        true,
        &ActiveSet::empty(res),
    )
    .expect("tv");
    let idx: Vec<usize> = (0..grid.data().len()).collect();
    let r = check_gradient(
        |v| {
            tv_value(
                &VoxelGrid::from_data(res, 1, Aabb::unit(), v.to_vec()).expect("grid"),
                1.0,
            )
        },
        grid.data(),
        grad.data(),
        &idx,
        1e-5,
        1e-8,
    );
    s.check(r.max_rel_err <= 1e-5, || {
        format!("tv gradient rel err {:.2e}", r.max_rel_err)
    });

    let mut sparse = GradBuffer::for_grid(&grid);
    tv_add_grad(
        &grid,
        &mut sparse,
        &TotalVariation::new(1.0),
        false,
        &ActiveSet::all(res),
    )
    .expect("tv");
    let diff = grad
        .data()
        .iter()
        .zip(sparse.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    s.check(diff <= 1e-12, || {
        format!("sparse(all) vs dense differ by {diff:.2e}")
    });

    for (x, y, z) in [(0, 0, 0), (4, 3, 5), (2, 1, 3)] {
        let v = grid.trilinear_sample(&[grid.node_position(x, y, z)])[0];
        s.check((v - grid.get(x, y, z, 0)).abs() <= 1e-12, || {
            format!("node ({x},{y},{z}) not reproduced")
        });
    }
    s
}

fn optimizer_suite() -> SuiteResult {
    let mut s = SuiteResult::new("optimizer");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 1000;
    let mut p1: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut p2 = p1.clone();
    let mut s1 = AdamState::new(n, AdamConfig::default());
    let mut s2 = s1.clone();
    for _ in 0..20 {
        let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        adam_step(&mut p1, &g, &mut s1, 0.7).expect("finite");
        adam_reference_step(&mut p2, &g, &mut s2, 0.7).expect("finite");
    }
    let diff = p1
        .iter()
        .zip(&p2)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    s.check(diff <= 1e-12, || {
        format!("fused vs reference differ by {diff:.2e}")
    });

    let before = (p1.clone(), s1.m.clone(), s1.v.clone());
    let g: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 0.0 } else { 0.5 }).collect();
    adam_step(&mut p1, &g, &mut s1, 1.0).expect("finite");
    let untouched = (0..n).step_by(2).all(|i| {
        p1[i].to_bits() == before.0[i].to_bits()
            && s1.m[i].to_bits() == before.1[i].to_bits()
            && s1.v[i].to_bits() == before.2[i].to_bits()
    });
    s.check(untouched, || "zero-gradient entries changed".into());
    s
}

fn contraction_suite() -> SuiteResult {
    let mut s = SuiteResult::new("contraction");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for p in [2.0, f64::INFINITY] {
        for _ in 0..2000 {
            let scale = 10f64.powf(rng.gen_range(-2.0..4.0));
            let x = [
                rng.gen_range(-1.0..1.0) * scale,
                rng.gen_range(-1.0..1.0) * scale,
                rng.gen_range(-1.0..1.0) * scale,
            ];
            let y = contract_unbounded(x, 1.0, p);
            if p_norm(x, p) <= 1.0 {
                s.check(y == x, || {
                    format!("p={p}: {x:?} moved inside the unit ball")
                });
            }
            s.check(p_norm(y, p) <= 2.0 + 1e-12, || {
                format!("p={p}: {x:?} contracted outside the cube")
            });
        }
    }
    let y = contract_unbounded([2.0, 0.0, 0.0], 1.0, 2.0);
    s.check((y[0] - 1.5).abs() < 1e-12, || {
        format!("closed form (2,0,0) -> {y:?}")
    });
    s
}

fn compositing_suite() -> SuiteResult {
    let mut s = SuiteResult::new("compositing");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 0..200 {
        let n = rng.gen_range(1..64);
        let alphas: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.6)).collect();
        let colors: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let full = composite(&alphas, &colors, [1.0; 3], 0.0).expect("valid");
        let sum: f64 = full.weights.iter().sum::<f64>() + full.transmittance;
        s.check((sum - 1.0).abs() <= 1e-6, || {
            format!("ray {k}: Σw + T = {sum}")
        });
        let halted = composite(&alphas, &colors, [1.0; 3], HALT_TRANSMITTANCE).expect("valid");
        let d = (0..3)
            .map(|c| (full.rgb[c] - halted.rgb[c]).abs())
            .fold(0.0, f64::max);
        s.check(d <= 2e-3, || {
            format!("ray {k}: early stop changes color by {d}")
        });
    }
    s
}

/// Runs every suite.
pub fn run_all() -> Vec<SuiteResult> {
    vec![
        distortion_suite(),
        grid_suite(),
        optimizer_suite(),
        contraction_suite(),
        compositing_suite(),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_suites_pass() {
        for r in super::run_all() {
            assert!(r.passed(), "{r}");
        }
    }
}
