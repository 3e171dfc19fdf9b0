use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxfield::camera::Camera;
use voxfield::contraction::{ContractionConfig, RigidTransform};
use voxfield::gradcheck::check_gradient;
use voxfield::grid::{Aabb, GradBuffer};
use voxfield::rendering::{RadianceField, Ray, RenderConfig};

fn random_field(contraction: ContractionConfig, res: usize, seed: u64) -> RadianceField {
    let mut field = RadianceField::new([res; 3], contraction, 1e-2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in field.density.data_mut() {
        *v = rng.gen_range(-4.0..6.0);
    }
    for v in field.color.data_mut() {
        *v = rng.gen_range(-2.0..2.0);
    }
    field
}

fn rays_from(cam: &Camera, near: f64, far: f64) -> Vec<Ray> {
    let mut rays = Vec::new();
    for j in 0..cam.height {
        for i in 0..cam.width {
            rays.push(cam.pixel_ray(i, j, near, far));
        }
    }
    rays
}

fn smooth_cfg() -> RenderConfig {
    RenderConfig {
        halt_transmittance: 0.0,
        use_occupancy: false,
        step_size: 0.5,
        ..RenderConfig::default()
    }
}

fn targets(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()
}

/// Checks both grids' analytic gradients against central differences on
/// the entries with the largest analytic magnitude.
fn check_field(field: &RadianceField, rays: &[Ray], dist_weight: f64) {
    let cfg = smooth_cfg();
    let gt = targets(rays.len(), 99);
    let mut gd = GradBuffer::for_grid(&field.density);
    let mut gc = GradBuffer::for_grid(&field.color);
    let loss = field
        .forward_backward(rays, &gt, &cfg, dist_weight, &mut gd, &mut gc)
        .unwrap();
    assert!(loss.samples > 0);

    let total = |f: &RadianceField| {
        let mut a = GradBuffer::for_grid(&f.density);
        let mut b = GradBuffer::for_grid(&f.color);
        let l = f
            .forward_backward(rays, &gt, &cfg, dist_weight, &mut a, &mut b)
            .unwrap();
        l.mse + dist_weight * l.dist
    };
    let top = |g: &[f64], k: usize| {
        let mut idx: Vec<usize> = (0..g.len()).filter(|&i| g[i] != 0.0).collect();
        idx.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()));
        idx.truncate(k);
        idx
    };

    let idx = top(gd.data(), 24);
    assert!(!idx.is_empty());
    let r = check_gradient(
        |p| {
            let mut f = field.clone();
            f.density.data_mut().copy_from_slice(p);
            total(&f)
        },
        field.density.data(),
        gd.data(),
        &idx,
        1e-6,
        1e-7,
    );
    assert!(r.max_rel_err < 1e-4, "density {r:?}");

    let idx = top(gc.data(), 24);
    let r = check_gradient(
        |p| {
            let mut f = field.clone();
            f.color.data_mut().copy_from_slice(p);
            total(&f)
        },
        field.color.data(),
        gc.data(),
        &idx,
        1e-6,
        1e-7,
    );
    assert!(r.max_rel_err < 1e-4, "color {r:?}");
}

#[test]
fn bounded_gradients_match_finite_differences() {
    let field = random_field(
        ContractionConfig::bounded(Aabb::centered_cube(1.0).unwrap()),
        6,
        1,
    );
    let cam = Camera::look_at(4, 4, 5.0, [0.3, -2.5, 1.2], [0.0; 3], [0.0, 0.0, 1.0]);
    for dist_weight in [0.0, 0.3] {
        check_field(&field, &rays_from(&cam, 0.05, 10.0), dist_weight);
    }
}

#[test]
fn unbounded_gradients_match_finite_differences() {
    let contraction = ContractionConfig::unbounded(1.0, f64::INFINITY, RigidTransform::identity());
    let field = random_field(contraction, 6, 2);
    let cam = Camera::look_at(
        3,
        3,
        3.0,
        [0.2, -0.8, 0.3],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
    );
    check_field(&field, &rays_from(&cam, 0.05, 1e4), 0.2);
}

#[test]
fn forward_facing_gradients_match_finite_differences() {
    let contraction =
        ContractionConfig::forward_facing(8, 1.0, [1.0, 1.0], RigidTransform::identity());
    let field = random_field(contraction, 6, 3);
    let cam = Camera::new(
        4,
        4,
        4.0,
        [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ],
    );
    check_field(&field, &rays_from(&cam, 0.05, 1e6), 0.2);
}

#[test]
fn gradients_do_not_depend_on_thread_count() {
    let field = random_field(
        ContractionConfig::bounded(Aabb::centered_cube(1.0).unwrap()),
        8,
        4,
    );
    let cam = Camera::look_at(24, 24, 30.0, [0.3, -2.5, 1.2], [0.0; 3], [0.0, 0.0, 1.0]);
    let rays = rays_from(&cam, 0.05, 10.0);
    let gt = targets(rays.len(), 5);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let mut gd = GradBuffer::for_grid(&field.density);
            let mut gc = GradBuffer::for_grid(&field.color);
            let l = field
                .forward_backward(&rays, &gt, &RenderConfig::default(), 0.01, &mut gd, &mut gc)
                .unwrap();
            (l, gd.data().to_vec(), gc.data().to_vec())
        })
    };
    assert_eq!(run(1), run(3));
}
