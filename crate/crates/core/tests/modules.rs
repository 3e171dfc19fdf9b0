//! Worked examples and independent oracles for the individual modules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxfield::camera::Camera;
use voxfield::contraction::{compute_alignment, ContractionConfig, RigidTransform};
use voxfield::distortion::{distloss_oracle, RaySampleBatch};
use voxfield::grid::{trilinear_scatter_grad, Aabb, GradBuffer, VoxelGrid};
use voxfield::image_io::Image;
use voxfield::rendering::{
    density_to_alpha, ray_aabb_intersect, update_occupancy, OccupancyMask, RadianceField, Ray,
    RenderConfig,
};
use voxfield::trainer::{compute_losses, psnr, train, TrainConfig};

fn random_grid(rng: &mut ChaCha8Rng, res: [usize; 3], channels: usize) -> VoxelGrid {
    let n = res.iter().product::<usize>() * channels;
    VoxelGrid::from_data(
        res,
        channels,
        Aabb::unit(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Eight-corner loop written directly from the lattice definition.
fn lerp_by_hand(g: &VoxelGrid, q: [f64; 3], c: usize) -> f64 {
    let res = g.resolution();
    let mut i0 = [0usize; 3];
    let mut f = [0.0; 3];
    for a in 0..3 {
        let u = q[a].clamp(0.0, 1.0) * (res[a] - 1) as f64;
        i0[a] = (u.floor() as usize).min(res[a] - 2);
        f[a] = u - i0[a] as f64;
    }
    let mut v = 0.0;
    for dx in 0..2 {
        for dy in 0..2 {
            for dz in 0..2 {
                let w = (if dx == 1 { f[0] } else { 1.0 - f[0] })
                    * (if dy == 1 { f[1] } else { 1.0 - f[1] })
                    * (if dz == 1 { f[2] } else { 1.0 - f[2] });
                v += w * g.get(i0[0] + dx, i0[1] + dy, i0[2] + dz, c);
            }
        }
    }
    v
}

#[test]
fn trilinear_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = random_grid(&mut rng, [8, 8, 8], 3);
    let pts: Vec<[f64; 3]> = (0..1000)
        .map(|_| [rng.gen(), rng.gen(), rng.gen()])
        .collect();
    let out = g.trilinear_sample(&pts);
    for (k, q) in pts.iter().enumerate() {
        for c in 0..3 {
            assert!((out[k * 3 + c] - lerp_by_hand(&g, *q, c)).abs() <= 1e-12);
        }
    }
}

#[test]
fn scatter_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = random_grid(&mut rng, [5, 4, 6], 2);
    let pts: Vec<[f64; 3]> = (0..40).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let up: Vec<f64> = (0..80).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut grad = GradBuffer::for_grid(&g);
    trilinear_scatter_grad(&mut grad, &pts, &up).unwrap();

    let objective = |data: &[f64]| {
        let h = VoxelGrid::from_data(g.resolution(), 2, Aabb::unit(), data.to_vec()).unwrap();
        h.trilinear_sample(&pts)
            .iter()
            .zip(&up)
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let idx: Vec<usize> = (0..g.data().len()).collect();
    let r = voxfield::gradcheck::check_gradient(objective, g.data(), grad.data(), &idx, 1e-4, 1e-8);
    assert!(r.max_rel_err <= 1e-5, "{r:?}");

    let mut untouched = GradBuffer::for_grid(&g);
    trilinear_scatter_grad(&mut untouched, &pts, &vec![0.0; 80]).unwrap();
    assert!(untouched.data().iter().all(|&v| v == 0.0));
}

#[test]
fn upscale_keeps_constants_and_ramps() {
    let c = VoxelGrid::new([3, 4, 5], 2, Aabb::unit(), 0.7).unwrap();
    assert!(c
        .upscale([6, 8, 10])
        .unwrap()
        .data()
        .iter()
        .all(|&v| (v - 0.7).abs() <= 1e-15));

    let mut ramp = VoxelGrid::new([4, 3, 3], 1, Aabb::unit(), 0.0).unwrap();
    for x in 0..4 {
        for y in 0..3 {
            for z in 0..3 {
                ramp.set(x, y, z, 0, -1.0 + 2.0 * x as f64 / 3.0);
            }
        }
    }
    let up = ramp.upscale([8, 6, 6]).unwrap();
    for x in 0..8 {
        let expect = -1.0 + 2.0 * x as f64 / 7.0;
        for y in 0..6 {
            for z in 0..6 {
                assert!((up.get(x, y, z, 0) - expect).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn alpha_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let raw = rng.gen_range(-10.0..6.0);
        let shift = rng.gen_range(-12.0..0.0);
        let dt = rng.gen_range(0.05..2.0);
        let (a, da) = density_to_alpha(raw, shift, dt);
        if a >= voxfield::rendering::ALPHA_MAX {
            continue;
        }
        let h = 1e-6;
        let fd = (density_to_alpha(raw + h, shift, dt).0 - density_to_alpha(raw - h, shift, dt).0)
            / (2.0 * h);
        assert!(
            (da - fd).abs() / da.abs().max(fd.abs()).max(1e-9) <= 1e-6,
            "raw {raw} shift {shift}"
        );
    }
    assert_eq!(density_to_alpha(3.0, 0.0, 0.0).0, 0.0);
}

fn normalized(d: [f64; 3]) -> [f64; 3] {
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    d.map(|c| c / n)
}

#[test]
fn ray_box_endpoints_lie_on_the_surface() {
    let unit = Aabb::unit();
    let ray = Ray::new([-2.0, 0.5, 0.5], [1.0, 0.0, 0.0], 1e-9, 100.0).unwrap();
    let (t0, t1) = ray_aabb_intersect(&ray, &unit).unwrap();
    assert!((t0 - 2.0).abs() < 1e-12 && (t1 - 3.0).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut hits = 0;
    for _ in 0..10_000 {
        let o = [
            rng.gen_range(-3.0..4.0),
            rng.gen_range(-3.0..4.0),
            rng.gen_range(-3.0..4.0),
        ];
        let target: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
        let d = normalized([target[0] - o[0], target[1] - o[1], target[2] - o[2]]);
        let ray = Ray::new(o, d, 1e-9, 1e3).unwrap();
        let on_surface = |p: [f64; 3]| {
            let inside = p.iter().all(|&v| (-1e-9..=1.0 + 1e-9).contains(&v));
            let face = p
                .iter()
                .any(|&v| v.abs() <= 1e-9 || (v - 1.0).abs() <= 1e-9);
            inside && face
        };
        if let Some((t0, t1)) = ray_aabb_intersect(&ray, &unit) {
            hits += 1;
            if t0 > ray.near {
                assert!(on_surface(ray.at(t0)), "{:?}", ray.at(t0));
            }
            assert!(on_surface(ray.at(t1)), "{:?}", ray.at(t1));
        }
    }
    assert!(hits > 9000);
}

#[test]
fn ray_pointing_away_misses() {
    let ray = Ray::new([-2.0, 0.5, 0.5], [-1.0, 0.0, 0.0], 1e-9, 100.0).unwrap();
    assert!(ray_aabb_intersect(&ray, &Aabb::unit()).is_none());
}

#[test]
fn sample_boundaries_increase_in_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let configs = [
        ContractionConfig::bounded(Aabb::centered_cube(1.0).unwrap()),
        ContractionConfig::unbounded(1.0, 2.0, RigidTransform::identity()),
        ContractionConfig::unbounded(1.0, f64::INFINITY, RigidTransform::identity()),
        ContractionConfig::forward_facing(32, 1.0, [1.0, 1.0], RigidTransform::identity()),
    ];
    for cfg in configs {
        let field = RadianceField::new([16; 3], cfg, 1e-4).unwrap();
        let render = RenderConfig::default();
        let sampler = field.sampler(&render);
        for _ in 0..500 {
            let o = [
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ];
            let mut d = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            if field.contraction.mode == voxfield::contraction::CaptureMode::ForwardFacing {
                d[2] = -1.0;
            }
            let s = sampler.sample(&Ray::new(o, normalized(d), render.near, render.far).unwrap());
            if s.is_empty() {
                continue;
            }
            assert_eq!(s.boundaries.len(), s.len() + 1);
            assert!(s.boundaries.windows(2).all(|w| w[0] < w[1]));
            assert!(s.boundaries[0] >= 0.0 && s.boundaries[s.len()] <= 1.0);
        }
    }
}

#[test]
fn alignment_examples() {
    let circle: Vec<[f64; 3]> = (0..12)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / 12.0;
            [0.8 * a.cos(), 0.8 * a.sin(), 0.0]
        })
        .collect();
    let t = compute_alignment(&circle, &[]).unwrap();
    for i in 0..3 {
        assert!(
            (t.rotation[i][i].abs() - 1.0).abs() < 1e-9,
            "{:?}",
            t.rotation
        );
        assert!(t.translation[i].abs() < 1e-12);
    }

    // rotated 90° about X: the circle now lies in XZ and must come back to XY
    let tilted: Vec<[f64; 3]> = circle.iter().map(|p| [p[0], -p[2], p[1]]).collect();
    let t = compute_alignment(&tilted, &[]).unwrap();
    for p in &tilted {
        assert!(t.apply_point(*p)[2].abs() <= 1e-10);
    }

    // aligning already-aligned positions is the identity
    let moved: Vec<[f64; 3]> = tilted.iter().map(|p| t.apply_point(*p)).collect();
    let again = compute_alignment(&moved, &[]).unwrap();
    assert!((again.scale - 1.0).abs() <= 1e-8);
    for i in 0..3 {
        assert!(again.translation[i].abs() <= 1e-8);
        for j in 0..3 {
            let id = if i == j { 1.0 } else { 0.0 };
            assert!(
                (again.rotation[i][j] - id).abs() <= 1e-8,
                "{:?}",
                again.rotation
            );
        }
    }

    let far: Vec<[f64; 3]> = circle
        .iter()
        .map(|p| [p[0] * 12.5, p[1] * 12.5, 0.0])
        .collect();
    let near: Vec<[f64; 3]> = far.iter().map(|p| [p[0] * 0.9, p[1] * 0.9, 0.0]).collect();
    let t = compute_alignment(&far, &near).unwrap();
    assert!((t.scale - 1.0 / 9.0).abs() < 1e-12);
    for p in &near {
        let q = t.apply_point(*p);
        assert!((q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt() <= 1.0 + 1e-12);
    }
}

fn orbit_camera(w: usize) -> Camera {
    Camera::look_at(
        w,
        w,
        1.1 * w as f64,
        [0.5, -3.0, 1.4],
        [0.0; 3],
        [0.0, 0.0, 1.0],
    )
}

fn random_field(rng: &mut ChaCha8Rng, res: usize) -> RadianceField {
    let mut field = RadianceField::new(
        [res; 3],
        ContractionConfig::bounded(Aabb::centered_cube(1.0).unwrap()),
        1e-4,
    )
    .unwrap();
    for v in field.density.data_mut() {
        *v = rng.gen_range(-2.0..8.0);
    }
    for v in field.color.data_mut() {
        *v = rng.gen_range(-3.0..3.0);
    }
    field
}

#[test]
fn empty_field_renders_background() {
    let mut field = RadianceField::new(
        [8; 3],
        ContractionConfig::bounded(Aabb::centered_cube(1.0).unwrap()),
        1e-4,
    )
    .unwrap();
    field.density.data_mut().fill(-1e3);
    let cfg = RenderConfig {
        background: [0.2, 0.4, 0.6],
        ..RenderConfig::default()
    };
    let out = field.render_image(&orbit_camera(8), &cfg).unwrap();
    for p in 0..64 {
        let rgb = out.rgb.rgb(p);
        for k in 0..3 {
            assert!((rgb[k] - cfg.background[k]).abs() < 1e-6);
        }
    }
}

#[test]
fn doubled_resolution_agrees_at_shared_pixels() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let field = random_field(&mut rng, 10);
    let cfg = RenderConfig::default();
    let cam = orbit_camera(12);
    let big = cam.scaled(2);
    let a = field.render_image(&cam, &cfg).unwrap();
    let b = field.render_image(&big, &cfg).unwrap();
    assert_eq!(b.rgb.data.len(), 4 * a.rgb.data.len());
    for j in 0..cam.height {
        for i in 0..cam.width {
            let (p, q) = (a.rgb.pixel(i, j), b.rgb.pixel(2 * i, 2 * j));
            for k in 0..3 {
                assert!((p[k] - q[k]).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn occupancy_mask_examples() {
    let field = RadianceField::new(
        [8; 3],
        ContractionConfig::bounded(Aabb::centered_cube(1.0).unwrap()),
        1e-4,
    )
    .unwrap();
    let mut mask = OccupancyMask::for_grid(&field.density);
    update_occupancy(&field.density, &mut mask, field.alpha_shift(), 1e-3);
    assert_eq!(mask.occupied_count(), 0);

    let mut dense = field.density.clone();
    dense.set(3, 4, 5, 0, 50.0);
    let mut mask = OccupancyMask::for_grid(&dense);
    update_occupancy(&dense, &mut mask, field.alpha_shift(), 1e-3);
    let q = [3.0 / 7.0, 4.0 / 7.0, 5.0 / 7.0];
    assert!(!mask.is_free(q));
    assert!(mask.occupied_count() > 0 && mask.occupied_count() < 64);
}

#[test]
fn occupancy_mask_barely_changes_a_scene_render() {
    let scene =
        voxfield::datasets::gen_synthetic_scene(4, &voxfield::datasets::SceneSpec::default())
            .unwrap();
    let mut field = scene.field.clone();
    let mut mask = OccupancyMask::for_grid(&field.density);
    update_occupancy(&field.density, &mut mask, field.alpha_shift(), 1e-3);
    assert!(mask.free_fraction() > 0.3);
    field.occupancy = Some(mask);
    let on = RenderConfig::default();
    let off = RenderConfig {
        use_occupancy: false,
        ..on.clone()
    };
    for frame in scene.dataset.indices(voxfield::datasets::Split::Test) {
        let cam = scene.dataset.camera(frame);
        let a = field.render_image(&cam, &on).unwrap();
        let b = field.render_image(&cam, &off).unwrap();
        let worst = a
            .rgb
            .data
            .iter()
            .zip(&b.rgb.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-2, "frame {frame}: {worst}");
    }
}

#[test]
fn losses_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let batch = RaySampleBatch::random(&mut rng, 16, 1..=40);
    let rgb: Vec<[f64; 3]> = (0..16).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let perfect = compute_losses(&rgb, &rgb, &batch, 0.0).unwrap();
    assert_eq!(perfect.mse, 0.0);

    let l = compute_losses(&rgb, &rgb, &batch, 0.03).unwrap();
    let expect = 0.03 * distloss_oracle(&batch).unwrap() / 16.0;
    assert!((l.dist - expect).abs() <= 1e-6 * expect);

    // one-hot weights: only the self term survives
    let one_hot = RaySampleBatch::new(
        vec![0, 3],
        vec![0.1, 0.5, 0.8],
        vec![0.2, 0.3, 0.1],
        vec![0.0, 0.9, 0.0],
    )
    .unwrap();
    let l = compute_losses(&rgb[..1], &rgb[..1], &one_hot, 1.0).unwrap();
    assert!((l.dist - 0.81 * 0.3 / 3.0).abs() < 1e-15);
}

#[test]
fn psnr_examples() {
    let zero = Image::new(4, 3, 3);
    let tenth = Image::from_data(4, 3, 3, vec![0.1; 36]).unwrap();
    assert_eq!(psnr(&zero, &zero).unwrap(), 99.0);
    assert!((psnr(&zero, &tenth).unwrap() - 20.0).abs() < 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a: Vec<f64> = (0..300).map(|_| rng.gen()).collect();
    let b: Vec<f64> = (0..300).map(|_| rng.gen()).collect();
    let mut sq = 0.0;
    for i in 0..300 {
        sq += (a[i] - b[i]) * (a[i] - b[i]);
    }
    let expect = -10.0 * (sq / 300.0).log10();
    let got = psnr(
        &Image::from_data(10, 10, 3, a).unwrap(),
        &Image::from_data(10, 10, 3, b).unwrap(),
    )
    .unwrap();
    assert!((got - expect).abs() <= 1e-10);
}

#[test]
fn photometric_fit_improves_every_logged_step() {
    let spec = voxfield::datasets::SceneSpec {
        train_views: 8,
        test_views: 1,
        width: 32,
        height: 32,
        ..Default::default()
    };
    let scene = voxfield::datasets::gen_synthetic_scene(2, &spec).unwrap();
    let mut cfg = TrainConfig {
        iterations: 100,
        log_every: 10,
        ..TrainConfig::default()
    };
    cfg.loss.dist_weight = 0.0;
    cfg.loss.tv_weight_density = 0.0;
    cfg.loss.tv_weight_color = 0.0;
    // same learning-rate curve as the first 100 of 3000 default steps
    cfg.optim.lr_decay = 0.1f64.powf(100.0 / 3000.0);
    let report = train(&cfg, &scene.dataset, None).unwrap();
    let psnrs: Vec<f64> = report.rows.iter().map(|r| r.psnr).collect();
    assert!(psnrs.windows(2).all(|w| w[1] > w[0]), "{psnrs:?}");
}
