use std::fs;

use voxfield::camera::Camera;
use voxfield::contraction::ContractionConfig;
use voxfield::datasets::{
    gen_synthetic_scene, load_dataset, load_poses, reference_render, write_dataset,
    ReferenceSettings, SceneSpec, Split,
};
use voxfield::grid::Aabb;
use voxfield::rendering::{sigmoid, RadianceField, RenderConfig};

fn small_spec() -> SceneSpec {
    SceneSpec {
        train_views: 5,
        test_views: 2,
        width: 16,
        height: 12,
        resolution: 16,
        ..SceneSpec::default()
    }
}

#[test]
fn write_then_load_round_trips() {
    let scene = gen_synthetic_scene(11, &small_spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &scene.dataset).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back, scene.dataset);

    let (angle, poses) = load_poses(&dir.path().join("transforms.json")).unwrap();
    assert_eq!(angle, scene.dataset.camera_angle_x);
    assert_eq!(poses.len(), 7);
}

#[test]
fn split_files_and_holdout_fallback() {
    let scene = gen_synthetic_scene(
        12,
        &SceneSpec {
            train_views: 9,
            test_views: 1,
            ..small_spec()
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &scene.dataset).unwrap();
    let manifest = dir.path().join("transforms.json");
    let mut json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();

    // no split keys: every 8th frame is held out
    for f in json["frames"].as_array_mut().unwrap() {
        f.as_object_mut().unwrap().remove("split");
    }
    fs::write(&manifest, json.to_string()).unwrap();
    let ds = load_dataset(dir.path()).unwrap();
    assert_eq!(ds.indices(Split::Test), vec![0, 8]);

    // separate train/test manifests
    let frames = json["frames"].as_array().unwrap().clone();
    let mut train = json.clone();
    train["frames"] = serde_json::Value::Array(frames[..7].to_vec());
    let mut test = json.clone();
    test["frames"] = serde_json::Value::Array(frames[7..].to_vec());
    fs::remove_file(&manifest).unwrap();
    fs::write(dir.path().join("transforms_train.json"), train.to_string()).unwrap();
    fs::write(dir.path().join("transforms_test.json"), test.to_string()).unwrap();
    let ds = load_dataset(dir.path()).unwrap();
    assert_eq!(ds.indices(Split::Test), vec![7, 8, 9]);
}

#[test]
fn non_rigid_pose_is_rejected_by_name() {
    let scene = gen_synthetic_scene(13, &small_spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &scene.dataset).unwrap();
    let manifest = dir.path().join("transforms.json");
    let mut json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    json["frames"][2]["transform_matrix"][0][0] = serde_json::json!(1.7);
    fs::write(&manifest, json.to_string()).unwrap();
    let err = load_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("train/r_002"), "{err}");
}

#[test]
fn scenes_are_deterministic_per_seed() {
    let a = gen_synthetic_scene(21, &small_spec()).unwrap();
    let b = gen_synthetic_scene(21, &small_spec()).unwrap();
    let c = gen_synthetic_scene(22, &small_spec()).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.boxes, c.boxes);
}

#[test]
fn empty_scene_shows_background() {
    let spec = SceneSpec {
        num_boxes: 0,
        background: [0.2, 0.6, 1.0],
        ..small_spec()
    };
    let scene = gen_synthetic_scene(5, &spec).unwrap();
    for f in &scene.dataset.frames {
        for p in 0..f.image.width * f.image.height {
            let rgb = f.image.rgb(p);
            for k in 0..3 {
                assert!((rgb[k] - spec.background[k]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
}

/// Different quadratures of the same field; compared as a per-channel mean
/// because silhouette pixels of steep density edges differ by more.
#[test]
fn fast_and_reference_renderers_agree() {
    for spec in [
        SceneSpec::default(),
        SceneSpec {
            width: 32,
            height: 32,
            ..SceneSpec::unbounded()
        },
    ] {
        let scene = gen_synthetic_scene(3, &spec).unwrap();
        let cfg = RenderConfig {
            background: spec.background,
            ..RenderConfig::default()
        };
        for frame in scene.dataset.indices(Split::Test) {
            let cam = scene.dataset.camera(frame);
            let fast = scene.field.render_image(&cam, &cfg).unwrap();
            let reference = reference_render(
                &scene.field,
                &cam,
                &ReferenceSettings {
                    background: spec.background,
                    ..Default::default()
                },
            )
            .unwrap();
            let n = (cam.width * cam.height) as f64;
            for k in 0..3 {
                let mean: f64 = (0..cam.width * cam.height)
                    .map(|p| (fast.rgb.rgb(p)[k] - reference.rgb(p)[k]).abs())
                    .sum::<f64>()
                    / n;
                assert!(
                    mean <= 5e-3,
                    "{:?} frame {frame} channel {k}: {mean}",
                    spec.mode
                );
            }
        }
    }
}

fn blob_field(color: [f64; 3]) -> RadianceField {
    let mut field = RadianceField::new(
        [5; 3],
        ContractionConfig::bounded(Aabb::centered_cube(1.0).unwrap()),
        1e-4,
    )
    .unwrap();
    field.density.data_mut().fill(-30.0);
    field.density.set(2, 2, 2, 0, 80.0);
    for x in 0..5 {
        for y in 0..5 {
            for z in 0..5 {
                for k in 0..3 {
                    field
                        .color
                        .set(x, y, z, k, (color[k] / (1.0 - color[k])).ln());
                }
            }
        }
    }
    field
}

#[test]
fn reference_renderer_examples() {
    let cam = Camera::look_at(16, 16, 20.0, [0.0, -3.0, 0.0], [0.0; 3], [0.0, 0.0, 1.0]);
    let settings = ReferenceSettings {
        background: [1.0, 1.0, 1.0],
        ..Default::default()
    };

    let empty = RadianceField::new(
        [5; 3],
        ContractionConfig::bounded(Aabb::centered_cube(1.0).unwrap()),
        1e-4,
    )
    .unwrap();
    let mut empty = empty;
    empty.density.data_mut().fill(-1e3);
    let img = reference_render(&empty, &cam, &settings).unwrap();
    assert!(img.data.iter().all(|&v| (v - 1.0).abs() < 1e-9));

    let color = [0.8, 0.3, 0.1];
    let img = reference_render(&blob_field(color), &cam, &settings).unwrap();
    let center = img.pixel(8, 8);
    for k in 0..3 {
        assert!((center[k] - color[k]).abs() <= 0.05, "{center:?}");
    }
    let corner = img.pixel(0, 0);
    assert!(corner.iter().all(|&v| (v - 1.0).abs() < 1e-6));

    // halving the activated colors halves opaque pixels on a black background
    let black = ReferenceSettings {
        background: [0.0; 3],
        ..Default::default()
    };
    let full = blob_field(color);
    let mut half = full.clone();
    for v in half.color.data_mut() {
        let c = 0.5 * sigmoid(*v);
        *v = (c / (1.0 - c)).ln();
    }
    let a = reference_render(&full, &cam, &black).unwrap();
    let b = reference_render(&half, &cam, &black).unwrap();
    for p in 0..256 {
        let (x, y) = (a.rgb(p), b.rgb(p));
        for k in 0..3 {
            assert!((y[k] - 0.5 * x[k]).abs() <= 1e-9);
        }
    }
}
