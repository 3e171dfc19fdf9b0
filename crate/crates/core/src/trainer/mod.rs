//! The optimization loop.
//!
//! Each step: zero gradients, render a random ray batch forward and
//! backward (photometric + distortion), add the TV gradient in place, take
//! an Adam step per grid. Upscales and occupancy updates happen at
//! scheduled steps.

mod config;

pub use config::{
    apply_overrides, GridSchedule, LossConfig, OccupancyConfig, OptimConfig, TrainConfig,
};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::contraction::{compute_alignment, CaptureMode};
use crate::datasets::{SceneDataset, Split};
use crate::distortion::{distloss_forward, RaySampleBatch};
use crate::error::{Error, Result};
use crate::grid::{tv_add_grad, ActiveSet, GradBuffer, TotalVariation};
use crate::image_io::{self, psnr_from_mse, Image};
use crate::optimizer::{adam_step, AdamConfig, AdamState};
use crate::rendering::{
    mean_weight_entropy, update_occupancy, OccupancyMask, RadianceField, Ray, RenderConfig,
};

pub const METRICS_HEADER: &str = "step,mse,dist,psnr,lr_mult";

/// Header of `timing.csv`; wall-clock time is kept apart so `metrics.csv`
/// is reproducible byte for byte.
pub const TIMING_HEADER: &str = "step,seconds";

/// Minimum total weight for a ray to count toward the weight entropy.
pub const ENTROPY_MIN_MASS: f64 = 0.5;

/// `decay^(step / total)`.
pub fn lr_schedule(step: usize, total: usize, decay: f64) -> f64 {
    decay.powf(step as f64 / total.max(1) as f64)
}

/// PSNR of two same-shaped images, capped at 99 dB.
pub fn psnr(img: &Image, reference: &Image) -> Result<f64> {
    Ok(psnr_from_mse(image_io::mse(img, reference)?))
}

/// Logged losses of one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Losses {
    /// `mse + dist`; TV only contributes gradients.
    pub total: f64,
    pub mse: f64,
    /// Weighted distortion term: `dist_weight ·` mean per-ray distortion.
    pub dist: f64,
}

/// Photometric and distortion terms for rendered colors, targets and the
/// composited samples of the same rays.
pub fn compute_losses(
    rgb: &[[f64; 3]],
    gt: &[[f64; 3]],
    batch: &RaySampleBatch,
    dist_weight: f64,
) -> Result<Losses> {
    if rgb.len() != gt.len() || batch.num_rays() != rgb.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} colors, {} targets, {} sampled rays",
            rgb.len(),
            gt.len(),
            batch.num_rays()
        )));
    }
    let n = rgb.len().max(1) as f64;
    let sq: f64 = rgb
        .iter()
        .zip(gt)
        .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>())
        .sum();
    let mse = sq / (3.0 * n);
    let dist = if dist_weight == 0.0 {
        0.0
    } else {
        dist_weight * distloss_forward(batch) / n
    };
    Ok(Losses {
        total: mse + dist,
        mse,
        dist,
    })
}

/// One metrics row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub mse: f64,
    pub dist: f64,
    pub psnr: f64,
    pub lr_mult: f64,
    /// Wall-clock seconds since training started; not part of [`LogRow::csv`].
    pub seconds: f64,
}

impl LogRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.step, self.mse, self.dist, self.psnr, self.lr_mult
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub rows: Vec<LogRow>,
    /// Mean PSNR over the test split.
    pub test_psnr: f64,
    /// Per-view test PSNR in test-split order.
    pub view_psnr: Vec<f64>,
    /// Mean weight entropy over foreground test rays.
    pub weight_entropy: f64,
    /// Density TV pairs evaluated at each step.
    pub tv_pairs: Vec<usize>,
    pub checkpoint: Checkpoint,
    pub metrics_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
}

/// Rays and target colors for every pixel of the given frames.
pub fn dataset_rays(
    ds: &SceneDataset,
    frames: &[usize],
    cfg: &RenderConfig,
) -> (Vec<Ray>, Vec<[f64; 3]>) {
    let mut rays = Vec::new();
    let mut targets = Vec::new();
    for &f in frames {
        let cam = ds.camera(f);
        let img = &ds.frames[f].image;
        for j in 0..ds.height {
            for i in 0..ds.width {
                rays.push(cam.pixel_ray(i, j, cfg.near, cfg.far));
                targets.push(img.rgb(j * ds.width + i));
            }
        }
    }
    (rays, targets)
}

fn rays_mse(field: &RadianceField, rays: &[Ray], targets: &[[f64; 3]], cfg: &RenderConfig) -> f64 {
    let out = field.render_rays(rays, cfg);
    let sq: f64 = out
        .iter()
        .zip(targets)
        .map(|(o, t)| (0..3).map(|k| (o.rgb[k] - t[k]).powi(2)).sum::<f64>())
        .sum();
    sq / (3.0 * rays.len().max(1) as f64)
}

/// Per-view PSNR over the test split.
pub fn evaluate(
    field: &RadianceField,
    ds: &SceneDataset,
    cfg: &RenderConfig,
) -> Vec<(String, f64)> {
    ds.indices(Split::Test)
        .into_iter()
        .map(|f| {
            let (rays, targets) = dataset_rays(ds, &[f], cfg);
            (
                ds.frames[f].name.clone(),
                psnr_from_mse(rays_mse(field, &rays, &targets, cfg)),
            )
        })
        .collect()
}

/// Render settings used during training for `config`.
pub fn render_config(config: &TrainConfig) -> RenderConfig {
    RenderConfig {
        use_occupancy: config.occupancy.enabled,
        ..config.render.clone()
    }
}

/// Builds the initial field for `config` and `dataset`.
pub fn initial_field(config: &TrainConfig, dataset: &SceneDataset) -> Result<RadianceField> {
    let mut contraction = config.contraction.clone();
    if contraction.mode == CaptureMode::Bounded && config.grid.fit_dataset_aabb {
        if let Some(aabb) = dataset.aabb {
            contraction.aabb = aabb;
        }
    }
    if config.grid.align_from_cameras && contraction.mode != CaptureMode::Bounded {
        let train = dataset.indices(Split::Train);
        let centers: Vec<[f64; 3]> = train.iter().map(|&f| dataset.camera(f).origin()).collect();
        let near: Vec<[f64; 3]> = train
            .iter()
            .map(|&f| {
                let cam = dataset.camera(f);
                let (o, d) = (cam.origin(), cam.forward());
                [
                    o[0] + config.render.near * d[0],
                    o[1] + config.render.near * d[1],
                    o[2] + config.render.near * d[2],
                ]
            })
            .collect();
        contraction.align = compute_alignment(&centers, &near)?;
    }
    let r = config.grid.resolution_after(0);
    let mut field = RadianceField::new([r; 3], contraction, config.alpha_init)?;
    if config.occupancy.enabled {
        field.occupancy = Some(OccupancyMask::for_grid(&field.density));
    }
    Ok(field)
}

fn adam_config(config: &TrainConfig, lr: f64) -> AdamConfig {
    AdamConfig {
        lr,
        beta1: config.optim.beta1,
        beta2: config.optim.beta2,
        eps: config.optim.eps,
    }
}

fn diverged(step: usize, term: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFiniteGradient { value, .. } => Error::Diverged { step, term, value },
        other => other,
    }
}

/// Trains a field on `dataset`. With `out_dir`, writes `metrics.csv`,
/// `timing.csv`, `config.toml`, periodic checkpoints and `final.vxck` there.
pub fn train(
    config: &TrainConfig,
    dataset: &SceneDataset,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    config.validate()?;
    dataset.validate()?;
    let train_frames = dataset.indices(Split::Train);
    let test_frames = dataset.indices(Split::Test);
    if train_frames.len() < 2 {
        return Err(Error::Dataset(format!(
            "training needs >= 2 train views, got {}",
            train_frames.len()
        )));
    }
    let eval_frame = *test_frames.get(config.eval_view).ok_or_else(|| {
        Error::Config(format!(
            "eval_view {} but only {} test views",
            config.eval_view,
            test_frames.len()
        ))
    })?;

    let cfg = render_config(config);
    let mut field = initial_field(config, dataset)?;
    let (rays, targets) = dataset_rays(dataset, &train_frames, &cfg);
    let (eval_rays, eval_targets) = dataset_rays(dataset, &[eval_frame], &cfg);

    let mut metrics = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let cfg_path = dir.join("config.toml");
            fs::write(&cfg_path, config.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
            let open = |name: &str, header: &str| -> Result<(PathBuf, fs::File)> {
                let path = dir.join(name);
                let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                writeln!(f, "{header}").map_err(|e| Error::io(&path, e))?;
                Ok((path, f))
            };
            Some((
                open("metrics.csv", METRICS_HEADER)?,
                open("timing.csv", TIMING_HEADER)?,
            ))
        }
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let new_states = |field: &RadianceField| {
        (
            AdamState::new(
                field.density.data().len(),
                adam_config(config, config.optim.lr_density),
            ),
            AdamState::new(
                field.color.data().len(),
                adam_config(config, config.optim.lr_color),
            ),
        )
    };
    let (mut adam_d, mut adam_c) = new_states(&field);
    let mut grad_d = GradBuffer::for_grid(&field.density);
    let mut grad_c = GradBuffer::for_grid(&field.color);
    let tv_d = TotalVariation {
        weight: config.loss.tv_weight_density,
        huber_delta: config.loss.huber_delta,
    };
    let tv_c = TotalVariation {
        weight: config.loss.tv_weight_color,
        huber_delta: config.loss.huber_delta,
    };

    let mut batch_rays = Vec::with_capacity(config.batch_rays);
    let mut batch_targets = Vec::with_capacity(config.batch_rays);
    let mut rows = Vec::new();
    let mut tv_pairs = Vec::with_capacity(config.iterations);
    let mut upscales = 0;
    let start = Instant::now();

    for step in 0..config.iterations {
        if config.grid.upscale_steps.get(upscales) == Some(&step) {
            upscales += 1;
            let r = config.grid.resolution_after(upscales);
            let mut res = [r; 3];
            if field.contraction.mode == CaptureMode::ForwardFacing {
                res[2] = field.resolution()[2];
            }
            field.upscale(res)?;
            (adam_d, adam_c) = new_states(&field);
            grad_d = GradBuffer::for_grid(&field.density);
            grad_c = GradBuffer::for_grid(&field.color);
        }

        batch_rays.clear();
        batch_targets.clear();
        for _ in 0..config.batch_rays {
            let k = rng.gen_range(0..rays.len());
            batch_rays.push(rays[k]);
            batch_targets.push(targets[k]);
        }

        grad_d.zero();
        grad_c.zero();
        let loss = field.forward_backward(
            &batch_rays,
            &batch_targets,
            &cfg,
            config.loss.dist_weight,
            &mut grad_d,
            &mut grad_c,
        )?;
        if !loss.mse.is_finite() {
            return Err(Error::Diverged {
                step,
                term: "mse",
                value: loss.mse,
            });
        }
        if !loss.dist.is_finite() {
            return Err(Error::Diverged {
                step,
                term: "dist",
                value: loss.dist,
            });
        }

        let dense = step < config.loss.tv_dense_until;
        let active_d = if dense {
            ActiveSet::empty(field.resolution())
        } else {
            ActiveSet::from_grad(&grad_d)
        };
        let active_c = if dense {
            ActiveSet::empty(field.resolution())
        } else {
            ActiveSet::from_grad(&grad_c)
        };
        let stats = tv_add_grad(&field.density, &mut grad_d, &tv_d, dense, &active_d)?;
        tv_add_grad(&field.color, &mut grad_c, &tv_c, dense, &active_c)?;
        tv_pairs.push(stats.pairs_evaluated);

        let lr_mult = lr_schedule(step, config.iterations, config.optim.lr_decay);
        adam_step(
            field.density.data_mut(),
            grad_d.data(),
            &mut adam_d,
            lr_mult,
        )
        .map_err(diverged(step, "density gradient"))?;
        adam_step(field.color.data_mut(), grad_c.data(), &mut adam_c, lr_mult)
            .map_err(diverged(step, "color gradient"))?;

        if config.occupancy.enabled && (step + 1) % config.occupancy.every == 0 {
            let shift = field.alpha_shift();
            if let Some(mut mask) = field.occupancy.take() {
                update_occupancy(&field.density, &mut mask, shift, config.occupancy.threshold);
                field.occupancy = Some(mask);
            }
        }

        let last = step + 1 == config.iterations;
        if step % config.log_every.max(1) == 0 || last {
            let eval_mse = rays_mse(&field, &eval_rays, &eval_targets, &cfg);
            let row = LogRow {
                step,
                mse: loss.mse,
                dist: config.loss.dist_weight * loss.dist,
                psnr: psnr_from_mse(eval_mse),
                lr_mult,
                seconds: start.elapsed().as_secs_f64(),
            };
            if let Some(((mpath, m), (tpath, t))) = metrics.as_mut() {
                writeln!(m, "{}", row.csv())
                    .and_then(|_| m.flush())
                    .map_err(|e| Error::io(mpath.as_path(), e))?;
                writeln!(t, "{},{:.3}", row.step, row.seconds)
                    .map_err(|e| Error::io(tpath.as_path(), e))?;
            }
            rows.push(row);
        }
        if let (Some(dir), true) = (
            out_dir,
            config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 && !last,
        ) {
            let ck = Checkpoint {
                step: step as u64 + 1,
                field: field.clone(),
                optimizer: Some((adam_d.clone(), adam_c.clone())),
            };
            ck.save(&dir.join(format!("step_{:06}.vxck", step + 1)))?;
        }
    }

    let checkpoint = Checkpoint {
        step: config.iterations as u64,
        field,
        optimizer: Some((adam_d, adam_c)),
    };
    let checkpoint_path = match out_dir {
        Some(dir) => {
            let p = dir.join("final.vxck");
            checkpoint.save(&p)?;
            Some(p)
        }
        None => None,
    };

    let views = evaluate(&checkpoint.field, dataset, &cfg);
    let view_psnr: Vec<f64> = views.iter().map(|v| v.1).collect();
    let test_psnr = view_psnr.iter().sum::<f64>() / view_psnr.len() as f64;
    let (test_rays, _) = dataset_rays(dataset, &test_frames, &cfg);
    let (_, batch) = checkpoint.field.trace_batch(&test_rays, &cfg)?;
    let weight_entropy = mean_weight_entropy(&batch, ENTROPY_MIN_MASS);

    Ok(TrainReport {
        rows,
        test_psnr,
        view_psnr,
        weight_entropy,
        tv_pairs,
        checkpoint,
        metrics_path: metrics.map(|m| m.0 .0),
        checkpoint_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_closed_forms() {
        assert_eq!(lr_schedule(0, 100, 0.1), 1.0);
        assert!((lr_schedule(100, 100, 0.1) - 0.1).abs() < 1e-15);
        assert!((lr_schedule(50, 100, 0.1) - 0.1f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn psnr_closed_forms() {
        let a = Image::new(4, 4, 3);
        let mut b = a.clone();
        assert_eq!(psnr(&a, &b).unwrap(), 99.0);
        b.data.fill(0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }
}
