//! `voxfield` command-line front end.
//!
//! ```text
//! voxfield <verb> [--config PATH] [--set key=value ...] [--out DIR] [--seed N] [--threads N]
//! ```
//!
//! Verbs: `train`, `render`, `eval` (config required), `bench`, `selftest`,
//! `gen-scene` (config optional). Exit codes: 0 success, 1 runtime failure,
//! 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::checkpoint::{save_grid, Checkpoint};
use crate::datasets::{
    focal_from_angle, gen_synthetic_scene, load_dataset, load_poses, write_dataset, SceneSpec,
};
use crate::distortion::{distloss_forward, distloss_oracle_with_limit, RaySampleBatch};
use crate::error::{Error, Result};
use crate::image_io::{write_png, write_vxim};
use crate::rendering::RenderConfig;
use crate::trainer::{apply_overrides, evaluate, train, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Verb {
    Train,
    Render,
    Eval,
    Bench,
    Selftest,
    GenScene,
}

#[derive(Debug, Parser)]
#[command(
    name = "voxfield",
    version,
    about = "Dense voxel radiance field trainer"
)]
pub struct Command {
    #[arg(value_enum)]
    pub verb: Verb,
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set loss.dist_weight=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores); falls back to VOXFIELD_THREADS.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderJob {
    /// Checkpoint file.
    pub checkpoint: String,
    /// Manifest with `camera_angle_x` and `frames[].transform_matrix`.
    pub poses: String,
    pub width: usize,
    pub height: usize,
    pub render: RenderConfig,
}

impl Default for RenderJob {
    fn default() -> Self {
        Self {
            checkpoint: String::new(),
            poses: String::new(),
            width: 64,
            height: 64,
            render: RenderConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalJob {
    pub checkpoint: String,
    pub dataset: String,
    pub render: RenderConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchJob {
    pub rays: usize,
    /// Sample counts double from `min_n` up to `max_n`.
    pub min_n: usize,
    pub max_n: usize,
    /// Timing is the minimum over this many repeats.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchJob {
    fn default() -> Self {
        Self {
            rays: 4096,
            min_n: 128,
            max_n: 1024,
            repeats: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenJob {
    pub seed: u64,
    pub scene: SceneSpec,
}

/// One row of the distortion-loss benchmark.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub t_fast: f64,
    pub t_oracle: f64,
}

/// Bytes written between fast-path timings so every batch size starts from
/// memory rather than from a partly warm last-level cache.
const EVICT_BYTES: usize = 512 << 20;

/// Times the linear forward and the quadratic oracle on `job.rays` rays with
/// exactly `n` samples each, for `n = min_n, 2·min_n, …, max_n`. Each time is
/// the minimum over `job.repeats` rounds; every round visits all sizes so
/// background load hits them alike. The linear path is timed cold.
pub fn bench_distortion(job: &BenchJob) -> Result<Vec<BenchRow>> {
    if job.rays == 0 || job.min_n == 0 || job.max_n < job.min_n || job.repeats == 0 {
        return Err(Error::Config(
            "bench needs rays, min_n, repeats > 0 and max_n >= min_n".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    let mut batches = Vec::new();
    let mut n = job.min_n;
    while n <= job.max_n {
        batches.push((n, RaySampleBatch::random(&mut rng, job.rays, n..=n)));
        n *= 2;
    }
    let mut scratch = vec![0u8; EVICT_BYTES];
    let mut rows: Vec<BenchRow> = batches
        .iter()
        .map(|&(n, _)| BenchRow {
            n,
            t_fast: f64::INFINITY,
            t_oracle: f64::INFINITY,
        })
        .collect();
    for r in 0..job.repeats {
        for ((_, batch), row) in batches.iter().zip(&mut rows) {
            scratch
                .iter_mut()
                .step_by(64)
                .for_each(|b| *b = b.wrapping_add(r as u8 + 1));
            std::hint::black_box(&scratch);
            let t = Instant::now();
            std::hint::black_box(distloss_forward(batch));
            row.t_fast = row.t_fast.min(t.elapsed().as_secs_f64());

            let t = Instant::now();
            std::hint::black_box(distloss_oracle_with_limit(batch, usize::MAX)?);
            row.t_oracle = row.t_oracle.min(t.elapsed().as_secs_f64());
        }
    }
    Ok(rows)
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load_job<T: Serialize + DeserializeOwned + Default>(
    cmd: &Command,
    required: bool,
) -> std::result::Result<T, Failure> {
    let base: T = match &cmd.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| Failure::Runtime(Error::io(path, e)))?;
            toml::from_str(&text)
                .map_err(|e| Failure::Runtime(Error::Config(format!("{}: {e}", path.display()))))?
        }
        None if required => {
            return Err(Failure::Usage(format!(
                "{:?} needs --config PATH",
                cmd.verb
            )))
        }
        None => T::default(),
    };
    apply_overrides(&base, &cmd.overrides).map_err(|e| Failure::Usage(e.to_string()))
}

/// Resolves `p` against the config file's directory.
fn resolve(cmd: &Command, p: &str) -> PathBuf {
    let path = Path::new(p);
    match (&cmd.config, path.is_relative()) {
        (Some(cfg), true) => cfg.parent().unwrap_or(Path::new(".")).join(path),
        _ => path.to_path_buf(),
    }
}

fn require(field: &str, value: &str) -> std::result::Result<(), Failure> {
    if value.is_empty() {
        Err(Failure::Usage(format!("config key '{field}' must be set")))
    } else {
        Ok(())
    }
}

fn configure_threads(cmd: &Command) -> std::result::Result<(), Failure> {
    let threads =
        match cmd.threads {
            Some(t) => Some(t),
            None => match std::env::var("VOXFIELD_THREADS") {
                Ok(v) => Some(v.trim().parse().map_err(|_| {
                    Failure::Usage(format!("VOXFIELD_THREADS='{v}' is not a number"))
                })?),
                Err(_) => None,
            },
        };
    if let Some(t) = threads {
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    Ok(())
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn execute(cmd: &Command) -> std::result::Result<(), Failure> {
    configure_threads(cmd)?;
    match cmd.verb {
        Verb::Train => {
            let mut cfg: TrainConfig = load_job(cmd, true)?;
            if let Some(s) = cmd.seed {
                cfg.seed = s;
            }
            require("dataset", &cfg.dataset)?;
            let ds = load_dataset(&resolve(cmd, &cfg.dataset))?;
            let report = train(&cfg, &ds, Some(&cmd.out))?;
            println!(
                "trained {} steps: test PSNR {:.2} dB, weight entropy {:.4}; wrote {}",
                cfg.iterations,
                report.test_psnr,
                report.weight_entropy,
                cmd.out.display()
            );
        }
        Verb::Render => {
            let job: RenderJob = load_job(cmd, true)?;
            require("checkpoint", &job.checkpoint)?;
            require("poses", &job.poses)?;
            let ck = Checkpoint::load(&resolve(cmd, &job.checkpoint))?;
            let (angle, poses) = load_poses(&resolve(cmd, &job.poses))?;
            mkdir(&cmd.out)?;
            let focal = focal_from_angle(job.width, angle);
            for (k, (_, c2w)) in poses.iter().enumerate() {
                let cam = Camera::new(job.width, job.height, focal, *c2w);
                let out = ck.field.render_image(&cam, &job.render)?;
                write_png(&cmd.out.join(format!("view_{k:03}.png")), &out.rgb)?;
                write_vxim(&cmd.out.join(format!("view_{k:03}_depth.vxim")), &out.depth)?;
                write_vxim(
                    &cmd.out.join(format!("view_{k:03}_trans.vxim")),
                    &out.transmittance,
                )?;
            }
            println!("rendered {} views to {}", poses.len(), cmd.out.display());
        }
        Verb::Eval => {
            let job: EvalJob = load_job(cmd, true)?;
            require("checkpoint", &job.checkpoint)?;
            require("dataset", &job.dataset)?;
            let ck = Checkpoint::load(&resolve(cmd, &job.checkpoint))?;
            let ds = load_dataset(&resolve(cmd, &job.dataset))?;
            let views = evaluate(&ck.field, &ds, &job.render);
            let mut csv = String::from("view,psnr\n");
            for (name, p) in &views {
                csv.push_str(&format!("{name},{p}\n"));
            }
            let mean = views.iter().map(|v| v.1).sum::<f64>() / views.len().max(1) as f64;
            csv.push_str(&format!("mean,{mean}\n"));
            mkdir(&cmd.out)?;
            write_text(&cmd.out.join("eval.csv"), &csv)?;
            print!("{csv}");
        }
        Verb::Bench => {
            let mut job: BenchJob = load_job(cmd, false)?;
            if let Some(s) = cmd.seed {
                job.seed = s;
            }
            let rows = bench_distortion(&job)?;
            let mut csv = String::from("n,t_fast,t_oracle\n");
            for r in &rows {
                csv.push_str(&format!("{},{:.6e},{:.6e}\n", r.n, r.t_fast, r.t_oracle));
            }
            mkdir(&cmd.out)?;
            write_text(&cmd.out.join("bench.csv"), &csv)?;
            print!("{csv}");
        }
        Verb::Selftest => {
            let results = crate::selftest::run_all();
            let mut failed = false;
            for r in &results {
                println!("{r}");
                failed |= !r.passed();
            }
            if failed {
                return Err(Failure::Runtime(Error::InvalidArgument(
                    "selftest failed".into(),
                )));
            }
        }
        Verb::GenScene => {
            let mut job: GenJob = load_job(cmd, false)?;
            if let Some(s) = cmd.seed {
                job.seed = s;
            }
            let scene = gen_synthetic_scene(job.seed, &job.scene)?;
            mkdir(&cmd.out)?;
            write_dataset(&cmd.out, &scene.dataset)?;
            save_grid(&cmd.out.join("gt_density.vxg"), &scene.field.density)?;
            save_grid(&cmd.out.join("gt_color.vxg"), &scene.field.color)?;
            println!(
                "wrote {} frames to {}",
                scene.dataset.frames.len(),
                cmd.out.display()
            );
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cmd = match Command::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cmd) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}
