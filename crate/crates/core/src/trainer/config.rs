//! Training configuration and dotted-path overrides.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::contraction::ContractionConfig;
use crate::error::{Error, Result};
use crate::rendering::RenderConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSchedule {
    /// Nodes per axis at step 0.
    pub initial_resolution: usize,
    /// Steps at which every axis is upscaled.
    pub upscale_steps: Vec<usize>,
    /// Nodes per axis after the last upscale.
    pub final_resolution: usize,
    /// Use the dataset's scene box (when it has one) for bounded scenes.
    pub fit_dataset_aabb: bool,
    /// Derive `contraction.align` from the training cameras.
    pub align_from_cameras: bool,
}

impl Default for GridSchedule {
    fn default() -> Self {
        Self {
            initial_resolution: 16,
            upscale_steps: vec![750, 1500],
            final_resolution: 64,
            fit_dataset_aabb: true,
            align_from_cameras: false,
        }
    }
}

impl GridSchedule {
    /// Resolution after `k` upscales: geometric interpolation between the
    /// initial and final resolutions.
    pub fn resolution_after(&self, k: usize) -> usize {
        let n = self.upscale_steps.len();
        if n == 0 || k == 0 {
            return if n == 0 {
                self.final_resolution
            } else {
                self.initial_resolution
            };
        }
        if k >= n {
            return self.final_resolution;
        }
        let r = self.final_resolution as f64 / self.initial_resolution as f64;
        (self.initial_resolution as f64 * r.powf(k as f64 / n as f64)).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr_density: f64,
    pub lr_color: f64,
    /// Learning-rate multiplier reached at the last step.
    pub lr_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_density: 0.1,
            lr_color: 0.1,
            lr_decay: 0.1,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub tv_weight_density: f64,
    pub tv_weight_color: f64,
    pub huber_delta: f64,
    pub dist_weight: f64,
    /// TV runs over the whole grid before this step and over touched nodes after.
    pub tv_dense_until: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tv_weight_density: 1e-5,
            tv_weight_color: 1e-6,
            huber_delta: 1.0,
            dist_weight: 1e-2,
            tv_dense_until: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OccupancyConfig {
    pub enabled: bool,
    /// Steps between mask updates.
    pub every: usize,
    /// Cells whose alpha stays below this everywhere are skipped.
    pub threshold: f64,
}

impl Default for OccupancyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            every: 1000,
            threshold: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Dataset directory for command-line runs, relative to the config file.
    pub dataset: String,
    pub seed: u64,
    pub iterations: usize,
    pub batch_rays: usize,
    pub alpha_init: f64,
    /// Steps between metrics rows (the last step is always logged).
    pub log_every: usize,
    /// Steps between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Test-split view rendered for the logged PSNR.
    pub eval_view: usize,
    pub grid: GridSchedule,
    pub optim: OptimConfig,
    pub loss: LossConfig,
    pub occupancy: OccupancyConfig,
    pub render: RenderConfig,
    pub contraction: ContractionConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: String::new(),
            seed: 0,
            iterations: 3000,
            batch_rays: 4096,
            alpha_init: 1e-4,
            log_every: 100,
            checkpoint_every: 0,
            eval_view: 0,
            grid: GridSchedule::default(),
            optim: OptimConfig::default(),
            loss: LossConfig::default(),
            occupancy: OccupancyConfig::default(),
            render: RenderConfig::default(),
            contraction: ContractionConfig::bounded(crate::grid::Aabb {
                min: [-1.0; 3],
                max: [1.0; 3],
            }),
        }
    }
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} must be finite and >= 0, got {v}"
        )))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_rays == 0 {
            return Err(Error::Config(
                "iterations and batch_rays must be positive".into(),
            ));
        }
        if !(self.alpha_init > 0.0 && self.alpha_init < 1.0) {
            return Err(Error::Config(format!(
                "alpha_init must be in (0, 1), got {}",
                self.alpha_init
            )));
        }
        let g = &self.grid;
        if g.initial_resolution < 2 || g.final_resolution < g.initial_resolution {
            return Err(Error::Config(
                "grid resolutions must satisfy 2 <= initial <= final".into(),
            ));
        }
        if g.upscale_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "grid.upscale_steps must be strictly increasing".into(),
            ));
        }
        if g.upscale_steps.first() == Some(&0) {
            return Err(Error::Config("grid.upscale_steps must be > 0".into()));
        }
        if g.upscale_steps.is_empty() && g.final_resolution != g.initial_resolution {
            return Err(Error::Config(
                "final_resolution differs from initial_resolution but no upscale steps are given"
                    .into(),
            ));
        }
        let o = &self.optim;
        for (n, v) in [
            ("optim.lr_density", o.lr_density),
            ("optim.lr_color", o.lr_color),
            ("optim.eps", o.eps),
        ] {
            nonneg(n, v)?;
        }
        if !(o.lr_decay > 0.0 && o.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "optim.lr_decay must be in (0, 1], got {}",
                o.lr_decay
            )));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::Config(
                "optim.beta1 and optim.beta2 must be in [0, 1)".into(),
            ));
        }
        let l = &self.loss;
        for (n, v) in [
            ("loss.tv_weight_density", l.tv_weight_density),
            ("loss.tv_weight_color", l.tv_weight_color),
            ("loss.dist_weight", l.dist_weight),
        ] {
            nonneg(n, v)?;
        }
        if !(l.huber_delta > 0.0) {
            return Err(Error::Config("loss.huber_delta must be > 0".into()));
        }
        if self.occupancy.enabled && self.occupancy.every == 0 {
            return Err(Error::Config("occupancy.every must be positive".into()));
        }
        nonneg("occupancy.threshold", self.occupancy.threshold)?;
        let r = &self.render;
        if !(r.step_size > 0.0) || !(r.near > 0.0 && r.near < r.far) {
            return Err(Error::Config(
                "render needs step_size > 0 and 0 < near < far".into(),
            ));
        }
        self.contraction.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn parse_value(text: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {text}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

/// Applies `key.path=value` overrides to `base`. Every key must already
/// exist in the serialized form of `base`; values are parsed as TOML
/// literals, falling back to plain strings.
pub fn apply_overrides<T: Serialize + DeserializeOwned>(
    base: &T,
    overrides: &[String],
) -> Result<T> {
    let mut root = toml::Value::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
    for ov in overrides {
        let (key, value) = ov
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{ov}' is not key=value")))?;
        let mut node = &mut root;
        for part in key.trim().split('.') {
            node = node
                .as_table_mut()
                .and_then(|t| t.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown config key '{}'", key.trim())))?;
        }
        let mut v = parse_value(value.trim());
        if let (toml::Value::Float(_), toml::Value::Integer(i)) = (&*node, &v) {
            v = toml::Value::Float(*i as f64);
        }
        *node = v;
    }
    root.try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}
