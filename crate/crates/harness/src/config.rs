//! Experiment configuration in a flat `key = value` text format.
//!
//! Lines are `key = value`; `#` starts a comment. `preset` (a comma list of
//! preset names, applied in order) is resolved first, then `world.kind`,
//! which resets the world and the latent sizes to that world's defaults.
//! Every other key then overrides one field. Lists are comma separated;
//! polygon vertices are `x y` pairs separated by `;`.
//!
//! [`ExperimentConfig::to_text`] writes every key, and parsing that text
//! gives back the same config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use kvae_core::kvae::ModelConfig;
use kvae_core::train::TrainConfig;
use kvae_worldgen::{WorldKind, WorldSpec};

use crate::error::{HarnessError, Result};
use crate::patterns::DropPattern;

pub const PRESETS: [&str; 5] = ["full", "desk", "smoke", "missing30", "missing40"];

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub probs: Vec<f64>,
    pub spans: Vec<usize>,
    /// Frames always observed at the start of each benchmark episode.
    pub prefix: usize,
    /// Test episodes scored; 0 means all.
    pub episodes: usize,
    pub sample_predictive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportConfig {
    pub episodes: Vec<usize>,
    /// Drop pattern applied before smoothing the exported episodes.
    pub drop: DropPattern,
    /// Points per side of the α grid.
    pub grid: usize,
    /// Fractional margin around the encodings' bounding box.
    pub grid_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: String,
    pub seed: u64,
    pub world: WorldSpec,
    /// Frame size and control count always follow `world`.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epochs: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Mask applied to every training episode.
    pub train_drop: DropPattern,
    /// Observed frames at the start of each training mask.
    pub train_prefix: usize,
    pub checkpoint_every: usize,
    pub eval: EvalConfig,
    pub export: ExportConfig,
    /// Where datasets live; empty means the command's output directory.
    pub data_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = ExperimentConfig {
            preset: "full".into(),
            seed: 0,
            world: WorldSpec::new(WorldKind::Box),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            epochs: 80,
            n_train: 5000,
            n_test: 1000,
            train_drop: DropPattern::None,
            train_prefix: 1,
            checkpoint_every: 10,
            eval: EvalConfig {
                probs: (1..=10).map(|i| i as f64 / 10.0).collect(),
                spans: (2..=12).collect(),
                prefix: 4,
                episodes: 0,
                sample_predictive: false,
            },
            export: ExportConfig { episodes: vec![0], drop: DropPattern::Random { p: 0.5 }, grid: 64, grid_margin: 0.1 },
            data_dir: PathBuf::new(),
        };
        cfg.sync_model();
        cfg
    }
}

/// Latent sizes per world: z has 5 dims under gravity, the polygon uses 7
/// mixture components and the pendulum 3 state dims with 2 components.
fn world_dims(kind: WorldKind) -> (usize, usize, usize) {
    match kind {
        WorldKind::Box | WorldKind::Pong => (2, 4, 3),
        WorldKind::Gravity => (2, 5, 3),
        WorldKind::Polygon => (2, 4, 7),
        WorldKind::Pendulum => (2, 3, 2),
    }
}

const KEYS: &[&str] = &[
    "preset",
    "seed",
    "world.kind",
    "world.height",
    "world.width",
    "world.steps",
    "world.radius",
    "world.speed_min",
    "world.speed_max",
    "world.gravity",
    "world.polygon",
    "world.paddle_width",
    "world.paddle_height",
    "world.paddle_max_speed",
    "world.pendulum_g_over_l",
    "world.pendulum_torque_gain",
    "world.pendulum_damping",
    "world.pendulum_dt",
    "world.pendulum_arm",
    "world.pendulum_torque_max",
    "model.a_dim",
    "model.z_dim",
    "model.k",
    "model.alpha",
    "model.lstm_hidden",
    "model.alpha_mlp_hidden",
    "model.fifo_window",
    "model.vae_hidden",
    "model.likelihood",
    "model.init_q",
    "model.init_r",
    "model.init_sigma0",
    "model.freeze_noise",
    "model.init_scale",
    "train.epochs",
    "train.lr",
    "train.decay_rate",
    "train.decay_every",
    "train.warmup_epochs",
    "train.recon_weight",
    "train.batch_size",
    "train.clip_norm",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.elbo_samples",
    "train.sample_predictive",
    "train.drop",
    "train.drop_prefix",
    "train.checkpoint_every",
    "data.n_train",
    "data.n_test",
    "data.dir",
    "eval.probs",
    "eval.spans",
    "eval.prefix",
    "eval.episodes",
    "eval.sample_predictive",
    "export.episodes",
    "export.drop",
    "export.grid",
    "export.grid_margin",
];

fn bad(key: &str, value: &str) -> HarnessError {
    HarnessError::Config(format!("bad value {value:?} for {key}"))
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|s| num(key, s.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn pair(key: &str, value: &str) -> Result<[f64; 2]> {
    let v: Vec<f64> = value.split_whitespace().map(|s| num(key, s)).collect::<Result<_>>()?;
    v.try_into().map_err(|_| bad(key, value))
}

impl ExperimentConfig {
    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", no + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if !KEYS.contains(&k.as_str()) {
                return Err(HarnessError::Config(format!("line {}: unknown key {k:?}", no + 1)));
            }
            if entries.iter().any(|(_, other, _)| *other == k) {
                return Err(HarnessError::Config(format!("line {}: {k} given twice", no + 1)));
            }
            entries.push((no, k, v));
        }
        let rank = |k: &str| match k {
            "preset" => 0,
            "world.kind" => 1,
            _ => 2,
        };
        entries.sort_by_key(|(no, k, _)| (rank(k), *no));
        let mut cfg = ExperimentConfig::default();
        for (_, k, v) in &entries {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
        Self::parse(&text)
    }

    /// Defaults with the named presets applied.
    pub fn preset(names: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.set("preset", names)?;
        Ok(cfg)
    }

    fn apply_preset(&mut self, name: &str) -> Result<()> {
        match name {
            "full" => {
                self.epochs = 80;
                self.n_train = 5000;
                self.n_test = 1000;
            }
            "desk" => {
                self.epochs = 20;
                self.n_train = 1000;
                self.n_test = 1000;
            }
            "smoke" => {
                self.epochs = 10;
                self.n_train = 500;
                self.n_test = 100;
            }
            "missing30" => self.train_drop = DropPattern::Random { p: 0.3 },
            "missing40" => self.train_drop = DropPattern::Random { p: 0.4 },
            other => {
                return Err(HarnessError::Config(format!("unknown preset {other:?}; known: {}", PRESETS.join(", "))))
            }
        }
        Ok(())
    }

    /// Copies the frame geometry of `world` into `model`.
    pub fn sync_model(&mut self) {
        self.model.height = self.world.height;
        self.model.width = self.world.width;
        self.model.u_dim = self.world.u_dim();
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let w = &mut self.world;
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "preset" => {
                for name in v.split(',').map(str::trim) {
                    self.apply_preset(name)?;
                }
                self.preset = v.split(',').map(str::trim).collect::<Vec<_>>().join(",");
            }
            "seed" => self.seed = num(key, v)?,
            "world.kind" => {
                let kind: WorldKind = v.parse()?;
                *w = WorldSpec::new(kind);
                (m.a_dim, m.z_dim, m.k) = world_dims(kind);
            }
            "world.height" => w.height = num(key, v)?,
            "world.width" => w.width = num(key, v)?,
            "world.steps" => w.steps = num(key, v)?,
            "world.radius" => w.radius = num(key, v)?,
            "world.speed_min" => w.speed_min = num(key, v)?,
            "world.speed_max" => w.speed_max = num(key, v)?,
            "world.gravity" => w.gravity = pair(key, v)?,
            "world.polygon" => w.polygon = v.split(';').map(|p| pair(key, p)).collect::<Result<_>>()?,
            "world.paddle_width" => w.paddle.width = num(key, v)?,
            "world.paddle_height" => w.paddle.height = num(key, v)?,
            "world.paddle_max_speed" => w.paddle.max_speed = num(key, v)?,
            "world.pendulum_g_over_l" => w.pendulum.g_over_l = num(key, v)?,
            "world.pendulum_torque_gain" => w.pendulum.torque_gain = num(key, v)?,
            "world.pendulum_damping" => w.pendulum.damping = num(key, v)?,
            "world.pendulum_dt" => w.pendulum.dt = num(key, v)?,
            "world.pendulum_arm" => w.pendulum.arm = num(key, v)?,
            "world.pendulum_torque_max" => w.pendulum.torque_max = num(key, v)?,
            "model.a_dim" => m.a_dim = num(key, v)?,
            "model.z_dim" => m.z_dim = num(key, v)?,
            "model.k" => m.k = num(key, v)?,
            "model.alpha" => m.alpha = v.parse()?,
            "model.lstm_hidden" => m.lstm_hidden = num(key, v)?,
            "model.alpha_mlp_hidden" => m.alpha_mlp_hidden = list(key, v)?,
            "model.fifo_window" => m.fifo_window = num(key, v)?,
            "model.vae_hidden" => m.vae_hidden = list(key, v)?,
            "model.likelihood" => m.likelihood = v.parse()?,
            "model.init_q" => m.init_noise.q = num(key, v)?,
            "model.init_r" => m.init_noise.r = num(key, v)?,
            "model.init_sigma0" => m.init_noise.sigma0 = num(key, v)?,
            "model.freeze_noise" => m.freeze_noise = flag(key, v)?,
            "model.init_scale" => m.init_scale = num(key, v)?,
            "train.epochs" => self.epochs = num(key, v)?,
            "train.lr" => t.lr = num(key, v)?,
            "train.decay_rate" => t.decay_rate = num(key, v)?,
            "train.decay_every" => t.decay_every = num(key, v)?,
            "train.warmup_epochs" => t.warmup_epochs = num(key, v)?,
            "train.recon_weight" => t.recon_weight = num(key, v)?,
            "train.batch_size" => t.batch_size = num(key, v)?,
            "train.clip_norm" => t.clip_norm = num(key, v)?,
            "train.beta1" => t.beta1 = num(key, v)?,
            "train.beta2" => t.beta2 = num(key, v)?,
            "train.eps" => t.eps = num(key, v)?,
            "train.elbo_samples" => t.elbo_samples = num(key, v)?,
            "train.sample_predictive" => t.sample_predictive = flag(key, v)?,
            "train.drop" => self.train_drop = v.parse()?,
            "train.drop_prefix" => self.train_prefix = num(key, v)?,
            "train.checkpoint_every" => self.checkpoint_every = num(key, v)?,
            "data.n_train" => self.n_train = num(key, v)?,
            "data.n_test" => self.n_test = num(key, v)?,
            "data.dir" => self.data_dir = PathBuf::from(v),
            "eval.probs" => self.eval.probs = list(key, v)?,
            "eval.spans" => self.eval.spans = list(key, v)?,
            "eval.prefix" => self.eval.prefix = num(key, v)?,
            "eval.episodes" => self.eval.episodes = num(key, v)?,
            "eval.sample_predictive" => self.eval.sample_predictive = flag(key, v)?,
            "export.episodes" => self.export.episodes = list(key, v)?,
            "export.drop" => self.export.drop = v.parse()?,
            "export.grid" => self.export.grid = num(key, v)?,
            "export.grid_margin" => self.export.grid_margin = num(key, v)?,
            other => return Err(HarnessError::Config(format!("unknown key {other:?}"))),
        }
        self.sync_model();
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let (w, m, t) = (&self.world, &self.model, &self.train);
        match key {
            "preset" => self.preset.clone(),
            "seed" => self.seed.to_string(),
            "world.kind" => w.kind.to_string(),
            "world.height" => w.height.to_string(),
            "world.width" => w.width.to_string(),
            "world.steps" => w.steps.to_string(),
            "world.radius" => w.radius.to_string(),
            "world.speed_min" => w.speed_min.to_string(),
            "world.speed_max" => w.speed_max.to_string(),
            "world.gravity" => format!("{} {}", w.gravity[0], w.gravity[1]),
            "world.polygon" => w.polygon.iter().map(|p| format!("{} {}", p[0], p[1])).collect::<Vec<_>>().join("; "),
            "world.paddle_width" => w.paddle.width.to_string(),
            "world.paddle_height" => w.paddle.height.to_string(),
            "world.paddle_max_speed" => w.paddle.max_speed.to_string(),
            "world.pendulum_g_over_l" => w.pendulum.g_over_l.to_string(),
            "world.pendulum_torque_gain" => w.pendulum.torque_gain.to_string(),
            "world.pendulum_damping" => w.pendulum.damping.to_string(),
            "world.pendulum_dt" => w.pendulum.dt.to_string(),
            "world.pendulum_arm" => w.pendulum.arm.to_string(),
            "world.pendulum_torque_max" => w.pendulum.torque_max.to_string(),
            "model.a_dim" => m.a_dim.to_string(),
            "model.z_dim" => m.z_dim.to_string(),
            "model.k" => m.k.to_string(),
            "model.alpha" => m.alpha.to_string(),
            "model.lstm_hidden" => m.lstm_hidden.to_string(),
            "model.alpha_mlp_hidden" => join(&m.alpha_mlp_hidden),
            "model.fifo_window" => m.fifo_window.to_string(),
            "model.vae_hidden" => join(&m.vae_hidden),
            "model.likelihood" => m.likelihood.to_string(),
            "model.init_q" => m.init_noise.q.to_string(),
            "model.init_r" => m.init_noise.r.to_string(),
            "model.init_sigma0" => m.init_noise.sigma0.to_string(),
            "model.freeze_noise" => m.freeze_noise.to_string(),
            "model.init_scale" => m.init_scale.to_string(),
            "train.epochs" => self.epochs.to_string(),
            "train.lr" => t.lr.to_string(),
            "train.decay_rate" => t.decay_rate.to_string(),
            "train.decay_every" => t.decay_every.to_string(),
            "train.warmup_epochs" => t.warmup_epochs.to_string(),
            "train.recon_weight" => t.recon_weight.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.clip_norm" => t.clip_norm.to_string(),
            "train.beta1" => t.beta1.to_string(),
            "train.beta2" => t.beta2.to_string(),
            "train.eps" => t.eps.to_string(),
            "train.elbo_samples" => t.elbo_samples.to_string(),
            "train.sample_predictive" => t.sample_predictive.to_string(),
            "train.drop" => self.train_drop.to_string(),
            "train.drop_prefix" => self.train_prefix.to_string(),
            "train.checkpoint_every" => self.checkpoint_every.to_string(),
            "data.n_train" => self.n_train.to_string(),
            "data.n_test" => self.n_test.to_string(),
            "data.dir" => self.data_dir.display().to_string(),
            "eval.probs" => join(&self.eval.probs),
            "eval.spans" => join(&self.eval.spans),
            "eval.prefix" => self.eval.prefix.to_string(),
            "eval.episodes" => self.eval.episodes.to_string(),
            "eval.sample_predictive" => self.eval.sample_predictive.to_string(),
            "export.episodes" => join(&self.export.episodes),
            "export.drop" => self.export.drop.to_string(),
            "export.grid" => self.export.grid.to_string(),
            "export.grid_margin" => self.export.grid_margin.to_string(),
            _ => unreachable!("every key in KEYS has a getter"),
        }
    }

    /// All keys with their resolved values, in a fixed order.
    pub fn entries(&self) -> Vec<(String, String)> {
        KEYS.iter().map(|k| (k.to_string(), self.get(k))).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# resolved kvae experiment configuration\n");
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Rebuilds a config from [`ExperimentConfig::entries`] pairs. The
    /// values are applied literally, so the preset does not override them.
    pub fn from_entries<'a>(entries: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut rest = Vec::new();
        for (k, v) in entries {
            match k {
                "preset" => cfg.preset = v.to_string(),
                "world.kind" => cfg.set(k, v)?,
                _ => rest.push((k, v)),
            }
        }
        for (k, v) in rest {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        let fail = |msg: &str| Err(HarnessError::Config(msg.into()));
        if self.model.pixels() != self.world.height * self.world.width || self.model.u_dim != self.world.u_dim() {
            return fail("model geometry does not match the world");
        }
        if self.n_train == 0 || self.n_test == 0 {
            return fail("dataset sizes must be positive");
        }
        if self.train_prefix == 0 || self.train_prefix > self.world.steps {
            return fail("train.drop_prefix must be within 1..=steps");
        }
        if self.eval.prefix == 0 || self.eval.prefix > self.world.steps {
            return fail("eval.prefix must be within 1..=steps");
        }
        if self.eval.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return fail("eval.probs must lie in [0, 1]");
        }
        if self.export.grid < 2 || !(self.export.grid_margin >= 0.0) {
            return fail("export.grid needs at least 2 points and a non-negative margin");
        }
        Ok(())
    }

    /// The dataset directory: `data.dir` if set, otherwise `fallback`.
    pub fn data_path(&self, fallback: &Path) -> PathBuf {
        if self.data_dir.as_os_str().is_empty() {
            fallback.to_path_buf()
        } else {
            self.data_dir.clone()
        }
    }
}
