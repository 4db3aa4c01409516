//! Run configuration: one TOML document describing the case, the fire
//! scenario, the control policy, and the training protocol. A parsed
//! [`RunConfig`] converts into the concrete domain objects, and its
//! serialized snapshot is what run directories embed so any output can be
//! regenerated from the snapshot alone.

use crate::ddpg::TrainConfig;
use crate::env::Scenario;
use crate::geomap::{GeoError, GeoLayout};
use crate::gridmodel::{builtin, CaseError, Network};
use crate::policies::ControlMode;
use crate::wildfire::FireSource;
use crate::Real;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Schema tag embedded in every config snapshot.
pub const CONFIG_SCHEMA: &str = "wildgrid-run-v1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("unsupported config schema '{0}' (expected {CONFIG_SCHEMA})")]
    Schema(String),
    #[error("{0}")]
    BadValue(String),
    #[error("unknown builtin case '{0}' and no such file")]
    UnknownCase(String),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fire raster and episode settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FireSection {
    pub width: usize,
    pub height: usize,
    pub fuel_min: u32,
    pub fuel_max: u32,
    pub burn_rate: Real,
    pub p_spread: Real,
    pub substeps: u32,
    pub horizon: u32,
    /// `random` draws a source inside the centered box each episode;
    /// `fixed` ignites at (`source_x`, `source_y`).
    pub source: String,
    pub source_x: usize,
    pub source_y: usize,
    pub box_width: usize,
    pub box_height: usize,
}

impl Default for FireSection {
    fn default() -> Self {
        Self {
            width: 350,
            height: 350,
            fuel_min: 60,
            fuel_max: 120,
            burn_rate: 1.0,
            p_spread: 0.35,
            substeps: 6,
            horizon: 300,
            source: "random".into(),
            source_x: 0,
            source_y: 0,
            box_width: 250,
            box_height: 250,
        }
    }
}

/// Training protocol settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub episodes: u32,
    pub gamma: Real,
    pub tau: Real,
    pub lr_actor: Real,
    pub lr_critic: Real,
    pub hidden: [usize; 2],
    pub replay: usize,
    pub batch: usize,
    pub warmup: usize,
    pub noise_theta: Real,
    pub noise_sigma_start: Real,
    pub noise_sigma_final: Real,
    pub eval_every: u32,
    pub eval_episodes: u32,
    pub workers: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            episodes: d.episodes,
            gamma: d.gamma,
            tau: d.tau,
            lr_actor: d.lr_actor,
            lr_critic: d.lr_critic,
            hidden: [d.hidden.0, d.hidden.1],
            replay: d.replay_capacity,
            batch: d.batch,
            warmup: d.warmup,
            noise_theta: d.noise_theta,
            noise_sigma_start: d.noise_sigma_start,
            noise_sigma_final: d.noise_sigma_final,
            eval_every: d.eval_every,
            eval_episodes: d.eval_episodes,
            workers: d.workers,
        }
    }
}

/// Whole-run configuration; every field has a default reproducing the
/// reference experimental protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    /// Builtin case name (`rts24`, `toy3`, ...) or a path to a case file.
    pub case: String,
    /// Layout source; empty means "matching the case" (same builtin name,
    /// or the case path with a `.layout` extension).
    pub layout: String,
    pub out_dir: String,
    pub seed: u64,
    pub policy: String,
    /// Assets at fire distance at or below this are de-energized.
    pub trip_distance: Real,
    /// Group count for the grouped (partial-control) decoder.
    pub gen_groups: usize,
    /// Penalty weights, in component order.
    pub weights: [Real; 4],
    pub fire: FireSection,
    pub train: TrainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: CONFIG_SCHEMA.into(),
            case: "rts24".into(),
            layout: String::new(),
            out_dir: "runs".into(),
            seed: 0,
            policy: "reactive".into(),
            trip_distance: crate::policies::DEFAULT_TRIP_DISTANCE,
            gen_groups: crate::policies::DEFAULT_GEN_GROUPS,
            weights: [1.0, 1.0, 2.0, 10.0],
            fire: FireSection::default(),
            train: TrainSection::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        if cfg.schema != CONFIG_SCHEMA {
            return Err(ConfigError::Schema(cfg.schema));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical snapshot text.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn case_text(&self) -> Result<String, ConfigError> {
        if let Some(text) = builtin::case(&self.case) {
            return Ok(text.to_string());
        }
        let p = Path::new(&self.case);
        if p.is_file() {
            return Ok(std::fs::read_to_string(p)?);
        }
        Err(ConfigError::UnknownCase(self.case.clone()))
    }

    fn layout_text(&self) -> Result<String, ConfigError> {
        let name = if self.layout.is_empty() { &self.case } else { &self.layout };
        if let Some(text) = builtin::layout(name) {
            return Ok(text.to_string());
        }
        let mut p = Path::new(name).to_path_buf();
        if self.layout.is_empty() {
            p.set_extension("layout");
        }
        if p.is_file() {
            return Ok(std::fs::read_to_string(&p)?);
        }
        Err(ConfigError::UnknownCase(p.display().to_string()))
    }

    pub fn network(&self) -> Result<Network, ConfigError> {
        Ok(Network::load_case(&self.case_text()?)?)
    }

    pub fn geo_layout(&self) -> Result<GeoLayout, ConfigError> {
        Ok(GeoLayout::parse(&self.layout_text()?)?)
    }

    pub fn fire_source(&self) -> Result<FireSource, ConfigError> {
        match self.fire.source.as_str() {
            "random" => {
                Ok(FireSource::RandomBox { width: self.fire.box_width, height: self.fire.box_height })
            }
            "fixed" => Ok(FireSource::Fixed { x: self.fire.source_x, y: self.fire.source_y }),
            other => Err(ConfigError::BadValue(format!(
                "fire source must be 'random' or 'fixed', got '{other}'"
            ))),
        }
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        if self.fire.fuel_min > self.fire.fuel_max {
            return Err(ConfigError::BadValue("fuel_min exceeds fuel_max".into()));
        }
        Ok(Scenario {
            grid_width: self.fire.width,
            grid_height: self.fire.height,
            fuel_range: (self.fire.fuel_min, self.fire.fuel_max),
            burn_rate: self.fire.burn_rate,
            p_spread: self.fire.p_spread,
            substeps: self.fire.substeps,
            horizon: self.fire.horizon,
            source: self.fire_source()?,
            weights: self.weights,
            dispatch: Default::default(),
        })
    }

    pub fn control_mode(&self) -> Result<ControlMode, ConfigError> {
        self.policy.parse().map_err(ConfigError::BadValue)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            episodes: self.train.episodes,
            gamma: self.train.gamma,
            tau: self.train.tau,
            lr_actor: self.train.lr_actor,
            lr_critic: self.train.lr_critic,
            hidden: (self.train.hidden[0], self.train.hidden[1]),
            replay_capacity: self.train.replay,
            batch: self.train.batch,
            warmup: self.train.warmup,
            noise_theta: self.train.noise_theta,
            noise_sigma_start: self.train.noise_sigma_start,
            noise_sigma_final: self.train.noise_sigma_final,
            eval_every: self.train.eval_every,
            eval_episodes: self.train.eval_episodes,
            workers: self.train.workers,
            seed: self.seed,
        }
    }
}
