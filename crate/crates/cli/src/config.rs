//! TOML experiment configuration. Every key is optional; omitted keys take
//! the full-scale protocol defaults below.

use std::path::{Path, PathBuf};

use fedloc_core::channel::{AoiSpec, Averaging, ChannelParams};
use fedloc_core::federation::{AggregationStrategy, Architecture};
use fedloc_core::multifloor::{MultiFloorConfig, UjiOptions, DEFAULT_DISC_FRACTION, UJI_SCALING};
use fedloc_core::neural::{InputScaling, TrainConfig};
use fedloc_core::scenario::{ScenarioConfig, ScenarioKind};
use serde::{Deserialize, Serialize};

use crate::ValidationError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Not written to manifests, so a rerun into another directory is
    /// byte-identical.
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    pub scenario: ScenarioSection,
    pub channel: ChannelSection,
    pub training: TrainingSection,
    /// Federated strategies to compare; the centralized baseline always runs.
    pub strategies: Vec<String>,
    pub verify: VerifySection,
    pub uji: UjiSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub aoi_width: f64,
    pub aoi_height: f64,
    pub n_clients: usize,
    pub normal_velocity: f64,
    pub straggler_velocity: f64,
    pub sample_interval: f64,
    pub n_samples: usize,
    pub n_avg: usize,
    pub n_test: usize,
    pub grid_resolution: f64,
    /// Any of "homogeneous", "heterogeneous".
    pub kinds: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub tx_power_dbm: f64,
    pub ref_rx_power_dbm: f64,
    pub ref_distance: f64,
    pub noise_enabled: bool,
    pub averaging: Averaging,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub rounds: usize,
    pub local_steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub eval_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub n_users: usize,
    pub n_bins: usize,
    pub n_dbs: usize,
    pub velocity_min: f64,
    pub velocity_max: f64,
    /// SGD steps for every model trained by the verification experiments.
    pub short_steps: usize,
    /// Walking speed of the single survey used for the distance experiment.
    pub probe_velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UjiSection {
    /// Directory holding trainingData.csv and validationData.csv. Relative
    /// paths resolve against the config file's directory.
    pub data_dir: PathBuf,
    pub building: i64,
    pub sentinel_dbm: f64,
    pub n_clients: usize,
    /// "homogeneous" or "heterogeneous".
    pub partition: String,
    pub disc_fraction: f64,
    /// Floors on which every strategy is compared.
    pub compare_floors: Vec<i64>,
    pub classifier_hidden: Vec<usize>,
    pub classifier_learning_rate: f64,
    pub classifier_local_steps: usize,
    pub classifier_rounds: usize,
    pub regressor_hidden: Vec<usize>,
    pub regressor_learning_rate: f64,
    pub regressor_local_steps: usize,
    pub regressor_rounds: usize,
    pub batch_size: usize,
    /// Regressor strategy used by the end-to-end pipeline.
    pub strategy: String,
    pub input_shift: f64,
    pub input_scale: f64,
    pub eval_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            scenario: ScenarioSection::default(),
            channel: ChannelSection::default(),
            training: TrainingSection::default(),
            strategies: vec!["uniform".into(), "hullarea".into()],
            verify: VerifySection::default(),
            uji: UjiSection::default(),
        }
    }
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let s = ScenarioConfig::default();
        ScenarioSection {
            aoi_width: s.aoi.width,
            aoi_height: s.aoi.height,
            n_clients: s.n_clients,
            normal_velocity: s.normal_velocity,
            straggler_velocity: s.straggler_velocity,
            sample_interval: s.sample_interval,
            n_samples: s.n_samples,
            n_avg: s.n_avg,
            n_test: s.n_test,
            grid_resolution: s.grid_resolution,
            kinds: vec!["heterogeneous".into(), "homogeneous".into()],
        }
    }
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection { tx_power_dbm: 10.0, ref_rx_power_dbm: -30.0, ref_distance: 1.0, noise_enabled: true, averaging: Averaging::Db }
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection { rounds: 300, local_steps: 40, learning_rate: 1e-5, batch_size: 32, hidden: vec![64], eval_every: 1 }
    }
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            n_users: 1800,
            n_bins: 20,
            n_dbs: 1000,
            velocity_min: 0.05,
            velocity_max: 0.5,
            short_steps: 1000,
            probe_velocity: 0.05,
        }
    }
}

impl Default for UjiSection {
    fn default() -> Self {
        let m = MultiFloorConfig::default();
        UjiSection {
            data_dir: PathBuf::from("data/UJIIndoorLoc"),
            building: 0,
            sentinel_dbm: UjiOptions::default().sentinel_dbm,
            n_clients: 20,
            partition: "heterogeneous".into(),
            disc_fraction: DEFAULT_DISC_FRACTION,
            compare_floors: vec![1],
            classifier_hidden: m.classifier_hidden,
            classifier_learning_rate: m.classifier_train.learning_rate,
            classifier_local_steps: m.classifier_train.local_steps,
            classifier_rounds: m.classifier_rounds,
            regressor_hidden: m.regressor_hidden,
            regressor_learning_rate: m.regressor_train.learning_rate,
            regressor_local_steps: m.regressor_train.local_steps,
            regressor_rounds: m.regressor_rounds,
            batch_size: m.regressor_train.batch_size,
            strategy: "hullarea".into(),
            input_shift: UJI_SCALING.shift,
            input_scale: UJI_SCALING.scale,
            eval_every: 1,
        }
    }
}

fn invalid(field: &str, reason: impl std::fmt::Display) -> ValidationError {
    ValidationError(format!("{field}: {reason}"))
}

pub fn parse_strategy(field: &str, name: &str) -> Result<AggregationStrategy, ValidationError> {
    AggregationStrategy::parse(name).ok_or_else(|| invalid(field, format!("unknown strategy {name:?} (expected uniform, datasize or hullarea)")))
}

pub fn parse_kind(field: &str, name: &str) -> Result<ScenarioKind, ValidationError> {
    match name {
        "homogeneous" => Ok(ScenarioKind::Homogeneous),
        "heterogeneous" => Ok(ScenarioKind::Heterogeneous),
        other => Err(invalid(field, format!("unknown scenario {other:?} (expected homogeneous or heterogeneous)"))),
    }
}

fn positive(field: &str, v: f64) -> Result<(), ValidationError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive, got {v}")))
    }
}

fn at_least_one(field: &str, v: usize) -> Result<(), ValidationError> {
    if v >= 1 {
        Ok(())
    } else {
        Err(invalid(field, "must be at least 1"))
    }
}

impl ExperimentConfig {
    /// Reads and validates `path`. Relative UJI data paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ValidationError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(&path.display().to_string(), e))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| ValidationError(format!("{}: {}", path.display(), e.message())).with_span(&text, e.span()))?;
        if cfg.uji.data_dir.is_relative() {
            let joined = path.parent().unwrap_or(Path::new("")).join(&cfg.uji.data_dir);
            cfg.uji.data_dir = std::path::absolute(&joined).unwrap_or(joined);
        }
        Ok(cfg)
    }

    /// Shrinks the run for quick checks: 100 rounds, 100 random databases,
    /// and 20-round UJI trainings.
    pub fn desk_scale(&mut self) {
        self.training.rounds = self.training.rounds.min(100);
        self.verify.n_dbs = self.verify.n_dbs.min(100);
        self.uji.classifier_rounds = self.uji.classifier_rounds.min(20);
        self.uji.regressor_rounds = self.uji.regressor_rounds.min(20);
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let s = &self.scenario;
        positive("scenario.aoi_width", s.aoi_width)?;
        positive("scenario.aoi_height", s.aoi_height)?;
        positive("scenario.sample_interval", s.sample_interval)?;
        positive("scenario.grid_resolution", s.grid_resolution)?;
        if !(s.normal_velocity >= 0.0) || !(s.straggler_velocity >= 0.0) {
            return Err(invalid("scenario.normal_velocity", "velocities must be non-negative"));
        }
        at_least_one("scenario.n_samples", s.n_samples)?;
        at_least_one("scenario.n_avg", s.n_avg)?;
        at_least_one("scenario.n_test", s.n_test)?;
        if s.kinds.is_empty() {
            return Err(invalid("scenario.kinds", "at least one scenario required"));
        }
        for k in &s.kinds {
            let kind = parse_kind("scenario.kinds", k)?;
            self.scenario_config().validate(kind).map_err(|e| invalid("scenario.n_clients", e))?;
        }
        positive("channel.ref_distance", self.channel.ref_distance)?;

        let t = &self.training;
        at_least_one("training.rounds", t.rounds)?;
        at_least_one("training.eval_every", t.eval_every)?;
        self.train_config().validate().map_err(|e| invalid("training", e))?;
        if t.hidden.contains(&0) {
            return Err(invalid("training.hidden", "layer widths must be at least 1"));
        }
        if t.learning_rate >= 1.0 {
            log::warn!("training.learning_rate = {} is at least 1; training may diverge", t.learning_rate);
        }
        if self.strategies.is_empty() {
            return Err(invalid("strategies", "at least one strategy required"));
        }
        for name in &self.strategies {
            parse_strategy("strategies", name)?;
        }

        let v = &self.verify;
        at_least_one("verify.n_users", v.n_users)?;
        at_least_one("verify.n_bins", v.n_bins)?;
        at_least_one("verify.short_steps", v.short_steps)?;
        if v.n_dbs < 10 {
            return Err(invalid("verify.n_dbs", format!("need at least 10 databases, got {}", v.n_dbs)));
        }
        if !(v.velocity_min >= 0.0 && v.velocity_min <= v.velocity_max && v.velocity_max.is_finite()) {
            return Err(invalid("verify.velocity_min", "need 0 <= velocity_min <= velocity_max"));
        }
        if !(v.probe_velocity >= 0.0) {
            return Err(invalid("verify.probe_velocity", "must be non-negative"));
        }

        let u = &self.uji;
        if u.n_clients < 2 {
            return Err(invalid("uji.n_clients", "must be at least 2"));
        }
        parse_kind("uji.partition", &u.partition)?;
        parse_strategy("uji.strategy", &u.strategy)?;
        positive("uji.disc_fraction", u.disc_fraction)?;
        positive("uji.input_scale", u.input_scale)?;
        at_least_one("uji.classifier_rounds", u.classifier_rounds)?;
        at_least_one("uji.regressor_rounds", u.regressor_rounds)?;
        at_least_one("uji.eval_every", u.eval_every)?;
        let m = self.multifloor_config();
        m.classifier_train.validate().map_err(|e| invalid("uji.classifier", e))?;
        m.regressor_train.validate().map_err(|e| invalid("uji.regressor", e))?;
        Ok(())
    }

    pub fn scenario_config(&self) -> ScenarioConfig {
        let s = &self.scenario;
        ScenarioConfig {
            aoi: AoiSpec { width: s.aoi_width, height: s.aoi_height },
            n_clients: s.n_clients,
            normal_velocity: s.normal_velocity,
            straggler_velocity: s.straggler_velocity,
            sample_interval: s.sample_interval,
            n_samples: s.n_samples,
            n_avg: s.n_avg,
            n_test: s.n_test,
            grid_resolution: s.grid_resolution,
        }
    }

    pub fn kinds(&self) -> Vec<ScenarioKind> {
        self.scenario.kinds.iter().filter_map(|k| parse_kind("", k).ok()).collect()
    }

    pub fn strategies(&self) -> Vec<AggregationStrategy> {
        self.strategies.iter().filter_map(|s| AggregationStrategy::parse(s)).collect()
    }

    /// Channel with fields drawn from `seed` and this config's constants.
    pub fn channel(&self, seed: u64) -> fedloc_core::Result<ChannelParams> {
        let mut ch = self.scenario_config().channel(seed)?;
        let c = &self.channel;
        ch.tx_power_dbm = c.tx_power_dbm;
        ch.ref_rx_power_dbm = c.ref_rx_power_dbm;
        ch.ref_distance = c.ref_distance;
        ch.noise_enabled = c.noise_enabled;
        ch.averaging = c.averaging;
        ch.validate()?;
        Ok(ch)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig { learning_rate: t.learning_rate, local_steps: t.local_steps, batch_size: t.batch_size }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::regression(&self.training.hidden)
    }

    pub fn short_train(&self) -> TrainConfig {
        TrainConfig { local_steps: self.verify.short_steps, ..self.train_config() }
    }

    pub fn multifloor_config(&self) -> MultiFloorConfig {
        let u = &self.uji;
        MultiFloorConfig {
            classifier_hidden: u.classifier_hidden.clone(),
            classifier_train: TrainConfig {
                learning_rate: u.classifier_learning_rate,
                local_steps: u.classifier_local_steps,
                batch_size: u.batch_size,
            },
            classifier_rounds: u.classifier_rounds,
            regressor_hidden: u.regressor_hidden.clone(),
            regressor_train: TrainConfig {
                learning_rate: u.regressor_learning_rate,
                local_steps: u.regressor_local_steps,
                batch_size: u.batch_size,
            },
            regressor_rounds: u.regressor_rounds,
            strategy: AggregationStrategy::parse(&u.strategy).unwrap_or(AggregationStrategy::ConvexHullArea),
            scaling: InputScaling { shift: u.input_shift, scale: u.input_scale },
            seed: self.seed,
            eval_every: u.eval_every,
        }
    }

    pub fn uji_options(&self) -> UjiOptions {
        UjiOptions { building: Some(self.uji.building), sentinel_dbm: self.uji.sentinel_dbm, origin: None }
    }
}

impl ValidationError {
    fn with_span(mut self, text: &str, span: Option<std::ops::Range<usize>>) -> Self {
        if let Some(span) = span {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            self.0 = format!("{} (line {line})", self.0);
        }
        self
    }
}
