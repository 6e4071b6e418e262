//! Experiment configuration: defaults, key=value config files, and the
//! flag overrides shared by the CLI.
//!
//! Config files are flat `key = value` text with `#` comments. Every run
//! writes back a fully resolved echo of its configuration next to the
//! trace so results stay reproducible from the output directory alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DeviationMetric, PartitionMode};
use crate::error::{Error, Result};
use crate::power::PowerParams;
use crate::select::SelectionPolicy;

/// What non-selected deployed UAVs do during a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdleDrain {
    /// They land/loiter for free; only selected UAVs consume energy.
    None,
    /// They keep hovering and drain accordingly (their draw still does
    /// not count toward the per-round selection energy metric).
    Hover,
}

impl std::str::FromStr for IdleDrain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "hover" => Ok(Self::Hover),
            other => Err(Error::Config(format!("unknown idle_drain '{other}'"))),
        }
    }
}

impl std::fmt::Display for IdleDrain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::None => write!(f, "none"),
            Self::Hover => write!(f, "hover"),
        }
    }
}

/// Fully resolved description of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Swarm size.
    pub k: usize,
    /// Class imbalance rate in [0, 0.9].
    pub mu: f64,
    pub partition_mode: PartitionMode,
    pub policy: SelectionPolicy,
    pub rounds: usize,
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub minibatch_size: usize,
    /// Hidden-layer widths of the classifier.
    pub hidden: Vec<usize>,
    pub battery_threshold: f64,
    pub deviation_threshold: f64,
    pub max_enumeration_uavs: usize,
    pub deviation_metric: DeviationMetric,
    pub power: PowerParams,
    pub seed: u64,
    /// Wall-clock seconds of flight per communication round.
    pub round_duration_s: f64,
    pub battery_capacity_j: f64,
    /// Rounds spent at the docking station after falling below the
    /// battery threshold.
    pub recharge_rounds: usize,
    pub idle_drain: IdleDrain,
    /// Re-run selection every this many rounds (1 = every round).
    pub reselect_every: usize,
    /// Number of UAVs the worst-case policy must pick.
    pub worst_m: usize,
    /// Per-UAV forward speed overrides as (id, m/s); everyone else hovers.
    pub uav_speeds: Vec<(usize, f64)>,
    pub out_dir: PathBuf,
    pub save_model: Option<PathBuf>,
    pub load_model: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train_images: "data/train-images-idx3-ubyte".into(),
            train_labels: "data/train-labels-idx1-ubyte".into(),
            test_images: "data/t10k-images-idx3-ubyte".into(),
            test_labels: "data/t10k-labels-idx1-ubyte".into(),
            k: 10,
            mu: 0.5,
            partition_mode: PartitionMode::UniformWithinActive,
            policy: SelectionPolicy::Proposed,
            rounds: 20,
            learning_rate: 0.01,
            local_epochs: 5,
            minibatch_size: 10,
            hidden: vec![200, 200],
            battery_threshold: 0.2,
            deviation_threshold: 0.5,
            max_enumeration_uavs: 20,
            deviation_metric: DeviationMetric::Normalized,
            power: PowerParams::default(),
            seed: 42,
            round_duration_s: 10.0,
            battery_capacity_j: 500_000.0,
            recharge_rounds: 50,
            idle_drain: IdleDrain::None,
            reselect_every: 1,
            worst_m: 2,
            uav_speeds: Vec::new(),
            out_dir: "out".into(),
            save_model: None,
            load_model: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse '{value}': {e}")))
}

fn parse_speeds(value: &str) -> Result<Vec<(usize, f64)>> {
    let mut speeds = Vec::new();
    for part in value.split(',').filter(|p| !p.trim().is_empty()) {
        let (id, v) = part.split_once(':').ok_or_else(|| {
            Error::Config(format!("speeds entry '{part}' is not of the form id:speed"))
        })?;
        speeds.push((parse("speeds", id.trim())?, parse("speeds", v.trim())?));
    }
    Ok(speeds)
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "train_images" => self.train_images = value.into(),
            "train_labels" => self.train_labels = value.into(),
            "test_images" => self.test_images = value.into(),
            "test_labels" => self.test_labels = value.into(),
            "k" => self.k = parse(key, value)?,
            "mu" => self.mu = parse(key, value)?,
            "partition_mode" => self.partition_mode = parse(key, value)?,
            "policy" => self.policy = parse(key, value)?,
            "rounds" => self.rounds = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "local_epochs" => self.local_epochs = parse(key, value)?,
            "minibatch_size" => self.minibatch_size = parse(key, value)?,
            "hidden" => {
                self.hidden = value
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_>>()?;
            }
            "battery_threshold" => self.battery_threshold = parse(key, value)?,
            "deviation_threshold" => self.deviation_threshold = parse(key, value)?,
            "max_enumeration_uavs" => self.max_enumeration_uavs = parse(key, value)?,
            "deviation_metric" | "deviation" => self.deviation_metric = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "round_duration_s" => self.round_duration_s = parse(key, value)?,
            "battery_capacity_j" => self.battery_capacity_j = parse(key, value)?,
            "recharge_rounds" => self.recharge_rounds = parse(key, value)?,
            "idle_drain" => self.idle_drain = parse(key, value)?,
            "reselect_every" => self.reselect_every = parse(key, value)?,
            "worst_m" => self.worst_m = parse(key, value)?,
            "speeds" => self.uav_speeds = parse_speeds(value)?,
            "out_dir" => self.out_dir = value.into(),
            "save_model" => self.save_model = Some(value.into()),
            "load_model" => self.load_model = Some(value.into()),
            "power.weight_newtons" => self.power.weight_newtons = parse(key, value)?,
            "power.rotor_radius_m" => self.power.rotor_radius_m = parse(key, value)?,
            "power.blade_angular_velocity_rad_s" => {
                self.power.blade_angular_velocity_rad_s = parse(key, value)?
            }
            "power.rotor_solidity" => self.power.rotor_solidity = parse(key, value)?,
            "power.fuselage_drag_ratio" => self.power.fuselage_drag_ratio = parse(key, value)?,
            "power.air_density_kg_m3" => self.power.air_density_kg_m3 = parse(key, value)?,
            "power.rotor_disc_area_m2" => self.power.rotor_disc_area_m2 = parse(key, value)?,
            "power.tip_speed" => self.power.tip_speed = parse(key, value)?,
            "power.mean_rotor_induced_velocity_m_s" => {
                self.power.mean_rotor_induced_velocity_m_s = parse(key, value)?
            }
            "power.profile_drag_coefficient" => {
                self.power.profile_drag_coefficient = parse(key, value)?
            }
            "power.induced_power_correction" => {
                self.power.induced_power_correction = parse(key, value)?
            }
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Loads defaults overridden by a `key = value` file.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::default();
        config.apply_text(&text)?;
        Ok(config)
    }

    /// Applies `key = value` lines to this config.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(0.0..=0.9).contains(&self.mu) {
            return Err(Error::ImbalanceOutOfRange(self.mu));
        }
        if !(self.learning_rate > 0.0) || self.local_epochs == 0 || self.minibatch_size == 0 {
            return Err(Error::Config(
                "learning_rate, local_epochs and minibatch_size must be positive".into(),
            ));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if !(self.round_duration_s >= 0.0) {
            return Err(Error::Config("round_duration_s must be >= 0".into()));
        }
        if !(self.battery_capacity_j > 0.0) {
            return Err(Error::Config("battery_capacity_j must be positive".into()));
        }
        if self.reselect_every == 0 {
            return Err(Error::Config("reselect_every must be at least 1".into()));
        }
        if self.worst_m == 0 {
            return Err(Error::Config("worst_m must be at least 1".into()));
        }
        for &(_, v) in &self.uav_speeds {
            if !(v >= 0.0) {
                return Err(Error::NegativeSpeed(v));
            }
        }
        self.power.validate()?;
        self.selection_config().validate()
    }

    pub fn selection_config(&self) -> crate::select::SelectionConfig {
        crate::select::SelectionConfig {
            battery_threshold: self.battery_threshold,
            deviation_threshold: self.deviation_threshold,
            // The class count is tightened to the dataset after loading.
            num_classes: 10,
            max_enumeration_uavs: self.max_enumeration_uavs,
            deviation_metric: self.deviation_metric,
        }
    }

    pub fn train_config(&self, rng_seed: u64) -> crate::fl::TrainConfig {
        crate::fl::TrainConfig {
            learning_rate: self.learning_rate,
            local_epochs: self.local_epochs,
            minibatch_size: self.minibatch_size,
            rng_seed,
        }
    }

    /// Fully resolved `key = value` echo, suitable for re-loading.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let mut push = |key: &str, value: String| {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        };
        push("train_images", self.train_images.display().to_string());
        push("train_labels", self.train_labels.display().to_string());
        push("test_images", self.test_images.display().to_string());
        push("test_labels", self.test_labels.display().to_string());
        push("k", self.k.to_string());
        push("mu", self.mu.to_string());
        push("partition_mode", self.partition_mode.to_string());
        push("policy", self.policy.to_string());
        push("rounds", self.rounds.to_string());
        push("learning_rate", self.learning_rate.to_string());
        push("local_epochs", self.local_epochs.to_string());
        push("minibatch_size", self.minibatch_size.to_string());
        push(
            "hidden",
            self.hidden
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        push("battery_threshold", self.battery_threshold.to_string());
        push("deviation_threshold", self.deviation_threshold.to_string());
        push(
            "max_enumeration_uavs",
            self.max_enumeration_uavs.to_string(),
        );
        push("deviation_metric", self.deviation_metric.to_string());
        push("seed", self.seed.to_string());
        push("round_duration_s", self.round_duration_s.to_string());
        push("battery_capacity_j", self.battery_capacity_j.to_string());
        push("recharge_rounds", self.recharge_rounds.to_string());
        push("idle_drain", self.idle_drain.to_string());
        push("reselect_every", self.reselect_every.to_string());
        push("worst_m", self.worst_m.to_string());
        push(
            "speeds",
            self.uav_speeds
                .iter()
                .map(|(id, v)| format!("{id}:{v}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        push("out_dir", self.out_dir.display().to_string());
        if let Some(p) = &self.save_model {
            push("save_model", p.display().to_string());
        }
        if let Some(p) = &self.load_model {
            push("load_model", p.display().to_string());
        }
        push(
            "power.weight_newtons",
            self.power.weight_newtons.to_string(),
        );
        push(
            "power.rotor_radius_m",
            self.power.rotor_radius_m.to_string(),
        );
        push(
            "power.blade_angular_velocity_rad_s",
            self.power.blade_angular_velocity_rad_s.to_string(),
        );
        push(
            "power.rotor_solidity",
            self.power.rotor_solidity.to_string(),
        );
        push(
            "power.fuselage_drag_ratio",
            self.power.fuselage_drag_ratio.to_string(),
        );
        push(
            "power.air_density_kg_m3",
            self.power.air_density_kg_m3.to_string(),
        );
        push(
            "power.rotor_disc_area_m2",
            self.power.rotor_disc_area_m2.to_string(),
        );
        push("power.tip_speed", self.power.tip_speed.to_string());
        push(
            "power.mean_rotor_induced_velocity_m_s",
            self.power.mean_rotor_induced_velocity_m_s.to_string(),
        );
        push(
            "power.profile_drag_coefficient",
            self.power.profile_drag_coefficient.to_string(),
        );
        push(
            "power.induced_power_correction",
            self.power.induced_power_correction.to_string(),
        );
        out
    }
}
