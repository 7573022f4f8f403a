//! Experiment configuration: one JSON document with a section per module.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::trajectory::{load_trajectory, resample, TrajectoryFormat};
use crate::contention::calibration::CalibrationSettings;
use crate::contention::{ContentionCoefficients, LinkModel, TrafficConditions};
use crate::error::{Error, Result};
use crate::freq::ControllerParams;
use crate::ift::MAX_VEHICLES;
use crate::optimizer::{OptimizerOptions, DEFAULT_TABLE_LIMIT};
use crate::sim::{LeaderTrajectory, SimConfig, SimSetup, StopAndGo};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFile {
    pub path: PathBuf,
    #[serde(default)]
    pub format: TrajectoryFormat,
    /// Positions and speeds are in feet.
    #[serde(default)]
    pub feet: bool,
}

/// The leader follows `file` when set, otherwise the synthetic profile.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySource {
    pub synthetic: StopAndGo,
    pub file: Option<TrajectoryFile>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub table_limit: usize,
    pub parallel: bool,
    pub ranking: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { table_limit: DEFAULT_TABLE_LIMIT, parallel: true, ranking: false }
    }
}

impl From<OptimizerConfig> for OptimizerOptions {
    fn from(c: OptimizerConfig) -> Self {
        OptimizerOptions { table_limit: c.table_limit, parallel: c.parallel, keep_ranking: c.ranking }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Vehicles including the leader.
    pub platoon_size: usize,
    pub traffic: TrafficConditions,
    pub controller: ControllerParams,
    pub coefficients: ContentionCoefficients,
    /// Replaces the contention model with a fixed per-sender success rate.
    pub constant_success: Option<f64>,
    pub sim: SimConfig,
    pub trajectory: TrajectorySource,
    pub calibration: CalibrationSettings,
    pub optimizer: OptimizerConfig,
    /// Seeds for multi-run `simulate` and `compare`.
    pub seeds: Vec<u64>,
    /// Densities swept by `contention`, veh/km.
    pub densities: Vec<f64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            platoon_size: 15,
            traffic: TrafficConditions::default(),
            controller: ControllerParams::default(),
            coefficients: ContentionCoefficients::default(),
            constant_success: None,
            sim: SimConfig::default(),
            trajectory: TrajectorySource::default(),
            calibration: CalibrationSettings::default(),
            optimizer: OptimizerConfig::default(),
            seeds: (1..=20).collect(),
            densities: vec![25.0, 28.57, 30.0, 33.33, 35.0, 40.0],
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::invalid("config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text, overrides)
    }

    /// Parses, applies `a.b=value` overrides, then validates.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value =
            serde_json::from_str(text).map_err(|e| Error::invalid("config", format!("malformed JSON: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::invalid(if path == "." { "config".to_string() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Structural checks shared by every subcommand. Controller stability is
    /// left to the subcommands that need it so `stability` can report it.
    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_VEHICLES).contains(&self.platoon_size) {
            return Err(Error::invalid("platoon_size", format!("must be in 2..={MAX_VEHICLES}")));
        }
        self.traffic.validate()?;
        self.controller.validate_structure()?;
        self.link().validate()?;
        self.sim.validate()?;
        if self.trajectory.file.is_none() {
            self.trajectory.synthetic.validate()?;
        }
        self.calibration.validate()?;
        if self.optimizer.table_limit < 2 || self.optimizer.table_limit > MAX_VEHICLES {
            return Err(Error::invalid("optimizer.table_limit", format!("must be in 2..={MAX_VEHICLES}")));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds", "at least one seed is required"));
        }
        for (i, &k) in self.densities.iter().enumerate() {
            let t = TrafficConditions { density_kbar: k, ..self.traffic };
            t.validate().map_err(|e| Error::invalid(format!("densities[{i}]"), e.to_string()))?;
            self.coefficients.validate_for(&t).map_err(|e| Error::invalid(format!("densities[{i}]"), e.to_string()))?;
        }
        Ok(())
    }

    pub fn link(&self) -> LinkModel {
        match self.constant_success {
            Some(success) => LinkModel::Constant { success },
            None => LinkModel::Contention { traffic: self.traffic, coeffs: self.coefficients },
        }
    }

    pub fn setup(&self) -> SimSetup {
        SimSetup {
            platoon_size: self.platoon_size,
            params: self.controller,
            link: self.link(),
            config: self.sim.clone(),
        }
    }

    /// Leader trajectory sampled at the simulation step. Relative file paths
    /// resolve against `base`.
    pub fn leader(&self, base: &Path) -> Result<LeaderTrajectory> {
        match &self.trajectory.file {
            Some(f) => {
                let path = if f.path.is_absolute() { f.path.clone() } else { base.join(&f.path) };
                let records = load_trajectory(&path, f.format, f.feet)?;
                resample(&records, self.sim.dt)
            }
            None => LeaderTrajectory::stop_and_go(&self.trajectory.synthetic, self.sim.dt),
        }
    }
}

/// Sets `path` (dotted, e.g. `sim.seed`) to `raw`, read as JSON when it
/// parses and as a string otherwise. Missing objects along the path are
/// created; unknown keys are caught by deserialization.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::invalid("--set", format!("expected key=value, got {assignment:?}")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::invalid("--set", format!("bad path {path:?}")));
    }
    let new = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut node = root;
    for (depth, key) in keys.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::invalid(keys[..depth].join("."), "is not an object"))?;
        if depth + 1 == keys.len() {
            obj.insert(key.to_string(), new);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert(Value::Null);
    }
    unreachable!("path has at least one key")
}
