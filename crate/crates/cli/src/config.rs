use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use bcmppi::dynamics::QuadrotorParams;
use bcmppi::mppi::{CostSpec, MppiConfig};
use bcmppi::sim::{ControllerKind, DatasetConfig, EpisodeConfig, Scenario};
use bcmppi::surrogate::TrainingConfig;
use serde::{Deserialize, Serialize};

use crate::ConfigError;

pub const OUT_DIR_ENV: &str = "BCMPPI_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSection {
    /// Overrides the scenario's duration, s.
    pub duration: Option<f64>,
    pub penalty_shaping: f64,
    /// Resample the scenario from the seed before running.
    pub randomize: bool,
    pub log_sample_feasibility: bool,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        Self {
            duration: None,
            penalty_shaping: 0.0,
            randomize: true,
            log_sample_feasibility: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateSection {
    /// Defaults to `<output_dir>/dataset.csv`.
    pub dataset: Option<PathBuf>,
    /// Defaults to `<output_dir>/model.json`.
    pub model: Option<PathBuf>,
    /// Per-scenario models for sweeps, keyed by scenario name. Scenarios
    /// without an entry use `model`.
    pub models: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Scenario files; empty means the top-level `scenario`.
    pub scenarios: Vec<PathBuf>,
    pub controllers: Vec<ControllerKind>,
    pub k_values: Vec<usize>,
    pub seeds: u64,
    pub randomize: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            scenarios: Vec::new(),
            controllers: ControllerKind::ALL.to_vec(),
            k_values: vec![100, 500, 1500],
            seeds: 5,
            randomize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// 0 uses every core.
    pub workers: usize,
    pub scenario: PathBuf,
    pub controller: ControllerKind,
    /// Defaults to `$BCMPPI_OUT_DIR`, then `out`.
    pub output_dir: Option<PathBuf>,
    pub quadrotor: QuadrotorParams,
    pub mppi: MppiConfig,
    pub cost: CostSpec,
    pub episode: EpisodeSection,
    pub dataset: DatasetConfig,
    pub training: TrainingConfig,
    pub surrogate: SurrogateSection,
    pub sweep: SweepSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            scenario: PathBuf::from("scenarios/moving5.toml"),
            controller: ControllerKind::BcMppi,
            output_dir: None,
            quadrotor: QuadrotorParams::default(),
            mppi: MppiConfig::default(),
            cost: CostSpec::default(),
            episode: EpisodeSection::default(),
            dataset: DatasetConfig::default(),
            training: TrainingConfig::default(),
            surrogate: SurrogateSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

/// Parses the right-hand side of a `--set` as a TOML value, falling back to
/// a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies one `dotted.key=value` override to a TOML table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> anyhow::Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        bail!(ConfigError(format!(
            "override {assignment:?} is not key=value"
        )));
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!(ConfigError(format!("bad override key {key:?}")));
    }
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut node = table;
    for p in parents {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = match entry {
            toml::Value::Table(t) => t,
            _ => bail!(ConfigError(format!("{key}: {p} is not a table"))),
        };
    }
    node.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    /// Reads `path` (or starts from defaults), applies the overrides and
    /// checks the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("cannot read {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e| ConfigError(format!("invalid config: {e}")))?;
        Ok(config)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.surrogate
            .dataset
            .clone()
            .unwrap_or_else(|| self.output_dir().join("dataset.csv"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.surrogate
            .model
            .clone()
            .unwrap_or_else(|| self.output_dir().join("model.json"))
    }

    pub fn model_path_for(&self, scenario: &str) -> PathBuf {
        self.surrogate
            .models
            .get(scenario)
            .cloned()
            .unwrap_or_else(|| self.model_path())
    }

    pub fn load_scenario(path: &Path) -> anyhow::Result<Scenario> {
        if !path.exists() {
            bail!(ConfigError(format!(
                "scenario file {} does not exist",
                path.display()
            )));
        }
        Scenario::load(path).map_err(|e| ConfigError(e.to_string()).into())
    }

    pub fn scenario(&self) -> anyhow::Result<Scenario> {
        Self::load_scenario(&self.scenario)
    }

    /// Episode settings shared by `run` and `sweep`.
    pub fn episode(&self, scenario: Scenario) -> anyhow::Result<EpisodeConfig> {
        let mut config = EpisodeConfig::new(scenario, self.controller);
        config.mppi = self.mppi.clone();
        config.cost = self.cost.clone();
        config.params = self.quadrotor;
        config.duration = self.episode.duration;
        config.seed = self.seed;
        config.penalty_shaping = self.episode.penalty_shaping;
        config.workers = self.workers;
        config.log_sample_feasibility = self.episode.log_sample_feasibility;
        config.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(config)
    }

    /// Writes the effective config next to the outputs.
    pub fn dump(&self, dir: &Path, name: &str) -> anyhow::Result<PathBuf> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(name);
        let mut resolved = self.clone();
        resolved.output_dir = Some(self.output_dir());
        let text = toml::to_string_pretty(&resolved)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
