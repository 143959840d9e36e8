//! Experiment configuration and the prepare → central → federated pipeline.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boost::{self, BoostOutcome, BoosterConfig, Dataset};
use crate::data::{
    self, ColumnNames, FilterStats, IdMaps, InteractionLog, MinMaxScaler, StudentSkillExample,
    SynthConfig,
};
use crate::error::{Error, Result};
use crate::fed::{self, FedRoundMetrics, RunHistory, StrategyConfig, StrategyKind};
use crate::model::{ModelDims, ModelParams, OptimizerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    #[default]
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: SourceKind,
    /// Interaction table for `source = "csv"`.
    pub path: Option<PathBuf>,
    pub delimiter: char,
    pub columns: ColumnNames,
    pub min_user_interactions: usize,
    pub min_skill_interactions: usize,
    pub test_fraction: f64,
    pub synthetic: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: SourceKind::Synthetic,
            path: None,
            delimiter: ',',
            columns: ColumnNames::default(),
            min_user_interactions: 50,
            min_skill_interactions: 100,
            test_fraction: 0.2,
            synthetic: SynthConfig::default(),
        }
    }
}

/// One entry of the federated grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyEntry {
    pub kind: StrategyKind,
    #[serde(default)]
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederatedConfig {
    pub rounds: usize,
    pub fraction_fit: f64,
    pub min_fit_clients: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub strategies: Vec<StrategyEntry>,
}

impl Default for FederatedConfig {
    fn default() -> Self {
        let d = StrategyConfig::default();
        Self {
            rounds: d.rounds,
            fraction_fit: d.fraction_fit,
            min_fit_clients: d.min_fit_clients,
            local_epochs: d.local_epochs,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            optimizer: d.optimizer,
            strategies: vec![
                StrategyEntry {
                    kind: StrategyKind::FedAvg,
                    mu: 0.0,
                },
                StrategyEntry {
                    kind: StrategyKind::FedProx,
                    mu: 0.1,
                },
                StrategyEntry {
                    kind: StrategyKind::FedProx,
                    mu: 0.5,
                },
                StrategyEntry {
                    kind: StrategyKind::FedProx,
                    mu: 1.0,
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub central: BoosterConfig,
    pub federated: FederatedConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            central: BoosterConfig::default(),
            federated: FederatedConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Desk-scale synthetic configuration shipped as `configs/reference.toml`.
    pub fn reference() -> Self {
        Self {
            out_dir: PathBuf::from("runs/reference"),
            data: DataConfig {
                synthetic: reference_synth(),
                ..DataConfig::default()
            },
            federated: FederatedConfig {
                rounds: 30,
                fraction_fit: 0.2,
                min_fit_clients: 10,
                learning_rate: 0.01,
                ..FederatedConfig::default()
            },
            ..Self::default()
        }
    }

    /// Applies a seed override to every seeded stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.data.synthetic.seed = seed;
        self.central.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.source == SourceKind::Csv && self.data.path.is_none() {
            return Err(Error::InvalidConfig(
                "data.source = \"csv\" requires data.path".into(),
            ));
        }
        if !self.data.delimiter.is_ascii() {
            return Err(Error::InvalidConfig(
                "delimiter must be a single ASCII character".into(),
            ));
        }
        self.central.validate()?;
        for s in self.strategies() {
            s.validate()?;
        }
        Ok(())
    }

    /// Fully resolved federated runs.
    pub fn strategies(&self) -> Vec<StrategyConfig> {
        let f = &self.federated;
        f.strategies
            .iter()
            .map(|e| StrategyConfig {
                kind: e.kind,
                mu: e.mu,
                rounds: f.rounds,
                fraction_fit: f.fraction_fit,
                min_fit_clients: f.min_fit_clients,
                local_epochs: f.local_epochs,
                learning_rate: f.learning_rate,
                batch_size: f.batch_size,
                optimizer: f.optimizer,
                seed: self.seed,
            })
            .collect()
    }
}

fn reference_synth() -> SynthConfig {
    SynthConfig {
        num_users: 50,
        num_skills: 20,
        min_interactions_per_user: 60,
        max_interactions_per_user: 120,
        user_ability_spread: 1.0,
        skill_difficulty_spread: 1.0,
        user_ability_mean: 1.2,
        seed: 42,
    }
}

/// Output of the preprocessing pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub examples: Vec<StudentSkillExample>,
    pub scaler: MinMaxScaler,
    pub maps: IdMaps,
    pub cohort: Cohort,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub raw_interactions: usize,
    pub dropped_rows: usize,
    pub filter: FilterStats,
    pub users: usize,
    pub skills: usize,
    pub examples: usize,
    pub positive_rate: f64,
}

impl PreparedData {
    pub fn dims(&self) -> ModelDims {
        ModelDims::new(self.maps.num_users(), self.maps.num_skills())
    }
}

pub fn load_log(cfg: &DataConfig) -> Result<InteractionLog> {
    match cfg.source {
        SourceKind::Synthetic => data::synthesize_log(&cfg.synthetic),
        SourceKind::Csv => {
            let path = cfg
                .path
                .as_deref()
                .ok_or_else(|| Error::InvalidConfig("missing data.path".into()))?;
            let file = File::open(path).map_err(|e| Error::path(path, e))?;
            data::load_interactions(BufReader::new(file), &cfg.columns, cfg.delimiter as u8)
        }
    }
}

/// Filter, engineer, label, densify and scale.
pub fn prepare_log(log: &InteractionLog, cfg: &DataConfig) -> Result<PreparedData> {
    let (filtered, stats) =
        data::filter_active(log, cfg.min_user_interactions, cfg.min_skill_interactions)?;
    let (raw, maps) = data::engineer_features(&filtered)?;
    let (examples, scaler) = data::minmax_scale(&raw)?;
    let positives = examples.iter().filter(|e| e.is_positive()).count();
    let cohort = Cohort {
        raw_interactions: log.len(),
        dropped_rows: log.dropped_rows,
        filter: stats,
        users: maps.num_users(),
        skills: maps.num_skills(),
        examples: examples.len(),
        positive_rate: positives as f64 / examples.len() as f64,
    };
    Ok(PreparedData {
        examples,
        scaler,
        maps,
        cohort,
    })
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedData> {
    prepare_log(&load_log(&cfg.data)?, &cfg.data)
}

/// Stratified 80/20 split followed by booster training.
pub fn run_central(
    examples: &[StudentSkillExample],
    cfg: &ExperimentConfig,
) -> Result<BoostOutcome> {
    let split = data::central_split(examples, cfg.data.test_fraction, cfg.seed)?;
    boost::train(
        &Dataset::from_examples(&split.train),
        &Dataset::from_examples(&split.test),
        &cfg.central,
    )
}

pub fn dims_for(examples: &[StudentSkillExample]) -> ModelDims {
    let users = examples
        .iter()
        .map(|e| e.user_idx)
        .max()
        .map_or(0, |m| m + 1);
    let skills = examples
        .iter()
        .map(|e| e.skill_idx)
        .max()
        .map_or(0, |m| m + 1);
    ModelDims::new(users, skills)
}

/// Partitions by student and runs one federated strategy.
pub fn run_federated_with<F>(
    examples: &[StudentSkillExample],
    cfg: &ExperimentConfig,
    strategy: &StrategyConfig,
    on_round: F,
) -> Result<(RunHistory, ModelParams)>
where
    F: FnMut(&FedRoundMetrics) -> Result<()>,
{
    let clients = data::partition_by_user(examples, cfg.data.test_fraction, cfg.seed)?;
    fed::run_simulation_with(&clients, dims_for(examples), strategy, on_round)
}

pub fn run_federated(
    examples: &[StudentSkillExample],
    cfg: &ExperimentConfig,
    strategy: &StrategyConfig,
) -> Result<(RunHistory, ModelParams)> {
    run_federated_with(examples, cfg, strategy, |_| Ok(()))
}
