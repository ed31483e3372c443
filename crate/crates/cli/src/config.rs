//! Optional JSON config file. Each command reads its own section; values
//! given on the command line take precedence.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub collect: CollectSection,
    pub train: TrainSection,
    pub optimize: OptimizeSection,
    pub baseline: BaselineSection,
    pub report: ReportSection,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectSection {
    pub grammar: Option<String>,
    pub count: Option<usize>,
    pub unique: Option<usize>,
    pub free_random: Option<bool>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub data: Option<PathBuf>,
    pub grammar: Option<String>,
    pub epochs: Option<usize>,
    pub lambda: Option<f64>,
    pub beta: Option<f64>,
    pub lr: Option<f64>,
    pub final_lr_fraction: Option<f64>,
    pub batch_size: Option<usize>,
    pub latent_dim: Option<usize>,
    pub hidden: Option<usize>,
    pub t_mp: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeSection {
    pub model: Option<PathBuf>,
    pub grammar: Option<String>,
    pub task: Option<String>,
    pub budget: Option<usize>,
    pub n_init: Option<usize>,
    pub candidates: Option<usize>,
    pub seed: Option<u64>,
    pub external: Option<String>,
    pub timeout_secs: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub algo: Option<String>,
    pub grammar: Option<String>,
    pub task: Option<String>,
    pub budget: Option<usize>,
    pub population: Option<usize>,
    pub seed: Option<u64>,
    pub external: Option<String>,
    pub timeout_secs: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub runs: Option<Vec<String>>,
    pub budget: Option<usize>,
    pub out: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

/// Flag value, else config value, else a usage error naming the flag.
pub fn required<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T, CliError> {
    flag.or(file)
        .ok_or_else(|| CliError::Usage(format!("--{name} is required")))
}
