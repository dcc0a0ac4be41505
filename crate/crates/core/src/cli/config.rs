use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::formats::ConvertOptions;
use crate::geometry::TileConfig;
use crate::metrics::{RougeMode, DEFAULT_OCRBENCH_KEY, DEFAULT_THRESHOLDS};
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub bleu_max_n: usize,
    pub rouge_mode: RougeMode,
    pub thresholds: Vec<f64>,
    pub ocrbench_key: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            bleu_max_n: 4,
            rouge_mode: RougeMode::default(),
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            ocrbench_key: DEFAULT_OCRBENCH_KEY.into(),
        }
    }
}

/// Settings shared by all commands, loaded from `--config` (TOML). Command
/// line flags override the file.
///
/// ```toml
/// seed = 42
/// jobs = 4
///
/// [tiles]
/// max_tiles = 12
///
/// [convert.classification]
/// style = "multiple_choice"
/// shuffle_options = true
///
/// [eval]
/// thresholds = [0.1, 0.5, 1.0, 5.0]
/// ```
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub tiles: TileConfig,
    pub convert: ConvertOptions,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let t = &self.tiles;
        if t.min_tiles == 0 || t.min_tiles > t.max_tiles || t.tokens_per_tile == 0 {
            return Err(CliError::Config(format!(
                "invalid tile settings: min_tiles={} max_tiles={} tokens_per_tile={}",
                t.min_tiles, t.max_tiles, t.tokens_per_tile
            )));
        }
        if self.jobs == Some(0) {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        if self.eval.bleu_max_n == 0 {
            return Err(CliError::Config("bleu_max_n must be at least 1".into()));
        }
        Ok(())
    }

    pub fn execution(&self) -> Execution {
        self.jobs.map_or(Execution::Auto, Execution::with_threads)
    }
}
