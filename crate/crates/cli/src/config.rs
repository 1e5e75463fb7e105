use std::path::{Path, PathBuf};

use qnoddi::estimator::{InputKind, LossMode, TrainConfig};
use qnoddi::evaluation::{ExperimentSpec, Protocol};
use serde::Deserialize;

use crate::CliError;

/// Directions per shell kept by the uniform subsample when unspecified.
pub const DEFAULT_UNIFORM_COUNT: usize = 30;

/// Flat JSON run configuration; every key is optional and command-line
/// flags take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub uniform_counts: Option<Vec<usize>>,
    pub random_ranges: Option<Vec<[usize; 2]>>,
    pub mu: Option<f64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub loss_mode: Option<String>,
    pub hidden_widths: Option<Vec<usize>>,
    pub sh_order: Option<usize>,
    pub lambda: Option<f64>,
    pub input: Option<String>,

    pub scheme: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    /// Training phantom of the ablation protocol.
    pub train_dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub log: Option<PathBuf>,

    pub dims: Option<[usize; 2]>,
    pub noise: Option<f64>,

    pub protocol: Option<String>,
    pub seeds: Option<Vec<u64>>,
    pub rs_seeds: Option<Vec<u64>>,
    pub rs_counts: Option<Vec<usize>>,
    pub sweep_totals: Option<Vec<usize>>,
    pub flexible_schemes: Option<Vec<Vec<usize>>>,
}

pub fn parse_input_kind(s: &str) -> Result<InputKind, CliError> {
    match s {
        "sh" => Ok(InputKind::ShCoefficients),
        "raw" => Ok(InputKind::RawPadded),
        other => Err(CliError::usage(format!("unknown input '{other}' (expected sh or raw)"))),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    /// Training configuration for a dataset with `shell_sizes` directions per shell.
    pub fn train_config(&self, shell_sizes: &[usize]) -> Result<TrainConfig, CliError> {
        let counts = self
            .uniform_counts
            .clone()
            .unwrap_or_else(|| shell_sizes.iter().map(|&n| n.min(DEFAULT_UNIFORM_COUNT)).collect());
        let input = match &self.input {
            Some(s) => parse_input_kind(s)?,
            None => InputKind::ShCoefficients,
        };
        let mut cfg = match input {
            InputKind::ShCoefficients => TrainConfig::new(counts),
            InputKind::RawPadded => TrainConfig::raw_baseline(counts),
        };
        if let Some(r) = &self.random_ranges {
            cfg.random_ranges = Some(r.iter().map(|[lo, hi]| (*lo, *hi)).collect());
        }
        if let Some(m) = &self.loss_mode {
            cfg.loss_mode = m.parse::<LossMode>()?;
        }
        cfg.mu = self.mu.unwrap_or(cfg.mu);
        cfg.learning_rate = self.learning_rate.unwrap_or(cfg.learning_rate);
        cfg.batch_size = self.batch_size.unwrap_or(cfg.batch_size);
        cfg.epochs = self.epochs.unwrap_or(cfg.epochs);
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.sh_order = self.sh_order.unwrap_or(cfg.sh_order);
        cfg.lambda = self.lambda.unwrap_or(cfg.lambda);
        if let Some(h) = &self.hidden_widths {
            cfg.hidden_widths = h.clone();
        }
        Ok(cfg)
    }

    pub fn experiment(&self, protocol: Protocol, seeds: Vec<u64>) -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(protocol, seeds);
        spec.rs_counts = self.rs_counts.clone();
        if let Some(t) = &self.sweep_totals {
            spec.sweep_totals = t.clone();
        }
        if let Some(f) = &self.flexible_schemes {
            spec.flexible_schemes = f.clone();
        }
        spec
    }
}
