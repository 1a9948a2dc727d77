use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use saga_core::engine::Budget;
use saga_core::schedule::Strategy;
use saga_core::zoo::ModelKind;

use crate::{CliError, Result};

/// Device memory budget as written in a config: a byte count, `"tight"`
/// for the smallest feasible budget, or absent for no limit.
#[derive(Clone, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum BudgetSetting {
    Bytes(u64),
    Keyword(String),
}

fn default_layers() -> usize {
    2
}

fn default_strategy() -> String {
    "locality".into()
}

fn default_epochs() -> usize {
    10
}

fn default_lr() -> f64 {
    0.01
}

fn default_one() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_hidden() -> usize {
    16
}

fn default_compute_rate() -> f64 {
    1e12
}

fn default_transfer_rate() -> f64 {
    1e10
}

/// A training or benchmark run. Relative paths are resolved against the
/// directory of the config file.
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: String,
    pub edge_file: PathBuf,
    pub feature_file: PathBuf,
    #[serde(default)]
    pub label_file: Option<PathBuf>,
    #[serde(default = "default_layers")]
    pub layers: usize,
    /// Upper bound on vertices per interval; absent keeps one interval.
    #[serde(default)]
    pub interval_size: Option<usize>,
    #[serde(default)]
    pub budget_bytes: Option<BudgetSetting>,
    #[serde(default = "default_strategy")]
    pub strategy: String,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_one")]
    pub threads: usize,
    #[serde(default)]
    pub topology_file: Option<PathBuf>,
    #[serde(default = "default_one")]
    pub devices: usize,
    #[serde(default = "default_true")]
    pub ring: bool,
    /// Width of hidden layers.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Run hoisting and fusion before execution.
    #[serde(default = "default_true")]
    pub optimize: bool,
    /// Flops per second of the simulated device.
    #[serde(default = "default_compute_rate")]
    pub compute_rate: f64,
    /// Bytes per second of a host or peer link.
    #[serde(default = "default_transfer_rate")]
    pub transfer_rate: f64,
}

impl RunConfig {
    /// Config with the given model and dataset and defaults elsewhere.
    pub fn new(model: &str, edge_file: impl Into<PathBuf>, feature_file: impl Into<PathBuf>) -> Self {
        let text = serde_json::json!({ "model": model, "edge_file": "", "feature_file": "" });
        let mut cfg: RunConfig = serde_json::from_value(text).expect("defaults deserialize");
        cfg.edge_file = edge_file.into();
        cfg.feature_file = feature_file.into();
        cfg
    }

    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text)?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.edge_file);
        fix(&mut self.feature_file);
        for p in [&mut self.label_file, &mut self.topology_file].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_kind()?;
        self.strategy()?;
        self.budget()?;
        let bad = |what: &str| Err(CliError::Config(format!("{what} must be positive")));
        if self.layers == 0 {
            return bad("layers");
        }
        if self.hidden == 0 {
            return bad("hidden");
        }
        if self.threads == 0 {
            return bad("threads");
        }
        if self.devices == 0 {
            return bad("devices");
        }
        if self.interval_size == Some(0) {
            return bad("interval_size");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr");
        }
        if !(self.compute_rate > 0.0 && self.transfer_rate > 0.0) {
            return bad("compute_rate and transfer_rate");
        }
        Ok(())
    }

    pub fn model_kind(&self) -> Result<ModelKind> {
        Ok(self.model.parse()?)
    }

    pub fn strategy(&self) -> Result<Strategy> {
        Ok(self.strategy.parse()?)
    }

    pub fn budget(&self) -> Result<Budget> {
        match &self.budget_bytes {
            None => Ok(Budget::Unbounded),
            Some(BudgetSetting::Bytes(b)) => Ok(Budget::Bytes(*b)),
            Some(BudgetSetting::Keyword(k)) if k == "tight" => Ok(Budget::Tight),
            Some(BudgetSetting::Keyword(k)) if k == "unbounded" => Ok(Budget::Unbounded),
            Some(BudgetSetting::Keyword(k)) => Err(CliError::Config(format!(
                "budget_bytes must be a byte count, \"tight\" or \"unbounded\", got {k:?}"
            ))),
        }
    }

    /// Number of intervals per grid axis for `vertices` vertices.
    pub fn intervals(&self, vertices: usize) -> usize {
        match self.interval_size {
            Some(s) => vertices.max(1).div_ceil(s),
            None => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_relative_paths() {
        let cfg = RunConfig::from_json(r#"{"model":"gcn","edge_file":"e.txt","feature_file":"/abs/f.csv"}"#, Path::new("/data")).unwrap();
        assert_eq!(cfg.edge_file, PathBuf::from("/data/e.txt"));
        assert_eq!(cfg.feature_file, PathBuf::from("/abs/f.csv"));
        assert_eq!((cfg.layers, cfg.epochs, cfg.threads, cfg.devices), (2, 10, 1, 1));
        assert_eq!(cfg.budget().unwrap(), Budget::Unbounded);
        assert_eq!(cfg.strategy().unwrap(), Strategy::Locality);
    }

    #[test]
    fn budget_forms() {
        let parse = |b: &str| {
            let text = format!(r#"{{"model":"gcn","edge_file":"e","feature_file":"f","budget_bytes":{b}}}"#);
            RunConfig::from_json(&text, Path::new(".")).map(|c| c.budget().unwrap())
        };
        assert_eq!(parse("4096").unwrap(), Budget::Bytes(4096));
        assert_eq!(parse("\"tight\"").unwrap(), Budget::Tight);
        assert_eq!(parse("null").unwrap(), Budget::Unbounded);
        assert!(parse("\"small\"").is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let base = Path::new(".");
        assert!(RunConfig::from_json(r#"{"model":"gat","edge_file":"e","feature_file":"f"}"#, base).is_err());
        assert!(RunConfig::from_json(r#"{"model":"gcn","edge_file":"e","feature_file":"f","strategy":"lru"}"#, base).is_err());
        assert!(RunConfig::from_json(r#"{"model":"gcn","edge_file":"e","feature_file":"f","layers":0}"#, base).is_err());
        assert!(RunConfig::from_json(r#"{"model":"gcn","edge_file":"e","feature_file":"f","colour":1}"#, base).is_err());
    }

    #[test]
    fn intervals_round_up() {
        let mut cfg = RunConfig::new("gcn", "e", "f");
        assert_eq!(cfg.intervals(20), 1);
        cfg.interval_size = Some(7);
        assert_eq!(cfg.intervals(20), 3);
        assert_eq!(cfg.intervals(21), 3);
    }
}
