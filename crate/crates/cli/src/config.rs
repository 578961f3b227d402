//! Experiment configuration files.
//!
//! The format is TOML. Relative paths (dataset files, LUT, output directory)
//! are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use chanmix_core::data::DatasetSpec;
use chanmix_core::train::TrainConfig;
use chanmix_core::{Architecture, RegMode, SearchSpace};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

fn default_val() -> f64 {
    0.1
}

fn default_test() -> f64 {
    0.2
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub reg_mode: RegMode,
    pub lambdas: Vec<f64>,
    /// Energy-per-MAC table, required in energy mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lut: Option<PathBuf>,
    #[serde(default = "default_val")]
    pub val_fraction: f64,
    #[serde(default = "default_test")]
    pub test_fraction: f64,
    pub dataset: DatasetSpec,
    pub arch: Architecture,
    #[serde(default)]
    pub space: SearchSpace,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        if raw
            .get("train")
            .and_then(|t| t.as_table())
            .is_some_and(|t| t.contains_key("reg_mode"))
        {
            return Err(CliError::Config("set reg_mode at the top level, not under [train]".into()));
        }
        let mut cfg: Self = raw.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.train.reg_mode = cfg.reg_mode;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        let mut v = toml::Table::try_from(self).map_err(|e| CliError::Other(e.to_string()))?;
        if let Some(t) = v.get_mut("train").and_then(|t| t.as_table_mut()) {
            t.remove("reg_mode");
        }
        toml::to_string_pretty(&v).map_err(|e| CliError::Other(e.to_string()))
    }

    /// Reads, resolves relative paths and validates.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        if let Some(l) = self.lut.as_mut() {
            fix(l);
        }
        if let DatasetSpec::Idx {
            images,
            labels,
            test_images,
            test_labels,
        } = &mut self.dataset
        {
            fix(images);
            fix(labels);
            test_images.iter_mut().for_each(fix);
            test_labels.iter_mut().for_each(fix);
        }
    }

    /// Everything that can be checked without touching data.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.lambdas.is_empty() {
            return bad("at least one lambda is required".into());
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return bad(format!("lambda {l} is not a finite value >= 0"));
        }
        for (name, v) in [("val_fraction", self.val_fraction), ("test_fraction", self.test_fraction)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        self.train.validate()?;
        self.arch
            .infer_shapes()
            .map_err(|e| CliError::Config(format!("architecture: {e}")))?;
        match self.reg_mode {
            RegMode::Energy if self.lut.is_none() => bad("energy mode requires a LUT file (`lut = ...`)".into()),
            RegMode::Size if self.space.search_activations => {
                bad("size mode keeps activations at full precision: set space.search_activations = false".into())
            }
            _ => Ok(()),
        }
    }

    /// Output channels of every searchable layer.
    pub fn searched_channels(&self) -> Vec<usize> {
        self.arch
            .layers
            .iter()
            .filter(|l| {
                matches!(
                    l,
                    chanmix_core::LayerSpec::Conv2d { searchable: true, .. }
                        | chanmix_core::LayerSpec::Fc { searchable: true, .. }
                )
            })
            .filter_map(|l| l.out_channels())
            .collect()
    }

    /// Short identifier of the dataset used in warmup cache keys.
    pub fn dataset_key(&self) -> String {
        serde_json::to_string(&self.dataset).unwrap_or_default()
    }
}
