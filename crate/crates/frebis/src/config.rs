//! The single TOML run configuration consumed by `train` and echoed into
//! each run directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::field::FieldConfig;
use crate::rendering::RenderConfig;
use crate::tensor::Precision;
use crate::training::TrainConfig;
use crate::{Error, Result};

pub const RUN_CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Required; guards against silently consuming stale files.
    pub version: u32,
    pub dataset_dir: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default = "default_precision")]
    pub precision: Precision,
    #[serde(default)]
    pub field: FieldConfig,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_precision() -> Precision {
    Precision::F32
}

impl RunConfig {
    pub fn new(dataset_dir: PathBuf, output_dir: PathBuf) -> Self {
        RunConfig {
            version: RUN_CONFIG_VERSION,
            dataset_dir,
            output_dir,
            precision: default_precision(),
            field: FieldConfig::default(),
            render: RenderConfig::default(),
            train: TrainConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != RUN_CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} not supported (expected {})",
                self.version, RUN_CONFIG_VERSION
            )));
        }
        if self.dataset_dir.as_os_str().is_empty() {
            return Err(Error::Config("dataset_dir must be set".into()));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::Config("output_dir must be set".into()));
        }
        self.field.validate()?;
        if self.render.n_coarse == 0 {
            return Err(Error::Config("render.n_coarse must be positive".into()));
        }
        self.train.validate()
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Echo the effective (defaults-resolved) config so a run directory is
    /// self-describing and the file can be fed back to `train`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg: RunConfig = toml::from_str(
            "version = 1\ndataset_dir = \"data\"\noutput_dir = \"out\"\n",
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.train.learning_rate, 0.005);
        assert_eq!(cfg.field.tau, 0.5);
        assert_eq!(cfg.render.n_coarse, 64);
        assert_eq!(cfg.precision, Precision::F32);
    }

    #[test]
    fn version_field_is_required_and_checked() {
        let no_version: std::result::Result<RunConfig, _> =
            toml::from_str("dataset_dir = \"d\"\noutput_dir = \"o\"\n");
        assert!(no_version.is_err());

        let wrong: RunConfig =
            toml::from_str("version = 99\ndataset_dir = \"d\"\noutput_dir = \"o\"\n").unwrap();
        assert!(wrong.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected_at_every_level() {
        for doc in [
            "version = 1\ndataset_dir = \"d\"\noutput_dir = \"o\"\nbogus = 1\n",
            "version = 1\ndataset_dir = \"d\"\noutput_dir = \"o\"\n[train]\nbogus = 1\n",
            "version = 1\ndataset_dir = \"d\"\noutput_dir = \"o\"\n[field]\nbogus = 1\n",
            "version = 1\ndataset_dir = \"d\"\noutput_dir = \"o\"\n[render]\nbogus = 1\n",
        ] {
            let parsed: std::result::Result<RunConfig, _> = toml::from_str(doc);
            assert!(parsed.is_err(), "accepted: {doc}");
        }
    }

    #[test]
    fn round_trips_through_disk() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::new("data".into(), "out".into());
        cfg.train.iterations = 123;
        cfg.field.tau = 0.25;
        let path = tmp.path().join("run.toml");
        cfg.save(&path).unwrap();
        let loaded = RunConfig::load(&path).unwrap();
        assert_eq!(cfg, loaded);
    }
}
