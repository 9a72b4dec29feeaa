//! Run configuration shared by every CLI stage: a TOML file with one
//! section per pipeline stage. Command-line flags override file values.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::augment::AugmentConfig;
use crate::eval::ConditioningConfig;
use crate::fusion::FusionConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("asset path does not exist: {0}")]
    MissingAsset(PathBuf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Directory holding the shape set and blendshape deltas; procedural
    /// builders are used when unset.
    pub assets_dir: Option<PathBuf>,
    pub augment: AugmentConfig,
    pub fusion: FusionConfig,
    pub conditioning: ConditioningConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            assets_dir: None,
            augment: AugmentConfig::default(),
            fusion: FusionConfig::default(),
            conditioning: ConditioningConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let config: RunConfig = toml::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(dir) = &self.assets_dir {
            if !dir.exists() {
                return Err(ConfigError::MissingAsset(dir.clone()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_when_empty() {
        let config: RunConfig = toml::from_str("").unwrap();
        assert_eq!(config.seed, 0);
        assert!(config.assets_dir.is_none());
        assert_eq!(config.augment.yaws, vec![0.0, 40.0, 75.0]);
    }

    #[test]
    fn partial_file_overrides() {
        let text = r#"
seed = 7

[augment]
yaws = [0.0, 55.0]
include_expression = false

[conditioning]
root_exponent = 0.5
"#;
        let config: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.augment.yaws, vec![0.0, 55.0]);
        assert!(!config.augment.include_expression);
        assert_eq!(config.conditioning.root_exponent, 0.5);
        // Untouched sections keep defaults.
        assert_eq!(config.augment.output_size, 256);
        assert!(config.conditioning.apply_pca);
    }

    #[test]
    fn missing_assets_dir_rejected() {
        let config = RunConfig {
            assets_dir: Some(PathBuf::from("/nonexistent/assets")),
            ..RunConfig::default()
        };
        assert!(matches!(config.validate(), Err(ConfigError::MissingAsset(_))));
    }

    #[test]
    fn round_trip() {
        let config = RunConfig::default();
        let text = toml::to_string(&config).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.seed, config.seed);
        assert_eq!(back.augment.yaws, config.augment.yaws);
    }
}
