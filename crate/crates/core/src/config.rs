//! Application defaults, optionally loaded from a JSON file.
//!
//! Resolution order: command-line flags, then the config file (given with
//! `--config` or the `TEXFILTER_CONFIG` environment variable), then the
//! built-in defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fm::PolicyConfig;
use crate::optimize::OptimizeConfig;

pub const CONFIG_ENV: &str = "TEXFILTER_CONFIG";

/// Reward weights, pyramid and upsampler live in `optimize` and are shared by every subcommand.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub optimize: OptimizeConfig,
    pub policy: PolicyConfig,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            reason: format!("config: {e}"),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Built-in defaults, or the file at `path` when one is given.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimize.validate()?;
        self.policy.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pyramid::DEFAULT_DEPTH;
    use crate::reward::RewardWeights;
    use crate::upsample::UpsamplerKind;

    #[test]
    fn defaults() {
        let c = AppConfig::default();
        assert_eq!(c.optimize.weights, RewardWeights::default());
        assert_eq!(c.optimize.pyramid.depth, DEFAULT_DEPTH);
        assert_eq!(c.optimize.upsampler, UpsamplerKind::Bicubic);
        assert_eq!(c.policy.group_size, 12);
        assert_eq!(c.policy.epochs, 15);
    }

    #[test]
    fn partial_file_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(
            &p,
            r#"{"optimize": {"steps": 12, "upsampler": "lanczos3", "pyramid": {"depth": 3}}, "policy": {"beta": 0.5}}"#,
        )
        .unwrap();
        let c = AppConfig::load(&p).unwrap();
        assert_eq!(c.optimize.steps, 12);
        assert_eq!(c.optimize.upsampler, UpsamplerKind::Lanczos3);
        assert_eq!(c.optimize.pyramid.depth, 3);
        assert_eq!(c.optimize.step_size, OptimizeConfig::default().step_size);
        assert_eq!(c.policy.beta, 0.5);
        let back: AppConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"optimize": {"stepz": 12}}"#).unwrap();
        assert!(AppConfig::load(&p).is_err());
        std::fs::write(&p, r#"{"policy": {"group_size": 1}}"#).unwrap();
        assert!(AppConfig::load(&p).is_err());
        assert!(matches!(
            AppConfig::load(&dir.path().join("missing.json")),
            Err(Error::Io { .. })
        ));
    }
}
