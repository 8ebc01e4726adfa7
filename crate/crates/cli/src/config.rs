use std::path::Path;

use serde::{Deserialize, Serialize};
use ss3dmm::inference::FitConfig;
use ss3dmm::registration::RegConfig;

use crate::CliError;

/// Settings read from the `--config` file, falling back to library
/// defaults for anything it leaves out.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub fit: FitConfig,
    pub registration: RegConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
        let cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: ss3dmm::Error| CliError::Usage(e.to_string());
        self.fit.validate().map_err(usage)?;
        self.registration.validate().map_err(usage)
    }
}
