use std::path::Path;

use serde::Deserialize;

use rda_core::data::SyntheticConfig;
use rda_core::discriminant::{Engine, Estimation, Rule};

use crate::CliError;

/// Optional TOML defaults; command-line flags take precedence.
///
/// ```toml
/// [simulate]
/// seed = 3
/// swap1 = 2
///
/// [fit]
/// rule = "quadratic"
/// estimation = "robust"
/// alpha = 0.75
/// ```
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub simulate: SyntheticConfig,
    pub fit: FitSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub rule: Option<Rule>,
    pub estimation: Option<Estimation>,
    pub engine: Option<Engine>,
    pub alpha: Option<f64>,
    pub starts: Option<usize>,
    pub seed: Option<u64>,
    pub cutoff: Option<f64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }
}
