//! Application configuration: a TOML file mirroring the run configuration,
//! with every field overridable by a CLI flag. Merge order is defaults,
//! then file, then flags.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use tsas_core::config::RunConfig;
use tsas_core::toymodel::ToyConfig;

use crate::backends::HttpOptions;

/// Everything the binary can be configured with.
///
/// ```toml
/// prompt_template = "Read this and answer the question\n{context}\n{question}"
/// workers = 4
/// grouping = "normalized"
///
/// [sampling]
/// n = 15
/// decode_mode = "mc_dropout"
///
/// [filter]
/// kind = "agreement_threshold"
/// tau = 0.7
///
/// [train]
/// epochs = 5
/// learning_rate = 0.1
///
/// [model]
/// embed_dim = 32
///
/// [http]
/// base_url = "http://localhost:8000"
/// ```
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    #[serde(flatten)]
    pub run: RunConfig,
    /// Toy-model dimensions for freshly initialized models.
    pub model: ToyConfig,
    pub http: HttpOptions,
}

#[derive(Debug, Error)]
pub enum AppConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config `{path}`: {source}")]
    Toml {
        path: String,
        #[source]
        source: toml::de::Error,
    },
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, AppConfigError> {
        let raw = fs::read_to_string(path).map_err(|source| AppConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&raw).map_err(|source| AppConfigError::Toml {
            path: path.display().to_string(),
            source,
        })
    }
}
