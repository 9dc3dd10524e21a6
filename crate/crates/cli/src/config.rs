//! TOML run configuration: a `[vocabulary]` table and a `[model]` table,
//! both optional and both filled from defaults.

use std::fs;
use std::path::Path;

use qovae_core::model::QovaeConfig;
use qovae_core::repr::{VocabConfig, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Kind, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub vocabulary: VocabConfig,
    pub model: QovaeConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::input(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::new(Kind::Io, format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn load_opt(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Ok(Vocabulary::new(self.vocabulary.clone())?)
    }
}
