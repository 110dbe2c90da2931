//! TOML configuration: a `[generate]` table with generator keys and a
//! `[run]` table with training keys. Unknown keys are rejected. Values in the
//! file override defaults; command-line flags override the file.

use std::fs;
use std::path::Path;

use cicada_core::datagen::{GenConfig, GenKind};
use cicada_core::RunConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileTables {
    generate: Option<toml::Table>,
    run: Option<toml::Table>,
}

#[derive(Debug, Default)]
pub struct ConfigFile {
    generate: Option<toml::Table>,
    run: Option<toml::Table>,
    path: Option<std::path::PathBuf>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let tables: FileTables = toml::from_str(&text).map_err(|source| CliError::Config {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self {
            generate: tables.generate,
            run: tables.run,
            path: Some(path.to_path_buf()),
        })
    }

    /// Generator settings: the preset for the chosen kind, then file keys.
    /// A kind given on the command line wins over the file.
    pub fn gen_config(&self, kind: Option<GenKind>) -> CliResult<GenConfig> {
        let file_kind = match self.generate.as_ref().and_then(|t| t.get("kind")) {
            Some(v) => Some(
                v.as_str()
                    .ok_or_else(|| self.bad("generate.kind must be a string"))?
                    .parse::<GenKind>()?,
            ),
            None => None,
        };
        let kind = kind
            .or(file_kind)
            .ok_or_else(|| CliError::Usage("a generator kind is required (--kind)".into()))?;
        let mut cfg: GenConfig = self.overlay(GenConfig::preset(kind), self.generate.as_ref())?;
        cfg.kind = kind;
        Ok(cfg)
    }

    pub fn run_config(&self) -> CliResult<RunConfig> {
        self.overlay(RunConfig::default(), self.run.as_ref())
    }

    fn overlay<T: Serialize + DeserializeOwned>(
        &self,
        base: T,
        file: Option<&toml::Table>,
    ) -> CliResult<T> {
        let mut table = toml::Table::try_from(&base)
            .map_err(|e| CliError::Usage(format!("cannot encode defaults: {e}")))?;
        if let Some(file) = file {
            merge(&mut table, file);
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| self.bad(e.message()))
    }

    fn bad(&self, message: &str) -> CliError {
        let at = self
            .path
            .as_ref()
            .map(|p| format!("{}: ", p.display()))
            .unwrap_or_default();
        CliError::Usage(format!("{at}{message}"))
    }
}

/// Nested tables merge key by key so a partial `[run.optimizer]` keeps the
/// remaining defaults.
fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}
