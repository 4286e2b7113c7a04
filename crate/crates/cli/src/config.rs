//! JSON config file support. Every flag has a config key with the same name
//! (dashes or underscores both work). Keys can sit at the top level, shared
//! by all subcommands, or inside an object named after the subcommand.
//! Flags win over the subcommand section, which wins over the top level.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Default)]
pub struct Settings {
    shared: Map<String, Value>,
    section: Map<String, Value>,
}

fn normalize(key: &str) -> String {
    key.replace('-', "_")
}

fn normalized(map: Map<String, Value>) -> Map<String, Value> {
    map.into_iter().map(|(k, v)| (normalize(&k), v)).collect()
}

impl Settings {
    pub fn load(path: Option<&Path>, subcommand: &str) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let raw = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let value: Value =
            serde_json::from_str(&raw).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let Value::Object(mut top) = value else {
            return Err(CliError::Config(format!("{}: config must be a JSON object", path.display())));
        };
        let section = match top.remove(subcommand).or_else(|| top.remove(&normalize(subcommand))) {
            Some(Value::Object(m)) => normalized(m),
            Some(_) => return Err(CliError::Config(format!("section {subcommand:?} must be an object"))),
            None => Map::new(),
        };
        Ok(Self {
            shared: normalized(top),
            section,
        })
    }

    /// The flag value if given, else the config value under `key`.
    pub fn get<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        let key = normalize(key);
        match self.section.get(&key).or_else(|| self.shared.get(&key)) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| CliError::Config(format!("config key {key:?}: {e}"))),
        }
    }

    pub fn or<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    pub fn require<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<T, CliError> {
        self.get(flag, key)?
            .ok_or_else(|| CliError::Usage(format!("--{} is required (flag or config key)", key.replace('_', "-"))))
    }
}
