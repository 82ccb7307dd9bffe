//! Loosely typed key-value hyperparameter maps, as written in config files.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Hyperparams(pub BTreeMap<String, ParamValue>);

impl Hyperparams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, key: &str, value: ParamValue) -> Self {
        self.0.insert(key.to_string(), value);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&ParamValue> {
        self.0.get(key)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(ParamValue::Float(v)) => Ok(*v),
            Some(ParamValue::Int(v)) => Ok(*v as f64),
            Some(other) => Err(Error::ConfigInvalid(format!("`{key}` must be a number, got {other:?}"))),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some(ParamValue::Bool(v)) => Ok(*v),
            Some(other) => Err(Error::ConfigInvalid(format!("`{key}` must be a boolean, got {other:?}"))),
        }
    }

    pub fn str(&self, key: &str) -> Result<Option<&str>> {
        match self.get(key) {
            None => Ok(None),
            Some(ParamValue::Str(v)) => Ok(Some(v)),
            Some(other) => Err(Error::ConfigInvalid(format!("`{key}` must be a string, got {other:?}"))),
        }
    }

    /// Rejects keys outside `allowed`, so typos do not pass silently.
    pub fn check_keys(&self, allowed: &[&str], context: &str) -> Result<()> {
        for key in self.0.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::ConfigInvalid(format!(
                    "unknown hyperparameter `{key}` for {context} (allowed: {})",
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// Deserializes the listed keys into a typed config; absent keys keep
    /// the target's defaults.
    pub fn to_config<T: DeserializeOwned>(&self, keys: &[&str], context: &str) -> Result<T> {
        let subset: BTreeMap<&String, &ParamValue> =
            self.0.iter().filter(|(k, _)| keys.contains(&k.as_str())).collect();
        let value = serde_json::to_value(subset)?;
        serde_json::from_value(value).map_err(|e| Error::ConfigInvalid(format!("{context}: {e}")))
    }
}
