//! JSON campaign configuration.
//!
//! ```json
//! {
//!   "master_seed": 1, "n_sim": 200, "alpha": 0.05,
//!   "methods": ["rcot", {"method": "fcit", "params": {"tree_count": 50}}],
//!   "cells": [{"id": "lin1", "n": 500, "conf_dim": 1, "g_z_kind": "linear", "c": 0}]
//! }
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use dncit::method::MethodConfig;
use dncit::Method;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::campaign::MIN_N_SIM;
use crate::dgm::DgmConfig;
use crate::error::{Result, SimError};

fn default_n_sim() -> usize {
    200
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodEntry {
    pub method: Method,
    #[serde(default)]
    pub params: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_n_sim")]
    pub n_sim: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub methods: Vec<MethodEntry>,
    pub cells: Vec<DgmConfig>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c))
}

impl CampaignConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut value: Value =
            serde_json::from_str(text).map_err(|e| SimError::config("<document>", e.to_string()))?;
        // A bare method name is shorthand for {"method": name}.
        if let Some(Value::Array(methods)) = value.get_mut("methods") {
            for m in methods.iter_mut() {
                if let Value::String(name) = m {
                    *m = serde_json::json!({ "method": name });
                }
            }
        }
        let config: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            let key = e.path().to_string();
            SimError::config(key, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sim < MIN_N_SIM {
            return Err(SimError::config("n_sim", format!("must be >= {MIN_N_SIM}, got {}", self.n_sim)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SimError::config("alpha", format!("must lie in (0, 1), got {}", self.alpha)));
        }
        if self.methods.is_empty() {
            return Err(SimError::config("methods", "at least one method is required"));
        }
        if self.cells.is_empty() {
            return Err(SimError::config("cells", "at least one cell is required"));
        }
        self.method_configs()?;
        let mut seen = BTreeSet::new();
        for (i, cell) in self.cells.iter().enumerate() {
            cell.validate().map_err(|e| match e {
                SimError::Config { key, message } => SimError::config(format!("cells[{i}].{key}"), message),
                other => other,
            })?;
            let id = cell.label();
            if !valid_id(&id) {
                return Err(SimError::config(
                    format!("cells[{i}].id"),
                    format!("{id:?} may only contain letters, digits, '_', '-' and '.'"),
                ));
            }
            if !seen.insert(id.clone()) {
                return Err(SimError::config(format!("cells[{i}].id"), format!("duplicate cell id {id:?}")));
            }
        }
        Ok(())
    }

    pub fn method_configs(&self) -> Result<Vec<MethodConfig>> {
        self.methods
            .iter()
            .enumerate()
            .map(|(i, m)| {
                MethodConfig::default_for(m.method)
                    .with_json(&m.params)
                    .map_err(|e| SimError::config(format!("methods[{i}].params"), e.to_string()))
            })
            .collect()
    }
}
