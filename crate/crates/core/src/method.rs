//! Uniform entry point over the implemented tests.

use serde::Serialize;
use serde_json::Value;

use crate::cmiknn::{cmiknn_test, CmiParams};
use crate::cpt_kpc::{cpt_kpc_test, KpcParams};
use crate::data::{FeatureSample, Method, TestOutcome};
use crate::error::{Error, Result};
use crate::fcit::{fcit_test, FcitParams};
use crate::rcot::{rcot_test, RcotParams};
use crate::wald::{wald_test, WaldParams};

#[derive(Debug, Clone, PartialEq)]
pub enum MethodConfig {
    Rcot(RcotParams),
    CptKpc(KpcParams),
    Cmiknn(CmiParams),
    Fcit(FcitParams),
    Wald(WaldParams),
}

fn merge<T: Serialize + serde::de::DeserializeOwned>(method: Method, base: &T, pairs: &[(String, String)]) -> Result<T> {
    let mut obj = match serde_json::to_value(base) {
        Ok(Value::Object(m)) => m,
        _ => return Err(Error::InvalidParam(format!("{method} parameters are not an object"))),
    };
    for (k, v) in pairs {
        if !obj.contains_key(k) {
            let known: Vec<&str> = obj.keys().map(String::as_str).collect();
            return Err(Error::InvalidParam(format!(
                "unknown parameter `{k}` for {method}; known: {}",
                known.join(", ")
            )));
        }
        let parsed = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.clone()));
        obj.insert(k.clone(), parsed);
    }
    serde_json::from_value(Value::Object(obj)).map_err(|e| Error::InvalidParam(format!("{method}: {e}")))
}

/// Splits `key=value` into its parts.
pub fn parse_pair(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Error::InvalidParam(format!("expected key=value, got `{s}`"))),
    }
}

impl MethodConfig {
    pub fn default_for(method: Method) -> Self {
        match method {
            Method::Rcot => Self::Rcot(RcotParams::default()),
            Method::CptKpc => Self::CptKpc(KpcParams::default()),
            Method::Cmiknn => Self::Cmiknn(CmiParams::default()),
            Method::Fcit => Self::Fcit(FcitParams::default()),
            Method::Wald => Self::Wald(WaldParams::default()),
        }
    }

    /// Defaults overridden by `key=value` pairs; values are read as JSON when
    /// they parse, otherwise as strings.
    pub fn from_pairs(method: Method, pairs: &[(String, String)]) -> Result<Self> {
        Self::default_for(method).with_pairs(pairs)
    }

    pub fn with_pairs(&self, pairs: &[(String, String)]) -> Result<Self> {
        let m = self.method();
        Ok(match self {
            Self::Rcot(p) => Self::Rcot(merge(m, p, pairs)?),
            Self::CptKpc(p) => Self::CptKpc(merge(m, p, pairs)?),
            Self::Cmiknn(p) => Self::Cmiknn(merge(m, p, pairs)?),
            Self::Fcit(p) => Self::Fcit(merge(m, p, pairs)?),
            Self::Wald(p) => Self::Wald(merge(m, p, pairs)?),
        })
    }

    /// Overrides from a JSON object.
    pub fn with_json(&self, params: &serde_json::Map<String, Value>) -> Result<Self> {
        let pairs: Vec<(String, String)> = params.iter().map(|(k, v)| (k.clone(), v.to_string())).collect();
        self.with_pairs(&pairs)
    }

    pub fn method(&self) -> Method {
        match self {
            Self::Rcot(_) => Method::Rcot,
            Self::CptKpc(_) => Method::CptKpc,
            Self::Cmiknn(_) => Method::Cmiknn,
            Self::Fcit(_) => Method::Fcit,
            Self::Wald(_) => Method::Wald,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Self::Rcot(p) => p.seed,
            Self::CptKpc(p) => p.seed,
            Self::Cmiknn(p) => p.seed,
            Self::Fcit(p) => p.seed,
            Self::Wald(_) => 0,
        }
    }

    /// Same configuration with a different seed; the F test has none.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        match &mut c {
            Self::Rcot(p) => p.seed = seed,
            Self::CptKpc(p) => p.seed = seed,
            Self::Cmiknn(p) => p.seed = seed,
            Self::Fcit(p) => p.seed = seed,
            Self::Wald(_) => {}
        }
        c
    }

    pub fn params_json(&self) -> Value {
        match self {
            Self::Rcot(p) => serde_json::to_value(p),
            Self::CptKpc(p) => serde_json::to_value(p),
            Self::Cmiknn(p) => serde_json::to_value(p),
            Self::Fcit(p) => serde_json::to_value(p),
            Self::Wald(p) => serde_json::to_value(p),
        }
        .unwrap_or(Value::Null)
    }

    pub fn run(&self, s: &FeatureSample, alpha: f64) -> Result<TestOutcome> {
        let mut out = match self {
            Self::Rcot(p) => rcot_test(s, p, alpha),
            Self::CptKpc(p) => cpt_kpc_test(s, p, alpha),
            Self::Cmiknn(p) => cmiknn_test(s, p, alpha),
            Self::Fcit(p) => fcit_test(s, p, alpha),
            Self::Wald(p) => wald_test(s, p, alpha),
        }?;
        out.seed = self.seed();
        Ok(out)
    }
}
