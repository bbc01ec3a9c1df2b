//! Conditional permutation test with the graph kernel partial correlation.

pub mod gam;
pub mod kpc;
pub mod sampler;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{check_alpha, FeatureSample, Method, Params, TestOutcome};
use crate::error::{Error, Result};

pub use gam::{bspline_basis, fit_conditional_model, BasisTerm, ConditionalModel};
pub use kpc::{kpc_statistic, KpcContext};
pub use sampler::{cpt_sample_permutations, run_chain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KpcParams {
    pub k_graph: usize,
    /// `None` selects the median heuristic on standardized `X^ω`.
    pub kernel_sigma: Option<f64>,
    pub num_permutations: usize,
    pub sweeps: usize,
    pub seed: u64,
}

impl Default for KpcParams {
    fn default() -> Self {
        Self {
            k_graph: 10,
            kernel_sigma: None,
            num_permutations: 199,
            sweeps: 50,
            seed: 0,
        }
    }
}

impl KpcParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_graph == 0 {
            return Err(Error::InvalidParam("k_graph must be >= 1".into()));
        }
        if self.num_permutations < 19 {
            return Err(Error::InvalidParam("num_permutations must be >= 19".into()));
        }
        if let Some(s) = self.kernel_sigma {
            if !(s > 0.0) {
                return Err(Error::NonPositive(s));
            }
        }
        Ok(())
    }
}

/// `(1 + #{T_m ≥ T}) / (1 + M)`.
pub fn permutation_pvalue(observed: f64, permuted: &[f64]) -> f64 {
    let exceed = permuted.iter().filter(|&&t| t >= observed).count();
    (1 + exceed) as f64 / (1 + permuted.len()) as f64
}

/// Observed statistic and the statistics under each supplied permutation.
pub fn kpc_permutation_statistics(s: &FeatureSample, p: &KpcParams, perms: &[Vec<usize>]) -> Result<(f64, Vec<f64>, f64)> {
    let ctx = KpcContext::new(s, p.k_graph, p.kernel_sigma)?;
    let observed = ctx.statistic_permuted(None)?;
    let permuted = perms
        .par_iter()
        .map(|pm| ctx.statistic_permuted(Some(pm)))
        .collect::<Result<Vec<_>>>()?;
    Ok((observed, permuted, ctx.sigma()))
}

/// Runs the test with a supplied model of `Y | Z` instead of a fitted one.
pub fn cpt_kpc_test_with_model(s: &FeatureSample, p: &KpcParams, model: &ConditionalModel, alpha: f64) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    p.validate()?;
    let start = Instant::now();
    if model.n() != s.n() {
        return Err(Error::DimMismatch {
            expected: s.n(),
            got: model.n(),
        });
    }
    let y: Vec<f64> = s.y().iter().copied().collect();
    let perms = cpt_sample_permutations(model, &y, p.num_permutations, p.sweeps, p.seed);
    let (observed, permuted, sigma) = kpc_permutation_statistics(s, p, &perms)?;
    let pv = permutation_pvalue(observed, &permuted);
    let mut params = Params::new();
    params.insert("k_graph".into(), json!(p.k_graph));
    params.insert("kernel_sigma".into(), json!(sigma));
    params.insert("num_permutations".into(), json!(p.num_permutations));
    params.insert("sweeps".into(), json!(p.sweeps));
    params.insert("model_sigma2".into(), json!(model.sigma2));
    params.insert("model_edf".into(), json!(model.edf));
    if !model.dropped_columns.is_empty() {
        params.insert("dropped_basis_columns".into(), json!(model.dropped_columns));
    }
    Ok(TestOutcome::new(Method::CptKpc, s, observed, pv, alpha, params, p.seed).with_runtime(start))
}

pub fn cpt_kpc_test(s: &FeatureSample, p: &KpcParams, alpha: f64) -> Result<TestOutcome> {
    p.validate()?;
    let start = Instant::now();
    let model = fit_conditional_model(s.y(), s.z(), s.z_meta())?;
    let mut out = cpt_kpc_test_with_model(s, p, &model, alpha)?;
    out.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(out)
}
