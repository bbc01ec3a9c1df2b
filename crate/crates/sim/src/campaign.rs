//! Replicated runs of one or more tests on one data-generating mechanism.

use dncit::method::MethodConfig;
use dncit::seed::{derive_seed, stream};
use dncit::stats::{ks_uniform, mean, monte_carlo_se, rejection_rate};
use dncit::Method;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgm::{DgmConfig, PreparedDgm};
use crate::error::{Result, SimError};

pub const MIN_N_SIM: usize = 20;
const METHOD_STREAM: u64 = 105;

/// Seed of replication `r` under `master_seed`.
pub fn replication_seed(master_seed: u64, r: usize) -> u64 {
    derive_seed(master_seed, stream::REPLICATION, r as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    pub p_value: Option<f64>,
    pub statistic: Option<f64>,
    pub runtime_ms: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub dgm: DgmConfig,
    pub method: Method,
    pub params: serde_json::Value,
    pub alpha: f64,
    pub n_sim: usize,
    /// One entry per replication; `None` where the test failed.
    pub p_values: Vec<Option<f64>>,
    /// Over the replications that produced a p-value.
    pub rejection_rate: f64,
    pub mc_se: f64,
    pub mean_runtime_ms: f64,
    pub ks_stat: f64,
    pub n_errors: usize,
    pub noise_sd: f64,
    pub noise_sd_calibrated: bool,
    #[serde(skip)]
    pub records: Vec<ReplicationRecord>,
}

impl CampaignResult {
    fn from_records(prepared: &PreparedDgm, method: &MethodConfig, alpha: f64, records: Vec<ReplicationRecord>) -> Self {
        let ok: Vec<f64> = records.iter().filter_map(|r| r.p_value).collect();
        let runtimes: Vec<f64> = records.iter().filter(|r| r.p_value.is_some()).map(|r| r.runtime_ms).collect();
        let rr = rejection_rate(&ok, alpha);
        Self {
            dgm: prepared.config.clone(),
            method: method.method(),
            params: method.params_json(),
            alpha,
            n_sim: records.len(),
            p_values: records.iter().map(|r| r.p_value).collect(),
            rejection_rate: rr,
            mc_se: monte_carlo_se(rr, ok.len()),
            mean_runtime_ms: mean(&runtimes),
            ks_stat: ks_uniform(&ok),
            n_errors: records.len() - ok.len(),
            noise_sd: prepared.noise_sd,
            noise_sd_calibrated: prepared.noise_sd_calibrated,
            records,
        }
    }

    /// P-values of the successful replications.
    pub fn successful_p_values(&self) -> Vec<f64> {
        self.p_values.iter().flatten().copied().collect()
    }
}

fn check(n_sim: usize, alpha: f64) -> Result<()> {
    if n_sim < MIN_N_SIM {
        return Err(SimError::config("n_sim", format!("must be >= {MIN_N_SIM}, got {n_sim}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SimError::config("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Runs every method on the same `n_sim` datasets. Replications run in
/// parallel on the current rayon pool; results do not depend on its size.
pub fn run_methods(
    prepared: &PreparedDgm,
    methods: &[MethodConfig],
    n_sim: usize,
    alpha: f64,
    master_seed: u64,
) -> Result<Vec<CampaignResult>> {
    check(n_sim, alpha)?;
    let per_rep: Vec<Vec<ReplicationRecord>> = (0..n_sim)
        .into_par_iter()
        .map(|r| {
            let seed = replication_seed(master_seed, r);
            let failed = |e: String| ReplicationRecord {
                replication: r,
                seed,
                p_value: None,
                statistic: None,
                runtime_ms: 0.0,
                error: Some(e),
            };
            let data = match prepared.replicate(seed) {
                Ok(d) => d,
                Err(e) => return methods.iter().map(|_| failed(e.to_string())).collect(),
            };
            methods
                .iter()
                .map(|m| {
                    let cfg = m.with_seed(derive_seed(seed, METHOD_STREAM, 0));
                    match cfg.run(&data.sample, alpha) {
                        Ok(o) => ReplicationRecord {
                            replication: r,
                            seed,
                            p_value: Some(o.p_value),
                            statistic: Some(o.statistic),
                            runtime_ms: o.runtime_ms,
                            error: None,
                        },
                        Err(e) => failed(e.to_string()),
                    }
                })
                .collect()
        })
        .collect();
    Ok(methods
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let records = per_rep.iter().map(|recs| recs[k].clone()).collect();
            CampaignResult::from_records(prepared, m, alpha, records)
        })
        .collect())
}

pub fn run_campaign(
    dgm: &DgmConfig,
    method: &MethodConfig,
    n_sim: usize,
    alpha: f64,
    master_seed: u64,
) -> Result<CampaignResult> {
    let prepared = PreparedDgm::new(dgm)?;
    Ok(run_methods(&prepared, std::slice::from_ref(method), n_sim, alpha, master_seed)?
        .pop()
        .expect("one method"))
}
