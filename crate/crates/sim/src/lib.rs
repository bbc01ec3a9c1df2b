//! Simulation harness: synthetic confounders and features, outcome models
//! with and without conditional dependence, and replicated test campaigns.

pub mod campaign;
pub mod confounders;
pub mod config;
pub mod dgm;
pub mod error;
pub mod features;
pub mod outcome;
pub mod output;

pub use campaign::{replication_seed, run_campaign, run_methods, CampaignResult, ReplicationRecord};
pub use config::{CampaignConfig, MethodEntry};
pub use dgm::{DgmConfig, PreparedDgm, Replication};
pub use error::{Result, SimError};
pub use outcome::GzKind;
pub use output::{write_outputs, CellResults};

use dncit::method::MethodConfig;

/// Runs every cell of `config` on the current rayon pool.
pub fn run_config(config: &CampaignConfig) -> Result<Vec<CellResults>> {
    let methods: Vec<MethodConfig> = config.method_configs()?;
    config
        .cells
        .iter()
        .map(|cell| {
            let prepared = PreparedDgm::new(cell)?;
            Ok(CellResults {
                id: cell.label(),
                results: run_methods(&prepared, &methods, config.n_sim, config.alpha, config.master_seed)?,
            })
        })
        .collect()
}
