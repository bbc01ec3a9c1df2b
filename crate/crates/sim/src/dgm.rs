//! Data-generating mechanisms: one configured world, many replications.

use dncit::cpt_kpc::ConditionalModel;
use dncit::embeddings::{apply_embedding, fit_pca_embedding, EmbeddingKind, EmbeddingSpec, FittedEmbedding, RawObjectSet};
use dncit::seed::{derive_seed, stream};
use dncit::stats::variance;
use dncit::FeatureSample;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::confounders::{generate_confounders, Roster};
use crate::error::{Result, SimError};
use crate::features::FeatureMap;
use crate::outcome::{draw_outcome_weights, feature_signal, gz_transform, outcome_with_weights, GzKind, OutcomeWeights};

pub const DEFAULT_TRUE_DIM: usize = 139;
pub const MIN_N: usize = 50;
const PILOT_N: usize = 2000;
const PILOT_DRAWS: u64 = 20;

mod streams {
    pub const FEATURES: u64 = 101;
    pub const PROJECTION: u64 = 102;
    pub const PILOT: u64 = 103;
    pub const OUTCOME: u64 = 104;
}

fn default_q() -> usize {
    DEFAULT_TRUE_DIM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgmConfig {
    /// Label used for output files; derived from the settings when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub n: usize,
    pub conf_dim: usize,
    pub g_z_kind: GzKind,
    pub c: u8,
    /// Identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_for_test: Option<EmbeddingSpec>,
    #[serde(default = "default_q")]
    pub true_dim_q: usize,
    #[serde(default)]
    pub weight_seed: u64,
    #[serde(default)]
    pub data_seed: u64,
    /// SD of `ε`; calibrated by a pilot draw when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sd: Option<f64>,
}

impl DgmConfig {
    pub fn new(n: usize, conf_dim: usize, g_z_kind: GzKind, c: u8) -> Self {
        Self {
            id: None,
            n,
            conf_dim,
            g_z_kind,
            c,
            embedding_for_test: None,
            true_dim_q: DEFAULT_TRUE_DIM,
            weight_seed: 0,
            data_seed: 0,
            noise_sd: None,
        }
    }

    pub fn with_embedding(mut self, spec: EmbeddingSpec) -> Self {
        self.embedding_for_test = Some(spec);
        self
    }

    pub fn with_q(mut self, q: usize) -> Self {
        self.true_dim_q = q;
        self
    }

    pub fn with_seeds(mut self, weight_seed: u64, data_seed: u64) -> Self {
        self.weight_seed = weight_seed;
        self.data_seed = data_seed;
        self
    }

    pub fn embedding(&self) -> EmbeddingSpec {
        self.embedding_for_test
            .clone()
            .unwrap_or_else(|| EmbeddingSpec::identity(self.true_dim_q))
    }

    pub fn label(&self) -> String {
        if let Some(id) = &self.id {
            return id.clone();
        }
        let emb = match self.embedding().kind {
            EmbeddingKind::Identity => "identity".to_string(),
            EmbeddingKind::Noisy => "noisy".to_string(),
            EmbeddingKind::LinearProjection => format!("proj{}", self.embedding().dim_out),
            EmbeddingKind::PcaInsample => format!("pca{}", self.embedding().dim_out),
            EmbeddingKind::Precomputed => "precomputed".to_string(),
        };
        format!("n{}_d{}_{}_c{}_{}", self.n, self.conf_dim, self.g_z_kind.as_str(), self.c, emb)
    }

    /// Checks every field; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        if self.n < MIN_N {
            return Err(SimError::config("n", format!("must be >= {MIN_N}, got {}", self.n)));
        }
        let roster = Roster::new(self.conf_dim).map_err(|e| SimError::config("conf_dim", e.to_string()))?;
        if self.c > 1 {
            return Err(SimError::config("c", format!("must be 0 or 1, got {}", self.c)));
        }
        if self.true_dim_q == 0 {
            return Err(SimError::config("true_dim_q", "must be >= 1"));
        }
        if let Some(sd) = self.noise_sd {
            if !(sd > 0.0 && sd.is_finite()) {
                return Err(SimError::config("noise_sd", format!("must be positive, got {sd}")));
            }
        }
        if self.g_z_kind == GzKind::Complex {
            gz_transform(&DMatrix::zeros(1, roster.len()), &roster, GzKind::Complex)
                .map_err(|e| SimError::config("g_z_kind", e.to_string()))?;
        }
        let emb = self.embedding();
        emb.validate()
            .map_err(|e| SimError::config("embedding_for_test", e.to_string()))?;
        match emb.kind {
            EmbeddingKind::Precomputed => {
                return Err(SimError::config(
                    "embedding_for_test.kind",
                    "precomputed embeddings cannot be simulated",
                ))
            }
            EmbeddingKind::LinearProjection | EmbeddingKind::PcaInsample if emb.dim_out > self.true_dim_q => {
                return Err(SimError::config(
                    "embedding_for_test.dim_out",
                    format!("must be <= true_dim_q = {}", self.true_dim_q),
                ))
            }
            _ => {}
        }
        Ok(())
    }
}

/// One simulated dataset.
#[derive(Debug, Clone)]
pub struct Replication {
    /// `X^ω` after the test embedding, with `Y` and `Z`.
    pub sample: FeatureSample,
    pub true_features: DMatrix<f64>,
    pub gz: DMatrix<f64>,
    pub weights: OutcomeWeights,
    pub noise_sd: f64,
}

impl Replication {
    /// `E[Y | Z]` and `Var(ε)`; the exact conditional law of `Y` when `c = 0`.
    pub fn true_conditional_model(&self) -> dncit::Result<ConditionalModel> {
        let means = &self.gz * DVector::from_column_slice(&self.weights.w_z);
        ConditionalModel::known(means.iter().copied().collect(), self.noise_sd * self.noise_sd)
    }
}

/// A validated configuration with its fixed structure drawn.
#[derive(Debug, Clone)]
pub struct PreparedDgm {
    pub config: DgmConfig,
    pub roster: Roster,
    pub feature_map: FeatureMap,
    projection: Option<FittedEmbedding>,
    pub noise_sd: f64,
    /// Whether `noise_sd` came from the pilot draw.
    pub noise_sd_calibrated: bool,
}

impl PreparedDgm {
    pub fn new(config: &DgmConfig) -> Result<Self> {
        config.validate()?;
        let roster = Roster::new(config.conf_dim)?;
        let (z_pilot, _) = generate_confounders(
            PILOT_N,
            config.conf_dim,
            derive_seed(config.weight_seed, streams::FEATURES, 1),
        )?;
        let feature_map = FeatureMap::new(
            &z_pilot.select_columns(&roster.continuous()),
            config.true_dim_q,
            derive_seed(config.weight_seed, streams::FEATURES, 0),
        );
        let emb = config.embedding();
        let projection = match emb.kind {
            EmbeddingKind::LinearProjection => Some(FittedEmbedding::random_projection(
                config.true_dim_q,
                emb.dim_out,
                derive_seed(config.weight_seed, streams::PROJECTION, 0),
            )?),
            _ => None,
        };
        let mut prepared = Self {
            config: config.clone(),
            roster,
            feature_map,
            projection,
            noise_sd: 1.0,
            noise_sd_calibrated: false,
        };
        match config.noise_sd {
            Some(sd) => prepared.noise_sd = sd,
            None => {
                prepared.noise_sd = prepared.pilot_noise_sd()?;
                prepared.noise_sd_calibrated = true;
            }
        }
        Ok(prepared)
    }

    /// SD making `Var(X̃ w_x) / Var(ε) = 1`, averaged over pilot weight draws.
    fn pilot_noise_sd(&self) -> Result<f64> {
        let seed = derive_seed(self.config.weight_seed, streams::PILOT, 0);
        let (z, _) = generate_confounders(PILOT_N, self.config.conf_dim, derive_seed(seed, 1, 0))?;
        let x = self.feature_map.generate(&self.continuous_block(&z), derive_seed(seed, 2, 0));
        let gz = gz_transform(&z, &self.roster, self.config.g_z_kind)?;
        let mut total = 0.0;
        for d in 0..PILOT_DRAWS {
            let w = draw_outcome_weights(x.ncols(), gz.ncols(), 1, derive_seed(seed, 3, d));
            let mean = feature_signal(&x, &w) + &gz * DVector::from_column_slice(&w.w_z);
            let s: Vec<f64> = mean.iter().copied().collect();
            total += variance(&s);
        }
        Ok((total / PILOT_DRAWS as f64).sqrt())
    }

    fn continuous_block(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        z.select_columns(&self.roster.continuous())
    }

    /// Dataset for replication seed `rep_seed`.
    pub fn replicate(&self, rep_seed: u64) -> Result<Replication> {
        let cfg = &self.config;
        let base = derive_seed(cfg.data_seed, stream::REPLICATION, rep_seed);
        let (z, _) = generate_confounders(cfg.n, cfg.conf_dim, derive_seed(base, 1, 0))?;
        let features = self.feature_map.generate(&self.continuous_block(&z), derive_seed(base, 2, 0));
        let gz = gz_transform(&z, &self.roster, cfg.g_z_kind)?;
        let weights = draw_outcome_weights(
            features.ncols(),
            gz.ncols(),
            cfg.c,
            derive_seed(cfg.weight_seed, streams::OUTCOME, rep_seed),
        );
        let y = outcome_with_weights(&features, &gz, cfg.c, self.noise_sd, &weights, derive_seed(base, 3, 0));
        let raw = RawObjectSet::new(features.clone())?;
        let emb = cfg.embedding();
        let x = match emb.kind {
            EmbeddingKind::Identity => features.clone(),
            EmbeddingKind::Noisy => {
                let fit = FittedEmbedding::noisy(features.ncols(), emb.noise_variance, derive_seed(base, 4, 0))?;
                apply_embedding(&fit, &raw)?
            }
            EmbeddingKind::LinearProjection => apply_embedding(self.projection.as_ref().expect("drawn in new"), &raw)?,
            EmbeddingKind::PcaInsample => apply_embedding(&fit_pca_embedding(&raw, emb.dim_out)?, &raw)?,
            EmbeddingKind::Precomputed => unreachable!("rejected by validate"),
        };
        let sample = FeatureSample::new(x, y, z, self.roster.meta())?;
        Ok(Replication {
            sample,
            true_features: features,
            gz,
            weights,
            noise_sd: self.noise_sd,
        })
    }
}
