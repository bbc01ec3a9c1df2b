//! Synthetic "true" features: nonlinear functions of the continuous
//! confounders plus individual-level noise.

use dncit::data::standardize_columns;
use dncit::seed::{derive_seed, rng_from_seed};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Width of the hidden tanh layer.
pub const LATENT_RANK: usize = 8;
pub const FEATURE_NOISE_SD: f64 = 0.7;
/// Individual factors shared by all features through `E`.
pub const NOISE_FACTORS: usize = 4;
/// Share of the variance of `E` carried by the shared factors.
pub const NOISE_FACTOR_SHARE: f64 = 0.25;

/// Target band for the correlation of a feature with its strongest driver.
pub const DRIVER_BAND: (f64, f64) = (0.2, 0.8);
const MAX_REDRAWS: usize = 200;

const STRUCTURE: u64 = 1;
const NOISE: u64 = 2;

/// `X̃ = tanh(Z_c A + 1 oᵀ) B + E`, then column-standardized.
///
/// `E_{ij} = s (√ρ ⟨L_j, F_i⟩ + √(1−ρ) η_{ij})` with unit-norm nonnegative
/// loading rows `L_j`, standard normal factors `F_i` and idiosyncratic `η`,
/// so every entry of `E` has SD `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    /// `p_c × r`.
    pub a: DMatrix<f64>,
    pub offset: Vec<f64>,
    /// `r × q`.
    pub b: DMatrix<f64>,
    /// `q × k`.
    pub loadings: DMatrix<f64>,
    pub noise_sd: f64,
    pub factor_share: f64,
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            let g: f64 = rng.sample(StandardNormal);
            m[(i, j)] = scale * g;
        }
    }
    m
}

impl FeatureMap {
    /// Draws `A ~ N(0, 1/p_c)`, offsets `~ N(0, 1)`, `B ~ N(0, 1/r)` and the
    /// loadings from `seed`. Each column of `B` is redrawn until, on the pilot
    /// confounders `z_pilot`, the feature's correlation with its strongest
    /// driver lies in [`DRIVER_BAND`].
    pub fn new(z_pilot: &DMatrix<f64>, q: usize, seed: u64) -> Self {
        let p_cont = z_pilot.ncols();
        let mut rng = rng_from_seed(derive_seed(seed, STRUCTURE, 0));
        let a = gaussian_matrix(p_cont, LATENT_RANK, 1.0 / (p_cont.max(1) as f64).sqrt(), &mut rng);
        let offset: Vec<f64> = (0..LATENT_RANK).map(|_| rng.sample(StandardNormal)).collect();
        let mut map = Self {
            a,
            offset,
            b: DMatrix::zeros(LATENT_RANK, q),
            loadings: DMatrix::zeros(q, NOISE_FACTORS),
            noise_sd: FEATURE_NOISE_SD,
            factor_share: NOISE_FACTOR_SHARE,
        };

        let h = centered(&map.hidden(z_pilot));
        let zc = centered(z_pilot);
        let m = (z_pilot.nrows().max(2) - 1) as f64;
        let cov_hz = h.tr_mul(&zc) / m;
        let cov_hh = h.tr_mul(&h) / m;
        let var_z: Vec<f64> = zc.column_iter().map(|c| c.norm_squared() / m).collect();
        let scale = 1.0 / (LATENT_RANK as f64).sqrt();
        for j in 0..q {
            let mut col = gaussian_matrix(LATENT_RANK, 1, scale, &mut rng);
            for _ in 0..MAX_REDRAWS {
                let var = (col.transpose() * &cov_hh * &col)[(0, 0)] + map.noise_sd * map.noise_sd;
                let best = (0..p_cont)
                    .map(|l| (col.dot(&cov_hz.column(l)) / (var * var_z[l]).sqrt()).abs())
                    .fold(0.0, f64::max);
                if (DRIVER_BAND.0..=DRIVER_BAND.1).contains(&best) {
                    break;
                }
                col = gaussian_matrix(LATENT_RANK, 1, scale, &mut rng);
            }
            map.b.set_column(j, &col.column(0));
        }

        let mut loadings = gaussian_matrix(q, NOISE_FACTORS, 1.0, &mut rng).abs();
        for mut row in loadings.row_iter_mut() {
            let norm = row.norm();
            row /= norm;
        }
        map.loadings = loadings;
        map
    }

    /// `tanh(Z_c A + 1 oᵀ)`.
    pub fn hidden(&self, z_cont: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = z_cont * &self.a;
        for (k, mut col) in h.column_iter_mut().enumerate() {
            let o = self.offset[k];
            col.apply(|v| *v = (*v + o).tanh());
        }
        h
    }

    pub fn q(&self) -> usize {
        self.b.ncols()
    }

    pub fn p_cont(&self) -> usize {
        self.a.nrows()
    }

    /// Features before standardization.
    pub fn generate_raw(&self, z_cont: &DMatrix<f64>, seed: u64) -> DMatrix<f64> {
        let n = z_cont.nrows();
        let mut x = self.hidden(z_cont) * &self.b;
        if self.noise_sd > 0.0 {
            let mut rng = rng_from_seed(derive_seed(seed, NOISE, 0));
            let f = gaussian_matrix(n, self.loadings.ncols(), 1.0, &mut rng);
            let eta = gaussian_matrix(n, self.q(), 1.0, &mut rng);
            let shared = f * self.loadings.transpose();
            let (ws, wi) = (self.factor_share.sqrt(), (1.0 - self.factor_share).sqrt());
            x += (shared * ws + eta * wi) * self.noise_sd;
        }
        x
    }

    pub fn generate(&self, z_cont: &DMatrix<f64>, seed: u64) -> DMatrix<f64> {
        standardize_columns(&self.generate_raw(z_cont, seed)).0
    }
}

fn centered(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = m.clone();
    for mut col in c.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    c
}

/// One-shot form: structure (screened on `z_cont` itself) and noise both
/// derived from `seed`.
pub fn generate_true_features(z_cont: &DMatrix<f64>, q: usize, seed: u64) -> DMatrix<f64> {
    FeatureMap::new(z_cont, q, seed).generate(z_cont, seed)
}
