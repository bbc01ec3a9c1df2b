//! Confounder transforms `g_z` and the outcome model
//! `y = c·X̃ w_x + g_z(Z) w_z + ε`.

use dncit::seed::{derive_seed, rng_from_seed};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::confounders::{Role, Roster};
use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GzKind {
    Linear,
    Squared,
    Complex,
}

impl GzKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GzKind::Linear => "linear",
            GzKind::Squared => "squared",
            GzKind::Complex => "complex",
        }
    }
}

fn append(z: &DMatrix<f64>, extra: Vec<Vec<f64>>) -> DMatrix<f64> {
    let (n, p) = z.shape();
    let mut out = DMatrix::zeros(n, p + extra.len());
    out.columns_mut(0, p).copy_from(z);
    for (k, col) in extra.iter().enumerate() {
        out.column_mut(p + k).copy_from_slice(col);
    }
    out
}

/// `linear`: `Z`. `squared`: `Z` plus `s_j²` for continuous `j`. `complex`:
/// `squared` plus `s_j·s_sex` for continuous `j` plus `s_date³`, `s_date⁴`.
pub fn gz_transform(z: &DMatrix<f64>, roster: &Roster, kind: GzKind) -> Result<DMatrix<f64>> {
    if kind == GzKind::Linear {
        return Ok(z.clone());
    }
    let cont = roster.continuous();
    let col = |j: usize| -> Vec<f64> { z.column(j).iter().copied().collect() };
    let mut extra: Vec<Vec<f64>> = cont.iter().map(|&j| col(j).iter().map(|v| v * v).collect()).collect();
    if kind == GzKind::Complex {
        let sex = roster.position(Role::Sex).ok_or(SimError::MissingColumn {
            kind: "complex",
            role: "sex",
        })?;
        let date = roster.position(Role::Date).ok_or(SimError::MissingColumn {
            kind: "complex",
            role: "date",
        })?;
        let s = col(sex);
        for &j in &cont {
            extra.push(col(j).iter().zip(&s).map(|(a, b)| a * b).collect());
        }
        let d = col(date);
        extra.push(d.iter().map(|v| v.powi(3)).collect());
        extra.push(d.iter().map(|v| v.powi(4)).collect());
    }
    Ok(append(z, extra))
}

/// Outcome weights. `mask_redraws` counts how often an all-zero `a_x` mask
/// had to be redrawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeWeights {
    pub w_x: Vec<f64>,
    pub w_z: Vec<f64>,
    pub mask_redraws: usize,
}

/// `w_{x,j} = a_j|δ_{x,j}| / Σ|δ_x|` with `a_j ~ Bernoulli(0.5)` and
/// `w_{z,j} = |δ_{z,j}| / Σ|δ_z|`. Under `c = 1` a mask with no active
/// feature is redrawn.
pub fn draw_outcome_weights(q: usize, p_z: usize, c: u8, seed: u64) -> OutcomeWeights {
    let mut attempt = 0;
    loop {
        let mut rng = rng_from_seed(derive_seed(seed, 0, attempt as u64));
        let delta_x: Vec<f64> = (0..q).map(|_| rng.sample::<f64, _>(StandardNormal).abs()).collect();
        let mask: Vec<bool> = (0..q).map(|_| rng.random_bool(0.5)).collect();
        let delta_z: Vec<f64> = (0..p_z).map(|_| rng.sample::<f64, _>(StandardNormal).abs()).collect();
        if c == 1 && !mask.iter().any(|&a| a) {
            attempt += 1;
            continue;
        }
        let sx: f64 = delta_x.iter().sum();
        let sz: f64 = delta_z.iter().sum();
        return OutcomeWeights {
            w_x: delta_x.iter().zip(&mask).map(|(d, &a)| if a { d / sx } else { 0.0 }).collect(),
            w_z: delta_z.iter().map(|d| d / sz).collect(),
            mask_redraws: attempt,
        };
    }
}

/// The `c`-term `X̃ w_x`.
pub fn feature_signal(features: &DMatrix<f64>, w: &OutcomeWeights) -> DVector<f64> {
    features * DVector::from_column_slice(&w.w_x)
}

/// `y` with the given weights and `ε ~ N(0, noise_sd²)` drawn from `seed`.
pub fn outcome_with_weights(
    features: &DMatrix<f64>,
    gz: &DMatrix<f64>,
    c: u8,
    noise_sd: f64,
    w: &OutcomeWeights,
    seed: u64,
) -> DVector<f64> {
    let mut y = gz * DVector::from_column_slice(&w.w_z);
    if c == 1 {
        y += feature_signal(features, w);
    }
    let mut rng = rng_from_seed(seed);
    for v in y.iter_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *v += noise_sd * e;
    }
    y
}

/// Draws weights from `derive_seed(seed, 0, ·)` and noise from
/// `derive_seed(seed, 1, 0)`.
pub fn simulate_outcome(
    features: &DMatrix<f64>,
    gz: &DMatrix<f64>,
    c: u8,
    noise_sd: f64,
    seed: u64,
) -> (DVector<f64>, OutcomeWeights) {
    let w = draw_outcome_weights(features.ncols(), gz.ncols(), c, derive_seed(seed, 0, 0));
    let y = outcome_with_weights(features, gz, c, noise_sd, &w, derive_seed(seed, 1, 0));
    (y, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_are_normalized() {
        let w = draw_outcome_weights(139, 5, 1, 3);
        assert!((w.w_z.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.w_x.iter().all(|&v| v >= 0.0));
        let active = w.w_x.iter().filter(|&&v| v > 0.0).count();
        assert!(active > 0 && active < 139);
    }

    #[test]
    fn empty_mask_is_redrawn_under_dependence() {
        // With q = 1 roughly half the masks are empty.
        let redrawn = (0..200).map(|s| draw_outcome_weights(1, 1, 1, s)).filter(|w| w.mask_redraws > 0).count();
        assert!(redrawn > 50);
        for s in 0..200 {
            assert!(draw_outcome_weights(1, 1, 1, s).w_x[0] > 0.0);
            assert_eq!(draw_outcome_weights(1, 1, 0, s).mask_redraws, 0);
        }
    }
}
