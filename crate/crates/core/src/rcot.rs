//! Randomized conditional correlation test.
//!
//! `X`, `Y` and `Z` are mapped through random Fourier features, the feature
//! blocks of `X` and `Y` are residualized on those of `Z` by ridge regression,
//! and the squared Frobenius norm of the residual cross-covariance is compared
//! with a weighted chi-square null.

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{check_alpha, standardize_columns, FeatureSample, Method, Params, TestOutcome};
use crate::error::{Error, Result};
use crate::kernels::{median_heuristic, rff_features, sample_rff, RffBasis, DEFAULT_BANDWIDTH_CAP};
use crate::linalg::ridge_residuals;
use crate::seed::{derive_seed, rng_from_seed, stream};
use crate::stats::chi2_sf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullMethod {
    MomentMatch,
    Permutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RcotParams {
    /// Fourier features for `X^ω`.
    pub num_f_x: usize,
    /// Fourier features for `Y`.
    pub num_f_y: usize,
    /// Fourier features for `Z`.
    pub num_f_z: usize,
    pub ridge_lambda: f64,
    pub seed: u64,
    pub null_method: NullMethod,
    /// Only used by the permutation null.
    pub num_permutations: usize,
    /// Rows used by the median heuristic.
    pub bandwidth_cap: usize,
}

impl Default for RcotParams {
    fn default() -> Self {
        Self {
            num_f_x: 25,
            num_f_y: 5,
            num_f_z: 100,
            ridge_lambda: 0.1,
            seed: 0,
            null_method: NullMethod::MomentMatch,
            num_permutations: 499,
            bandwidth_cap: DEFAULT_BANDWIDTH_CAP,
        }
    }
}

impl RcotParams {
    /// The smaller feature counts `a = b = 5, c = 100`.
    pub fn compact() -> Self {
        Self {
            num_f_x: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_f_x == 0 || self.num_f_y == 0 || self.num_f_z == 0 {
            return Err(Error::InvalidParam("feature counts a, b, c must be >= 1".into()));
        }
        if !(self.ridge_lambda > 0.0) {
            return Err(Error::InvalidParam("ridge_lambda must be positive".into()));
        }
        if self.null_method == NullMethod::Permutation && self.num_permutations == 0 {
            return Err(Error::InvalidParam("num_permutations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Random Fourier bases for the three blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct RcotBases {
    pub x: RffBasis,
    pub y: RffBasis,
    pub z: Option<RffBasis>,
}

#[derive(Debug, Clone)]
pub struct RcotStatistic {
    pub statistic: f64,
    /// `n × (a·b)`; column `j·b + k` is `Ares[:, j] ∘ Bres[:, k]`.
    pub residual_products: DMatrix<f64>,
    pub a_res: DMatrix<f64>,
    pub b_res: DMatrix<f64>,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_z: Option<f64>,
}

fn standardized_features(basis: &RffBasis, block: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(standardize_columns(&rff_features(basis, block)?).0)
}

/// Statistic for inputs that are already standardized, with explicit bases.
pub fn rcot_statistic_with_bases(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    bases: &RcotBases,
    ridge_lambda: f64,
) -> Result<RcotStatistic> {
    let n = x.nrows();
    if y.nrows() != n || (z.ncols() > 0 && z.nrows() != n) {
        return Err(Error::RowMismatch("blocks differ in row count".into()));
    }
    if n <= 2 {
        return Err(Error::TooFewRows(format!("RCoT needs n > 2, got {n}")));
    }
    let a = standardized_features(&bases.x, x)?;
    let b = standardized_features(&bases.y, y)?;
    let (a_res, b_res) = match (&bases.z, z.ncols()) {
        (Some(bz), p) if p > 0 => {
            let c = standardized_features(bz, z)?;
            (
                ridge_residuals(&c, &a, ridge_lambda)?,
                ridge_residuals(&c, &b, ridge_lambda)?,
            )
        }
        // Without confounders the standardized features are already centered.
        _ => (a, b),
    };
    let cross = a_res.tr_mul(&b_res) / (n - 1) as f64;
    let statistic = n as f64 * cross.norm_squared();

    let (na, nb) = (a_res.ncols(), b_res.ncols());
    let mut residual_products = DMatrix::zeros(n, na * nb);
    for j in 0..na {
        for k in 0..nb {
            let col = a_res.column(j).component_mul(&b_res.column(k));
            residual_products.set_column(j * nb + k, &col);
        }
    }
    Ok(RcotStatistic {
        statistic,
        residual_products,
        a_res,
        b_res,
        sigma_x: bases.x.sigma,
        sigma_y: bases.y.sigma,
        sigma_z: bases.z.as_ref().map(|b| b.sigma),
    })
}

/// RCoT statistic on matrix blocks; `y` may have several columns.
pub fn rcot_statistic_blocks(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    p: &RcotParams,
) -> Result<RcotStatistic> {
    p.validate()?;
    let (xs, _, _) = standardize_columns(x);
    let (ys, _, y_sds) = standardize_columns(y);
    if y_sds.iter().all(|&s| s == 0.0) {
        return Err(Error::DegenerateY);
    }
    let cap = p.bandwidth_cap;
    let sigma_x = median_heuristic(&xs, cap);
    let sigma_y = median_heuristic(&ys, cap);
    let bx = sample_rff(xs.ncols(), p.num_f_x, sigma_x, derive_seed(p.seed, stream::RFF_X, 0))?;
    let by = sample_rff(ys.ncols(), p.num_f_y, sigma_y, derive_seed(p.seed, stream::RFF_Y, 0))?;
    let (zs, bz) = if z.ncols() > 0 {
        let (zs, _, _) = standardize_columns(z);
        let sigma_z = median_heuristic(&zs, cap);
        let bz = sample_rff(zs.ncols(), p.num_f_z, sigma_z, derive_seed(p.seed, stream::RFF_Z, 0))?;
        (zs, Some(bz))
    } else {
        (DMatrix::zeros(x.nrows(), 0), None)
    };
    rcot_statistic_with_bases(&xs, &ys, &zs, &RcotBases { x: bx, y: by, z: bz }, p.ridge_lambda)
}

pub fn rcot_statistic(s: &FeatureSample, p: &RcotParams) -> Result<RcotStatistic> {
    let y = DMatrix::from_column_slice(s.n(), 1, s.y().as_slice());
    rcot_statistic_blocks(s.x(), &y, s.z(), p)
}

/// Upper tail of `Σ λ_i χ²_1` by matching mean, variance and skewness with a
/// shifted, scaled chi-square `shift + scale · χ²_ν`.
pub fn weighted_chisq_sf(stat: f64, eigenvalues: &[f64]) -> f64 {
    let pos: Vec<f64> = eigenvalues.iter().copied().filter(|&l| l > 0.0).collect();
    if pos.is_empty() {
        return 1.0;
    }
    let s1: f64 = pos.iter().sum();
    let s2: f64 = pos.iter().map(|l| l * l).sum();
    let s3: f64 = pos.iter().map(|l| l * l * l).sum();
    // Cumulants of the weighted sum.
    let k1 = s1;
    let k2 = 2.0 * s2;
    let k3 = 8.0 * s3;
    let scale = k3 / (4.0 * k2);
    let dof = 8.0 * k2.powi(3) / (k3 * k3);
    let shift = k1 - scale * dof;
    let x = (stat - shift) / scale;
    if x <= 0.0 {
        1.0
    } else {
        chi2_sf(x, dof)
    }
}

/// Eigenvalues of the covariance of the residual products.
pub fn null_eigenvalues(residual_products: &DMatrix<f64>) -> Vec<f64> {
    let n = residual_products.nrows();
    let mut centered = residual_products.clone();
    for mut col in centered.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    let cov = centered.tr_mul(&centered) / (n - 1) as f64;
    SymmetricEigen::new(cov).eigenvalues.iter().copied().collect()
}

fn permutation_pvalue(st: &RcotStatistic, num_permutations: usize, seed: u64) -> f64 {
    let n = st.a_res.nrows();
    let observed = st.statistic;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut exceed = 0usize;
    for m in 0..num_permutations {
        let mut rng = rng_from_seed(derive_seed(seed, stream::PERMUTATION, m as u64));
        idx.shuffle(&mut rng);
        let b_perm = DMatrix::from_fn(n, st.b_res.ncols(), |i, k| st.b_res[(idx[i], k)]);
        let cross = st.a_res.tr_mul(&b_perm) / (n - 1) as f64;
        if n as f64 * cross.norm_squared() >= observed {
            exceed += 1;
        }
    }
    (1 + exceed) as f64 / (1 + num_permutations) as f64
}

pub fn rcot_pvalue(st: &RcotStatistic, p: &RcotParams) -> f64 {
    if st.residual_products.ncols() == 0 || st.residual_products.nrows() < 2 {
        return 1.0;
    }
    match p.null_method {
        NullMethod::MomentMatch => weighted_chisq_sf(st.statistic, &null_eigenvalues(&st.residual_products)),
        NullMethod::Permutation => permutation_pvalue(st, p.num_permutations, p.seed),
    }
}

pub(crate) fn outcome_params(p: &RcotParams, st: &RcotStatistic) -> Params {
    let mut params = Params::new();
    params.insert("a".into(), json!(p.num_f_x));
    params.insert("b".into(), json!(p.num_f_y));
    params.insert("c".into(), json!(p.num_f_z));
    params.insert("lambda".into(), json!(p.ridge_lambda));
    params.insert("sigma_x".into(), json!(st.sigma_x));
    params.insert("sigma_y".into(), json!(st.sigma_y));
    params.insert("sigma_z".into(), json!(st.sigma_z));
    params.insert("null_method".into(), json!(p.null_method));
    if p.null_method == NullMethod::Permutation {
        params.insert("num_permutations".into(), json!(p.num_permutations));
    }
    params
}

pub fn rcot_test(s: &FeatureSample, p: &RcotParams, alpha: f64) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    let start = Instant::now();
    let st = rcot_statistic(s, p)?;
    let pv = rcot_pvalue(&st, p);
    Ok(TestOutcome::new(Method::Rcot, s, st.statistic, pv, alpha, outcome_params(p, &st), p.seed).with_runtime(start))
}

/// Test on raw blocks; `y` may have several columns.
pub fn rcot_test_blocks(x: &DMatrix<f64>, y: &DMatrix<f64>, z: &DMatrix<f64>, p: &RcotParams, alpha: f64) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    let start = Instant::now();
    let st = rcot_statistic_blocks(x, y, z, p)?;
    let pv = rcot_pvalue(&st, p);
    let p_value = if pv.is_nan() { 1.0 } else { pv.clamp(0.0, 1.0) };
    Ok(TestOutcome {
        method: Method::Rcot,
        statistic: st.statistic,
        p_value,
        reject: p_value <= alpha,
        alpha,
        n: x.nrows(),
        dim_x: x.ncols(),
        dim_z: z.ncols(),
        params: outcome_params(p, &st),
        seed: p.seed,
        runtime_ms: 0.0,
    }
    .with_runtime(start))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_one_is_recovered() {
        assert!((weighted_chisq_sf(3.841_458_820_694_124, &[1.0]) - 0.05).abs() < 1e-9);
        assert_eq!(weighted_chisq_sf(0.0, &[1.0]), 1.0);
        assert_eq!(weighted_chisq_sf(0.0, &[0.3, 0.2, 0.1]), 1.0);
        assert_eq!(weighted_chisq_sf(5.0, &[]), 1.0);
    }

    #[test]
    fn equal_weights_are_exact() {
        // Σ of 4 unit-weight χ²_1 terms is χ²_4.
        let p = weighted_chisq_sf(9.487_729_036_781_154, &[1.0; 4]);
        assert!((p - 0.05).abs() < 1e-9, "{p}");
        // Scaling all weights by 2 is a χ²_4 scaled by 2.
        let p = weighted_chisq_sf(2.0 * 9.487_729_036_781_154, &[2.0; 4]);
        assert!((p - 0.05).abs() < 1e-9, "{p}");
    }

    #[test]
    fn param_validation() {
        let p = RcotParams {
            ridge_lambda: 0.0,
            ..RcotParams::default()
        };
        assert!(p.validate().is_err());
        let p = RcotParams {
            num_f_z: 0,
            ..RcotParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn constant_outcome_is_degenerate() {
        let x = DMatrix::from_fn(10, 2, |i, j| (i * (j + 1)) as f64);
        let s = FeatureSample::unconditional(x, nalgebra::DVector::from_element(10, 4.0)).unwrap();
        assert!(matches!(rcot_statistic(&s, &RcotParams::default()), Err(Error::DegenerateY)));
    }
}
