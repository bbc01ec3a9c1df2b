//! Joint F test for the feature block in an OLS regression of `Y` on `[1, Z, X^ω]`.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{check_alpha, ColumnKind, FeatureSample, Method, Params, TestOutcome};
use crate::error::{Error, Result};
use crate::linalg::{dot, OrthoBasis};
use crate::stats::f_sf;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaldParams {
    /// Add squares of continuous `Z` columns to the design.
    pub z_squares: bool,
    /// Add pairwise products of `Z` columns to the design.
    pub z_interactions: bool,
}

/// `Z` with the requested squares and interactions appended.
pub fn expand_confounders(s: &FeatureSample, p: &WaldParams) -> DMatrix<f64> {
    let z = s.z();
    let mut cols: Vec<Vec<f64>> = z.column_iter().map(|c| c.iter().copied().collect()).collect();
    let base = cols.clone();
    if p.z_squares {
        for (j, c) in base.iter().enumerate() {
            if s.z_meta()[j].kind == ColumnKind::Continuous {
                cols.push(c.iter().map(|v| v * v).collect());
            }
        }
    }
    if p.z_interactions {
        for a in 0..base.len() {
            for b in (a + 1)..base.len() {
                cols.push(base[a].iter().zip(&base[b]).map(|(u, v)| u * v).collect());
            }
        }
    }
    let n = s.n();
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaldFit {
    pub f_statistic: f64,
    pub p_value: f64,
    pub df_num: usize,
    pub df_den: usize,
    pub rss_reduced: f64,
    pub rss_full: f64,
    /// Feature columns dropped as collinear with earlier columns.
    pub dropped_x: Vec<usize>,
    pub dropped_z: Vec<usize>,
}

/// F test of the `x` block given `[1, z]`.
pub fn wald_fit(x: &DMatrix<f64>, y: &[f64], z: &DMatrix<f64>) -> Result<WaldFit> {
    let n = y.len();
    let (q, p) = (x.ncols(), z.ncols());
    if n <= q + p + 1 {
        return Err(Error::TooFewRows(format!(
            "OLS F test needs n > q + p + 1 = {}, got {n}",
            q + p + 1
        )));
    }
    let mut basis = OrthoBasis::with_intercept(n);
    let mut dropped_z = Vec::new();
    for j in 0..p {
        let col: Vec<f64> = z.column(j).iter().copied().collect();
        if !basis.push(&col, j) {
            dropped_z.push(j);
        }
    }
    let reduced_rank = basis.rank();
    let mut dropped_x = Vec::new();
    for j in 0..q {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        if !basis.push(&col, p + j) {
            dropped_x.push(j);
        }
    }
    let full_rank = basis.rank();
    let df_num = full_rank - reduced_rank;
    let df_den = n - full_rank;
    let r = basis.residualize(y);
    let rss_full = dot(&r, &r);
    let rss_reduced = basis.rss_prefix(y, reduced_rank);
    let (f_statistic, p_value) = if df_num == 0 {
        (0.0, 1.0)
    } else {
        let gain = (rss_reduced - rss_full).max(0.0);
        if rss_full <= 1e-28 * rss_reduced.max(1e-300) {
            (f64::INFINITY, 0.0)
        } else {
            let f = (gain / df_num as f64) / (rss_full / df_den as f64);
            (f, f_sf(f, df_num as f64, df_den as f64))
        }
    };
    Ok(WaldFit {
        f_statistic,
        p_value,
        df_num,
        df_den,
        rss_reduced,
        rss_full,
        dropped_x,
        dropped_z,
    })
}

pub fn wald_test(s: &FeatureSample, p: &WaldParams, alpha: f64) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    let start = Instant::now();
    let z = expand_confounders(s, p);
    let y: Vec<f64> = s.y().iter().copied().collect();
    let fit = wald_fit(s.x(), &y, &z)?;
    let mut params = Params::new();
    params.insert("variant".into(), json!("F"));
    params.insert("df_num".into(), json!(fit.df_num));
    params.insert("df_den".into(), json!(fit.df_den));
    params.insert("z_squares".into(), json!(p.z_squares));
    params.insert("z_interactions".into(), json!(p.z_interactions));
    params.insert("dropped_x_columns".into(), json!(fit.dropped_x));
    if !fit.dropped_z.is_empty() {
        params.insert("dropped_z_columns".into(), json!(fit.dropped_z));
    }
    Ok(TestOutcome::new(Method::Wald, s, fit.f_statistic, fit.p_value, alpha, params, 0).with_runtime(start))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn exact_fit_rejects() {
        let n = 100;
        let x = DMatrix::from_fn(n, 1, |i, _| ((i * 37) % 17) as f64 - 8.0);
        let y = DVector::from_fn(n, |i, _| x[(i, 0)]);
        let s = FeatureSample::unconditional(x, y).unwrap();
        let out = wald_test(&s, &WaldParams::default(), 0.05).unwrap();
        assert!(out.p_value < 1e-12);
        assert!(out.reject);
    }

    #[test]
    fn too_few_rows() {
        let s = FeatureSample::unconditional(DMatrix::from_fn(4, 3, |i, j| (i + j * j) as f64), DVector::from_vec(vec![1.0, 2.0, 0.0, 5.0])).unwrap();
        assert!(matches!(wald_test(&s, &WaldParams::default(), 0.05), Err(Error::TooFewRows(_))));
    }

    #[test]
    fn duplicated_feature_column_is_dropped() {
        let n = 30;
        let x = DMatrix::from_fn(n, 2, |i, _| (i as f64).sin());
        let y = DVector::from_fn(n, |i, _| (i as f64 * 0.3).cos());
        let s = FeatureSample::unconditional(x, y).unwrap();
        let out = wald_test(&s, &WaldParams::default(), 0.05).unwrap();
        assert_eq!(out.params["dropped_x_columns"], json!([1]));
        assert_eq!(out.params["df_num"], json!(1));
    }
}
