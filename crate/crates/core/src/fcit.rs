//! Prediction-based test: does adding `X^ω` to `Z` lower held-out squared
//! error for `Y`?

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{check_alpha, FeatureSample, Method, Params, TestOutcome};
use crate::error::{Error, Result};
use crate::forest::{ForestParams, RegressionForest};
use crate::seed::{derive_seed, rng_from_seed, stream};
use crate::stats::{binomial_upper_half, mean, t_sf, variance};

pub const MIN_ROWS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairedTest {
    T,
    Sign,
}

/// Inputs of the reduced model `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducedModel {
    /// `g` sees `Z` only.
    ZOnly,
    /// `g` sees `Z` and a row-shuffled copy of `X^ω`, so both models have the
    /// same inputs shape and tree randomization.
    ShuffledX,
}

/// Unit of the paired comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Every held-out row across all splits.
    Rows,
    /// One mean difference per split, plain t-test over the split means.
    Splits,
    /// Split means with the resampled-t variance correction
    /// `(1/J + n_test/n_train)·s²` for overlapping training sets. A single
    /// split falls back to `Rows`.
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FcitParams {
    pub train_fraction: f64,
    pub tree_count: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub num_splits: usize,
    pub seed: u64,
    pub paired_test: PairedTest,
    pub reduced_model: ReducedModel,
    pub pooling: Pooling,
    /// Make the `Z` columns split candidates at every node of both models;
    /// `⌈√d⌉` sampling then applies to the remaining columns only.
    pub z_always_candidate: bool,
}

impl Default for FcitParams {
    fn default() -> Self {
        Self {
            train_fraction: 0.5,
            tree_count: 100,
            max_depth: 8,
            min_leaf: 5,
            num_splits: 8,
            seed: 0,
            paired_test: PairedTest::T,
            reduced_model: ReducedModel::ShuffledX,
            pooling: Pooling::Corrected,
            z_always_candidate: true,
        }
    }
}

impl FcitParams {
    pub fn forest(&self) -> ForestParams {
        ForestParams {
            tree_count: self.tree_count,
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            mtry: None,
            forced: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidParam("train_fraction must lie in (0, 1)".into()));
        }
        if self.num_splits == 0 || self.tree_count == 0 || self.min_leaf == 0 {
            return Err(Error::InvalidParam("num_splits, tree_count and min_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn fit_tree_ensemble(features: &DMatrix<f64>, targets: &[f64], p: &FcitParams, seed: u64) -> Result<RegressionForest> {
    RegressionForest::fit(features, targets, &p.forest(), seed)
}

/// Fits on `features` whose last `p_z` columns are `Z`.
fn fit_model(features: &DMatrix<f64>, targets: &[f64], p: &FcitParams, p_z: usize, seed: u64) -> Result<RegressionForest> {
    let mut fp = p.forest();
    if p.z_always_candidate {
        let d = features.ncols();
        fp.forced = (d - p_z..d).collect();
    }
    RegressionForest::fit(features, targets, &fp, seed)
}

fn rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    m.select_rows(idx)
}

/// Per-row loss differences `loss_g − loss_f` on the held-out half of one split.
fn split_differences(xz: &DMatrix<f64>, z: &DMatrix<f64>, y: &[f64], p: &FcitParams, split: usize) -> Result<Vec<f64>> {
    let n = y.len();
    let split_seed = derive_seed(p.seed, stream::SPLIT, split as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(split_seed));
    let n_train = ((p.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let (train, test) = order.split_at(n_train);
    let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();

    let p_z = z.ncols();
    let f = fit_model(&rows(xz, train), &y_train, p, p_z, derive_seed(split_seed, stream::TREE, 0))?;
    let pred_f = f.predict(&rows(xz, test));
    let g_inputs = match p.reduced_model {
        ReducedModel::ZOnly => z.clone(),
        ReducedModel::ShuffledX => {
            let q = xz.ncols() - z.ncols();
            let mut shuffled: Vec<usize> = (0..n).collect();
            shuffled.shuffle(&mut rng_from_seed(derive_seed(split_seed, stream::PERMUTATION, 0)));
            let mut m = xz.clone();
            for i in 0..n {
                for j in 0..q {
                    m[(i, j)] = xz[(shuffled[i], j)];
                }
            }
            m
        }
    };
    let pred_g = if g_inputs.ncols() > 0 {
        let g = fit_model(&rows(&g_inputs, train), &y_train, p, p_z, derive_seed(split_seed, stream::TREE, 1))?;
        g.predict(&rows(&g_inputs, test))
    } else {
        vec![mean(&y_train); test.len()]
    };
    Ok(test
        .iter()
        .enumerate()
        .map(|(k, &i)| (y[i] - pred_g[k]).powi(2) - (y[i] - pred_f[k]).powi(2))
        .collect())
}

/// One-sided t statistic and p-value for `mean(d) > 0`; no variation gives
/// `(0, 1)`.
pub fn paired_t(d: &[f64]) -> (f64, f64) {
    let m = d.len();
    if m < 2 {
        return (0.0, 1.0);
    }
    let sd = variance(d).sqrt();
    let mu = mean(d);
    if !(sd > 1e-14 * mu.abs().max(1e-300)) {
        return (0.0, 1.0);
    }
    let t = mu / (sd / (m as f64).sqrt());
    (t, t_sf(t, (m - 1) as f64))
}

/// Resampled t-test over split means `d` whose training sets overlap.
pub fn corrected_t(d: &[f64], test_over_train: f64) -> (f64, f64) {
    let j = d.len();
    if j < 2 {
        return (0.0, 1.0);
    }
    let var = variance(d);
    let mu = mean(d);
    if !(var.sqrt() > 1e-14 * mu.abs().max(1e-300)) {
        return (0.0, 1.0);
    }
    let t = mu / ((1.0 / j as f64 + test_over_train) * var).sqrt();
    (t, t_sf(t, (j - 1) as f64))
}

/// Sign test on the nonzero differences.
pub fn paired_sign(d: &[f64]) -> (f64, f64) {
    let pos = d.iter().filter(|&&v| v > 0.0).count() as u64;
    let nonzero = d.iter().filter(|&&v| v != 0.0).count() as u64;
    if nonzero == 0 {
        return (0.0, 1.0);
    }
    (pos as f64, binomial_upper_half(pos, nonzero))
}

pub fn fcit_test(s: &FeatureSample, p: &FcitParams, alpha: f64) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    p.validate()?;
    let start = Instant::now();
    let n = s.n();
    if n < MIN_ROWS {
        return Err(Error::TooFewRows(format!("FCIT needs n >= {MIN_ROWS}, got {n}")));
    }
    let xz = if s.p() > 0 {
        let mut m = DMatrix::zeros(n, s.q() + s.p());
        m.columns_mut(0, s.q()).copy_from(s.x());
        m.columns_mut(s.q(), s.p()).copy_from(s.z());
        m
    } else {
        s.x().clone()
    };
    let y: Vec<f64> = s.y().iter().copied().collect();
    let pooling = match p.pooling {
        Pooling::Corrected if p.num_splits < 2 => Pooling::Rows,
        other => other,
    };
    let mut diffs = Vec::new();
    let mut n_test = 0;
    for split in 0..p.num_splits {
        let d = split_differences(&xz, s.z(), &y, p, split)?;
        n_test = d.len();
        match pooling {
            Pooling::Rows => diffs.extend(d),
            Pooling::Splits | Pooling::Corrected => diffs.push(mean(&d)),
        }
    }
    let (stat, pv) = match (p.paired_test, pooling) {
        (PairedTest::Sign, _) => paired_sign(&diffs),
        (PairedTest::T, Pooling::Corrected) => corrected_t(&diffs, n_test as f64 / (n - n_test) as f64),
        (PairedTest::T, _) => paired_t(&diffs),
    };
    let mut params = Params::new();
    params.insert("train_fraction".into(), json!(p.train_fraction));
    params.insert("tree_count".into(), json!(p.tree_count));
    params.insert("max_depth".into(), json!(p.max_depth));
    params.insert("min_leaf".into(), json!(p.min_leaf));
    params.insert("num_splits".into(), json!(p.num_splits));
    params.insert("paired_test".into(), json!(p.paired_test));
    params.insert("reduced_model".into(), json!(p.reduced_model));
    params.insert("pooling".into(), json!(p.pooling));
    params.insert("z_always_candidate".into(), json!(p.z_always_candidate));
    params.insert("mean_loss_difference".into(), json!(mean(&diffs)));
    Ok(TestOutcome::new(Method::Fcit, s, stat, pv, alpha, params, p.seed).with_runtime(start))
}
