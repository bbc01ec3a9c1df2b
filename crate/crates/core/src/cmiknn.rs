//! Conditional mutual information test with a nearest-neighbor estimator and
//! a local permutation null.

use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{check_alpha, standardize_columns, FeatureSample, Method, Params, TestOutcome};
use crate::error::{Error, Result};
use crate::knn::{build_knn_graph, Metric};
use crate::seed::{derive_seed, rng_from_seed, stream};

/// Largest `n` accepted unless `allow_large` is set.
pub const MAX_DEFAULT_N: usize = 5000;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CmiParams {
    /// `None` resolves to `round(0.1 · n)`.
    pub k_cmi: Option<usize>,
    pub k_perm: usize,
    pub num_permutations: usize,
    /// Jitter SD relative to each standardized column.
    pub noise_scale: f64,
    pub seed: u64,
    /// Whether marginal counts include the point itself.
    pub count_self: bool,
    pub allow_large: bool,
}

impl Default for CmiParams {
    fn default() -> Self {
        Self {
            k_cmi: None,
            k_perm: 5,
            num_permutations: 199,
            noise_scale: 1e-10,
            seed: 0,
            count_self: true,
            allow_large: false,
        }
    }
}

impl CmiParams {
    pub fn resolved_k(&self, n: usize) -> usize {
        self.k_cmi
            .unwrap_or_else(|| ((0.1 * n as f64).round() as usize).max(1))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let k = self.resolved_k(n);
        if k == 0 || k + 1 >= n {
            return Err(Error::KTooLarge { k, n });
        }
        if self.k_perm == 0 || self.k_perm >= n {
            return Err(Error::KTooLarge { k: self.k_perm, n });
        }
        if self.num_permutations < 19 {
            return Err(Error::InvalidParam("num_permutations must be >= 19".into()));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::InvalidParam("noise_scale must be >= 0".into()));
        }
        if n > MAX_DEFAULT_N && !self.allow_large {
            return Err(Error::InvalidParam(format!(
                "n = {n} exceeds {MAX_DEFAULT_N}; set allow_large to run anyway"
            )));
        }
        Ok(())
    }
}

pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::NonPositive(x));
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Asymptotic series in 1/x² with Bernoulli-number coefficients.
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32760.0)))));
    Ok(acc + x.ln() - 0.5 * inv - series)
}

/// `ψ(1), ..., ψ(n)` via `ψ(k + 1) = ψ(k) + 1/k`; index 0 is unused.
fn digamma_table(n: usize) -> Vec<f64> {
    let mut t = vec![f64::NAN; n + 1];
    if n >= 1 {
        t[1] = -EULER_GAMMA;
    }
    for k in 1..n {
        t[k + 1] = t[k] + 1.0 / k as f64;
    }
    t
}

/// Chebyshev distance matrix, row-major `n × n`.
fn chebyshev_matrix(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut d = vec![0.0; n * n];
    for c in 0..m.ncols() {
        let col = m.column(c);
        for i in 0..n {
            let ci = col[i];
            for j in (i + 1)..n {
                let v = (ci - col[j]).abs();
                if v > d[i * n + j] {
                    d[i * n + j] = v;
                    d[j * n + i] = v;
                }
            }
        }
    }
    d
}

fn row_hash(parts: &[&DMatrix<f64>], y: &[f64], i: usize) -> u64 {
    let mut h = DefaultHasher::new();
    for m in parts {
        for v in m.row(i).iter() {
            v.to_bits().hash(&mut h);
        }
    }
    y[i].to_bits().hash(&mut h);
    h.finish()
}

/// Standardized, jittered blocks. Each row's jitter is seeded from the row's
/// raw content, so the result does not depend on row order.
pub fn prepared_blocks(s: &FeatureSample, p: &CmiParams) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let n = s.n();
    let y_raw: Vec<f64> = s.y().iter().copied().collect();
    let mut occurrences: HashMap<u64, u64> = HashMap::new();
    let row_seeds: Vec<u64> = (0..n)
        .map(|i| {
            let h = row_hash(&[s.x(), s.z()], &y_raw, i);
            let occ = occurrences.entry(h).or_insert(0);
            *occ += 1;
            derive_seed(p.seed, stream::JITTER, h ^ (*occ).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        })
        .collect();
    let (mut x, _, _) = standardize_columns(s.x());
    let y_mat = DMatrix::from_column_slice(n, 1, &y_raw);
    let (mut y, _, _) = standardize_columns(&y_mat);
    let (mut z, _, _) = standardize_columns(s.z());
    if p.noise_scale > 0.0 {
        for (i, &rs) in row_seeds.iter().enumerate() {
            let mut rng = rng_from_seed(rs);
            let mut jitter = || -> f64 { p.noise_scale * Distribution::<f64>::sample(&StandardNormal, &mut rng) };
            for c in 0..x.ncols() {
                x[(i, c)] += jitter();
            }
            y[(i, 0)] += jitter();
            for c in 0..z.ncols() {
                z[(i, c)] += jitter();
            }
        }
    }
    (x, y.iter().copied().collect(), z)
}

/// Distance structures shared across permutations of `Y`.
pub struct CmiContext {
    n: usize,
    k: usize,
    count_self: bool,
    /// Chebyshev distances in `(X, Z)`, or in `X` when `Z` is empty.
    d_xz: Vec<f64>,
    /// Chebyshev distances in `Z`; empty when `Z` is empty.
    d_z: Vec<f64>,
    y: Vec<f64>,
    z: DMatrix<f64>,
    psi: Vec<f64>,
}

impl CmiContext {
    pub fn new(s: &FeatureSample, p: &CmiParams) -> Result<Self> {
        let n = s.n();
        p.validate(n)?;
        let (x, y, z) = prepared_blocks(s, p);
        let d_x = chebyshev_matrix(&x);
        let (d_xz, d_z) = if z.ncols() > 0 {
            let d_z = chebyshev_matrix(&z);
            let d_xz = d_x.iter().zip(&d_z).map(|(a, b)| a.max(*b)).collect();
            (d_xz, d_z)
        } else {
            (d_x, Vec::new())
        };
        Ok(Self {
            n,
            k: p.resolved_k(n),
            count_self: p.count_self,
            d_xz,
            d_z,
            y,
            z,
            psi: digamma_table(n + 1),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    fn psi_count(&self, c: usize) -> f64 {
        let c = c + usize::from(self.count_self);
        self.psi[c.max(1)]
    }

    /// Estimate with `y` in place of the observed outcome.
    pub fn estimate_with(&self, y: &[f64]) -> f64 {
        let n = self.n;
        let conditional = !self.d_z.is_empty();
        let mut joint = vec![0.0; n - 1];
        let mut total = 0.0;
        for i in 0..n {
            let row_xz = &self.d_xz[i * n..(i + 1) * n];
            let yi = y[i];
            let mut w = 0;
            for j in 0..n {
                if j != i {
                    joint[w] = row_xz[j].max((yi - y[j]).abs());
                    w += 1;
                }
            }
            let (_, eps, _) = joint.select_nth_unstable_by(self.k - 1, f64::total_cmp);
            let eps = *eps;
            if conditional {
                let row_z = &self.d_z[i * n..(i + 1) * n];
                let (mut cz, mut cxz, mut cyz) = (0, 0, 0);
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let dz = row_z[j];
                    if dz < eps {
                        cz += 1;
                        if (yi - y[j]).abs() < eps {
                            cyz += 1;
                        }
                    }
                    if row_xz[j] < eps {
                        cxz += 1;
                    }
                }
                total += self.psi_count(cz) - self.psi_count(cxz) - self.psi_count(cyz);
            } else {
                let (mut cx, mut cy) = (0, 0);
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    if row_xz[j] < eps {
                        cx += 1;
                    }
                    if (yi - y[j]).abs() < eps {
                        cy += 1;
                    }
                }
                total -= self.psi_count(cx) + self.psi_count(cy);
            }
        }
        let base = self.psi[self.k] + if conditional { 0.0 } else { self.psi[n] };
        base + total / n as f64
    }

    pub fn estimate(&self) -> f64 {
        self.estimate_with(&self.y)
    }
}

pub fn cmi_estimate(s: &FeatureSample, p: &CmiParams) -> Result<f64> {
    Ok(CmiContext::new(s, p)?.estimate())
}

/// Donor index for each position. Candidates for position `i` are `i` and its
/// `k_perm` nearest other rows in `Z` (Chebyshev). Positions are visited in
/// random order and draw uniformly among unused candidates. When all are
/// used, earlier assignments are rearranged along an augmenting path; when
/// none exists, any candidate is drawn. Without `Z` the draw is a uniform
/// permutation.
pub fn local_permutation_indices<R: Rng>(neighbors: Option<&[Vec<usize>]>, n: usize, rng: &mut R) -> Vec<usize> {
    local_permutation_draw(neighbors, n, rng).0
}

/// Like [`local_permutation_indices`], also returning how many positions fell
/// back to a draw with replacement.
pub fn local_permutation_draw<R: Rng>(neighbors: Option<&[Vec<usize>]>, n: usize, rng: &mut R) -> (Vec<usize>, usize) {
    let Some(neighbors) = neighbors else {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        return (perm, 0);
    };
    let mut fallbacks = 0;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let cand_lists: Vec<Vec<usize>> = (0..n)
        .map(|i| std::iter::once(i).chain(neighbors[i].iter().copied()).collect())
        .collect();
    let mut used = vec![false; n];
    // Position currently holding each donor, for visited positions.
    let mut holder = vec![usize::MAX; n];
    let mut donors = vec![0; n];
    let mut free = Vec::new();
    let mut seen = vec![0usize; n];
    let mut stamp = 0;
    for &i in &order {
        free.clear();
        free.extend(cand_lists[i].iter().copied().filter(|&c| !used[c]));
        if !free.is_empty() {
            let d = free[rng.random_range(0..free.len())];
            used[d] = true;
            holder[d] = i;
            donors[i] = d;
            continue;
        }
        // Reassign earlier positions along an augmenting path so that `i`
        // still receives an unused donor.
        stamp += 1;
        if !augment(i, &cand_lists, &mut used, &mut holder, &mut donors, &mut seen, stamp, rng) {
            fallbacks += 1;
            let all = &cand_lists[i];
            let d = all[rng.random_range(0..all.len())];
            donors[i] = d;
        }
    }
    (donors, fallbacks)
}

#[allow(clippy::too_many_arguments)]
fn augment<R: Rng>(
    i: usize,
    cands: &[Vec<usize>],
    used: &mut [bool],
    holder: &mut [usize],
    donors: &mut [usize],
    seen: &mut [usize],
    stamp: usize,
    rng: &mut R,
) -> bool {
    let mut order = cands[i].clone();
    order.shuffle(rng);
    for c in order {
        if seen[c] == stamp {
            continue;
        }
        seen[c] = stamp;
        let take = if !used[c] {
            true
        } else {
            let j = holder[c];
            j != usize::MAX && j != i && augment(j, cands, used, holder, donors, seen, stamp, rng)
        };
        if take {
            used[c] = true;
            holder[c] = i;
            donors[i] = c;
            return true;
        }
    }
    false
}

/// Neighbor lists used by the local permutation scheme.
pub fn permutation_neighbors(z: &DMatrix<f64>, k_perm: usize) -> Result<Option<Vec<Vec<usize>>>> {
    if z.ncols() == 0 {
        return Ok(None);
    }
    Ok(Some(build_knn_graph(z, k_perm, Metric::Chebyshev)?.neighbor_lists().to_vec()))
}

/// `M` locally permuted copies of `y`.
pub fn local_permutation_scheme(z: &DMatrix<f64>, y: &[f64], k_perm: usize, m: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let nb = permutation_neighbors(z, k_perm)?;
    Ok((0..m)
        .map(|r| {
            let mut rng = rng_from_seed(derive_seed(seed, stream::PERMUTATION, r as u64));
            local_permutation_indices(nb.as_deref(), y.len(), &mut rng)
                .into_iter()
                .map(|d| y[d])
                .collect()
        })
        .collect())
}

/// `M⁻¹ Σ 1{T_m ≥ T}`, without the `+1` correction.
pub fn cmi_pvalue(observed: f64, permuted: &[f64]) -> f64 {
    if permuted.is_empty() {
        return 1.0;
    }
    permuted.iter().filter(|&&t| t >= observed).count() as f64 / permuted.len() as f64
}

pub fn cmiknn_test(s: &FeatureSample, p: &CmiParams, alpha: f64) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    let start = Instant::now();
    let ctx = CmiContext::new(s, p)?;
    let observed = ctx.estimate();
    let nb = permutation_neighbors(&ctx.z, p.k_perm)?;
    let n = s.n();
    let permuted: Vec<f64> = (0..p.num_permutations)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from_seed(derive_seed(p.seed, stream::PERMUTATION, r as u64));
            let donors = local_permutation_indices(nb.as_deref(), n, &mut rng);
            let y: Vec<f64> = donors.iter().map(|&d| ctx.y[d]).collect();
            ctx.estimate_with(&y)
        })
        .collect();
    let pv = cmi_pvalue(observed, &permuted);
    let mut params = Params::new();
    params.insert("k_cmi".into(), json!(ctx.k));
    params.insert("k_perm".into(), json!(p.k_perm));
    params.insert("num_permutations".into(), json!(p.num_permutations));
    params.insert("noise_scale".into(), json!(p.noise_scale));
    params.insert("count_self".into(), json!(p.count_self));
    Ok(TestOutcome::new(Method::Cmiknn, s, observed, pv, alpha, params, p.seed).with_runtime(start))
}
