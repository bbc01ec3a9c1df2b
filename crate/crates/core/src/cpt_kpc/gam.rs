//! Penalized additive regression used as the Gaussian model of `Y | Z`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, ColumnMeta};
use crate::error::{Error, Result};
use crate::linalg::OrthoBasis;

pub const DEFAULT_INTERIOR_KNOTS: usize = 8;
/// Continuous columns with fewer distinct values enter linearly.
pub const MIN_DISTINCT_FOR_SPLINE: usize = 12;
const GCV_GRID: usize = 20;
const DEGREE: usize = 3;

/// How one confounder column enters the additive predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BasisTerm {
    Linear { column: usize },
    /// Indicators for every level except the first.
    Indicators { column: usize, levels: Vec<f64> },
    /// Cubic B-spline with the full knot vector; the first basis function is
    /// dropped since the intercept spans the rest of the partition of unity.
    Spline { column: usize, knots: Vec<f64> },
}

impl BasisTerm {
    fn width(&self) -> usize {
        match self {
            BasisTerm::Linear { .. } => 1,
            BasisTerm::Indicators { levels, .. } => levels.len() - 1,
            BasisTerm::Spline { knots, .. } => knots.len() - DEGREE - 2,
        }
    }
}

/// Gaussian conditional model `Y | Z ~ N(μ(Z), σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalModel {
    pub basis: Vec<BasisTerm>,
    /// Coefficients for the retained design columns, intercept first.
    pub coefficients: Vec<f64>,
    /// Indices into the full design (intercept = 0) that were retained.
    pub retained_columns: Vec<usize>,
    pub dropped_columns: Vec<usize>,
    pub sigma2: f64,
    pub fitted_means: Vec<f64>,
    pub lambda: f64,
    pub edf: f64,
}

impl ConditionalModel {
    /// A model with given means and variance, bypassing estimation.
    pub fn known(fitted_means: Vec<f64>, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::NonPositive(sigma2));
        }
        if !fitted_means.iter().all(|m| m.is_finite()) {
            return Err(Error::NonFinite("fitted_means"));
        }
        Ok(Self {
            basis: Vec::new(),
            coefficients: Vec::new(),
            retained_columns: Vec::new(),
            dropped_columns: Vec::new(),
            sigma2,
            fitted_means,
            lambda: 0.0,
            edf: 0.0,
        })
    }

    pub fn n(&self) -> usize {
        self.fitted_means.len()
    }

    /// `log p(y | Z_i)` up to the additive constant.
    pub fn log_density(&self, y: f64, i: usize) -> f64 {
        let r = y - self.fitted_means[i];
        -0.5 * r * r / self.sigma2
    }
}

/// Values of the `len(knots) − DEGREE − 1` cubic B-splines at `x`.
pub fn bspline_basis(x: f64, knots: &[f64]) -> Vec<f64> {
    let nb = knots.len() - DEGREE - 1;
    let lo = knots[DEGREE];
    let hi = knots[nb];
    let x = x.clamp(lo, hi);
    // Knot span with t[span] <= x < t[span + 1], closing the last interval.
    let mut span = DEGREE;
    while span < nb - 1 && x >= knots[span + 1] {
        span += 1;
    }
    let mut n = vec![0.0; DEGREE + 1];
    n[0] = 1.0;
    let mut left = [0.0; DEGREE + 1];
    let mut right = [0.0; DEGREE + 1];
    for j in 1..=DEGREE {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    let mut out = vec![0.0; nb];
    for (r, v) in n.into_iter().enumerate() {
        out[span - DEGREE + r] = v;
    }
    out
}

fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let pos = prob * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn spline_knots(col: &[f64], interior: usize) -> Vec<f64> {
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    let mut inner: Vec<f64> = (1..=interior)
        .map(|k| quantile_sorted(&sorted, k as f64 / (interior + 1) as f64))
        .filter(|&t| t > lo && t < hi)
        .collect();
    inner.dedup();
    let mut knots = vec![lo; DEGREE + 1];
    knots.extend(inner);
    knots.extend(std::iter::repeat_n(hi, DEGREE + 1));
    knots
}

fn distinct_sorted(col: &[f64]) -> Vec<f64> {
    let mut v = col.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn build_terms(z: &DMatrix<f64>, meta: &[ColumnMeta], interior: usize) -> Vec<BasisTerm> {
    let mut terms = Vec::new();
    for j in 0..z.ncols() {
        let col: Vec<f64> = z.column(j).iter().copied().collect();
        let levels = distinct_sorted(&col);
        if levels.len() < 2 {
            continue;
        }
        let categorical = meta.get(j).is_some_and(|m| m.kind == ColumnKind::Categorical);
        let term = if categorical {
            if levels.len() == 2 {
                BasisTerm::Linear { column: j }
            } else {
                BasisTerm::Indicators { column: j, levels }
            }
        } else if levels.len() < MIN_DISTINCT_FOR_SPLINE || interior == 0 {
            BasisTerm::Linear { column: j }
        } else {
            BasisTerm::Spline {
                column: j,
                knots: spline_knots(&col, interior),
            }
        };
        terms.push(term);
    }
    terms
}

/// Full design `[1, term blocks...]` and the matching penalty matrix.
fn design_and_penalty(z: &DMatrix<f64>, terms: &[BasisTerm]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = z.nrows();
    let width: usize = 1 + terms.iter().map(BasisTerm::width).sum::<usize>();
    let mut x = DMatrix::zeros(n, width);
    let mut s = DMatrix::zeros(width, width);
    x.column_mut(0).fill(1.0);
    let mut off = 1;
    for term in terms {
        let w = term.width();
        match term {
            BasisTerm::Linear { column } => {
                x.column_mut(off).copy_from(&z.column(*column));
            }
            BasisTerm::Indicators { column, levels } => {
                for i in 0..n {
                    let v = z[(i, *column)];
                    for (l, level) in levels.iter().enumerate().skip(1) {
                        if v == *level {
                            x[(i, off + l - 1)] = 1.0;
                        }
                    }
                }
            }
            BasisTerm::Spline { column, knots } => {
                for i in 0..n {
                    let b = bspline_basis(z[(i, *column)], knots);
                    for (k, v) in b.into_iter().skip(1).enumerate() {
                        x[(i, off + k)] = v;
                    }
                }
                // Second differences of (0, β_2, ..., β_K); the dropped first
                // coefficient is pinned at zero.
                let full = w + 1;
                for r in 0..full - 2 {
                    let coeffs = [(r, 1.0), (r + 1, -2.0), (r + 2, 1.0)];
                    for &(a, ca) in &coeffs {
                        for &(b, cb) in &coeffs {
                            if a >= 1 && b >= 1 {
                                s[(off + a - 1, off + b - 1)] += ca * cb;
                            }
                        }
                    }
                }
            }
        }
        off += w;
    }
    (x, s)
}

fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

struct PenalizedFit {
    beta: DVector<f64>,
    fitted: DVector<f64>,
    rss: f64,
    edf: f64,
}

fn penalized_fit(xtx: &DMatrix<f64>, xty: &DVector<f64>, x: &DMatrix<f64>, y: &DVector<f64>, s: &DMatrix<f64>, lambda: f64) -> Option<PenalizedFit> {
    let mut a = xtx + s * lambda;
    let mut chol = a.clone().cholesky();
    if chol.is_none() {
        let jitter = 1e-10 * (1.0 + a.diagonal().max());
        for i in 0..a.nrows() {
            a[(i, i)] += jitter;
        }
        chol = a.cholesky();
    }
    let chol = chol?;
    let beta = chol.solve(xty);
    let fitted = x * &beta;
    let rss = (y - &fitted).norm_squared();
    let edf = chol.solve(xtx).trace();
    Some(PenalizedFit { beta, fitted, rss, edf })
}

/// Fits `y` on an additive basis of `z` with a GCV-selected smoothing weight.
///
/// The number of interior knots shrinks below the default when `n` is small
/// relative to the basis width, so that `n > 2 · columns` holds.
pub fn fit_conditional_model(y: &DVector<f64>, z: &DMatrix<f64>, meta: &[ColumnMeta]) -> Result<ConditionalModel> {
    let n = y.len();
    if n < 3 {
        return Err(Error::TooFewRows(format!("conditional model needs n >= 3, got {n}")));
    }
    if z.ncols() > 0 && z.nrows() != n {
        return Err(Error::RowMismatch(format!("z has {} rows, y has {n}", z.nrows())));
    }
    let mut interior = DEFAULT_INTERIOR_KNOTS;
    let terms = loop {
        let terms = build_terms(z, meta, interior);
        let width = 1 + terms.iter().map(BasisTerm::width).sum::<usize>();
        if n > 2 * width || interior == 0 {
            break terms;
        }
        interior -= 1;
    };
    let (x_full, s_full) = design_and_penalty(z, &terms);
    if x_full.ncols() >= n {
        return Err(Error::TooFewRows(format!(
            "{} basis columns need more than {n} rows",
            x_full.ncols()
        )));
    }

    let mut ortho = OrthoBasis::new(n);
    for j in 0..x_full.ncols() {
        let col: Vec<f64> = x_full.column(j).iter().copied().collect();
        ortho.push(&col, j);
    }
    let kept = ortho.kept().to_vec();
    let dropped = ortho.dropped().to_vec();
    let x = x_full.select_columns(&kept);
    let s = select(&s_full, &kept, &kept);

    let xtx = x.tr_mul(&x);
    let xty = x.tr_mul(y);
    let penalized = s.iter().any(|&v| v != 0.0);
    let fit = if penalized {
        // λ scaled so the grid is comparable across sample sizes.
        let scale = xtx.trace() / s.trace().max(1e-300);
        let mut best: Option<(f64, f64, PenalizedFit)> = None;
        for g in 0..GCV_GRID {
            let lambda = scale * 10f64.powf(-8.0 + 8.0 * g as f64 / (GCV_GRID - 1) as f64);
            let Some(f) = penalized_fit(&xtx, &xty, &x, y, &s, lambda) else {
                continue;
            };
            let denom = n as f64 - f.edf;
            if denom <= 0.0 {
                continue;
            }
            let gcv = n as f64 * f.rss / (denom * denom);
            if best.as_ref().is_none_or(|(b, _, _)| gcv < *b) {
                best = Some((gcv, lambda, f));
            }
        }
        let (_, lambda, f) = best.ok_or_else(|| Error::InvalidParam("penalized fit failed on every grid point".into()))?;
        (lambda, f)
    } else {
        let f = penalized_fit(&xtx, &xty, &x, y, &s, 0.0)
            .ok_or_else(|| Error::InvalidParam("design is singular".into()))?;
        (0.0, f)
    };
    let (lambda, f) = fit;
    let resid_dof = n as f64 - f.edf;
    let mut sigma2 = f.rss / resid_dof;
    if !(sigma2 > 0.0) {
        // Perfect fit; keep the density proper.
        sigma2 = f64::MIN_POSITIVE.max(1e-12 * (y.norm_squared() / n as f64).max(1.0));
    }
    Ok(ConditionalModel {
        basis: terms,
        coefficients: f.beta.iter().copied().collect(),
        retained_columns: kept,
        dropped_columns: dropped,
        sigma2,
        fitted_means: f.fitted.iter().copied().collect(),
        lambda,
        edf: f.edf,
    })
}
