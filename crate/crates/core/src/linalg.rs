//! Least-squares building blocks: a rank-revealing orthonormal basis for
//! design matrices and a ridge residualizer.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative residual norm below which a new column counts as collinear.
const COLLINEAR_TOL: f64 = 1e-8;

/// Orthonormal basis of the span of a growing list of columns, built with
/// twice-iterated modified Gram–Schmidt. Columns that add no new direction
/// are dropped and reported.
#[derive(Debug, Clone)]
pub struct OrthoBasis {
    n: usize,
    q: Vec<Vec<f64>>,
    kept: Vec<usize>,
    dropped: Vec<usize>,
}

impl OrthoBasis {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            q: Vec::new(),
            kept: Vec::new(),
            dropped: Vec::new(),
        }
    }

    pub fn with_intercept(n: usize) -> Self {
        let mut b = Self::new(n);
        b.push(&vec![1.0; n], usize::MAX);
        b
    }

    pub fn rank(&self) -> usize {
        self.q.len()
    }

    /// Labels of the columns that were kept, in insertion order.
    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    /// Adds a column labelled `label`; returns whether it extended the span.
    pub fn push(&mut self, col: &[f64], label: usize) -> bool {
        assert_eq!(col.len(), self.n);
        let norm0 = dot(col, col).sqrt();
        let mut v = col.to_vec();
        for _ in 0..2 {
            for b in &self.q {
                let c = dot(b, &v);
                axpy(-c, b, &mut v);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm0 == 0.0 || norm <= COLLINEAR_TOL * norm0 {
            self.dropped.push(label);
            return false;
        }
        v.iter_mut().for_each(|e| *e /= norm);
        self.q.push(v);
        self.kept.push(label);
        true
    }

    /// Component of `v` orthogonal to the span.
    pub fn residualize(&self, v: &[f64]) -> Vec<f64> {
        let mut r = v.to_vec();
        for _ in 0..2 {
            for b in &self.q {
                let c = dot(b, &r);
                axpy(-c, b, &mut r);
            }
        }
        r
    }

    /// Residual sum of squares of `v` regressed on the first `k` basis vectors.
    pub fn rss_prefix(&self, v: &[f64], k: usize) -> f64 {
        let mut r = v.to_vec();
        for _ in 0..2 {
            for b in &self.q[..k] {
                let c = dot(b, &r);
                axpy(-c, b, &mut r);
            }
        }
        dot(&r, &r)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

/// Residuals of a ridge regression of every column of `targets` on `design`
/// (no intercept): `T − D (DᵀD + λI)⁻¹ DᵀT`.
pub fn ridge_residuals(design: &DMatrix<f64>, targets: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if design.nrows() != targets.nrows() {
        return Err(Error::DimMismatch {
            expected: design.nrows(),
            got: targets.nrows(),
        });
    }
    let k = design.ncols();
    let mut gram = design.tr_mul(design);
    for i in 0..k {
        gram[(i, i)] += lambda;
    }
    let rhs = design.tr_mul(targets);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::InvalidParam("ridge system is not positive definite".into()))?;
    let coef = chol.solve(&rhs);
    Ok(targets - design * coef)
}
