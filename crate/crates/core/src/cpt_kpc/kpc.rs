//! Graph kernel partial correlation.

use nalgebra::DMatrix;

use crate::data::{standardize_columns, standardize_vector, FeatureSample};
use crate::error::{Error, Result};
use crate::kernels::{median_heuristic, row_major, squared_distance, DEFAULT_BANDWIDTH_CAP};
use crate::knn::{build_knn_graph, KnnGraph, Metric};

/// Quantities shared by the observed and all permuted statistics.
#[derive(Debug, Clone)]
pub struct KpcContext {
    x_rows: Vec<f64>,
    dim_x: usize,
    z: DMatrix<f64>,
    sigma: f64,
    k_graph: usize,
    /// Mean kernel over the `Z` graph, or over all pairs when `Z` is empty.
    z_term: f64,
    /// Standardized `Y`, in original row order.
    y: Vec<f64>,
}

impl KpcContext {
    pub fn new(s: &FeatureSample, k_graph: usize, kernel_sigma: Option<f64>) -> Result<Self> {
        let n = s.n();
        if k_graph == 0 || n <= k_graph + 1 {
            return Err(Error::KTooLarge { k: k_graph, n });
        }
        let (xs, _, _) = standardize_columns(s.x());
        let sigma = match kernel_sigma {
            Some(v) if v > 0.0 && v.is_finite() => v,
            Some(v) => return Err(Error::NonPositive(v)),
            None => median_heuristic(&xs, DEFAULT_BANDWIDTH_CAP),
        };
        let (ys, _, sd) = standardize_vector(s.y());
        if sd == 0.0 {
            return Err(Error::DegenerateY);
        }
        let (z, _, _) = standardize_columns(s.z());
        let mut ctx = Self {
            x_rows: row_major(&xs),
            dim_x: xs.ncols(),
            z,
            sigma,
            k_graph,
            z_term: 0.0,
            y: ys.iter().copied().collect(),
        };
        ctx.z_term = if ctx.z.ncols() > 0 {
            let g = build_knn_graph(&ctx.z, k_graph, Metric::Euclidean)?;
            ctx.graph_mean(&g)
        } else {
            ctx.all_pairs_mean()
        };
        if (1.0 - ctx.z_term).abs() < 1e-12 {
            return Err(Error::DegenerateDenominator);
        }
        Ok(ctx)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    fn kernel(&self, i: usize, j: usize) -> f64 {
        let d = self.dim_x;
        let sq = squared_distance(&self.x_rows[i * d..(i + 1) * d], &self.x_rows[j * d..(j + 1) * d]);
        (-sq / (2.0 * self.sigma * self.sigma)).exp()
    }

    fn graph_mean(&self, g: &KnnGraph) -> f64 {
        let n = g.n();
        let total: f64 = (0..n)
            .map(|i| {
                let nb = g.neighbors(i);
                nb.iter().map(|&j| self.kernel(i, j)).sum::<f64>() / nb.len() as f64
            })
            .sum();
        total / n as f64
    }

    fn all_pairs_mean(&self) -> f64 {
        let n = self.n();
        let mut total = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                total += self.kernel(i, j);
            }
        }
        2.0 * total / (n * (n - 1)) as f64
    }

    /// Statistic with the `Y` values rearranged so row `i` holds `y[perm[i]]`.
    pub fn statistic_permuted(&self, perm: Option<&[usize]>) -> Result<f64> {
        let n = self.n();
        let p = self.z.ncols();
        let yz = DMatrix::from_fn(n, p + 1, |i, j| {
            if j == 0 {
                let src = perm.map_or(i, |pm| pm[i]);
                self.y[src]
            } else {
                self.z[(i, j - 1)]
            }
        });
        let g = build_knn_graph(&yz, self.k_graph, Metric::Euclidean)?;
        let yz_term = self.graph_mean(&g);
        // k(X_i, X_i) = 1 for the Gaussian kernel.
        Ok((yz_term - self.z_term) / (1.0 - self.z_term))
    }
}

/// Graph KPC of `X^ω` on `Y` given `Z`, with `X^ω` kernel-embedded and the
/// neighbor graphs built on standardized `Z` and `(Y, Z)`.
pub fn kpc_statistic(s: &FeatureSample, k_graph: usize, kernel_sigma: Option<f64>) -> Result<f64> {
    KpcContext::new(s, k_graph, kernel_sigma)?.statistic_permuted(None)
}
