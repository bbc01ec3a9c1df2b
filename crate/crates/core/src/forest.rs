//! Bagged regression trees with squared-error splits.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub tree_count: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split besides `forced`; `None` means `⌈√d⌉` over
    /// the unforced columns.
    pub mtry: Option<usize>,
    /// Columns that are split candidates at every node.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub forced: Vec<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            tree_count: 100,
            max_depth: 8,
            min_leaf: 5,
            mtry: None,
            forced: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[feature] <= threshold { left } else { right },
            }
        }
    }
}

struct Builder<'a> {
    cols: &'a [Vec<f64>],
    y: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    mtry: usize,
    forced: &'a [usize],
    free: &'a [usize],
    nodes: Vec<Node>,
    pairs: Vec<(f64, f64)>,
}

impl Builder<'_> {
    fn mean(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64
    }

    /// Best `(feature, threshold)` among the forced features and `mtry` random
    /// others, if any split improves the squared error.
    fn best_split<R: Rng>(&mut self, idx: &[usize], rng: &mut R) -> Option<(usize, f64)> {
        let m = idx.len();
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let base = total * total / m as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let k = self.mtry.min(self.free.len());
        let drawn: Vec<usize> = sample(rng, self.free.len(), k).into_iter().map(|i| self.free[i]).collect();
        for &f in self.forced.iter().chain(&drawn) {
            let col = &self.cols[f];
            self.pairs.clear();
            self.pairs.extend(idx.iter().map(|&i| (col[i], self.y[i])));
            self.pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = 0.0;
            for s in 1..m {
                left += self.pairs[s - 1].1;
                if s < self.min_leaf || m - s < self.min_leaf {
                    continue;
                }
                let (lo, hi) = (self.pairs[s - 1].0, self.pairs[s].0);
                if lo == hi {
                    continue;
                }
                let right = total - left;
                let gain = left * left / s as f64 + right * right / (m - s) as f64 - base;
                if gain > 1e-12 * base.abs().max(1e-300) && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, 0.5 * (lo + hi)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn build<R: Rng>(&mut self, idx: Vec<usize>, depth: usize, rng: &mut R) -> usize {
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf(self.mean(&idx)));
        if depth >= self.max_depth || idx.len() < 2 * self.min_leaf {
            return at;
        }
        let Some((feature, threshold)) = self.best_split(&idx, rng) else {
            return at;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.cols[feature][i] <= threshold);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[at] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }
}

/// Bootstrap-aggregated regression trees; prediction is the tree average.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionForest {
    trees: Vec<Tree>,
    dim: usize,
}

impl RegressionForest {
    pub fn fit(x: &DMatrix<f64>, y: &[f64], p: &ForestParams, seed: u64) -> Result<Self> {
        let n = x.nrows();
        if y.len() != n {
            return Err(Error::RowMismatch(format!("features have {n} rows, targets {}", y.len())));
        }
        if n <= 2 * p.min_leaf {
            return Err(Error::TooFewRows(format!(
                "tree ensemble needs more than {} rows, got {n}",
                2 * p.min_leaf
            )));
        }
        if p.tree_count == 0 || p.min_leaf == 0 {
            return Err(Error::InvalidParam("tree_count and min_leaf must be >= 1".into()));
        }
        let d = x.ncols();
        if let Some(&bad) = p.forced.iter().find(|&&j| j >= d) {
            return Err(Error::InvalidParam(format!("forced column {bad} out of range for {d} features")));
        }
        let cols: Vec<Vec<f64>> = (0..d).map(|j| x.column(j).iter().copied().collect()).collect();
        let free: Vec<usize> = (0..d).filter(|j| !p.forced.contains(j)).collect();
        let mtry = p
            .mtry
            .unwrap_or_else(|| (free.len() as f64).sqrt().ceil() as usize)
            .min(free.len());
        let mtry = if p.forced.is_empty() { mtry.max(1) } else { mtry };
        let trees = (0..p.tree_count)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_from_seed(derive_seed(seed, stream::TREE, t as u64));
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let mut b = Builder {
                    cols: &cols,
                    y,
                    max_depth: p.max_depth,
                    min_leaf: p.min_leaf,
                    mtry,
                    forced: &p.forced,
                    free: &free,
                    nodes: Vec::new(),
                    pairs: Vec::with_capacity(n),
                };
                if d == 0 {
                    return Tree {
                        nodes: vec![Node::Leaf(b.mean(&idx))],
                    };
                }
                b.build(idx, 0, &mut rng);
                Tree { nodes: b.nodes }
            })
            .collect();
        Ok(Self { trees, dim: d })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        assert_eq!(x.ncols(), self.dim, "feature count differs from training");
        let k = self.trees.len() as f64;
        let mut row = vec![0.0; self.dim];
        (0..x.nrows())
            .map(|i| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = x[(i, j)];
                }
                self.trees.iter().map(|t| t.predict_row(&row)).sum::<f64>() / k
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_targets_give_constant_predictions() {
        let x = DMatrix::from_fn(50, 3, |i, j| ((i * 7 + j * 3) % 11) as f64);
        let y = vec![2.5; 50];
        let f = RegressionForest::fit(&x, &y, &ForestParams::default(), 1).unwrap();
        assert!(f.predict(&x).iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn too_few_rows() {
        let x = DMatrix::zeros(10, 1);
        assert!(matches!(
            RegressionForest::fit(&x, &[0.0; 10], &ForestParams::default(), 0),
            Err(Error::TooFewRows(_))
        ));
    }

    #[test]
    fn forced_columns_are_always_offered() {
        // Only column 0 carries signal; with mtry = 0 over the free columns a
        // forest can split on nothing else.
        let x = DMatrix::from_fn(200, 6, |i, j| if j == 0 { (i % 20) as f64 } else { ((i * (j + 3)) % 17) as f64 });
        let y: Vec<f64> = (0..200).map(|i| (i % 20) as f64).collect();
        let p = ForestParams {
            tree_count: 10,
            mtry: Some(0),
            forced: vec![0],
            ..ForestParams::default()
        };
        let pred = RegressionForest::fit(&x, &y, &p, 3).unwrap().predict(&x);
        let mse = pred.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 200.0;
        assert!(mse < 1.0, "mse {mse}");

        let bad = ForestParams {
            forced: vec![6],
            ..ForestParams::default()
        };
        assert!(RegressionForest::fit(&x, &y, &bad, 3).is_err());
    }
}
