//! Exact k-nearest-neighbor graphs. A kd-tree serves low-dimensional inputs;
//! above [`TREE_MAX_DIM`] dimensions the brute-force scan is used instead.
//! Both paths use the same distance routine and break ties by smaller row
//! index, so they return identical graphs.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::row_major;

/// Highest dimension for which the kd-tree is used.
pub const TREE_MAX_DIM: usize = 20;
const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    Chebyshev,
}

impl Metric {
    /// Monotone surrogate of the distance: squared for Euclidean.
    #[inline]
    fn surrogate(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            Metric::Chebyshev => a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs())),
        }
    }

    #[inline]
    fn plane_bound(self, diff: f64) -> f64 {
        match self {
            Metric::Euclidean => diff * diff,
            Metric::Chebyshev => diff.abs(),
        }
    }
}

/// Row-major point cloud.
#[derive(Debug, Clone)]
pub struct PointSet {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl PointSet {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            data: row_major(m),
            n: m.nrows(),
            d: m.ncols(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Neighbor lists of a knn graph. Lists are ordered nearest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnGraph {
    neighbor_lists: Vec<Vec<usize>>,
    k: usize,
    metric: Metric,
}

impl KnnGraph {
    pub fn n(&self) -> usize {
        self.neighbor_lists.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbor_lists[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbor_lists[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbor_lists.iter().map(Vec::len).collect()
    }

    pub fn neighbor_lists(&self) -> &[Vec<usize>] {
        &self.neighbor_lists
    }
}

#[derive(Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

/// Static kd-tree over a [`PointSet`].
#[derive(Debug)]
pub struct KdTree<'a> {
    points: &'a PointSet,
    order: Vec<usize>,
    nodes: Vec<Node>,
    metric: Metric,
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a PointSet, metric: Metric) -> Self {
        let mut tree = Self {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
            metric,
        };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let d = self.points.dim();
        let mut best = (0, -1.0);
        for dim in 0..d {
            let (lo, hi) = self.order[start..end].iter().fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), &i| {
                    let v = self.points.row(i)[dim];
                    (lo.min(v), hi.max(v))
                },
            );
            if hi - lo > best.1 {
                best = (dim, hi - lo);
            }
        }
        if best.1 <= 0.0 {
            // All points identical: keep them in one leaf.
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let dim = best.0;
        let mid = start + (end - start) / 2;
        let pts = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts.row(a)[dim].total_cmp(&pts.row(b)[dim])
        });
        let value = pts.row(self.order[mid])[dim];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest rows to row `i`, excluding `i`, nearest first.
    pub fn knn_of_row(&self, i: usize, k: usize) -> Vec<usize> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, self.points.row(i), Some(i), k, &mut heap);
        }
        let mut out = heap.into_sorted_vec();
        out.truncate(k);
        out.into_iter().map(|c| c.index).collect()
    }

    fn search(
        &self,
        node: usize,
        query: &[f64],
        skip: Option<usize>,
        k: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &j in &self.order[start..end] {
                    if Some(j) == skip {
                        continue;
                    }
                    let c = Candidate {
                        dist: self.metric.surrogate(query, self.points.row(j)),
                        index: j,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, skip, k, heap);
                let bound = self.metric.plane_bound(diff);
                // Equal bounds must still be visited: a tie may carry a smaller index.
                if heap.len() < k || bound <= heap.peek().unwrap().dist {
                    self.search(far, query, skip, k, heap);
                }
            }
        }
    }
}

/// Brute-force neighbors of row `i`, nearest first with index tie-breaking.
pub fn brute_knn_of_row(points: &PointSet, i: usize, k: usize, metric: Metric) -> Vec<usize> {
    let q = points.row(i);
    let mut cands: Vec<Candidate> = (0..points.len())
        .filter(|&j| j != i)
        .map(|j| Candidate {
            dist: metric.surrogate(q, points.row(j)),
            index: j,
        })
        .collect();
    if k < cands.len() {
        cands.select_nth_unstable(k);
        cands.truncate(k);
    }
    cands.sort_unstable();
    cands.into_iter().map(|c| c.index).collect()
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(Error::KTooLarge { k, n });
    }
    Ok(())
}

/// Graph joining every row of `m` to its `k` nearest distinct rows.
pub fn build_knn_graph(m: &DMatrix<f64>, k: usize, metric: Metric) -> Result<KnnGraph> {
    let n = m.nrows();
    check_k(n, k)?;
    let points = PointSet::from_matrix(m);
    let neighbor_lists = if points.dim() <= TREE_MAX_DIM && n > 4 * LEAF_SIZE {
        let tree = KdTree::build(&points, metric);
        (0..n).map(|i| tree.knn_of_row(i, k)).collect()
    } else {
        (0..n).map(|i| brute_knn_of_row(&points, i, k, metric)).collect()
    };
    Ok(KnnGraph {
        neighbor_lists,
        k,
        metric,
    })
}

/// Reference O(n²) construction, always scanning every pair.
pub fn build_knn_graph_brute(m: &DMatrix<f64>, k: usize, metric: Metric) -> Result<KnnGraph> {
    let n = m.nrows();
    check_k(n, k)?;
    let points = PointSet::from_matrix(m);
    Ok(KnnGraph {
        neighbor_lists: (0..n).map(|i| brute_knn_of_row(&points, i, k, metric)).collect(),
        k,
        metric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn tiny_enumerations() {
        let m = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 3.0]);
        let g = build_knn_graph(&m, 1, Metric::Euclidean).unwrap();
        assert_eq!(g.neighbor_lists(), &[vec![1], vec![0], vec![1]]);
        assert_eq!(g.degrees(), vec![1, 1, 1]);

        let m = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 5.0]);
        let g = build_knn_graph(&m, 1, Metric::Euclidean).unwrap();
        assert_eq!(g.neighbor_lists(), &[vec![1], vec![0], vec![0]]);
    }

    #[test]
    fn k_bounds() {
        let m = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 3.0]);
        assert!(matches!(
            build_knn_graph(&m, 3, Metric::Euclidean),
            Err(Error::KTooLarge { k: 3, n: 3 })
        ));
        assert!(build_knn_graph(&m, 0, Metric::Euclidean).is_err());
    }

    #[test]
    fn tree_equals_brute_force_on_seeded_gaussians() {
        let mut rng = rng_from_seed(50);
        let m = DMatrix::from_fn(50, 3, |_, _| StandardNormal.sample(&mut rng));
        for metric in [Metric::Euclidean, Metric::Chebyshev] {
            let points = PointSet::from_matrix(&m);
            let tree = KdTree::build(&points, metric);
            for i in 0..50 {
                assert_eq!(tree.knn_of_row(i, 5), brute_knn_of_row(&points, i, 5, metric));
            }
        }
    }

    #[test]
    fn no_self_loops_and_valid_indices() {
        let mut rng = rng_from_seed(2);
        let m = DMatrix::from_fn(120, 2, |_, _| StandardNormal.sample(&mut rng));
        let g = build_knn_graph(&m, 7, Metric::Chebyshev).unwrap();
        for i in 0..g.n() {
            assert_eq!(g.degree(i), 7);
            assert!(!g.neighbors(i).contains(&i));
            assert!(g.neighbors(i).iter().all(|&j| j < 120));
        }
    }
}
