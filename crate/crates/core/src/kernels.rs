//! Gaussian kernel, median-heuristic bandwidths and random Fourier features.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Rows used by the median heuristic unless the caller says otherwise.
pub const DEFAULT_BANDWIDTH_CAP: usize = 500;

pub fn squared_distance(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `exp(−‖u − v‖² / (2σ²))`.
pub fn gaussian_kernel(u: &[f64], v: &[f64], sigma: f64) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    if !(sigma > 0.0) {
        return Err(Error::NonPositive(sigma));
    }
    Ok((-squared_distance(u, v) / (2.0 * sigma * sigma)).exp())
}

/// Copies a matrix into a row-major buffer.
pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = m.shape();
    let mut out = vec![0.0; n * d];
    for j in 0..d {
        for (i, v) in m.column(j).iter().enumerate() {
            out[i * d + j] = *v;
        }
    }
    out
}

/// Median of the pairwise Euclidean distances among the first `min(n, cap)`
/// rows. Falls back to the smallest positive distance when the median is zero
/// and to 1 when every distance is zero.
pub fn median_heuristic(m: &DMatrix<f64>, cap: usize) -> f64 {
    let rows = m.nrows().min(cap.max(2));
    let d = m.ncols();
    if rows < 2 || d == 0 {
        return 1.0;
    }
    let sub = m.rows(0, rows).into_owned();
    let buf = row_major(&sub);
    let mut dists = Vec::with_capacity(rows * (rows - 1) / 2);
    for i in 0..rows {
        for j in (i + 1)..rows {
            dists.push(squared_distance(&buf[i * d..(i + 1) * d], &buf[j * d..(j + 1) * d]).sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let k = dists.len();
    let median = if k % 2 == 1 {
        dists[k / 2]
    } else {
        0.5 * (dists[k / 2 - 1] + dists[k / 2])
    };
    if median > 0.0 {
        median
    } else {
        dists.into_iter().find(|&v| v > 0.0).unwrap_or(1.0)
    }
}

/// Frequencies and phases of a random Fourier feature map for the Gaussian
/// kernel with bandwidth `sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RffBasis {
    /// `d × m`; entries drawn i.i.d. `N(0, σ⁻²)`.
    pub w: DMatrix<f64>,
    /// Phases in `[0, 2π)`.
    pub b: Vec<f64>,
    pub sigma: f64,
}

impl RffBasis {
    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.b.len()
    }
}

/// Draws a basis whose features satisfy `E[φ(x)ᵀφ(y)] / m = exp(−‖x−y‖²/(2σ²))`.
pub fn sample_rff(d: usize, m: usize, sigma: f64, seed: u64) -> Result<RffBasis> {
    if d == 0 || m == 0 {
        return Err(Error::InvalidParam(format!(
            "random Fourier features need d, m >= 1 (got d={d}, m={m})"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::NonPositive(sigma));
    }
    let mut rng = rng_from_seed(seed);
    let mut w = DMatrix::zeros(d, m);
    for j in 0..m {
        for i in 0..d {
            let g: f64 = rng.sample(StandardNormal);
            w[(i, j)] = g / sigma;
        }
    }
    let phase = Uniform::new(0.0, std::f64::consts::TAU).expect("valid range");
    let b = (0..m).map(|_| rng.sample(phase)).collect();
    Ok(RffBasis { w, b, sigma })
}

/// `φ(x)_j = √2 cos(w_jᵀ x + b_j)` for every row of `m`.
pub fn rff_features(basis: &RffBasis, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.ncols() != basis.input_dim() {
        return Err(Error::DimMismatch {
            expected: basis.input_dim(),
            got: m.ncols(),
        });
    }
    let mut proj = m * &basis.w;
    for (j, mut col) in proj.column_iter_mut().enumerate() {
        let b = basis.b[j];
        for v in col.iter_mut() {
            *v = std::f64::consts::SQRT_2 * (*v + b).cos();
        }
    }
    Ok(proj)
}

/// Full `n × n` Gaussian kernel matrix over the rows of `m`.
pub fn kernel_matrix(m: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let (n, d) = m.shape();
    let buf = row_major(m);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut k = DMatrix::from_element(n, n, 1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (-squared_distance(&buf[i * d..(i + 1) * d], &buf[j * d..(j + 1) * d]) * inv).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Distribution;

    #[test]
    fn kernel_examples() {
        assert_eq!(gaussian_kernel(&[1.0, 2.0], &[1.0, 2.0], 0.7).unwrap(), 1.0);
        let s = 1.3;
        let v = gaussian_kernel(&[0.0], &[s * 2f64.sqrt()], s).unwrap();
        assert!((v - (-1f64).exp()).abs() < 1e-12);
        let v = gaussian_kernel(&[1.0, 2.0], &[4.0, 6.0], 5.0).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-12);
        assert!(matches!(
            gaussian_kernel(&[1.0], &[1.0, 2.0], 1.0),
            Err(Error::DimMismatch { .. })
        ));
        assert!(gaussian_kernel(&[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn median_heuristic_examples() {
        let m = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 2.0]);
        assert_eq!(median_heuristic(&m, 500), 1.0);
        let m = DMatrix::from_element(5, 2, 3.0);
        assert_eq!(median_heuristic(&m, 500), 1.0);
        // Duplicate-heavy: pairs {0,0,0,0,0,1,...} → median 0 → smallest positive.
        let m = DMatrix::from_column_slice(5, 1, &[0.0, 0.0, 0.0, 0.0, 2.5]);
        assert_eq!(median_heuristic(&m, 500), 2.5);
    }

    #[test]
    fn median_heuristic_matches_exhaustive_pairs() {
        let mut rng = rng_from_seed(11);
        let m = DMatrix::from_fn(10, 3, |_, _| StandardNormal.sample(&mut rng));
        let mut all = Vec::new();
        for i in 0..10 {
            for j in (i + 1)..10 {
                all.push((m.row(i) - m.row(j)).norm());
            }
        }
        assert_eq!(all.len(), 45);
        all.sort_by(f64::total_cmp);
        assert!((median_heuristic(&m, 500) - all[22]).abs() < 1e-12);
        // The cap restricts the pairs to the leading rows.
        let mut head = Vec::new();
        for i in 0..4 {
            for j in (i + 1)..4 {
                head.push((m.row(i) - m.row(j)).norm());
            }
        }
        head.sort_by(f64::total_cmp);
        assert!((median_heuristic(&m, 4) - 0.5 * (head[2] + head[3])).abs() < 1e-12);
    }

    #[test]
    fn rff_is_deterministic_and_has_the_right_laws() {
        let a = sample_rff(3, 7, 0.5, 99).unwrap();
        assert_eq!(a, sample_rff(3, 7, 0.5, 99).unwrap());

        let basis = sample_rff(1, 10_000, 1.0, 5).unwrap();
        let w: Vec<f64> = basis.w.iter().copied().collect();
        let var = crate::stats::variance(&w);
        assert!((var - 1.0).abs() < 0.05, "var = {var}");

        // KS distance of phases from Uniform[0, 2π); p > 0.01 needs D < 1.628/√m.
        let u: Vec<f64> = basis.b.iter().map(|b| b / std::f64::consts::TAU).collect();
        assert!(basis.b.iter().all(|&b| (0.0..std::f64::consts::TAU).contains(&b)));
        let d = crate::stats::ks_uniform(&u);
        assert!(d < 1.628 / 100.0, "D = {d}");
    }

    #[test]
    fn rff_constant_phase_and_kernel_approximation() {
        let basis = RffBasis {
            w: DMatrix::zeros(2, 4),
            b: vec![0.0; 4],
            sigma: 1.0,
        };
        let f = rff_features(&basis, &DMatrix::from_element(3, 2, 0.3)).unwrap();
        assert!(f.iter().all(|v| (v - 2f64.sqrt()).abs() < 1e-15));

        let sigma = 1.5;
        let basis = sample_rff(2, 2000, sigma, 17).unwrap();
        let pts = DMatrix::from_row_slice(2, 2, &[0.2, -0.4, 1.1, 0.9]);
        let f = rff_features(&basis, &pts).unwrap();
        let approx = f.row(0).dot(&f.row(1)) / 2000.0;
        let exact = gaussian_kernel(&[0.2, -0.4], &[1.1, 0.9], sigma).unwrap();
        assert!((approx - exact).abs() < 0.05, "{approx} vs {exact}");
        let self_dot = f.row(0).dot(&f.row(0)) / 2000.0;
        assert!((self_dot - 1.0).abs() < 0.05);
    }

    #[test]
    fn rff_error_shrinks_with_more_features() {
        let mut rng = rng_from_seed(3);
        let pts = DMatrix::from_fn(20, 3, |_, _| StandardNormal.sample(&mut rng));
        let sigma = 1.2;
        let exact = kernel_matrix(&pts, sigma);
        let err = |m: usize| {
            let basis = sample_rff(3, m, sigma, 1234).unwrap();
            let f = rff_features(&basis, &pts).unwrap();
            let approx = &f * f.transpose() / m as f64;
            (approx - &exact).abs().mean()
        };
        let (e_small, e_large) = (err(250), err(4000));
        assert!(e_large < e_small, "{e_large} !< {e_small}");
    }

    #[test]
    fn kernel_matrix_is_psd() {
        let mut rng = rng_from_seed(8);
        let pts = DMatrix::from_fn(40, 4, |_, _| StandardNormal.sample(&mut rng));
        let k = kernel_matrix(&pts, median_heuristic(&pts, 500));
        let eig = k.symmetric_eigenvalues();
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-8 * 40.0, "min eigenvalue {min}");
        assert!(k.iter().all(|&v| v > 0.0 && v <= 1.0));
    }
}
