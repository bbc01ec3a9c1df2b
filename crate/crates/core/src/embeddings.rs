//! Embedding maps that turn raw object arrays into feature representations.
//!
//! Every map here is either fixed in advance (identity, seeded random
//! projection, seeded noise) or fitted on the raw objects alone (in-sample
//! PCA). None of them looks at the outcome, which is what keeps a downstream
//! conditional independence test valid.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Identity,
    Noisy,
    LinearProjection,
    PcaInsample,
    Precomputed,
}

/// How the parameters of an embedding relate to the data being tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Fitted on a sample disjoint from the one being tested.
    IndependentSample,
    /// A function of the tested `(X, Z)` but not of `Y`.
    FunctionOfXz,
    /// A function of the tested raw objects only (unsupervised, in-sample).
    FunctionOfX,
    /// Fixed outside the study (pretrained, transfer, seeded random).
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub kind: EmbeddingKind,
    pub dim_out: usize,
    #[serde(default)]
    pub noise_variance: f64,
    pub provenance: Provenance,
}

impl EmbeddingSpec {
    pub fn new(kind: EmbeddingKind, dim_out: usize, noise_variance: f64, provenance: Provenance) -> Result<Self> {
        let spec = Self {
            kind,
            dim_out,
            noise_variance,
            provenance,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            kind: EmbeddingKind::Identity,
            dim_out: dim,
            noise_variance: 0.0,
            provenance: Provenance::External,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim_out == 0 {
            return Err(Error::InvalidParam("dim_out must be positive".into()));
        }
        let noisy = self.kind == EmbeddingKind::Noisy;
        if !(self.noise_variance >= 0.0) || noisy != (self.noise_variance > 0.0) {
            return Err(Error::InvalidParam(
                "noise_variance must be positive exactly for noisy embeddings".into(),
            ));
        }
        Ok(())
    }
}

/// Flattened raw objects, one row per object.
#[derive(Debug, Clone, PartialEq)]
pub struct RawObjectSet {
    data: DMatrix<f64>,
}

impl RawObjectSet {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(Error::InvalidParam("raw objects need d >= 1".into()));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("raw objects"));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedEmbedding {
    pub spec: EmbeddingSpec,
    pub input_dim: usize,
    /// `d × q`; present for linear projections and PCA.
    pub projection: Option<DMatrix<f64>>,
    pub noise_seed: Option<u64>,
    /// Set when PCA found fewer than the requested nonzero directions.
    pub rank_deficient: bool,
}

impl FittedEmbedding {
    pub fn identity(d: usize) -> Self {
        Self {
            spec: EmbeddingSpec::identity(d),
            input_dim: d,
            projection: None,
            noise_seed: None,
            rank_deficient: false,
        }
    }

    pub fn noisy(d: usize, noise_variance: f64, seed: u64) -> Result<Self> {
        let spec = EmbeddingSpec::new(EmbeddingKind::Noisy, d, noise_variance, Provenance::External)?;
        Ok(Self {
            spec,
            input_dim: d,
            projection: None,
            noise_seed: Some(seed),
            rank_deficient: false,
        })
    }

    /// Projection onto `q` seeded Gaussian directions scaled by `1/√d`.
    pub fn random_projection(d: usize, q: usize, seed: u64) -> Result<Self> {
        let spec = EmbeddingSpec::new(EmbeddingKind::LinearProjection, q, 0.0, Provenance::External)?;
        let mut rng = rng_from_seed(seed);
        let scale = 1.0 / (d as f64).sqrt();
        let mut p = DMatrix::zeros(d, q);
        for j in 0..q {
            for i in 0..d {
                let g: f64 = rng.sample(StandardNormal);
                p[(i, j)] = g * scale;
            }
        }
        Ok(Self {
            spec,
            input_dim: d,
            projection: Some(p),
            noise_seed: None,
            rank_deficient: false,
        })
    }

    /// A user-supplied projection matrix (`d × q`).
    pub fn linear(projection: DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        let spec = EmbeddingSpec::new(EmbeddingKind::LinearProjection, projection.ncols(), 0.0, provenance)?;
        Ok(Self {
            spec,
            input_dim: projection.nrows(),
            projection: Some(projection),
            noise_seed: None,
            rank_deficient: false,
        })
    }

    pub fn output_dim(&self) -> usize {
        match &self.projection {
            Some(p) => p.ncols(),
            None => self.input_dim,
        }
    }
}

fn column_means(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows().max(1) as f64;
    m.column_iter().map(|c| c.sum() / n).collect()
}

fn centered(m: &DMatrix<f64>) -> DMatrix<f64> {
    let means = column_means(m);
    let mut c = m.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    c
}

/// Top-`q` principal directions of the column-centered raw data.
///
/// Each direction is signed so its largest-magnitude loading is positive.
/// When fewer than `q` directions carry variance the projection has fewer
/// columns and `rank_deficient` is set.
pub fn fit_pca_embedding(raw: &RawObjectSet, q: usize) -> Result<FittedEmbedding> {
    let (n, d) = raw.data().shape();
    if n < 2 {
        return Err(Error::EmptyInput { min: 2, got: n });
    }
    if q == 0 || q > n.min(d) {
        return Err(Error::InvalidParam(format!(
            "PCA dimension {q} must lie in [1, min(n, d) = {}]",
            n.min(d)
        )));
    }
    let xc = centered(raw.data());

    // Eigen-decompose the smaller of the two Gram matrices.
    let (values, vectors) = if d <= n {
        let eig = SymmetricEigen::new(xc.tr_mul(&xc));
        (eig.eigenvalues, eig.eigenvectors)
    } else {
        let eig = SymmetricEigen::new(&xc * xc.transpose());
        let mut v = DMatrix::zeros(d, n);
        for k in 0..n {
            let lam = eig.eigenvalues[k];
            if lam > 0.0 {
                let col = xc.tr_mul(&eig.eigenvectors.column(k)) / lam.sqrt();
                v.set_column(k, &col);
            }
        }
        (eig.eigenvalues, v)
    };

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let top = values[order[0]].max(0.0);
    let tol = top * 1e-12 * (n.max(d) as f64);
    let kept: Vec<usize> = order
        .into_iter()
        .take(q)
        .filter(|&k| values[k] > tol && top > 0.0)
        .collect();

    let mut projection = DMatrix::zeros(d, kept.len());
    for (c, &k) in kept.iter().enumerate() {
        let mut col = vectors.column(k).into_owned();
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
        let lead = col
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if lead < 0.0 {
            col.neg_mut();
        }
        projection.set_column(c, &col);
    }

    let spec = EmbeddingSpec::new(EmbeddingKind::PcaInsample, q, 0.0, Provenance::FunctionOfX)?;
    Ok(FittedEmbedding {
        spec,
        input_dim: d,
        rank_deficient: kept.len() < q,
        projection: Some(projection),
        noise_seed: None,
    })
}

/// Applies a fitted embedding to raw objects.
pub fn apply_embedding(fit: &FittedEmbedding, raw: &RawObjectSet) -> Result<DMatrix<f64>> {
    if raw.d() != fit.input_dim {
        return Err(Error::DimMismatch {
            expected: fit.input_dim,
            got: raw.d(),
        });
    }
    match fit.spec.kind {
        EmbeddingKind::Identity | EmbeddingKind::Precomputed => Ok(raw.data().clone()),
        EmbeddingKind::Noisy => {
            let seed = fit
                .noise_seed
                .ok_or_else(|| Error::InvalidParam("noisy embedding without a noise seed".into()))?;
            let sd = fit.spec.noise_variance.sqrt();
            let mut rng = rng_from_seed(seed);
            let (n, d) = raw.data().shape();
            let mut out = raw.data().clone();
            // Row-major draw order so the noise of a row does not depend on d's layout.
            for i in 0..n {
                for j in 0..d {
                    let g: f64 = rng.sample(StandardNormal);
                    out[(i, j)] += sd * g;
                }
            }
            Ok(out)
        }
        EmbeddingKind::LinearProjection | EmbeddingKind::PcaInsample => {
            let p = fit
                .projection
                .as_ref()
                .ok_or_else(|| Error::InvalidParam("projection embedding without a matrix".into()))?;
            Ok(centered(raw.data()) * p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Distribution;

    #[test]
    fn pca_on_a_diagonal_line() {
        let data = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 5.0, 5.0]);
        let fit = fit_pca_embedding(&RawObjectSet::new(data).unwrap(), 1).unwrap();
        let p = fit.projection.unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((p[(0, 0)] - h).abs() < 1e-12 && (p[(1, 0)] - h).abs() < 1e-12);
        assert!(!fit.rank_deficient);
    }

    #[test]
    fn pca_isotropic_cloud_gives_a_unit_vector() {
        let mut rng = rng_from_seed(4);
        let data = DMatrix::from_fn(300, 3, |_, _| StandardNormal.sample(&mut rng));
        let fit = fit_pca_embedding(&RawObjectSet::new(data).unwrap(), 1).unwrap();
        let p = fit.projection.unwrap();
        assert!((p.column(0).norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn pca_matches_an_svd_of_the_centered_matrix() {
        let data = DMatrix::from_row_slice(4, 3, &[2.0, 0.0, 1.0, 4.0, 1.0, 3.0, 1.0, 5.0, 2.0, 7.0, 2.0, 0.0]);
        let fit = fit_pca_embedding(&RawObjectSet::new(data.clone()).unwrap(), 2).unwrap();
        let p = fit.projection.unwrap();

        let svd = centered(&data).svd(false, true);
        let vt = svd.v_t.unwrap();
        let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
        idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        for (c, &k) in idx.iter().take(2).enumerate() {
            let v = vt.row(k).transpose();
            // Directions agree up to sign.
            let agree = (p.column(c) - &v).norm().min((p.column(c) + &v).norm());
            assert!(agree < 1e-9, "component {c}: {agree}");
            let lead = p.column(c).iter().copied().fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
            assert!(lead > 0.0);
        }
        let gram = p.tr_mul(&p);
        assert!((gram - DMatrix::identity(2, 2)).abs().max() < 1e-10);
    }

    #[test]
    fn pca_rank_deficiency_is_flagged() {
        let data = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 3.0, 6.0, 0.0, 4.0, 8.0, 0.0]);
        let fit = fit_pca_embedding(&RawObjectSet::new(data).unwrap(), 2).unwrap();
        assert!(fit.rank_deficient);
        assert_eq!(fit.projection.unwrap().ncols(), 1);
    }

    #[test]
    fn pca_is_bitwise_reproducible() {
        let mut rng = rng_from_seed(21);
        let data = DMatrix::from_fn(30, 12, |_, _| StandardNormal.sample(&mut rng));
        let raw = RawObjectSet::new(data).unwrap();
        assert_eq!(fit_pca_embedding(&raw, 4).unwrap(), fit_pca_embedding(&raw, 4).unwrap());
    }

    #[test]
    fn pca_with_more_columns_than_rows() {
        let mut rng = rng_from_seed(6);
        let data = DMatrix::from_fn(6, 20, |_, _| StandardNormal.sample(&mut rng));
        let fit = fit_pca_embedding(&RawObjectSet::new(data.clone()).unwrap(), 3).unwrap();
        let p = fit.projection.unwrap();
        assert!((p.tr_mul(&p) - DMatrix::identity(3, 3)).abs().max() < 1e-10);
        let svd = centered(&data).svd(false, true);
        let v0 = svd.v_t.unwrap().row(0).transpose();
        assert!((p.column(0) - &v0).norm().min((p.column(0) + &v0).norm()) < 1e-8);
    }

    #[test]
    fn identity_noise_and_coordinate_projection() {
        let mut rng = rng_from_seed(1);
        let data = DMatrix::from_fn(5, 2, |_, _| StandardNormal.sample(&mut rng));
        let raw = RawObjectSet::new(data.clone()).unwrap();
        assert_eq!(apply_embedding(&FittedEmbedding::identity(2), &raw).unwrap(), data);

        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let fit = FittedEmbedding::linear(e1, Provenance::External).unwrap();
        let out = apply_embedding(&fit, &raw).unwrap();
        let mean = data.column(0).mean();
        for i in 0..5 {
            assert!((out[(i, 0)] - (data[(i, 0)] - mean)).abs() < 1e-15);
        }

        let bad = RawObjectSet::new(DMatrix::zeros(5, 3)).unwrap();
        assert!(matches!(
            apply_embedding(&fit, &bad),
            Err(Error::DimMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn noisy_embedding_adds_the_requested_variance() {
        let raw = RawObjectSet::new(DMatrix::from_element(1000, 100, 2.0)).unwrap();
        let fit = FittedEmbedding::noisy(100, 3.0, 77).unwrap();
        let out = apply_embedding(&fit, &raw).unwrap();
        let diff: Vec<f64> = (out - raw.data()).iter().copied().collect();
        let v = crate::stats::variance(&diff);
        assert!((v - 3.0).abs() < 0.05 * 3.0, "variance {v}");
    }

    #[test]
    fn spec_invariants() {
        assert!(EmbeddingSpec::new(EmbeddingKind::Noisy, 3, 0.0, Provenance::External).is_err());
        assert!(EmbeddingSpec::new(EmbeddingKind::Identity, 3, 1.0, Provenance::External).is_err());
        assert!(EmbeddingSpec::new(EmbeddingKind::Noisy, 3, 3.0, Provenance::External).is_ok());
        let raw = RawObjectSet::new(DMatrix::zeros(3, 2)).unwrap();
        assert!(fit_pca_embedding(&raw, 3).is_err());
    }
}
