//! Fréchet distance between Gaussian fits of two embedding sets.
//!
//! `FID = ‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2·(Σ_a Σ_b)^{1/2})`.
//!
//! The product `Σ_a Σ_b` is not symmetric, but it is similar to the
//! symmetric positive-semidefinite matrix `S = Σ_a^{1/2} Σ_b Σ_a^{1/2}`, so
//! the trace of its square root equals the sum of the square roots of the
//! eigenvalues of `S`. Both square roots are taken through symmetric
//! eigendecompositions; eigenvalues in `(−1e-8, 0)` are clamped to zero.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

/// Eigenvalues above `-EIGEN_CLAMP` and below zero are treated as zero.
pub const EIGEN_CLAMP: f64 = 1e-8;

/// Mean and unbiased covariance of a set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub name: String,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub n: usize,
}

impl GaussianStats {
    /// Wraps precomputed moments after checking shape and symmetry.
    pub fn new(name: impl Into<String>, mean: DVector<f64>, covariance: DMatrix<f64>, n: usize) -> Result<Self> {
        let k = mean.len();
        if covariance.shape() != (k, k) {
            return Err(Error::usage(format!(
                "covariance shape {:?} does not match mean length {k}",
                covariance.shape()
            )));
        }
        if n < 2 {
            return Err(Error::usage(format!("Gaussian fit needs n >= 2, got {n}")));
        }
        let scale = covariance.amax().max(1.0);
        if (&covariance - covariance.transpose()).amax() > 1e-9 * scale {
            return Err(Error::Numerical("covariance is not symmetric".into()));
        }
        Ok(GaussianStats {
            name: name.into(),
            mean,
            covariance,
            n,
        })
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }
}

/// Column means and the `N − 1` sample covariance, accumulated in `f64`.
pub fn gaussian_stats(set: &EmbeddingSet) -> Result<GaussianStats> {
    let n = set.len();
    if n < 2 {
        return Err(Error::usage(format!(
            "covariance of '{}' needs at least 2 rows, got {n}",
            set.name()
        )));
    }
    let k = set.dims();
    let x = DMatrix::from_row_iterator(n, k, set.as_slice().iter().map(|&v| f64::from(v)));
    let mean = x.row_mean().transpose();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.transpose() * &centered / (n - 1) as f64;
    // the product is symmetric up to rounding; make it exact
    cov = (&cov + cov.transpose()) * 0.5;
    GaussianStats::new(set.name(), mean, cov, n)
}

/// Frechet distance with its two components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidReport {
    pub fid: f64,
    pub mean_term: f64,
    pub trace_term: f64,
    pub set_a: String,
    pub set_b: String,
}

fn psd_eigen(m: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let mut eig = SymmetricEigen::new(m.clone());
    for v in eig.eigenvalues.iter_mut() {
        if *v < -EIGEN_CLAMP {
            return Err(Error::Numerical(format!(
                "{what} has eigenvalue {v:e}; input is not positive semidefinite"
            )));
        }
        *v = v.max(0.0);
    }
    Ok(eig)
}

fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = psd_eigen(m, what)?;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Trace of the principal square root of `Σ_a Σ_b`.
pub fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let root_a = psd_sqrt(a, "first covariance")?;
    psd_eigen(b, "second covariance")?;
    let s = &root_a * b * &root_a;
    let s = (&s + s.transpose()) * 0.5;
    let eig = psd_eigen(&s, "covariance product")?;
    Ok(eig.eigenvalues.iter().map(|v| v.sqrt()).sum())
}

pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<FidReport> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(a.dims(), b.dims()));
    }
    let mean_term = (&a.mean - &b.mean).norm_squared();
    if mean_term == 0.0 && a.covariance == b.covariance {
        // identical Gaussians; skip the eigensolver roundoff
        psd_eigen(&a.covariance, "covariance")?;
        return Ok(FidReport {
            fid: 0.0,
            mean_term,
            trace_term: 0.0,
            set_a: a.name.clone(),
            set_b: b.name.clone(),
        });
    }
    let tr_root = trace_sqrt_product(&a.covariance, &b.covariance)?;
    let trace_term = a.covariance.trace() + b.covariance.trace() - 2.0 * tr_root;
    let mut fid = mean_term + trace_term;
    if fid < 0.0 {
        if fid < -1e-6 {
            return Err(Error::Numerical(format!("negative Frechet distance {fid:e}")));
        }
        fid = 0.0;
    }
    Ok(FidReport {
        fid,
        mean_term,
        trace_term,
        set_a: a.name.clone(),
        set_b: b.name.clone(),
    })
}

/// Gaussian fits of both sets followed by [`frechet_distance`].
pub fn fid(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<FidReport> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(a.dims(), b.dims()));
    }
    frechet_distance(&gaussian_stats(a)?, &gaussian_stats(b)?)
}
