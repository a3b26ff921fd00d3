//! Closed-form W2 between Gaussians and seeded Gaussian test pairs.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{OtError, Result};

/// Mean and covariance of a Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
}

impl GaussianMoments {
    pub fn new(mean: Array1<f64>, covariance: Array2<f64>) -> Result<Self> {
        let p = mean.len();
        if p == 0 {
            return Err(OtError::Empty("mean"));
        }
        if covariance.dim() != (p, p) {
            return Err(OtError::DimensionMismatch(format!(
                "mean has length {p}, covariance is {:?}",
                covariance.dim()
            )));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(OtError::NonFinite("gaussian moments"));
        }
        let scale = covariance.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(f64::MIN_POSITIVE);
        if (&covariance - &covariance.t()).iter().any(|v| v.abs() > 1e-12 * scale) {
            return Err(OtError::InvalidParameter("covariance is not symmetric".into()));
        }
        Ok(Self { mean, covariance })
    }

    /// Sample mean and biased (1/n) sample covariance of the rows.
    pub fn from_sample(z: ArrayView2<'_, f64>) -> Result<Self> {
        if z.nrows() == 0 || z.ncols() == 0 {
            return Err(OtError::Empty("sample"));
        }
        let mean = z.mean_axis(Axis(0)).expect("nonempty");
        let centered = &z - &mean;
        let mut covariance = centered.t().dot(&centered) / z.nrows() as f64;
        let sym = (&covariance + &covariance.t()) * 0.5;
        covariance.assign(&sym);
        Self::new(mean, covariance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Principal square root of a symmetric PSD matrix; negative eigenvalues
/// from rounding are clamped to zero.
pub fn psd_sqrt(a: ArrayView2<'_, f64>) -> Array2<f64> {
    let p = a.nrows();
    let m = DMatrix::from_fn(p, p, |i, j| 0.5 * (a[[i, j]] + a[[j, i]]));
    let eig = SymmetricEigen::new(m);
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let s = &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose();
    Array2::from_shape_fn((p, p), |(i, j)| 0.5 * (s[(i, j)] + s[(j, i)]))
}

/// Bures-Wasserstein distance
/// `W2^2 = |m1 - m2|^2 + tr(S1 + S2 - 2 (S2^1/2 S1 S2^1/2)^1/2)`.
pub fn bures_wasserstein(a: &GaussianMoments, b: &GaussianMoments) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(OtError::DimensionMismatch(format!("dimensions {} and {}", a.dim(), b.dim())));
    }
    let shift = (&a.mean - &b.mean).mapv(|v| v * v).sum();
    let root_b = psd_sqrt(b.covariance.view());
    let inner = root_b.dot(&a.covariance).dot(&root_b);
    let cross = psd_sqrt(inner.view()).diag().sum();
    let bures = a.covariance.diag().sum() + b.covariance.diag().sum() - 2.0 * cross;
    Ok((shift + bures.max(0.0)).sqrt())
}

/// `n x p` standard Gaussian sample.
pub fn standard_gaussian_sample(n: usize, p: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, p), || StandardNormal.sample(&mut rng))
}

/// `n` points split round-robin over `clusters` isotropic Gaussian blobs
/// of standard deviation `spread`, with centres drawn from
/// `N(0, separation^2 I)`.
pub fn clustered_gaussian_sample(
    n: usize,
    p: usize,
    clusters: usize,
    separation: f64,
    spread: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    if n == 0 || p == 0 || clusters == 0 {
        return Err(OtError::Empty("clustered sample"));
    }
    if !(separation >= 0.0 && spread >= 0.0 && separation.is_finite() && spread.is_finite()) {
        return Err(OtError::InvalidParameter("separation and spread must be finite and >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres = Array2::from_shape_simple_fn((clusters, p), || {
        separation * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    });
    Ok(Array2::from_shape_fn((n, p), |(i, j)| {
        centres[[i % clusters, j]] + spread * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    }))
}

/// Seeded source sample `X ~ N(0, I)` and its image `Y = X diag(scales) + shift`.
///
/// Because `Y` is a monotone affine image of `X`, the empirical W2 between
/// the two samples equals [`bures_wasserstein`] of their sample moments.
pub fn gaussian_pair(n: usize, shift: &[f64], scales: &[f64], seed: u64) -> Result<(Array2<f64>, Array2<f64>)> {
    let p = shift.len();
    if p == 0 || n == 0 {
        return Err(OtError::Empty("gaussian pair"));
    }
    if scales.len() != p {
        return Err(OtError::DimensionMismatch(format!("{p} shifts but {} scales", scales.len())));
    }
    if scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) || shift.iter().any(|s| !s.is_finite()) {
        return Err(OtError::InvalidParameter("scales must be positive and shifts finite".into()));
    }
    let x = standard_gaussian_sample(n, p, seed);
    let mut y = x.clone();
    for (mut col, (&s, &b)) in y.axis_iter_mut(Axis(1)).zip(scales.iter().zip(shift)) {
        col.mapv_inplace(|v| s * v + b);
    }
    Ok((x, y))
}
