use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2, Axis};

use super::directions::Direction;
use crate::error::{OtError, Result};

/// Pooled-covariance ridge, relative to `trace / p`.
pub const COVARIANCE_RIDGE: f64 = 1e-8;

/// Binary-response SAVE kernel and its leading direction.
#[derive(Debug, Clone)]
pub struct SaveResult {
    /// Symmetric `p x p` kernel in whitened coordinates.
    pub m: Array2<f64>,
    /// Leading direction mapped back to the original coordinates.
    pub top_direction: Direction,
    /// Largest eigenvalue of `m`.
    pub top_eigenvalue: f64,
    /// Unit eigenvector of `m` for `top_eigenvalue`, before unwhitening.
    pub whitened_direction: Vec<f64>,
}

fn to_dmatrix(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn to_array(a: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), a.ncols()), |(i, j)| a[(i, j)])
}

/// Population (1/n) covariance of the rows about their mean.
fn covariance(z: ArrayView2<'_, f64>) -> Array2<f64> {
    let mean = z.mean_axis(Axis(0)).expect("nonempty");
    let centered = &z - &mean;
    centered.t().dot(&centered) / z.nrows() as f64
}

fn symmetrize(a: &mut DMatrix<f64>) {
    let b = a.transpose();
    *a += b;
    *a *= 0.5;
}

/// Eigenpairs sorted by descending eigenvalue.
fn sorted_eigen(a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Most informative direction separating `x` from `y` by variance contrast.
///
/// The pooled sample is whitened by its covariance (with a small ridge), the
/// two labelled slices give covariances `S_x`, `S_y`, and the kernel is
/// `f_x (I - S_x)^2 + f_y (I - S_y)^2` with slice fractions `f`. The top
/// eigenvector is unwhitened, normalized, and signed so its first nonzero
/// coordinate is positive.
pub fn save_direction(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<SaveResult> {
    let p = x.ncols();
    if y.ncols() != p {
        return Err(OtError::DimensionMismatch(format!(
            "source has {p} columns, target has {}",
            y.ncols()
        )));
    }
    if p == 0 {
        return Err(OtError::Empty("coordinates"));
    }
    let (n, m) = (x.nrows(), y.nrows());
    if n < p + 1 || m < p + 1 {
        return Err(OtError::InvalidParameter(format!(
            "SAVE needs at least p+1 = {} points per sample, got {n} and {m}",
            p + 1
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(OtError::NonFinite("SAVE input"));
    }

    let pooled = ndarray::concatenate(Axis(0), &[x, y]).expect("same width");
    let mut sigma = to_dmatrix(covariance(pooled.view()).view());
    let trace = sigma.trace();
    if !(trace > 0.0) {
        return Err(OtError::Singular("pooled covariance has zero trace".into()));
    }
    let ridge = COVARIANCE_RIDGE * trace / p as f64;
    for i in 0..p {
        sigma[(i, i)] += ridge;
    }
    symmetrize(&mut sigma);
    let (values, vectors) = sorted_eigen(sigma);
    // Below the ridge the spectrum carries no information; clamp there.
    let floor = ridge;
    if values.iter().any(|v| !v.is_finite()) || values[p - 1] < -floor {
        return Err(OtError::Singular("pooled covariance is not positive semidefinite".into()));
    }
    let inv_sqrt: Vec<f64> = values.iter().map(|&v| 1.0 / v.max(floor).sqrt()).collect();
    let whitener = &vectors * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(inv_sqrt)) * vectors.transpose();
    let whitener_nd = to_array(&whitener);

    let slice_kernel = |slice: ArrayView2<'_, f64>| -> DMatrix<f64> {
        let z = slice.dot(&whitener_nd);
        let mut d = DMatrix::<f64>::identity(p, p) - to_dmatrix(covariance(z.view()).view());
        symmetrize(&mut d);
        &d * &d
    };
    let total = (n + m) as f64;
    let mut kernel = slice_kernel(x) * (n as f64 / total) + slice_kernel(y) * (m as f64 / total);
    symmetrize(&mut kernel);

    let (kv, kvec) = sorted_eigen(kernel.clone());
    let mut whitened: Vec<f64> = kvec.column(0).iter().copied().collect();
    let mut top: Vec<f64> = (&whitener * kvec.column(0)).iter().copied().collect();
    if let Some(&lead) = top.iter().find(|c| c.abs() > 1e-12 * top.iter().fold(0.0f64, |a, b| a.max(b.abs()))) {
        if lead < 0.0 {
            top.iter_mut().for_each(|c| *c = -*c);
            whitened.iter_mut().for_each(|c| *c = -*c);
        }
    }

    Ok(SaveResult {
        m: to_array(&kernel),
        top_direction: Direction::new(top)?,
        top_eigenvalue: kv[0],
        whitened_direction: whitened,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, p), || StandardNormal.sample(&mut rng))
    }

    fn variance_contrast(seed: u64) -> (Array2<f64>, Array2<f64>) {
        let x = gaussian(2000, 3, seed);
        let mut y = gaussian(2000, 3, seed.wrapping_add(1_000_003));
        y.column_mut(0).mapv_inplace(|v| 3.0 * v);
        (x, y)
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(u, v)| u * v).sum()
    }

    #[test]
    fn same_distribution_has_small_kernel() {
        let x = gaussian(5000, 3, 1);
        let y = gaussian(5000, 3, 2);
        let r = save_direction(x.view(), y.view()).unwrap();
        assert!(r.top_eigenvalue < 0.05, "{}", r.top_eigenvalue);
    }

    #[test]
    fn recovers_variance_contrast_axis() {
        let (x, y) = variance_contrast(7);
        let r = save_direction(x.view(), y.view()).unwrap();
        assert!(r.top_direction.as_slice()[0].abs() >= 0.95);
        assert!(r.top_direction.as_slice()[0] > 0.0);
    }

    #[test]
    fn eigenpair_and_symmetry_hold() {
        let (x, y) = variance_contrast(8);
        let r = save_direction(x.view(), y.view()).unwrap();
        assert!((&r.m - &r.m.t()).iter().all(|v| v.abs() <= 1e-15));
        let w = Array1::from(r.whitened_direction.clone());
        let mw = r.m.dot(&w);
        for (a, b) in mw.iter().zip(w.iter()) {
            assert!((a - r.top_eigenvalue * b).abs() <= 1e-8);
        }
        let eig = SymmetricEigen::new(to_dmatrix(r.m.view()));
        let max = eig.eigenvalues.iter().fold(f64::MIN, |a, &b| a.max(b));
        assert!((max - r.top_eigenvalue).abs() <= 1e-12);
    }

    #[test]
    fn rotation_equivariant() {
        let (x, y) = variance_contrast(9);
        let theta: f64 = 0.7;
        let (c, s) = (theta.cos(), theta.sin());
        let q = ndarray::array![[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
        let base = save_direction(x.view(), y.view()).unwrap();
        let rotated = save_direction(x.dot(&q.t()).view(), y.dot(&q.t()).view()).unwrap();
        let back = q.t().dot(&Array1::from(rotated.top_direction.as_slice().to_vec()));
        assert!(dot(back.as_slice().unwrap(), base.top_direction.as_slice()).abs() >= 0.99);
    }

    #[test]
    fn detects_mean_shift() {
        let x = gaussian(1000, 3, 4);
        let mut y = gaussian(1000, 3, 5);
        y.column_mut(1).mapv_inplace(|v| v + 4.0);
        let r = save_direction(x.view(), y.view()).unwrap();
        assert!(r.top_direction.as_slice()[1].abs() >= 0.95);
    }

    #[test]
    fn rejects_too_few_points_and_constant_data() {
        let x = gaussian(3, 3, 1);
        let y = gaussian(10, 3, 2);
        assert!(matches!(save_direction(x.view(), y.view()), Err(OtError::InvalidParameter(_))));
        let z = Array2::<f64>::zeros((10, 2));
        assert!(matches!(save_direction(z.view(), z.view()), Err(OtError::Singular(_))));
    }

    #[test]
    fn tolerates_degenerate_coordinate() {
        let mut x = gaussian(50, 3, 1);
        let mut y = gaussian(50, 3, 2);
        x.column_mut(2).fill(1.0);
        y.column_mut(2).fill(1.0);
        let r = save_direction(x.view(), y.view()).unwrap();
        assert!(r.top_eigenvalue.is_finite());
    }
}
