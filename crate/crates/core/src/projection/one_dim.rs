use std::cmp::Ordering;

use ndarray::Array2;

use crate::error::{OtError, Result};
use crate::measures::{SimplexWeights, TransportMapEstimate};

/// One-dimensional optimal transport between two weighted atom sets.
#[derive(Debug, Clone, PartialEq)]
pub struct OneDimTransport {
    /// Image of each source atom, in the original source order.
    pub image: Vec<f64>,
    /// Squared 2-Wasserstein distance.
    pub cost: f64,
    /// Positive plan entries `(i, j, mass)` in original indices.
    pub plan: Vec<(usize, usize, f64)>,
}

impl OneDimTransport {
    /// Packs the atoms and images as an `n x 1` map estimate.
    pub fn to_map(&self, x: &[f64]) -> Result<TransportMapEstimate> {
        let source = Array2::from_shape_vec((x.len(), 1), x.to_vec())
            .map_err(|e| OtError::DimensionMismatch(e.to_string()))?;
        let image = Array2::from_shape_vec((self.image.len(), 1), self.image.clone())
            .map_err(|e| OtError::DimensionMismatch(e.to_string()))?;
        TransportMapEstimate::new(source, image)
    }

    /// Dense `n x m` plan.
    pub fn dense_plan(&self, n: usize, m: usize) -> Array2<f64> {
        let mut plan = Array2::zeros((n, m));
        for &(i, j, mass) in &self.plan {
            plan[[i, j]] += mass;
        }
        plan
    }
}

/// Indices sorting `v` ascending; equal values keep their original order.
pub(crate) fn argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(Ordering::Equal));
    idx
}

/// Solves 1-D transport by sorting.
///
/// Equal-size uniform inputs pair order statistics directly. Anything else
/// runs the quantile coupling (north-west corner over sorted atoms) and maps
/// each source atom to the barycenter of what it sends.
pub fn otm_1d(
    x: &[f64],
    wx: &SimplexWeights,
    y: &[f64],
    wy: &SimplexWeights,
) -> Result<OneDimTransport> {
    if x.is_empty() {
        return Err(OtError::Empty("source atoms"));
    }
    if y.is_empty() {
        return Err(OtError::Empty("target atoms"));
    }
    if wx.len() != x.len() || wy.len() != y.len() {
        return Err(OtError::DimensionMismatch(format!(
            "atoms ({}, {}) vs weights ({}, {})",
            x.len(),
            y.len(),
            wx.len(),
            wy.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(OtError::NonFinite("source atoms"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(OtError::NonFinite("target atoms"));
    }

    let ox = argsort(x);
    let oy = argsort(y);

    if x.len() == y.len() && wx.is_uniform() && wy.is_uniform() {
        let mass = 1.0 / x.len() as f64;
        let mut image = vec![0.0; x.len()];
        let mut plan = Vec::with_capacity(x.len());
        let mut cost = 0.0;
        for (&i, &j) in ox.iter().zip(&oy) {
            image[i] = y[j];
            cost += (x[i] - y[j]).powi(2);
            plan.push((i, j, mass));
        }
        return Ok(OneDimTransport { image, cost: cost * mass, plan });
    }

    let mut plan = Vec::with_capacity(x.len() + y.len());
    let mut sent = vec![0.0; x.len()];
    let mut moment = vec![0.0; x.len()];
    let mut first_target = vec![None; x.len()];
    let mut cost = 0.0;

    let (mut a, mut b) = (0, 0);
    let mut left = wx[ox[0]];
    let mut right = wy[oy[0]];
    while a < ox.len() && b < oy.len() {
        let (i, j) = (ox[a], oy[b]);
        first_target[i].get_or_insert(j);
        let flow = left.min(right);
        if flow > 0.0 {
            plan.push((i, j, flow));
            sent[i] += flow;
            moment[i] += flow * y[j];
            cost += flow * (x[i] - y[j]).powi(2);
        }
        if left <= right {
            right -= left;
            a += 1;
            if a < ox.len() {
                left = wx[ox[a]];
            }
        } else {
            left -= right;
            b += 1;
            if b < oy.len() {
                right = wy[oy[b]];
            }
        }
    }

    // Zero-weight atoms (and any left past the end by rounding) map to the
    // target quantile where the sweep met them.
    let last = *oy.last().expect("nonempty");
    let image = (0..x.len())
        .map(|i| {
            if sent[i] > 0.0 {
                moment[i] / sent[i]
            } else {
                y[first_target[i].unwrap_or(last)]
            }
        })
        .collect();

    Ok(OneDimTransport { image, cost, plan })
}

/// Squared 1-D W2 between equal-size uniform samples given both sorted.
pub(crate) fn sorted_w2_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    xs.iter().zip(ys).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n
}

/// Squared 1-D W2 between uniform samples of any sizes given both sorted.
pub(crate) fn sorted_w2_squared_uniform(xs: &[f64], ys: &[f64]) -> f64 {
    if xs.len() == ys.len() {
        return sorted_w2_squared(xs, ys);
    }
    // Integer masses m per source atom and n per target atom avoid drift.
    let (n, m) = (xs.len() as u64, ys.len() as u64);
    let (mut a, mut b) = (0, 0);
    let (mut left, mut right) = (m, n);
    let mut acc = 0.0;
    while a < xs.len() && b < ys.len() {
        let flow = left.min(right);
        acc += flow as f64 * (xs[a] - ys[b]).powi(2);
        left -= flow;
        right -= flow;
        if left == 0 {
            a += 1;
            left = m;
        }
        if right == 0 {
            b += 1;
            right = n;
        }
    }
    acc / (n * m) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{brute_force_ot, solve_exact_ot};
    use crate::measures::CostMatrix;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn uniform(n: usize) -> SimplexWeights {
        SimplexWeights::uniform(n).unwrap()
    }

    fn line_cost(x: &[f64], y: &[f64]) -> CostMatrix {
        let c = Array2::from_shape_fn((x.len(), y.len()), |(i, j)| (x[i] - y[j]).powi(2));
        CostMatrix::from_array(c).unwrap()
    }

    #[test]
    fn sorts_uniform_atoms() {
        let x = [3.0, 1.0, 2.0];
        let y = [10.0, 20.0, 30.0];
        let t = otm_1d(&x, &uniform(3), &y, &uniform(3)).unwrap();
        assert_eq!(t.image, vec![30.0, 10.0, 20.0]);
    }

    #[test]
    fn identical_atoms_give_identity() {
        let x = [0.3, -1.0, 2.5, 0.3];
        let t = otm_1d(&x, &uniform(4), &x, &uniform(4)).unwrap();
        assert_eq!(t.image, x.to_vec());
        assert_eq!(t.cost, 0.0);
    }

    #[test]
    fn ties_break_by_index() {
        let x = [1.0, 1.0, 1.0];
        let y = [5.0, 4.0, 6.0];
        let t = otm_1d(&x, &uniform(3), &y, &uniform(3)).unwrap();
        assert_eq!(t.image, vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn weighted_quantile_coupling() {
        let wx = SimplexWeights::new(vec![0.5, 0.5]).unwrap();
        let wy = SimplexWeights::new(vec![0.25, 0.75]).unwrap();
        let x = [0.0, 1.0];
        let t = otm_1d(&x, &wx, &x, &wy).unwrap();
        let plan = t.dense_plan(2, 2);
        assert_abs_diff_eq!(plan[[0, 0]], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(plan[[0, 1]], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(plan[[1, 0]], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(plan[[1, 1]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(t.cost, 0.25, epsilon = 1e-15);

        let oracle = brute_force_ot(&line_cost(&x, &x), &wx, &wy).unwrap();
        assert_abs_diff_eq!(t.cost, oracle.optimal_cost, epsilon = 1e-12);
        assert_abs_diff_eq!(t.image[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(t.image[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_weight_atom_gets_quantile_image() {
        let wx = SimplexWeights::new(vec![0.5, 0.0, 0.5]).unwrap();
        let x = [0.0, 0.5, 1.0];
        let y = [10.0, 20.0];
        let t = otm_1d(&x, &wx, &y, &uniform(2)).unwrap();
        assert_eq!(t.image, vec![10.0, 10.0, 20.0]);
        assert!(t.plan.iter().all(|&(i, _, _)| i != 1));
    }

    #[test]
    fn rejects_empty() {
        assert!(matches!(
            otm_1d(&[], &uniform(1), &[1.0], &uniform(1)),
            Err(OtError::Empty(_))
        ));
    }

    #[test]
    fn map_has_one_column() {
        let x = [2.0, 1.0];
        let t = otm_1d(&x, &uniform(2), &[5.0, 7.0], &uniform(2)).unwrap();
        let map = t.to_map(&x).unwrap();
        assert_eq!(map.image().dim(), (2, 1));
        assert_eq!(map.image()[[0, 0]], 7.0);
    }

    #[test]
    fn unequal_uniform_helper_matches_general_path() {
        let mut xs = vec![0.1, -2.0, 3.5];
        let mut ys = vec![1.0, 0.0, -1.0, 2.0, 4.0];
        let t = otm_1d(&xs, &uniform(3), &ys, &uniform(5)).unwrap();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(sorted_w2_squared_uniform(&xs, &ys), t.cost, epsilon = 1e-12);
    }

    fn atoms(max: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0f64..5.0, 1..=max)
    }

    proptest! {
        #[test]
        fn uniform_cost_matches_exact(x in atoms(8), seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-5.0..5.0)).collect();
            let w = uniform(x.len());
            let t = otm_1d(&x, &w, &y, &w).unwrap();
            let lp = solve_exact_ot(&line_cost(&x, &y), &w, &w).unwrap();
            prop_assert!((t.cost - lp.optimal_cost).abs() <= 1e-9);
        }

        #[test]
        fn weighted_cost_matches_exact(
            x in atoms(6),
            y in atoms(6),
            mx in prop::collection::vec(0.0f64..1.0, 6),
            my in prop::collection::vec(0.0f64..1.0, 6),
        ) {
            let wx = SimplexWeights::from_masses(mx[..x.len()].iter().map(|v| v + 0.01).collect()).unwrap();
            let wy = SimplexWeights::from_masses(my[..y.len()].iter().map(|v| v + 0.01).collect()).unwrap();
            let t = otm_1d(&x, &wx, &y, &wy).unwrap();
            let lp = solve_exact_ot(&line_cost(&x, &y), &wx, &wy).unwrap();
            prop_assert!((t.cost - lp.optimal_cost).abs() <= 1e-9);

            let plan = t.dense_plan(x.len(), y.len());
            for i in 0..x.len() {
                prop_assert!((plan.row(i).sum() - wx[i]).abs() <= 1e-12);
            }
            for j in 0..y.len() {
                prop_assert!((plan.column(j).sum() - wy[j]).abs() <= 1e-12);
            }
        }
    }
}
