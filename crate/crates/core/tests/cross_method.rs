//! Properties that tie the solvers to one another.

use ndarray::{Array2, Axis};
use otkit_core::exact::solve_exact_ot;
use otkit_core::gaussian::{bures_wasserstein, gaussian_pair, GaussianMoments};
use otkit_core::measures::{make_cost_matrix, DiscreteMeasure, SimplexWeights};
use otkit_core::nystrom::{nys_sink, ColumnSelection};
use otkit_core::projection::{
    estimate_map_observed, otm_1d, sliced_wasserstein, ProjectionConfig, PursuitMethod,
};
use otkit_core::sinkhorn::{sinkhorn_knopp, SinkhornConfig};
use proptest::prelude::*;

fn points(n: usize, p: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-3.0f64..3.0, n * p).prop_map(move |v| Array2::from_shape_vec((n, p), v).unwrap())
}

fn weights(n: usize) -> impl Strategy<Value = SimplexWeights> {
    prop::collection::vec(0.05f64..1.0, n).prop_map(|m| SimplexWeights::from_masses(m).unwrap())
}

fn instance() -> impl Strategy<Value = (Array2<f64>, Array2<f64>, SimplexWeights, SimplexWeights)> {
    (1usize..7, 1usize..7, 1usize..4).prop_flat_map(|(n, m, p)| (points(n, p), points(m, p), weights(n), weights(m)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn entropic_cost_brackets_the_exact_cost((x, y, p, q) in instance()) {
        let cost = make_cost_matrix(x.view(), y.view()).unwrap();
        let opt = solve_exact_ot(&cost, &p, &q).unwrap().optimal_cost;
        let eta = 50.0;
        let res = sinkhorn_knopp(&cost, &p, &q, &SinkhornConfig::new(eta, 1e-9, 1_000_000).unwrap()).unwrap();
        prop_assume!(res.converged);
        let (n, m) = cost.shape();
        let slack = 1e-6 * cost.view().iter().fold(1.0f64, |a, &b| a.max(b));
        prop_assert!(res.distance_value >= opt - slack);
        prop_assert!(res.distance_value - opt <= ((n * m) as f64).ln() / eta + slack);
    }

    #[test]
    fn full_rank_nystrom_is_dense_sinkhorn((x, y, p, q) in instance()) {
        // the factored kernel is accurate in absolute terms, so keep
        // exp(-eta C) well above rounding level
        let cost = make_cost_matrix(x.view(), y.view()).unwrap();
        let pooled = ndarray::concatenate(Axis(0), &[x.view(), y.view()]).unwrap();
        let spread = make_cost_matrix(pooled.view(), pooled.view()).unwrap().view().fold(1e-3f64, |a, &b| a.max(b));
        let cfg = SinkhornConfig::new(5.0 / spread, 1e-10, 100_000).unwrap();
        let dense = sinkhorn_knopp(&cost, &p, &q, &cfg).unwrap();
        let size = x.nrows() + y.nrows();
        let all = ColumnSelection::from_indices((0..size).collect(), size).unwrap();
        let fact = nys_sink(x.view(), y.view(), &p, &q, &all, &cfg).unwrap();
        prop_assert!(dense.converged && fact.converged);
        let plan = fact.materialize().unwrap().plan;
        for (a, b) in plan.iter().zip(dense.coupling.plan.iter()) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn scalar_map_estimators_reduce_to_sorting(
        x in prop::collection::vec(-10.0f64..10.0, 2..9),
        seed in 0u64..1000,
    ) {
        let n = x.len();
        let y: Vec<f64> = x.iter().rev().map(|v| 2.0 * v + 1.0).collect();
        let w = SimplexWeights::uniform(n).unwrap();
        let sorted = otm_1d(&x, &w, &y, &w).unwrap();
        let xs = Array2::from_shape_vec((n, 1), x).unwrap();
        let ys = Array2::from_shape_vec((n, 1), y).unwrap();
        for method in [PursuitMethod::RandomProjection, PursuitMethod::Sliced { slices: 3 }, PursuitMethod::Ppmm] {
            let out = estimate_map_observed(xs.view(), ys.view(), method, &ProjectionConfig::with_seed(seed), None).unwrap();
            for (a, b) in out.map.image().iter().zip(&sorted.image) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn sliced_distance_vanishes_on_permutations(x in points(12, 3), seed in 0u64..100, shift in 0usize..12) {
        let order: Vec<usize> = (0..12).map(|i| (i + shift) % 12).collect();
        let y = x.select(Axis(0), &order);
        prop_assert_eq!(sliced_wasserstein(x.view(), y.view(), 20, seed).unwrap(), 0.0);
    }

    #[test]
    fn measure_csv_round_trips((x, _, p, _) in instance()) {
        let m = DiscreteMeasure::new(x, p).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = DiscreteMeasure::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.points(), m.points());
        for (a, b) in back.weights().as_slice().iter().zip(m.weights().as_slice()) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
    }
}

#[test]
fn gaussian_closed_form_agrees_with_exact_and_ppmm() {
    let (x, y) = gaussian_pair(80, &[2.0, 0.0, -1.0], &[1.5, 1.0, 0.5], 11).unwrap();
    let closed = bures_wasserstein(
        &GaussianMoments::from_sample(x.view()).unwrap(),
        &GaussianMoments::from_sample(y.view()).unwrap(),
    )
    .unwrap();
    let w = SimplexWeights::uniform(80).unwrap();
    let lp = solve_exact_ot(&make_cost_matrix(x.view(), y.view()).unwrap(), &w, &w).unwrap();
    assert!((lp.optimal_cost.sqrt() - closed).abs() <= 1e-9);
    let out = estimate_map_observed(x.view(), y.view(), PursuitMethod::Ppmm, &ProjectionConfig::with_seed(1), None).unwrap();
    assert!(out.trace.converged);
    assert!((out.wasserstein_estimate() - closed).abs() / closed < 0.05);
}
