//! Exact Kantorovich transport.
//!
//! [`solve_exact_ot`] runs the network simplex on the bipartite
//! transportation graph. The basis is a spanning tree with `n + m - 1`
//! cells; potentials are recomputed from the tree on every pivot, so no
//! rounding drift accumulates across iterations.
//!
//! Pricing uses the most negative reduced cost. After a run of degenerate
//! pivots the solver switches to Bland's rule (smallest eligible cell index
//! for both entering and leaving) until a pivot moves flow again, which
//! rules out cycling while keeping the usual pivot counts low.
//!
//! [`brute_force_ot`] enumerates every spanning tree of the transportation
//! graph and keeps the cheapest feasible basic solution. It shares no code
//! with the simplex and exists as a test oracle.

use itertools::Itertools;
use ndarray::{Array2, ArrayView2};

use crate::error::{OtError, Result};
use crate::measures::{check_shape, Coupling, CostMatrix, SimplexWeights, TransportMapEstimate};

/// Largest `n * m` handled by spanning-tree enumeration.
pub const BRUTE_FORCE_MAX_CELLS: usize = 25;
/// Largest uniform square instance handled by permutation enumeration.
pub const BRUTE_FORCE_MAX_ASSIGNMENT: usize = 6;

#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub coupling: Coupling,
    pub optimal_cost: f64,
    /// Simplex pivots, or enumerated candidates for the brute-force oracle.
    pub iterations: usize,
}

/// Minimizes `<P, C>` over the coupling polytope of `p` and `q`.
pub fn solve_exact_ot(cost: &CostMatrix, p: &SimplexWeights, q: &SimplexWeights) -> Result<ExactSolution> {
    check_shape(cost.shape(), (p.len(), q.len()), "cost vs weights")?;
    let mut simplex = TransportSimplex::new(cost.view(), p.as_slice(), q.as_slice());
    let iterations = simplex.run();
    let plan = simplex.plan();
    finish(plan, cost, p, q, iterations)
}

fn finish(plan: Array2<f64>, cost: &CostMatrix, p: &SimplexWeights, q: &SimplexWeights, iterations: usize) -> Result<ExactSolution> {
    let coupling = Coupling::new(plan, p.clone(), q.clone(), cost)?;
    let optimal_cost = coupling.objective;
    Ok(ExactSolution { coupling, optimal_cost, iterations })
}

#[derive(Debug, Clone, Copy)]
struct BasicCell {
    i: usize,
    j: usize,
    flow: f64,
}

struct TransportSimplex<'a> {
    cost: ArrayView2<'a, f64>,
    n: usize,
    m: usize,
    basis: Vec<BasicCell>,
    is_basic: Vec<bool>,
    u: Vec<f64>,
    v: Vec<f64>,
    // spanning tree bookkeeping over n + m nodes (rows first, then columns)
    adjacency: Vec<Vec<usize>>,
    parent_edge: Vec<usize>,
    parent_node: Vec<usize>,
    depth: Vec<usize>,
    tolerance: f64,
}

const NO_PARENT: usize = usize::MAX;

impl<'a> TransportSimplex<'a> {
    fn new(cost: ArrayView2<'a, f64>, p: &[f64], q: &[f64]) -> Self {
        let (n, m) = cost.dim();
        let scale = cost.iter().fold(1.0f64, |acc, &c| acc.max(c.abs()));
        let mut solver = Self {
            cost,
            n,
            m,
            basis: Vec::with_capacity(n + m - 1),
            is_basic: vec![false; n * m],
            u: vec![0.0; n],
            v: vec![0.0; m],
            adjacency: vec![Vec::new(); n + m],
            parent_edge: vec![NO_PARENT; n + m],
            parent_node: vec![NO_PARENT; n + m],
            depth: vec![0; n + m],
            tolerance: 1e-12 * scale,
        };
        solver.north_west_corner(p, q);
        solver
    }

    /// Initial basis: a staircase of exactly `n + m - 1` cells, zero flows
    /// included, which is always a spanning tree.
    fn north_west_corner(&mut self, p: &[f64], q: &[f64]) {
        let mut supply = p.to_vec();
        let mut demand = q.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let flow = supply[i].min(demand[j]);
            supply[i] -= flow;
            demand[j] -= flow;
            self.push_basic(i, j, flow);
            if i == self.n - 1 && j == self.m - 1 {
                break;
            }
            if j == self.m - 1 || (i < self.n - 1 && supply[i] <= demand[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        debug_assert_eq!(self.basis.len(), self.n + self.m - 1);
    }

    fn push_basic(&mut self, i: usize, j: usize, flow: f64) {
        self.is_basic[i * self.m + j] = true;
        self.basis.push(BasicCell { i, j, flow });
    }

    fn run(&mut self) -> usize {
        let mut pivots = 0;
        let mut degenerate_run = 0;
        let bland_after = self.n + self.m;
        loop {
            self.rebuild_tree();
            let use_bland = degenerate_run >= bland_after;
            let Some((ei, ej)) = self.entering(use_bland) else {
                return pivots;
            };
            let moved = self.pivot(ei, ej);
            pivots += 1;
            if moved > 0.0 {
                degenerate_run = 0;
            } else {
                degenerate_run += 1;
            }
        }
    }

    /// Roots the basis tree at row 0 and solves `u_i + v_j = c_ij` on it.
    fn rebuild_tree(&mut self) {
        let (n, m) = (self.n, self.m);
        for list in &mut self.adjacency {
            list.clear();
        }
        for (e, cell) in self.basis.iter().enumerate() {
            self.adjacency[cell.i].push(e);
            self.adjacency[n + cell.j].push(e);
        }
        self.parent_edge.fill(NO_PARENT);
        self.parent_node.fill(NO_PARENT);
        let mut visited = vec![false; n + m];
        let mut stack = vec![0usize];
        visited[0] = true;
        self.depth[0] = 0;
        self.u[0] = 0.0;
        while let Some(node) = stack.pop() {
            for &e in &self.adjacency[node] {
                let cell = self.basis[e];
                let other = if node < n { n + cell.j } else { cell.i };
                if visited[other] {
                    continue;
                }
                visited[other] = true;
                self.parent_edge[other] = e;
                self.parent_node[other] = node;
                self.depth[other] = self.depth[node] + 1;
                let c = self.cost[[cell.i, cell.j]];
                if other >= n {
                    self.v[cell.j] = c - self.u[cell.i];
                } else {
                    self.u[cell.i] = c - self.v[cell.j];
                }
                stack.push(other);
            }
        }
        debug_assert!(visited.iter().all(|&v| v), "basis is not a spanning tree");
    }

    fn entering(&self, bland: bool) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize)> = None;
        let mut best_rc = -self.tolerance;
        for i in 0..self.n {
            for j in 0..self.m {
                if self.is_basic[i * self.m + j] {
                    continue;
                }
                let rc = self.cost[[i, j]] - self.u[i] - self.v[j];
                if rc < best_rc {
                    if bland {
                        return Some((i, j));
                    }
                    best_rc = rc;
                    best = Some((i, j));
                }
            }
        }
        best
    }

    /// Tree path from row `i` to column `j`, as basis edge indices ordered
    /// from the row end.
    fn tree_path(&self, i: usize, j: usize) -> Vec<usize> {
        let mut a = i;
        let mut b = self.n + j;
        let mut from_a = Vec::new();
        let mut from_b = Vec::new();
        while self.depth[a] > self.depth[b] {
            from_a.push(self.parent_edge[a]);
            a = self.parent_node[a];
        }
        while self.depth[b] > self.depth[a] {
            from_b.push(self.parent_edge[b]);
            b = self.parent_node[b];
        }
        while a != b {
            from_a.push(self.parent_edge[a]);
            a = self.parent_node[a];
            from_b.push(self.parent_edge[b]);
            b = self.parent_node[b];
        }
        from_a.extend(from_b.into_iter().rev());
        from_a
    }

    /// Pushes flow around the cycle closed by `(ei, ej)` and swaps the
    /// leaving cell out. Returns the amount of flow moved.
    fn pivot(&mut self, ei: usize, ej: usize) -> f64 {
        let path = self.tree_path(ei, ej);
        debug_assert!(path.len() % 2 == 1);
        // odd positions along the path (0-based even) lose flow
        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        let mut leaving_key = usize::MAX;
        for &e in path.iter().step_by(2) {
            let cell = self.basis[e];
            let key = cell.i * self.m + cell.j;
            if cell.flow < theta || (cell.flow == theta && key < leaving_key) {
                theta = cell.flow;
                leaving = e;
                leaving_key = key;
            }
        }
        for (k, &e) in path.iter().enumerate() {
            let cell = &mut self.basis[e];
            if k % 2 == 0 {
                cell.flow -= theta;
            } else {
                cell.flow += theta;
            }
        }
        let old = self.basis[leaving];
        self.is_basic[old.i * self.m + old.j] = false;
        self.is_basic[ei * self.m + ej] = true;
        self.basis[leaving] = BasicCell { i: ei, j: ej, flow: theta };
        theta
    }

    fn plan(&self) -> Array2<f64> {
        let mut plan = Array2::zeros((self.n, self.m));
        for cell in &self.basis {
            plan[[cell.i, cell.j]] = cell.flow.max(0.0);
        }
        plan
    }
}

/// Exhaustive oracle for small instances.
///
/// Up to [`BRUTE_FORCE_MAX_CELLS`] cells every spanning tree of the
/// transportation graph is enumerated; each tree fixes one basic solution
/// and the cheapest feasible one wins. Uniform square instances of size up
/// to [`BRUTE_FORCE_MAX_ASSIGNMENT`] are also solved by enumerating
/// permutations, and when both routes apply they must agree.
pub fn brute_force_ot(cost: &CostMatrix, p: &SimplexWeights, q: &SimplexWeights) -> Result<ExactSolution> {
    check_shape(cost.shape(), (p.len(), q.len()), "cost vs weights")?;
    let (n, m) = cost.shape();
    let assignment_ok = n == m && n <= BRUTE_FORCE_MAX_ASSIGNMENT && p.is_uniform() && q.is_uniform();
    let trees_ok = n * m <= BRUTE_FORCE_MAX_CELLS;
    if !assignment_ok && !trees_ok {
        return Err(OtError::TooLarge(format!(
            "brute force handles n*m <= {BRUTE_FORCE_MAX_CELLS} or uniform n <= {BRUTE_FORCE_MAX_ASSIGNMENT}, got {n}x{m}"
        )));
    }

    let by_assignment = assignment_ok.then(|| enumerate_assignments(cost.view()));
    let by_trees = trees_ok.then(|| enumerate_trees(cost.view(), p.as_slice(), q.as_slice()));

    match (by_trees, by_assignment) {
        (Some((plan, count)), Some((perm_plan, _))) => {
            let tree_cost = cost.dot(plan.view())?;
            let perm_cost = cost.dot(perm_plan.view())?;
            if (tree_cost - perm_cost).abs() > 1e-12 * (1.0 + tree_cost.abs()) {
                return Err(OtError::OracleMismatch(format!(
                    "tree enumeration {tree_cost} vs assignment enumeration {perm_cost}"
                )));
            }
            finish(plan, cost, p, q, count)
        }
        (Some((plan, count)), None) | (None, Some((plan, count))) => finish(plan, cost, p, q, count),
        (None, None) => unreachable!(),
    }
}

fn enumerate_assignments(cost: ArrayView2<'_, f64>) -> (Array2<f64>, usize) {
    let n = cost.nrows();
    let mut best = f64::INFINITY;
    let mut best_perm = Vec::new();
    let mut count = 0;
    for perm in (0..n).permutations(n) {
        count += 1;
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
        if total < best {
            best = total;
            best_perm = perm;
        }
    }
    let mut plan = Array2::zeros((n, n));
    for (i, &j) in best_perm.iter().enumerate() {
        plan[[i, j]] = 1.0 / n as f64;
    }
    (plan, count)
}

fn enumerate_trees(cost: ArrayView2<'_, f64>, p: &[f64], q: &[f64]) -> (Array2<f64>, usize) {
    let (n, m) = cost.dim();
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let mut search = TreeSearch {
        cost,
        p,
        q,
        cells: &cells,
        chosen: Vec::with_capacity(n + m - 1),
        best_cost: f64::INFINITY,
        best_plan: None,
        trees: 0,
    };
    let parents: Vec<usize> = (0..n + m).collect();
    search.extend(0, parents);
    let plan = search.best_plan.expect("the polytope always has a vertex");
    (plan, search.trees)
}

struct TreeSearch<'a> {
    cost: ArrayView2<'a, f64>,
    p: &'a [f64],
    q: &'a [f64],
    cells: &'a [(usize, usize)],
    chosen: Vec<usize>,
    best_cost: f64,
    best_plan: Option<Array2<f64>>,
    trees: usize,
}

fn find(parents: &mut [usize], mut x: usize) -> usize {
    while parents[x] != x {
        parents[x] = parents[parents[x]];
        x = parents[x];
    }
    x
}

impl TreeSearch<'_> {
    fn extend(&mut self, start: usize, parents: Vec<usize>) {
        let (n, m) = self.cost.dim();
        let needed = n + m - 1;
        if self.chosen.len() == needed {
            self.evaluate();
            return;
        }
        let remaining = needed - self.chosen.len();
        for k in start..self.cells.len() {
            if self.cells.len() - k < remaining {
                break;
            }
            let (i, j) = self.cells[k];
            let mut next = parents.clone();
            let a = find(&mut next, i);
            let b = find(&mut next, n + j);
            if a == b {
                continue;
            }
            next[a] = b;
            self.chosen.push(k);
            self.extend(k + 1, next);
            self.chosen.pop();
        }
    }

    /// Solves the tree's flows by peeling leaves.
    fn evaluate(&mut self) {
        self.trees += 1;
        let (n, m) = self.cost.dim();
        let mut residual: Vec<f64> = self.p.iter().chain(self.q.iter()).copied().collect();
        let mut degree = vec![0usize; n + m];
        for &k in &self.chosen {
            let (i, j) = self.cells[k];
            degree[i] += 1;
            degree[n + j] += 1;
        }
        let mut alive = vec![true; self.chosen.len()];
        let mut plan = Array2::zeros((n, m));
        for _ in 0..self.chosen.len() {
            let (edge, leaf) = self
                .chosen
                .iter()
                .enumerate()
                .filter(|(e, _)| alive[*e])
                .find_map(|(e, &k)| {
                    let (i, j) = self.cells[k];
                    if degree[i] == 1 {
                        Some((e, i))
                    } else if degree[n + j] == 1 {
                        Some((e, n + j))
                    } else {
                        None
                    }
                })
                .expect("a forest always has a leaf");
            let (i, j) = self.cells[self.chosen[edge]];
            let other = if leaf == i { n + j } else { i };
            let flow = residual[leaf];
            if flow < -1e-12 {
                return;
            }
            plan[[i, j]] = flow.max(0.0);
            residual[leaf] = 0.0;
            residual[other] -= flow;
            degree[i] -= 1;
            degree[n + j] -= 1;
            alive[edge] = false;
        }
        let total: f64 = ndarray::Zip::from(&plan).and(&self.cost).fold(0.0, |acc, &x, &c| acc + x * c);
        if total < self.best_cost {
            self.best_cost = total;
            self.best_plan = Some(plan);
        }
    }
}

/// What a Wasserstein distance is evaluated from.
#[derive(Debug, Clone, Copy)]
pub enum TransportEvidence<'a> {
    /// A coupling and the squared-Euclidean costs it was solved against.
    Coupling { coupling: &'a Coupling, cost: &'a CostMatrix },
    /// A map estimate with the source weights.
    Map { map: &'a TransportMapEstimate, weights: &'a SimplexWeights },
}

/// Order-`k` Wasserstein distance from a coupling or a map estimate.
///
/// Costs are squared Euclidean, so the coupling form raises them to `k/2`;
/// for `k = 2` this is `<P, C>^(1/2)`.
pub fn wasserstein_distance(evidence: TransportEvidence<'_>, k: u32) -> Result<f64> {
    if k < 1 {
        return Err(OtError::InvalidParameter("Wasserstein order must be >= 1".into()));
    }
    let kf = f64::from(k);
    let total = match evidence {
        TransportEvidence::Coupling { coupling, cost } => {
            check_shape(coupling.plan.dim(), cost.shape(), "plan vs cost")?;
            if k == 2 {
                cost.dot(coupling.plan.view())?
            } else {
                ndarray::Zip::from(&coupling.plan)
                    .and(cost.view())
                    .fold(0.0, |acc, &p, &c| acc + p * c.powf(kf / 2.0))
            }
        }
        TransportEvidence::Map { map, weights } => {
            if weights.len() != map.len() {
                return Err(OtError::DimensionMismatch(format!(
                    "{} weights for a map over {} points",
                    weights.len(),
                    map.len()
                )));
            }
            map.source()
                .outer_iter()
                .zip(map.image().outer_iter())
                .zip(weights.as_slice())
                .map(|((x, y), &w)| {
                    let d2: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                    w * d2.powf(kf / 2.0)
                })
                .sum()
        }
    };
    Ok(total.max(0.0).powf(1.0 / kf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::make_cost_matrix;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_by_two() -> (CostMatrix, SimplexWeights, SimplexWeights) {
        let c = CostMatrix::from_array(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        (c, SimplexWeights::new(vec![0.6, 0.4]).unwrap(), SimplexWeights::uniform(2).unwrap())
    }

    fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> SimplexWeights {
        SimplexWeights::from_masses((0..n).map(|_| rng.random_range(0.05..1.0)).collect()).unwrap()
    }

    #[test]
    fn equal_weights_zero_diagonal_stay_in_place() {
        let pts = array![[0.0, 0.0], [1.0, 0.5], [2.0, -1.0]];
        let c = make_cost_matrix(pts.view(), pts.view()).unwrap();
        let p = SimplexWeights::new(vec![0.2, 0.5, 0.3]).unwrap();
        let sol = solve_exact_ot(&c, &p, &p).unwrap();
        assert_eq!(sol.optimal_cost, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { p[i] } else { 0.0 };
                assert_abs_diff_eq!(sol.coupling.plan[[i, j]], want, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn two_by_two_matches_enumerated_vertex() {
        // vertices of M(p,q) lie on P = [[a, 0.6-a], [0.5-a, a-0.1]], a in [0.1, 0.5],
        // with cost 1.1 - 2a, minimized at a = 0.5
        let (c, p, q) = two_by_two();
        let sol = solve_exact_ot(&c, &p, &q).unwrap();
        assert_abs_diff_eq!(sol.optimal_cost, 0.1, epsilon = 1e-15);
        let expected = array![[0.5, 0.1], [0.0, 0.4]];
        for (a, b) in sol.coupling.plan.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        let oracle = brute_force_ot(&c, &p, &q).unwrap();
        assert_abs_diff_eq!(oracle.optimal_cost, sol.optimal_cost, epsilon = 1e-15);
    }

    #[test]
    fn one_by_one() {
        let c = CostMatrix::from_array(array![[3.5]]).unwrap();
        let w = SimplexWeights::uniform(1).unwrap();
        for sol in [brute_force_ot(&c, &w, &w).unwrap(), solve_exact_ot(&c, &w, &w).unwrap()] {
            assert_eq!(sol.coupling.plan, array![[1.0]]);
            assert_eq!(sol.optimal_cost, 3.5);
        }
    }

    #[test]
    fn line_assignment_is_monotone() {
        let x = array![[1.0], [2.0], [3.0]];
        let y = array![[4.0], [5.0], [6.0]];
        let c = make_cost_matrix(x.view(), y.view()).unwrap();
        let w = SimplexWeights::uniform(3).unwrap();
        let oracle = brute_force_ot(&c, &w, &w).unwrap();
        // assignment cost of the monotone permutation is 9 + 9 + 9 = 27
        assert_abs_diff_eq!(oracle.optimal_cost * 3.0, 27.0, epsilon = 1e-12);
        for i in 0..3 {
            assert_abs_diff_eq!(oracle.coupling.plan[[i, i]], 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn random_small_instances_agree_with_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let n = rng.random_range(1..=4);
            let m = rng.random_range(1..=4);
            let c = CostMatrix::from_array(Array2::from_shape_fn((n, m), |_| rng.random_range(0.0..5.0))).unwrap();
            let p = random_weights(&mut rng, n);
            let q = random_weights(&mut rng, m);
            let fast = solve_exact_ot(&c, &p, &q).unwrap();
            let slow = brute_force_ot(&c, &p, &q).unwrap();
            assert!((fast.optimal_cost - slow.optimal_cost).abs() <= 1e-9, "{} vs {}", fast.optimal_cost, slow.optimal_cost);
            assert!(fast.coupling.marginal_violation() <= 1e-12);
            assert!(fast.coupling.nonzeros(0.0) <= n + m - 1);
        }
    }

    #[test]
    fn zero_weight_rows_get_empty_plan_rows() {
        let c = CostMatrix::from_array(array![[1.0, 2.0], [0.5, 0.1], [3.0, 0.0]]).unwrap();
        let p = SimplexWeights::new(vec![0.5, 0.0, 0.5]).unwrap();
        let q = SimplexWeights::new(vec![0.5, 0.5]).unwrap();
        let sol = solve_exact_ot(&c, &p, &q).unwrap();
        assert_eq!(sol.coupling.plan.row(1).sum(), 0.0);
        assert_abs_diff_eq!(sol.optimal_cost, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(brute_force_ot(&c, &p, &q).unwrap().optimal_cost, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_uniform_instances_terminate() {
        // integer costs and uniform weights: heavily degenerate bases
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [8usize, 15, 30] {
            let c = CostMatrix::from_array(Array2::from_shape_fn((n, n), |_| f64::from(rng.random_range(0u8..4)))).unwrap();
            let w = SimplexWeights::uniform(n).unwrap();
            let sol = solve_exact_ot(&c, &w, &w).unwrap();
            assert!(sol.coupling.marginal_violation() <= 1e-12);
        }
    }

    #[test]
    fn brute_force_guards_size() {
        let c = CostMatrix::from_array(Array2::ones((6, 5))).unwrap();
        let p = SimplexWeights::uniform(6).unwrap();
        let q = SimplexWeights::uniform(5).unwrap();
        assert!(matches!(brute_force_ot(&c, &p, &q), Err(OtError::TooLarge(_))));
        // uniform 6x6 goes through assignment enumeration
        let c = CostMatrix::from_array(Array2::from_shape_fn((6, 6), |(i, j)| ((i as f64) - (j as f64)).powi(2))).unwrap();
        let w = SimplexWeights::uniform(6).unwrap();
        assert_eq!(brute_force_ot(&c, &w, &w).unwrap().optimal_cost, 0.0);
    }

    #[test]
    fn wasserstein_examples() {
        let x = array![[0.0, 1.0], [2.0, 3.0]];
        let w = SimplexWeights::uniform(2).unwrap();
        let id = TransportMapEstimate::identity(x);
        assert_eq!(wasserstein_distance(TransportEvidence::Map { map: &id, weights: &w }, 2).unwrap(), 0.0);

        let c = CostMatrix::from_array(array![[9.0]]).unwrap();
        let one = SimplexWeights::uniform(1).unwrap();
        let sol = solve_exact_ot(&c, &one, &one).unwrap();
        let ev = TransportEvidence::Coupling { coupling: &sol.coupling, cost: &c };
        assert_abs_diff_eq!(wasserstein_distance(ev, 2).unwrap(), 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(wasserstein_distance(ev, 1).unwrap(), 3.0, epsilon = 1e-15);
        assert!(wasserstein_distance(ev, 0).is_err());

        let (c, p, q) = two_by_two();
        let sol = solve_exact_ot(&c, &p, &q).unwrap();
        let ev = TransportEvidence::Coupling { coupling: &sol.coupling, cost: &c };
        assert_abs_diff_eq!(wasserstein_distance(ev, 2).unwrap(), 0.1f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn map_form_checks_weight_length() {
        let id = TransportMapEstimate::identity(array![[0.0], [1.0]]);
        let w = SimplexWeights::uniform(3).unwrap();
        assert!(wasserstein_distance(TransportEvidence::Map { map: &id, weights: &w }, 2).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn symmetric_under_transpose(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, m) = (rng.random_range(1..=6), rng.random_range(1..=6));
            let c = CostMatrix::from_array(Array2::from_shape_fn((n, m), |_| rng.random_range(0.0..3.0))).unwrap();
            let p = random_weights(&mut rng, n);
            let q = random_weights(&mut rng, m);
            let a = solve_exact_ot(&c, &p, &q).unwrap().optimal_cost;
            let b = solve_exact_ot(&c.transposed(), &q, &p).unwrap().optimal_cost;
            proptest::prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn zero_iff_equal_weights(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
            let c = make_cost_matrix(pts.view(), pts.view()).unwrap();
            let p = random_weights(&mut rng, 4);
            let q = random_weights(&mut rng, 4);
            proptest::prop_assert_eq!(solve_exact_ot(&c, &p, &p).unwrap().optimal_cost, 0.0);
            let pq = solve_exact_ot(&c, &p, &q).unwrap().optimal_cost;
            proptest::prop_assert!(pq > 0.0);
        }

        #[test]
        fn w2_triangle_inequality(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
            let c = make_cost_matrix(pts.view(), pts.view()).unwrap();
            let ws: Vec<_> = (0..3).map(|_| random_weights(&mut rng, 5)).collect();
            let w2 = |a: &SimplexWeights, b: &SimplexWeights| {
                let sol = solve_exact_ot(&c, a, b).unwrap();
                wasserstein_distance(TransportEvidence::Coupling { coupling: &sol.coupling, cost: &c }, 2).unwrap()
            };
            proptest::prop_assert!(w2(&ws[0], &ws[2]) <= w2(&ws[0], &ws[1]) + w2(&ws[1], &ws[2]) + 1e-9);
        }
    }
}
