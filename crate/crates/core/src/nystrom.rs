//! Nystrom low-rank Gibbs kernels and Sinkhorn scaling through the factors.
//!
//! `K ~ R W+ R^T` where `R` holds `s` sampled kernel columns and `W+` is the
//! pseudo-inverse of the sampled `s x s` block. Kernel entries are produced
//! column by column from the points, so the full kernel is never formed.
//! Scaling runs the same loop as the dense solver, with every row and
//! column sum computed as a product against the factors in `O(ns)`.
//!
//! Source and target measures on one shared support (identical point
//! arrays) use that support directly. Otherwise the kernel is built on the
//! pooled points `[X; Y]` and the transport kernel is its off-diagonal
//! block `R_X W+ R_Y^T`.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{OtError, Result};
use crate::measures::{check_shape, make_cost_matrix, SimplexWeights};
use crate::sinkhorn::{default_eta, run_scaling, ScalingKernel, SinkhornConfig, SinkhornState};

/// Eigenvalues of the sampled block below this fraction of the largest are
/// dropped from the pseudo-inverse.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-10;
/// Approximate row and column sums are floored here to stay positive.
pub const SUM_FLOOR: f64 = 1e-300;
/// Largest side for which a factored plan will be materialized densely.
pub const MATERIALIZE_LIMIT: usize = 2000;

/// Indices of the sampled kernel columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSelection {
    indices: Vec<usize>,
    seed: Option<u64>,
}

impl ColumnSelection {
    /// A caller-chosen selection. This is the seam for sampling strategies
    /// other than the uniform default.
    pub fn from_indices(indices: Vec<usize>, n: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(OtError::InvalidParameter("selection must contain at least one column".into()));
        }
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n {
                return Err(OtError::InvalidParameter(format!("column {i} out of range for n = {n}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(OtError::InvalidParameter(format!("column {i} selected twice")));
            }
        }
        Ok(Self { indices, seed: None })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Uniform sampling of `s` of `n` columns without replacement.
///
/// Drawn as the first `s` steps of a seeded Fisher-Yates shuffle, so for a
/// fixed seed a smaller selection is a prefix of a larger one.
pub fn select_columns(n: usize, s: usize, seed: u64) -> Result<ColumnSelection> {
    if s < 1 || s > n {
        return Err(OtError::InvalidParameter(format!("rank must satisfy 1 <= s <= n, got s = {s}, n = {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for k in 0..s {
        let j = rng.random_range(k..n);
        order.swap(k, j);
    }
    order.truncate(s);
    Ok(ColumnSelection { indices: order, seed: Some(seed) })
}

/// On-demand access to the columns of a symmetric kernel.
pub trait KernelColumns {
    fn size(&self) -> usize;
    fn column_into(&self, j: usize, out: &mut [f64]);
}

/// Columns of `exp(-eta |z_i - z_j|^2)` over a point set.
#[derive(Debug, Clone, Copy)]
pub struct GibbsColumns<'a> {
    points: ArrayView2<'a, f64>,
    eta: f64,
}

impl<'a> GibbsColumns<'a> {
    pub fn new(points: ArrayView2<'a, f64>, eta: f64) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(OtError::InvalidParameter(format!("eta must be positive, got {eta}")));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(OtError::NonFinite("points"));
        }
        Ok(Self { points, eta })
    }
}

impl KernelColumns for GibbsColumns<'_> {
    fn size(&self) -> usize {
        self.points.nrows()
    }

    fn column_into(&self, j: usize, out: &mut [f64]) {
        let zj = self.points.row(j).to_vec();
        for (i, o) in out.iter_mut().enumerate() {
            let zi = self.points.row(i);
            let d2: f64 = zi.iter().zip(&zj).map(|(a, b)| (a - b) * (a - b)).sum();
            *o = (-self.eta * d2).exp();
        }
    }
}

/// A kernel held as a dense matrix; used for small reference cases.
impl KernelColumns for Array2<f64> {
    fn size(&self) -> usize {
        self.nrows()
    }

    fn column_into(&self, j: usize, out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(self.column(j)) {
            *o = *v;
        }
    }
}

#[derive(Debug, Clone)]
pub struct NystromFactors {
    /// Sketch `R = K S`, `n x s`.
    pub r: Array2<f64>,
    /// `(S^T K S)+`, `s x s`, symmetric.
    pub core: Array2<f64>,
    pub rank_tolerance: f64,
    /// Number of eigenvalues kept in the pseudo-inverse.
    pub effective_rank: usize,
    /// `R V diag(lambda^-1/2)` over the kept eigenpairs, so `K~ = F F^T`.
    /// Products go through this factor; it keeps `K~` exactly symmetric.
    half: Array2<f64>,
}

pub fn nystrom_factors<K: KernelColumns + ?Sized>(kernel: &K, sel: &ColumnSelection) -> Result<NystromFactors> {
    nystrom_factors_with_tolerance(kernel, sel, DEFAULT_RANK_TOLERANCE)
}

pub fn nystrom_factors_with_tolerance<K: KernelColumns + ?Sized>(
    kernel: &K,
    sel: &ColumnSelection,
    rank_tolerance: f64,
) -> Result<NystromFactors> {
    let n = kernel.size();
    let s = sel.len();
    if sel.indices.iter().any(|&i| i >= n) {
        return Err(OtError::InvalidParameter(format!("selection out of range for kernel of size {n}")));
    }
    let mut r = Array2::zeros((n, s));
    let mut column = vec![0.0; n];
    for (c, &j) in sel.indices.iter().enumerate() {
        kernel.column_into(j, &mut column);
        r.column_mut(c).assign(&ArrayView1::from(&column[..]));
    }
    let block = DMatrix::from_fn(s, s, |a, b| {
        0.5 * (r[[sel.indices[a], b]] + r[[sel.indices[b], a]])
    });
    if block.iter().all(|&v| v == 0.0) {
        return Err(OtError::Singular("selected kernel block is all zero".into()));
    }
    let eig = SymmetricEigen::new(block);
    let lambda_max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lambda_max > 0.0) {
        return Err(OtError::Singular("selected kernel block has no positive eigenvalue".into()));
    }
    let cutoff = rank_tolerance * lambda_max;
    let kept: Vec<usize> = (0..s).filter(|&k| eig.eigenvalues[k] > cutoff).collect();
    let mut core = Array2::zeros((s, s));
    let mut scaled = Array2::zeros((s, kept.len()));
    for (c, &k) in kept.iter().enumerate() {
        let lambda = eig.eigenvalues[k];
        let v = eig.eigenvectors.column(k);
        for a in 0..s {
            scaled[[a, c]] = v[a] / lambda.sqrt();
            let va = v[a] / lambda;
            for b in 0..s {
                core[[a, b]] += va * v[b];
            }
        }
    }
    let half = r.dot(&scaled);
    let effective_rank = kept.len();
    // exact symmetry
    for a in 0..s {
        for b in a + 1..s {
            let m = 0.5 * (core[[a, b]] + core[[b, a]]);
            core[[a, b]] = m;
            core[[b, a]] = m;
        }
    }
    Ok(NystromFactors { r, core, rank_tolerance, effective_rank, half })
}

impl NystromFactors {
    pub fn size(&self) -> usize {
        self.r.nrows()
    }

    pub fn rank(&self) -> usize {
        self.r.ncols()
    }

    /// `K~ v` restricted to a row block and a column block.
    fn apply_block(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, v: ArrayView1<'_, f64>) -> Array1<f64> {
        let w = self.half.slice(s![cols, ..]).t().dot(&v);
        self.half.slice(s![rows, ..]).dot(&w)
    }

    /// Bilinear form `u^T K~ w` over a row block and a column block.
    fn bilinear(&self, rows: std::ops::Range<usize>, u: ArrayView1<'_, f64>, cols: std::ops::Range<usize>, w: ArrayView1<'_, f64>) -> f64 {
        let left = self.half.slice(s![rows, ..]).t().dot(&u);
        let right = self.half.slice(s![cols, ..]).t().dot(&w);
        left.dot(&right)
    }

    /// Dense `K~`; only for checking small cases.
    pub fn reconstruct(&self) -> Array2<f64> {
        self.half.dot(&self.half.t())
    }
}

/// `R (W+ (R^T v))` without forming the approximation. Evaluated through
/// the symmetric half factor, which is the same product regrouped.
pub fn nystrom_apply(factors: &NystromFactors, v: &[f64]) -> Result<Vec<f64>> {
    let n = factors.size();
    if v.len() != n {
        return Err(OtError::DimensionMismatch(format!("vector of length {} for kernel of size {n}", v.len())));
    }
    Ok(factors.apply_block(0..n, 0..n, ArrayView1::from(v)).to_vec())
}

/// The transport block of a factored Gibbs kernel, as a scaling kernel.
struct FactoredBlock<'a> {
    factors: &'a NystromFactors,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
}

fn shifted_exp(values: &[f64], active: &[bool]) -> (f64, Array1<f64>) {
    let shift = values
        .iter()
        .zip(active)
        .filter(|(_, &a)| a)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let shift = if shift.is_finite() { shift } else { 0.0 };
    let e = values
        .iter()
        .zip(active)
        .map(|(&v, &a)| if a { (v - shift).exp() } else { 0.0 })
        .collect();
    (shift, e)
}

fn floored_logs(sums: &Array1<f64>, out: &mut [f64]) -> usize {
    let mut floored = 0;
    for (o, &v) in out.iter_mut().zip(sums) {
        if v < SUM_FLOOR || v.is_nan() {
            floored += 1;
            *o = SUM_FLOOR.ln();
        } else {
            *o = v.ln();
        }
    }
    floored
}

/// `exp(own_k - log_total) * (K~ exp(other))_k` on one side of the block,
/// computed without flooring; also counts the sums that are not positive.
fn signed_marginals(
    block: &FactoredBlock<'_>,
    own: &[f64],
    other: &[f64],
    own_active: &[bool],
    other_active: &[bool],
    log_total: f64,
    columns: bool,
) -> (Vec<f64>, usize) {
    let (shift, v) = shifted_exp(other, other_active);
    let (out_range, in_range) = if columns {
        (block.cols.clone(), block.rows.clone())
    } else {
        (block.rows.clone(), block.cols.clone())
    };
    let sums = block.factors.apply_block(out_range, in_range, v.view());
    let mut nonpositive = 0;
    let marg = sums
        .iter()
        .zip(own)
        .zip(own_active)
        .map(|((&s, &o), &a)| {
            if !a {
                return 0.0;
            }
            if !(s > 0.0) {
                nonpositive += 1;
            }
            (o - log_total + shift).exp() * s
        })
        .collect();
    (marg, nonpositive)
}

impl ScalingKernel for FactoredBlock<'_> {
    fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    fn log_total(&self) -> f64 {
        let ones_r = Array1::ones(self.rows.len());
        let ones_c = Array1::ones(self.cols.len());
        let total = self.factors.bilinear(self.rows.clone(), ones_r.view(), self.cols.clone(), ones_c.view());
        total.max(SUM_FLOOR).ln()
    }

    fn log_row_sums(&self, y: &[f64], col_active: &[bool], out: &mut [f64]) -> usize {
        let (shift, v) = shifted_exp(y, col_active);
        let sums = self.factors.apply_block(self.rows.clone(), self.cols.clone(), v.view());
        let floored = floored_logs(&sums, out);
        out.iter_mut().for_each(|o| *o += shift);
        floored
    }

    fn log_col_sums(&self, x: &[f64], row_active: &[bool], out: &mut [f64]) -> usize {
        let (shift, u) = shifted_exp(x, row_active);
        let sums = self.factors.apply_block(self.cols.clone(), self.rows.clone(), u.view());
        let floored = floored_logs(&sums, out);
        out.iter_mut().for_each(|o| *o += shift);
        floored
    }
}

/// Result of a factored Sinkhorn run. The plan is kept as
/// `diag(exp(x - L)) K~ diag(exp(y))` and only formed on request.
#[derive(Debug, Clone)]
pub struct NysSinkResult {
    pub factors: NystromFactors,
    pub state: SinkhornState,
    /// `<P~, C>` evaluated through the factors.
    pub distance_value: f64,
    /// Entropic objective of the factored plan against its implied cost
    /// `-log(K~) / eta`.
    pub regularized_objective: f64,
    pub converged: bool,
    /// Final L1 marginal residual of the factored plan.
    pub marginal_violation: f64,
    pub violation_history: Vec<f64>,
    /// Approximate sums floored to [`SUM_FLOOR`] during scaling.
    pub floored_sums: usize,
    log_total: f64,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
    row_active: Vec<bool>,
    col_active: Vec<bool>,
}

/// A dense copy of a factored plan. Negative entries of the approximate
/// kernel are clamped to zero and counted.
#[derive(Debug, Clone)]
pub struct MaterializedPlan {
    pub plan: Array2<f64>,
    pub clamped_entries: usize,
}

impl NysSinkResult {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    pub fn iterations(&self) -> usize {
        self.state.iteration
    }

    pub fn materialize(&self) -> Result<MaterializedPlan> {
        let (n, m) = self.shape();
        if n > MATERIALIZE_LIMIT || m > MATERIALIZE_LIMIT {
            return Err(OtError::TooLarge(format!(
                "refusing to materialize a {n}x{m} plan (limit {MATERIALIZE_LIMIT} per side)"
            )));
        }
        let half = &self.factors.half;
        let left = half.slice(s![self.rows.clone(), ..]);
        let right = half.slice(s![self.cols.clone(), ..]);
        let kernel = left.dot(&right.t());
        let mut clamped = 0;
        let mut plan = Array2::zeros((n, m));
        for i in (0..n).filter(|&i| self.row_active[i]) {
            for j in (0..m).filter(|&j| self.col_active[j]) {
                let k = kernel[[i, j]];
                if k < 0.0 {
                    clamped += 1;
                    continue;
                }
                plan[[i, j]] = (self.state.x[i] + self.state.y[j] - self.log_total).exp() * k;
            }
        }
        Ok(MaterializedPlan { plan, clamped_entries: clamped })
    }
}

/// Number of points the Nystrom kernel is built on for this pair of
/// supports; selection sizes must not exceed it.
pub fn nystrom_support_size(source: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> usize {
    if shared_support(source, target) {
        source.nrows()
    } else {
        source.nrows() + target.nrows()
    }
}

fn shared_support(source: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> bool {
    source.dim() == target.dim() && source == target
}

/// Rows per side used by [`estimate_eta`].
pub const ETA_SUBSAMPLE: usize = 512;
const ETA_SUBSAMPLE_SEED: u64 = 0x5eed_e7a0;

/// `10 / median(C)` over a fixed-seed random subsample of at most
/// [`ETA_SUBSAMPLE`] rows per side, so choosing `eta` never needs the full
/// `n x m` cost. A random rather than strided subsample keeps periodically
/// ordered inputs from aliasing. Equals `default_eta` on the full cost when
/// both sides fit.
pub fn estimate_eta(source: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(ETA_SUBSAMPLE_SEED);
    let mut subsample = |n: usize| -> Vec<usize> {
        if n <= ETA_SUBSAMPLE {
            (0..n).collect()
        } else {
            let mut idx = rand::seq::index::sample(&mut rng, n, ETA_SUBSAMPLE).into_vec();
            idx.sort_unstable();
            idx
        }
    };
    let a = source.select(Axis(0), &subsample(source.nrows()));
    let b = target.select(Axis(0), &subsample(target.nrows()));
    Ok(default_eta(&make_cost_matrix(a.view(), b.view())?))
}

/// Sinkhorn scaling through a Nystrom factorization of the Gibbs kernel.
pub fn nys_sink(
    source: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    p: &SimplexWeights,
    q: &SimplexWeights,
    selection: &ColumnSelection,
    cfg: &SinkhornConfig,
) -> Result<NysSinkResult> {
    let (n, m) = (source.nrows(), target.nrows());
    if source.ncols() != target.ncols() {
        return Err(OtError::DimensionMismatch(format!(
            "source has {} columns, target has {}",
            source.ncols(),
            target.ncols()
        )));
    }
    check_shape((n, m), (p.len(), q.len()), "points vs weights")?;

    let shared = shared_support(source, target);
    let pooled;
    let support = if shared {
        source
    } else {
        pooled = ndarray::concatenate(Axis(0), &[source, target]).map_err(|e| OtError::DimensionMismatch(e.to_string()))?;
        pooled.view()
    };
    let size = support.nrows();
    if selection.len() > size {
        return Err(OtError::InvalidParameter(format!("rank {} exceeds support size {size}", selection.len())));
    }
    let columns = GibbsColumns::new(support, cfg.eta)?;
    let factors = nystrom_factors(&columns, selection)?;
    let (rows, cols) = if shared { (0..n, 0..n) } else { (0..n, n..n + m) };

    let block = FactoredBlock { factors: &factors, rows: rows.clone(), cols: cols.clone() };
    let scaling = run_scaling(&block, p, q, cfg, None)?;
    let mut floored = scaling.floored;

    // Final marginals from the signed factored sums, so a plan whose
    // approximate sums had to be floored cannot look feasible.
    let (row_marg, row_floored) = signed_marginals(&block, &scaling.x, &scaling.y, &scaling.row_active, &scaling.col_active, scaling.log_total, false);
    let (col_marg, col_floored) = signed_marginals(&block, &scaling.y, &scaling.x, &scaling.col_active, &scaling.row_active, scaling.log_total, true);
    floored += row_floored + col_floored;
    let violation: f64 = row_marg.iter().zip(p.as_slice()).map(|(a, b)| (a - b).abs()).sum::<f64>()
        + col_marg.iter().zip(q.as_slice()).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let regularized_objective = scaling.dual_objective(cfg.eta, &row_marg, &col_marg);
    let distance_value = factored_transport_cost(&factors, &rows, &cols, source, target, &scaling.x, &scaling.y, scaling.log_total, &scaling.row_active, &scaling.col_active);

    Ok(NysSinkResult {
        state: SinkhornState { x: scaling.x, y: scaling.y, iteration: scaling.iterations },
        distance_value,
        regularized_objective,
        converged: violation <= cfg.epsilon && row_floored + col_floored == 0,
        marginal_violation: violation,
        violation_history: scaling.history,
        floored_sums: floored,
        log_total: scaling.log_total,
        rows,
        cols,
        row_active: scaling.row_active,
        col_active: scaling.col_active,
        factors,
    })
}

/// Convenience wrapper sampling `s` columns uniformly with `seed`.
#[allow(clippy::too_many_arguments)]
pub fn nys_sink_uniform(
    source: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    p: &SimplexWeights,
    q: &SimplexWeights,
    s: usize,
    seed: u64,
    cfg: &SinkhornConfig,
) -> Result<NysSinkResult> {
    let selection = select_columns(nystrom_support_size(source, target), s, seed)?;
    nys_sink(source, target, p, q, &selection, cfg)
}

/// `<P~, C>` for `P~ = diag(a) K~ diag(b)` and squared-Euclidean `C`,
/// expanded as `|x|^2` and `|y|^2` terms plus one bilinear form per
/// coordinate, so the cost is `O((n + m) s p)`.
#[allow(clippy::too_many_arguments)]
fn factored_transport_cost(
    factors: &NystromFactors,
    rows: &std::ops::Range<usize>,
    cols: &std::ops::Range<usize>,
    source: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    x: &[f64],
    y: &[f64],
    log_total: f64,
    row_active: &[bool],
    col_active: &[bool],
) -> f64 {
    let (shift, b) = shifted_exp(y, col_active);
    let a: Array1<f64> = x
        .iter()
        .zip(row_active)
        .map(|(&xi, &on)| if on { (xi - log_total + shift).exp() } else { 0.0 })
        .collect();
    let kb = factors.apply_block(rows.clone(), cols.clone(), b.view());
    let ka = factors.apply_block(cols.clone(), rows.clone(), a.view());
    let mut total = 0.0;
    for (i, xi) in source.outer_iter().enumerate() {
        total += a[i] * xi.dot(&xi) * kb[i];
    }
    for (j, yj) in target.outer_iter().enumerate() {
        total += b[j] * yj.dot(&yj) * ka[j];
    }
    for d in 0..source.ncols() {
        let u = &a * &source.column(d);
        let w = &b * &target.column(d);
        total -= 2.0 * factors.bilinear(rows.clone(), u.view(), cols.clone(), w.view());
    }
    total
}
