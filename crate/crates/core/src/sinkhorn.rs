//! Entropic transport by Sinkhorn-Knopp scaling.
//!
//! The scaling loop is written once, against [`ScalingKernel`], and driven
//! either by the dense log-domain Gibbs kernel here or by the Nystrom
//! factors in [`crate::nystrom`]. All accumulators live in the log domain:
//! the plan at iteration `k` is `exp(x_i + y_j - L) * A_ij`, where `L` is the
//! log of the kernel's total mass.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{OtError, Result};
use crate::measures::{check_shape, entropy, marginal_violation, Coupling, CostMatrix, SimplexWeights};

/// Parameters of one Sinkhorn run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    /// Regularization strength; the kernel is `exp(-eta * C)`.
    pub eta: f64,
    /// Stop once the L1 marginal residual is at most this.
    pub epsilon: f64,
    pub max_iters: usize,
}

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const MAX_ITERS_CAP: usize = 1_000_000;

impl SinkhornConfig {
    pub fn new(eta: f64, epsilon: f64, max_iters: usize) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(OtError::InvalidParameter(format!("eta must be positive, got {eta}")));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(OtError::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
        }
        if max_iters == 0 {
            return Err(OtError::InvalidParameter("max_iters must be positive".into()));
        }
        Ok(Self { eta, epsilon, max_iters })
    }

    /// `epsilon = 1e-6` and `max_iters = 10 * ceil(1/epsilon)`, capped.
    pub fn with_eta(eta: f64) -> Result<Self> {
        Self::new(eta, DEFAULT_EPSILON, default_max_iters(DEFAULT_EPSILON))
    }

    /// Scale-aware defaults: `eta = 10 / median(C)` so `eta * C` is O(10).
    pub fn defaults_for(cost: &CostMatrix) -> Result<Self> {
        Self::with_eta(default_eta(cost))
    }
}

pub fn default_max_iters(epsilon: f64) -> usize {
    let iters = 10.0 * (1.0 / epsilon).ceil();
    if iters >= MAX_ITERS_CAP as f64 {
        MAX_ITERS_CAP
    } else {
        iters as usize
    }
}

/// `10 / median(C)`. Falls back to the mean positive cost when the median
/// is zero, and to 10 for an all-zero cost.
pub fn default_eta(cost: &CostMatrix) -> f64 {
    let median = cost.median();
    if median > 0.0 {
        return 10.0 / median;
    }
    let (sum, count) = cost.view().iter().filter(|&&c| c > 0.0).fold((0.0, 0usize), |(s, k), &c| (s + c, k + 1));
    if count > 0 {
        10.0 * count as f64 / sum
    } else {
        10.0
    }
}

/// Log-domain scaling accumulators, `D1 = diag(exp(x))`, `D2 = diag(exp(y))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub iteration: usize,
}

impl SinkhornState {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self { x: vec![0.0; n], y: vec![0.0; m], iteration: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub coupling: Coupling,
    pub state: SinkhornState,
    /// Plain transport cost `<P, C>` of the returned plan.
    pub distance_value: f64,
    /// `<P, C> - H(P) / eta`.
    pub regularized_objective: f64,
    pub converged: bool,
    /// Marginal residual after every iteration, starting at iteration 0.
    pub violation_history: Vec<f64>,
}

/// The Sinkhorn distance `<P, C> - H(P) / eta` of a finished run.
pub fn sinkhorn_distance(result: &SinkhornResult) -> f64 {
    result.regularized_objective
}

impl SinkhornResult {
    pub fn transport_cost(&self) -> f64 {
        self.distance_value
    }
}

/// Gibbs kernel `exp(-eta * C)`, stored as its logarithm `-eta * C`.
#[derive(Debug, Clone)]
pub struct LogGibbsKernel {
    log_values: Array2<f64>,
    eta: f64,
}

pub fn gibbs_kernel(cost: &CostMatrix, eta: f64) -> Result<LogGibbsKernel> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(OtError::InvalidParameter(format!("eta must be positive, got {eta}")));
    }
    Ok(LogGibbsKernel { log_values: cost.view().mapv(|c| -eta * c), eta })
}

impl LogGibbsKernel {
    pub fn log_values(&self) -> ArrayView2<'_, f64> {
        self.log_values.view()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Exponentiates, clamping underflow to the smallest normal `f64` so
    /// every entry stays strictly positive.
    pub fn materialize(&self) -> Array2<f64> {
        self.log_values.mapv(|v| v.exp().max(f64::MIN_POSITIVE))
    }
}

/// A positive kernel that Sinkhorn scaling can run against.
///
/// Implementations return log-sums; masked-out rows or columns carry zero
/// marginal mass and must be skipped. The return value counts sums that had
/// to be floored to stay positive.
pub trait ScalingKernel {
    fn shape(&self) -> (usize, usize);

    /// `log sum_ij A_ij`.
    fn log_total(&self) -> f64;

    /// `out_i = log sum_{j active} A_ij exp(y_j)`.
    fn log_row_sums(&self, y: &[f64], col_active: &[bool], out: &mut [f64]) -> usize;

    /// `out_j = log sum_{i active} A_ij exp(x_i)`.
    fn log_col_sums(&self, x: &[f64], row_active: &[bool], out: &mut [f64]) -> usize;
}

const COLUMN_CHUNK: usize = 64;

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl ScalingKernel for LogGibbsKernel {
    fn shape(&self) -> (usize, usize) {
        self.log_values.dim()
    }

    fn log_total(&self) -> f64 {
        let row_totals: Vec<f64> = self
            .log_values
            .outer_iter()
            .map(|row| log_sum_exp(row.iter().copied()))
            .collect();
        log_sum_exp(row_totals.into_iter())
    }

    fn log_row_sums(&self, y: &[f64], col_active: &[bool], out: &mut [f64]) -> usize {
        let log_k = self.log_values.view();
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let row = log_k.row(i);
            let terms = row
                .iter()
                .zip(y)
                .zip(col_active)
                .filter(|(_, &a)| a)
                .map(|((&k, &yj), _)| k + yj);
            *o = log_sum_exp(terms);
        });
        0
    }

    fn log_col_sums(&self, x: &[f64], row_active: &[bool], out: &mut [f64]) -> usize {
        let log_k = self.log_values.view();
        out.par_chunks_mut(COLUMN_CHUNK).enumerate().for_each(|(chunk, o)| {
            let start = chunk * COLUMN_CHUNK;
            let width = o.len();
            let mut max = vec![f64::NEG_INFINITY; width];
            for (i, row) in log_k.outer_iter().enumerate() {
                if !row_active[i] {
                    continue;
                }
                for (c, mx) in max.iter_mut().enumerate() {
                    *mx = mx.max(row[start + c] + x[i]);
                }
            }
            let mut acc = vec![0.0; width];
            for (i, row) in log_k.outer_iter().enumerate() {
                if !row_active[i] {
                    continue;
                }
                for c in 0..width {
                    if max[c].is_finite() {
                        acc[c] += (row[start + c] + x[i] - max[c]).exp();
                    }
                }
            }
            for c in 0..width {
                o[c] = if max[c].is_finite() { max[c] + acc[c].ln() } else { max[c] };
            }
        });
        0
    }
}

/// Outcome of the shared scaling loop.
#[derive(Debug, Clone)]
pub(crate) struct Scaling {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub log_total: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub floored: usize,
    pub row_active: Vec<bool>,
    pub col_active: Vec<bool>,
}

impl Scaling {
    /// `<P, C~> - H(P) / eta` where `C~ = -log(A) / eta`, evaluated from the
    /// scalings alone. With plan marginals `r`, `c`:
    /// `(sum r_i x_i + sum c_j y_j - L * sum P) / eta`.
    pub fn dual_objective(&self, eta: f64, r: &[f64], c: &[f64]) -> f64 {
        let mass: f64 = r.iter().sum();
        let rx: f64 = r.iter().zip(&self.x).filter(|(&ri, _)| ri > 0.0).map(|(ri, xi)| ri * xi).sum();
        let cy: f64 = c.iter().zip(&self.y).filter(|(&cj, _)| cj > 0.0).map(|(cj, yj)| cj * yj).sum();
        (rx + cy - self.log_total * mass) / eta
    }
}

fn l1_residual(log_sums: &[f64], target: &[f64]) -> f64 {
    log_sums.iter().zip(target).map(|(&l, &t)| (l.exp() - t).abs()).sum()
}

/// Alternating row/column scaling of a kernel onto the coupling polytope.
///
/// Odd iterations rescale rows, even iterations columns. Convergence is
/// checked after every iteration, including iteration 0. When the loop
/// stops, one extra row rescale makes the row marginals exact.
pub(crate) fn run_scaling<K: ScalingKernel + ?Sized>(
    kernel: &K,
    p: &SimplexWeights,
    q: &SimplexWeights,
    cfg: &SinkhornConfig,
    init: Option<&SinkhornState>,
) -> Result<Scaling> {
    let (n, m) = kernel.shape();
    check_shape((n, m), (p.len(), q.len()), "kernel vs marginals")?;
    let (mut x, mut y) = match init {
        Some(s) => {
            if s.x.len() != n || s.y.len() != m {
                return Err(OtError::DimensionMismatch("initial scaling vectors".into()));
            }
            if s.x.iter().chain(&s.y).any(|v| !v.is_finite()) {
                return Err(OtError::NonFinite("initial scaling vectors"));
            }
            (s.x.clone(), s.y.clone())
        }
        None => (vec![0.0; n], vec![0.0; m]),
    };
    let p = p.as_slice();
    let q = q.as_slice();
    let row_active: Vec<bool> = p.iter().map(|&w| w > 0.0).collect();
    let col_active: Vec<bool> = q.iter().map(|&w| w > 0.0).collect();
    let log_p: Vec<f64> = p.iter().map(|w| w.ln()).collect();
    let log_q: Vec<f64> = q.iter().map(|w| w.ln()).collect();

    let log_total = kernel.log_total();
    if !log_total.is_finite() {
        return Err(OtError::InfeasibleKernel(format!("kernel total mass has log {log_total}")));
    }
    let mut floored = 0;
    let mut row_sums = vec![0.0; n];
    let mut col_sums = vec![0.0; m];

    // log marginals of the current iterate, zero-mass entries at -inf
    let mut lr = vec![f64::NEG_INFINITY; n];
    let mut lc = vec![f64::NEG_INFINITY; m];
    let refresh_rows = |row_sums: &mut [f64], lr: &mut [f64], x: &[f64], y: &[f64], floored: &mut usize| -> Result<()> {
        *floored += kernel.log_row_sums(y, &col_active, row_sums);
        for i in 0..n {
            if row_active[i] {
                if row_sums[i] == f64::NEG_INFINITY {
                    return Err(OtError::InfeasibleKernel(format!("row {i} has positive weight but no kernel mass")));
                }
                lr[i] = x[i] - log_total + row_sums[i];
            }
        }
        Ok(())
    };
    let refresh_cols = |col_sums: &mut [f64], lc: &mut [f64], x: &[f64], y: &[f64], floored: &mut usize| -> Result<()> {
        *floored += kernel.log_col_sums(x, &row_active, col_sums);
        for j in 0..m {
            if col_active[j] {
                if col_sums[j] == f64::NEG_INFINITY {
                    return Err(OtError::InfeasibleKernel(format!("column {j} has positive weight but no kernel mass")));
                }
                lc[j] = y[j] - log_total + col_sums[j];
            }
        }
        Ok(())
    };

    refresh_rows(&mut row_sums, &mut lr, &x, &y, &mut floored)?;
    refresh_cols(&mut col_sums, &mut lc, &x, &y, &mut floored)?;
    let mut violation = l1_residual(&lr, p) + l1_residual(&lc, q);
    let mut history = vec![violation];
    let mut k = 0;
    while violation > cfg.epsilon && k < cfg.max_iters {
        k += 1;
        if k % 2 == 1 {
            for i in (0..n).filter(|&i| row_active[i]) {
                x[i] += log_p[i] - lr[i];
                lr[i] = log_p[i];
            }
            refresh_cols(&mut col_sums, &mut lc, &x, &y, &mut floored)?;
        } else {
            for j in (0..m).filter(|&j| col_active[j]) {
                y[j] += log_q[j] - lc[j];
                lc[j] = log_q[j];
            }
            refresh_rows(&mut row_sums, &mut lr, &x, &y, &mut floored)?;
        }
        violation = l1_residual(&lr, p) + l1_residual(&lc, q);
        history.push(violation);
    }
    if k % 2 == 0 {
        // last update touched columns (or nothing): finish with a row rescale
        for i in (0..n).filter(|&i| row_active[i]) {
            x[i] += log_p[i] - lr[i];
        }
    }
    Ok(Scaling { x, y, log_total, iterations: k, history, floored, row_active, col_active })
}

/// Entropic transport between `p` and `q` under `cost`.
pub fn sinkhorn_knopp(cost: &CostMatrix, p: &SimplexWeights, q: &SimplexWeights, cfg: &SinkhornConfig) -> Result<SinkhornResult> {
    sinkhorn_knopp_from(cost, p, q, cfg, None)
}

/// As [`sinkhorn_knopp`], starting from the given scalings instead of zeros.
pub fn sinkhorn_knopp_from(
    cost: &CostMatrix,
    p: &SimplexWeights,
    q: &SimplexWeights,
    cfg: &SinkhornConfig,
    init: Option<&SinkhornState>,
) -> Result<SinkhornResult> {
    check_shape(cost.shape(), (p.len(), q.len()), "cost vs weights")?;
    let kernel = gibbs_kernel(cost, cfg.eta)?;
    let scaling = run_scaling(&kernel, p, q, cfg, init)?;
    let plan = dense_plan(kernel.log_values(), &scaling);
    let violation = marginal_violation(plan.view(), p, q)?;
    let coupling = Coupling::new(plan, p.clone(), q.clone(), cost)?;
    let distance_value = coupling.objective;
    let regularized_objective = distance_value - entropy(coupling.plan.view())? / cfg.eta;
    Ok(SinkhornResult {
        coupling,
        state: SinkhornState { x: scaling.x, y: scaling.y, iteration: scaling.iterations },
        distance_value,
        regularized_objective,
        converged: violation <= cfg.epsilon,
        violation_history: scaling.history,
    })
}

fn dense_plan(log_k: ArrayView2<'_, f64>, s: &Scaling) -> Array2<f64> {
    let (n, m) = log_k.dim();
    let mut plan = Array2::zeros((n, m));
    plan.axis_iter_mut(ndarray::Axis(0)).into_par_iter().enumerate().for_each(|(i, mut row)| {
        if !s.row_active[i] {
            return;
        }
        for j in 0..m {
            if s.col_active[j] {
                row[j] = (log_k[[i, j]] + s.x[i] + s.y[j] - s.log_total).exp();
            }
        }
    });
    plan
}

/// Largest deviation of `log P + eta C` from the additive form `x_i + y_j`,
/// over entries with positive mass. Zero for an exact `D1 K D2` plan.
pub fn scaling_form_residual(plan: ArrayView2<'_, f64>, cost: &CostMatrix, eta: f64) -> Result<f64> {
    check_shape(plan.dim(), cost.shape(), "plan vs cost")?;
    let (n, m) = plan.dim();
    if plan.iter().any(|&v| v <= 0.0) {
        return Err(OtError::InvalidParameter("residual needs a strictly positive plan".into()));
    }
    let g = Array2::from_shape_fn((n, m), |(i, j)| plan[[i, j]].ln() + eta * cost.view()[[i, j]]);
    let row_mean = g.mean_axis(ndarray::Axis(1)).expect("non-empty");
    let col_mean = g.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let mean = g.mean().expect("non-empty");
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..m {
            worst = worst.max((g[[i, j]] - row_mean[i] - col_mean[j] + mean).abs());
        }
    }
    Ok(worst)
}
