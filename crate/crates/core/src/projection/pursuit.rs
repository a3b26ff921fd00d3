use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::directions::{random_direction, sobol_direction, Direction, SobolSequence};
use super::one_dim::{argsort, sorted_w2_squared_uniform};
use super::save::save_direction;
use crate::error::{OtError, Result};
use crate::measures::TransportMapEstimate;

pub const DEFAULT_TOL_ABS: f64 = 1e-6;
pub const DEFAULT_TOL_REL: f64 = 1e-4;
pub const DEFAULT_STALL_WINDOW: usize = 10;
pub const DEFAULT_DIAGNOSTIC_SLICES: usize = 50;
pub const MAX_ITERS_PER_DIMENSION: usize = 500;

// Keeps the diagnostic directions independent of the update stream.
const DIAGNOSTIC_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Where update directions come from for random projection and sliced runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DirectionSource {
    #[default]
    Random,
    LowDiscrepancy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PursuitMethod {
    RandomProjection,
    Sliced { slices: usize },
    Ppmm,
}

impl PursuitMethod {
    pub fn name(&self) -> &'static str {
        match self {
            PursuitMethod::RandomProjection => "random-projection",
            PursuitMethod::Sliced { .. } => "sliced",
            PursuitMethod::Ppmm => "ppmm",
        }
    }
}

/// Stopping and direction settings shared by the projection estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionConfig {
    pub seed: u64,
    /// `None` means `500 * p`.
    pub max_iters: Option<usize>,
    /// Stop once the sliced residual is at most `tol_abs * scale`.
    pub tol_abs: f64,
    /// Stop once the mean residual over the last `stall_window` iterations
    /// is less than this fraction below the mean over the window before.
    pub tol_rel: f64,
    pub stall_window: usize,
    pub diagnostic_slices: usize,
    pub directions: DirectionSource,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_iters: None,
            tol_abs: DEFAULT_TOL_ABS,
            tol_rel: DEFAULT_TOL_REL,
            stall_window: DEFAULT_STALL_WINDOW,
            diagnostic_slices: DEFAULT_DIAGNOSTIC_SLICES,
            directions: DirectionSource::Random,
        }
    }
}

impl ProjectionConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol_abs >= 0.0 && self.tol_abs.is_finite()) {
            return Err(OtError::InvalidParameter(format!("tol_abs must be finite and >= 0, got {}", self.tol_abs)));
        }
        if !(self.tol_rel >= 0.0 && self.tol_rel.is_finite()) {
            return Err(OtError::InvalidParameter(format!("tol_rel must be finite and >= 0, got {}", self.tol_rel)));
        }
        if self.stall_window == 0 {
            return Err(OtError::InvalidParameter("stall_window must be positive".into()));
        }
        if self.diagnostic_slices == 0 {
            return Err(OtError::InvalidParameter("diagnostic_slices must be positive".into()));
        }
        Ok(())
    }
}

/// One update of the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub directions: Vec<Direction>,
    /// Mean over this iteration's directions of the 1-D squared W2.
    pub transport_cost: f64,
    /// Root-mean-square row norm of the applied displacement.
    pub update_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Tolerance,
    Stalled,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    /// Sliced residual before the first update and after each one.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub stop: StopReason,
    /// Spread of the inputs; `tol_abs` is relative to it.
    pub scale: f64,
}

impl IterationTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionOutcome {
    pub map: TransportMapEstimate,
    pub trace: IterationTrace,
}

impl ProjectionOutcome {
    /// `sqrt(mean |x_i - T(x_i)|^2)`, the W2 estimate of the fitted map.
    pub fn wasserstein_estimate(&self) -> f64 {
        let d = &self.map.image() - &self.map.source();
        (d.mapv(|v| v * v).sum() / d.nrows() as f64).sqrt()
    }
}

/// What an observer sees after each update.
#[derive(Debug)]
pub struct StepView<'a> {
    pub iteration: usize,
    pub directions: &'a [Direction],
    pub updated: ArrayView2<'a, f64>,
    pub target: ArrayView2<'a, f64>,
}

/// Seeded directions used by [`sliced_wasserstein`] and the stopping rule.
pub fn diagnostic_directions(p: usize, slices: usize, seed: u64) -> Result<Vec<Direction>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DIAGNOSTIC_STREAM);
    (0..slices).map(|_| random_direction(p, &mut rng)).collect()
}

struct Diagnostic {
    directions: Vec<Direction>,
    sorted_target: Vec<Vec<f64>>,
}

impl Diagnostic {
    fn new(target: ArrayView2<'_, f64>, directions: Vec<Direction>) -> Self {
        let sorted_target = directions
            .par_iter()
            .map(|d| {
                let mut v = d.project(target);
                v.sort_by(f64::total_cmp);
                v
            })
            .collect();
        Self { directions, sorted_target }
    }

    fn residual(&self, source: ArrayView2<'_, f64>) -> f64 {
        let parts: Vec<f64> = self
            .directions
            .par_iter()
            .zip(&self.sorted_target)
            .map(|(d, ys)| {
                let mut xs = d.project(source);
                xs.sort_by(f64::total_cmp);
                sorted_w2_squared_uniform(&xs, ys)
            })
            .collect();
        (parts.iter().sum::<f64>() / parts.len() as f64).sqrt()
    }
}

fn check_cloud(z: ArrayView2<'_, f64>, what: &'static str) -> Result<()> {
    if z.nrows() == 0 || z.ncols() == 0 {
        return Err(OtError::Empty(what));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(OtError::NonFinite(what));
    }
    Ok(())
}

/// Square root of the mean over `slices` seeded directions of the 1-D
/// squared W2 between the projected uniform samples.
pub fn sliced_wasserstein(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    slices: usize,
    seed: u64,
) -> Result<f64> {
    check_cloud(x, "source points")?;
    check_cloud(y, "target points")?;
    if x.ncols() != y.ncols() {
        return Err(OtError::DimensionMismatch(format!(
            "source has {} columns, target has {}",
            x.ncols(),
            y.ncols()
        )));
    }
    if slices == 0 {
        return Err(OtError::InvalidParameter("need at least one slice".into()));
    }
    let dirs = diagnostic_directions(x.ncols(), slices, seed)?;
    Ok(Diagnostic::new(y, dirs).residual(x))
}

fn spread(z: ArrayView2<'_, f64>) -> f64 {
    let mean = z.mean_axis(Axis(0)).expect("nonempty");
    ((&z - &mean).mapv(|v| v * v).sum() / z.nrows() as f64).sqrt()
}

/// Displacement of each projected source point to its sorted partner.
fn displacement(current: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>, d: &Direction) -> (Vec<f64>, f64) {
    let xs = d.project(current);
    let mut ys = d.project(target);
    ys.sort_by(f64::total_cmp);
    let mut delta = vec![0.0; xs.len()];
    for (&i, &y) in argsort(&xs).iter().zip(&ys) {
        delta[i] = y - xs[i];
    }
    let cost = delta.iter().map(|v| v * v).sum::<f64>() / xs.len() as f64;
    (delta, cost)
}

/// Block-mean comparison of the last two windows; single residuals are too
/// noisy under random directions to compare directly.
fn stalled(residuals: &[f64], window: usize, tol_rel: f64) -> bool {
    let k = residuals.len();
    if window > k / 2 {
        return false;
    }
    let recent = residuals[k - window..].iter().sum::<f64>();
    let before = residuals[k - 2 * window..k - window].iter().sum::<f64>();
    before - recent < tol_rel * before
}

enum Directions {
    Random(ChaCha8Rng),
    Sobol(SobolSequence, u32),
    Save,
}

impl Directions {
    fn next(&mut self, p: usize, current: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<Direction> {
        match self {
            Directions::Random(rng) => random_direction(p, rng),
            Directions::Sobol(seq, next) => {
                let d = sobol_direction(seq, *next)?;
                *next = next
                    .checked_add(1)
                    .ok_or_else(|| OtError::TooLarge("low-discrepancy stream exhausted".into()))?;
                Ok(d)
            }
            Directions::Save => Ok(save_direction(current, target)?.top_direction),
        }
    }
}

/// Runs one of the projection estimators, calling `observer` after every
/// update with the new source positions.
pub fn estimate_map_observed(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    method: PursuitMethod,
    cfg: &ProjectionConfig,
    mut observer: Option<&mut dyn FnMut(&StepView<'_>)>,
) -> Result<ProjectionOutcome> {
    cfg.validate()?;
    check_cloud(x, "source points")?;
    check_cloud(y, "target points")?;
    if x.nrows() != y.nrows() {
        return Err(OtError::UnequalSizes { source_rows: x.nrows(), target_rows: y.nrows() });
    }
    let (n, p) = x.dim();
    if y.ncols() != p {
        return Err(OtError::DimensionMismatch(format!("source has {p} columns, target has {}", y.ncols())));
    }
    let per_iter = match method {
        PursuitMethod::Sliced { slices: 0 } => {
            return Err(OtError::InvalidParameter("sliced method needs at least one direction per iteration".into()))
        }
        PursuitMethod::Sliced { slices } => slices,
        PursuitMethod::RandomProjection => 1,
        PursuitMethod::Ppmm => {
            if n < p + 1 {
                return Err(OtError::InvalidParameter(format!("PPMM needs at least p+1 = {} points, got {n}", p + 1)));
            }
            1
        }
    };
    let mut source = match (method, cfg.directions) {
        (PursuitMethod::Ppmm, _) => Directions::Save,
        (_, DirectionSource::Random) => Directions::Random(ChaCha8Rng::seed_from_u64(cfg.seed)),
        (_, DirectionSource::LowDiscrepancy) => Directions::Sobol(SobolSequence::new(p)?, 0),
    };
    let max_iters = cfg.max_iters.unwrap_or(MAX_ITERS_PER_DIMENSION * p);

    let diagnostic = Diagnostic::new(y, diagnostic_directions(p, cfg.diagnostic_slices, cfg.seed)?);
    let shift = (&x.mean_axis(Axis(0)).expect("nonempty") - &y.mean_axis(Axis(0)).expect("nonempty"))
        .mapv(|v| v * v)
        .sum()
        .sqrt();
    let scale = spread(x).max(spread(y)).max(shift);
    let threshold = cfg.tol_abs * scale;

    let mut current = x.to_owned();
    let mut records = Vec::new();
    let mut residuals = vec![diagnostic.residual(current.view())];

    let stop = loop {
        let k = records.len();
        let r = residuals[k];
        if r <= threshold {
            break StopReason::Tolerance;
        }
        if stalled(&residuals, cfg.stall_window, cfg.tol_rel) {
            break StopReason::Stalled;
        }
        if k >= max_iters {
            break StopReason::MaxIters;
        }

        let mut dirs = Vec::with_capacity(per_iter);
        for _ in 0..per_iter {
            dirs.push(source.next(p, current.view(), y)?);
        }
        let view = current.view();
        let fields: Vec<(Vec<f64>, f64)> = dirs.par_iter().map(|d| displacement(view, y, d)).collect();

        let mut update = Array2::<f64>::zeros((n, p));
        for ((delta, _), d) in fields.iter().zip(&dirs) {
            for (mut row, &t) in update.axis_iter_mut(Axis(0)).zip(delta) {
                for (u, &z) in row.iter_mut().zip(d.as_slice()) {
                    *u += t * z;
                }
            }
        }
        if per_iter > 1 {
            update /= per_iter as f64;
        }
        current += &update;

        let transport_cost = fields.iter().map(|(_, c)| c).sum::<f64>() / per_iter as f64;
        let update_norm = (update.mapv(|v| v * v).sum() / n as f64).sqrt();
        if let Some(obs) = observer.as_deref_mut() {
            obs(&StepView { iteration: k, directions: &dirs, updated: current.view(), target: y });
        }
        records.push(IterationRecord { directions: dirs, transport_cost, update_norm });
        let r = diagnostic.residual(current.view());
        residuals.push(r);
    };

    let trace = IterationTrace {
        records,
        residuals,
        converged: stop != StopReason::MaxIters,
        stop,
        scale,
    };
    Ok(ProjectionOutcome { map: TransportMapEstimate::new(x.to_owned(), current)?, trace })
}

/// Random-projection Monge map estimate between equal-size uniform samples.
pub fn random_projection_otm(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    cfg: &ProjectionConfig,
) -> Result<ProjectionOutcome> {
    estimate_map_observed(x, y, PursuitMethod::RandomProjection, cfg, None)
}

/// Sliced estimate: each update is the mean displacement over `slices`
/// directions. With one slice this is exactly [`random_projection_otm`].
pub fn sliced_otm(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    slices: usize,
    cfg: &ProjectionConfig,
) -> Result<ProjectionOutcome> {
    estimate_map_observed(x, y, PursuitMethod::Sliced { slices }, cfg, None)
}

/// Projection pursuit Monge map: each direction is the SAVE direction
/// between the current source and the target.
pub fn ppmm(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, cfg: &ProjectionConfig) -> Result<ProjectionOutcome> {
    estimate_map_observed(x, y, PursuitMethod::Ppmm, cfg, None)
}
