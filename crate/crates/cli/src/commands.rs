//! `distance`, `plan` and `map`: load two measures, run one solver, write
//! the artifact and build the report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use otkit_core::exact::solve_exact_ot;
use otkit_core::measures::{make_cost_matrix, DiscreteMeasure};
use otkit_core::nystrom::{estimate_eta, nys_sink_uniform, nystrom_support_size};
use otkit_core::projection::{
    estimate_map_observed, DirectionSource, ProjectionConfig, PursuitMethod, StopReason, MAX_ITERS_PER_DIMENSION,
};
use otkit_core::sinkhorn::{default_eta, default_max_iters, sinkhorn_knopp, SinkhornConfig, DEFAULT_EPSILON};
use otkit_core::OtError;

use crate::report::{sha256_file, ConfigEcho, Details, FileDigest, InputDigest, Inputs, RunReport, SCHEMA_VERSION};

/// Largest `n * m` accepted by the dense solvers.
pub const DENSE_LIMIT: usize = 4_000_000;
/// Plan entries at or below this mass are left out of the plan CSV.
pub const PLAN_THRESHOLD: f64 = 1e-12;
pub const DEFAULT_RANK: usize = 50;
pub const DEFAULT_SLICES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Exact,
    Sinkhorn,
    NysSink,
    RandomProjection,
    Sliced,
    Ppmm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Sinkhorn => "sinkhorn",
            Method::NysSink => "nys-sink",
            Method::RandomProjection => "random-projection",
            Method::Sliced => "sliced",
            Method::Ppmm => "ppmm",
        }
    }

    pub fn is_plan_method(self) -> bool {
        matches!(self, Method::Exact | Method::Sinkhorn | Method::NysSink)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Distance,
    Plan,
    Map,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Distance => "distance",
            Command::Plan => "plan",
            Command::Map => "map",
        }
    }
}

/// Everything a solve needs besides the command itself.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub source: PathBuf,
    pub target: PathBuf,
    pub method: Method,
    pub eta: Option<f64>,
    pub epsilon: Option<f64>,
    pub max_iters: Option<usize>,
    pub rank: Option<usize>,
    pub slices: Option<usize>,
    pub seed: u64,
    pub low_discrepancy: bool,
    pub out: Option<PathBuf>,
    pub threads: usize,
    pub timing: bool,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad input files, flags or solver preconditions.
    Input(String),
    /// The request exceeds a size limit.
    Resource(String),
    /// Writing an output file failed.
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Resource(_) => 4,
            CliError::Output(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Resource(m) => write!(f, "resource limit: {m}"),
            CliError::Output(m) => write!(f, "output error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<OtError> for CliError {
    fn from(e: OtError) -> Self {
        match e {
            OtError::TooLarge(_) => CliError::Resource(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

fn load(path: &Path) -> Result<(DiscreteMeasure, InputDigest), CliError> {
    let shown = path.display();
    let measure = DiscreteMeasure::read_csv_path(path).map_err(|e| CliError::Input(format!("{shown}: {e}")))?;
    let sha256 = sha256_file(path).map_err(|e| CliError::Input(format!("{shown}: {e}")))?;
    let digest = InputDigest { path: shown.to_string(), sha256, points: measure.len(), dim: measure.dim() };
    Ok((measure, digest))
}

/// What a solver hands back before it is turned into a report.
struct Solved {
    distance: f64,
    iterations: usize,
    converged: bool,
    config: ConfigEcho,
    details: Details,
    artifact: Option<String>,
}

/// Runs one command. A run that finishes without converging still returns
/// `Ok`; the caller reads `converged` from the report.
pub fn run(command: Command, opts: &SolveOptions) -> Result<RunReport, CliError> {
    match command {
        Command::Plan if !opts.method.is_plan_method() => {
            return Err(CliError::Input(format!(
                "plan needs exact, sinkhorn or nys-sink, not {}",
                opts.method.name()
            )))
        }
        Command::Map if opts.method.is_plan_method() => {
            return Err(CliError::Input(format!(
                "map needs random-projection, sliced or ppmm, not {}",
                opts.method.name()
            )))
        }
        _ => {}
    }
    if command != Command::Distance && opts.out.is_none() {
        return Err(CliError::Input(format!("{} needs --out", command.name())));
    }

    let (source, source_digest) = load(&opts.source)?;
    let (target, target_digest) = load(&opts.target)?;
    if source.dim() != target.dim() {
        return Err(CliError::Input(format!(
            "source has {} coordinates, target has {}",
            source.dim(),
            target.dim()
        )));
    }

    let start = Instant::now();
    let solved = match opts.method {
        Method::Exact | Method::Sinkhorn => solve_dense(command, opts, &source, &target)?,
        Method::NysSink => solve_nystrom(command, opts, &source, &target)?,
        _ => solve_map(command, opts, &source, &target)?,
    };
    let elapsed = start.elapsed().as_secs_f64() * 1e3;

    let output = match (&opts.out, &solved.artifact) {
        (Some(path), Some(text)) => {
            fs::write(path, text).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
            let sha256 = sha256_file(path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
            Some(FileDigest { path: path.display().to_string(), sha256 })
        }
        _ => None,
    };

    let mut config = solved.config;
    config.threads = opts.threads;
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        command: command.name(),
        method: opts.method.name(),
        distance: solved.distance,
        iterations: solved.iterations,
        converged: solved.converged,
        wall_time_ms: if opts.timing { elapsed } else { 0.0 },
        seed: opts.seed,
        config,
        inputs: Inputs { source: source_digest, target: target_digest },
        output,
        details: solved.details,
    })
}

fn check_dense(n: usize, m: usize) -> Result<(), CliError> {
    match n.checked_mul(m) {
        Some(size) if size <= DENSE_LIMIT => Ok(()),
        _ => Err(CliError::Resource(format!(
            "{n} x {m} exceeds the dense limit of {DENSE_LIMIT} entries; use --method nys-sink"
        ))),
    }
}

fn sinkhorn_config(opts: &SolveOptions, eta: f64) -> Result<SinkhornConfig, CliError> {
    let epsilon = opts.epsilon.unwrap_or(DEFAULT_EPSILON);
    let max_iters = opts.max_iters.unwrap_or_else(|| default_max_iters(epsilon));
    Ok(SinkhornConfig::new(eta, epsilon, max_iters)?)
}

fn sinkhorn_echo(cfg: &SinkhornConfig) -> ConfigEcho {
    ConfigEcho {
        eta: Some(cfg.eta),
        epsilon: Some(cfg.epsilon),
        max_iters: Some(cfg.max_iters),
        ..ConfigEcho::default()
    }
}

fn solve_dense(
    command: Command,
    opts: &SolveOptions,
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
) -> Result<Solved, CliError> {
    check_dense(source.len(), target.len())?;
    let cost = make_cost_matrix(source.points(), target.points())?;
    let (p, q) = (source.weights(), target.weights());
    let (plan, mut solved) = match opts.method {
        Method::Exact => {
            let sol = solve_exact_ot(&cost, p, q)?;
            let details = Details {
                transport_cost: sol.optimal_cost,
                marginal_violation: Some(sol.coupling.marginal_violation()),
                ..Details::default()
            };
            let solved = Solved {
                distance: sol.optimal_cost.max(0.0).sqrt(),
                iterations: sol.iterations,
                converged: true,
                config: ConfigEcho::default(),
                details,
                artifact: None,
            };
            (sol.coupling.plan, solved)
        }
        _ => {
            let eta = opts.eta.unwrap_or_else(|| default_eta(&cost));
            let cfg = sinkhorn_config(opts, eta)?;
            let res = sinkhorn_knopp(&cost, p, q, &cfg)?;
            let details = Details {
                transport_cost: res.distance_value,
                regularized_objective: Some(res.regularized_objective),
                marginal_violation: Some(res.coupling.marginal_violation()),
                ..Details::default()
            };
            let solved = Solved {
                distance: res.distance_value.max(0.0).sqrt(),
                iterations: res.state.iteration,
                converged: res.converged,
                config: sinkhorn_echo(&cfg),
                details,
                artifact: None,
            };
            (res.coupling.plan, solved)
        }
    };
    if command == Command::Plan {
        let (text, dropped) = plan_csv(plan.view());
        solved.artifact = Some(text);
        solved.details.dropped_mass = Some(dropped);
    }
    Ok(solved)
}

fn solve_nystrom(
    command: Command,
    opts: &SolveOptions,
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
) -> Result<Solved, CliError> {
    let (x, y) = (source.points(), target.points());
    let eta = match opts.eta {
        Some(eta) => eta,
        None => estimate_eta(x, y)?,
    };
    let cfg = sinkhorn_config(opts, eta)?;
    let rank = opts.rank.unwrap_or_else(|| DEFAULT_RANK.min(nystrom_support_size(x, y)));
    let res = nys_sink_uniform(x, y, source.weights(), target.weights(), rank, opts.seed, &cfg)?;
    let mut details = Details {
        transport_cost: res.distance_value,
        regularized_objective: Some(res.regularized_objective),
        marginal_violation: Some(res.marginal_violation),
        floored_sums: Some(res.floored_sums),
        ..Details::default()
    };
    let artifact = if command == Command::Plan {
        let materialized = res.materialize()?;
        let (text, dropped) = plan_csv(materialized.plan.view());
        details.dropped_mass = Some(dropped);
        details.clamped_entries = Some(materialized.clamped_entries);
        Some(text)
    } else {
        None
    };
    Ok(Solved {
        // a negative cost means the factored plan carries negative mass
        distance: if res.distance_value >= 0.0 { res.distance_value.sqrt() } else { f64::NAN },
        iterations: res.iterations(),
        converged: res.converged,
        config: ConfigEcho { rank: Some(rank), ..sinkhorn_echo(&cfg) },
        details,
        artifact,
    })
}

fn solve_map(
    command: Command,
    opts: &SolveOptions,
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
) -> Result<Solved, CliError> {
    if source.len() != target.len() {
        return Err(OtError::UnequalSizes { source_rows: source.len(), target_rows: target.len() }.into());
    }
    if !source.weights().is_uniform() || !target.weights().is_uniform() {
        return Err(CliError::Input("map estimation needs uniform weights on both sides".into()));
    }
    let method = match opts.method {
        Method::RandomProjection => PursuitMethod::RandomProjection,
        Method::Sliced => PursuitMethod::Sliced { slices: opts.slices.unwrap_or(DEFAULT_SLICES) },
        _ => PursuitMethod::Ppmm,
    };
    let mut cfg = ProjectionConfig::with_seed(opts.seed);
    cfg.max_iters = opts.max_iters;
    if let Some(eps) = opts.epsilon {
        cfg.tol_abs = eps;
    }
    if opts.low_discrepancy {
        cfg.directions = DirectionSource::LowDiscrepancy;
    }
    let outcome = estimate_map_observed(source.points(), target.points(), method, &cfg, None)?;
    let distance = outcome.wasserstein_estimate();
    let uses_directions = method != PursuitMethod::Ppmm;
    let config = ConfigEcho {
        epsilon: Some(cfg.tol_abs),
        max_iters: Some(cfg.max_iters.unwrap_or(MAX_ITERS_PER_DIMENSION * source.dim())),
        slices: match method {
            PursuitMethod::Sliced { slices } => Some(slices),
            _ => None,
        },
        directions: uses_directions.then_some(match cfg.directions {
            DirectionSource::Random => "random",
            DirectionSource::LowDiscrepancy => "low-discrepancy",
        }),
        ..ConfigEcho::default()
    };
    let details = Details {
        transport_cost: distance * distance,
        stop_reason: Some(match outcome.trace.stop {
            StopReason::Tolerance => "tolerance",
            StopReason::Stalled => "stalled",
            StopReason::MaxIters => "max-iters",
        }),
        ..Details::default()
    };
    let artifact = (command == Command::Map).then(|| map_csv(outcome.map.source(), outcome.map.image()));
    Ok(Solved {
        distance,
        iterations: outcome.trace.iterations(),
        converged: outcome.trace.converged,
        config,
        details,
        artifact,
    })
}

/// `i,j,mass` rows for entries above [`PLAN_THRESHOLD`], plus the total
/// mass that was left out.
pub fn plan_csv(plan: ArrayView2<'_, f64>) -> (String, f64) {
    let mut text = String::from("i,j,mass\n");
    let mut dropped = 0.0;
    for ((i, j), &mass) in plan.indexed_iter() {
        if mass > PLAN_THRESHOLD {
            writeln!(text, "{i},{j},{mass}").expect("string write");
        } else {
            dropped += mass;
        }
    }
    (text, dropped)
}

/// Source coordinates `x1..xp` followed by image coordinates `t1..tp`.
pub fn map_csv(source: ArrayView2<'_, f64>, image: ArrayView2<'_, f64>) -> String {
    let p = source.ncols();
    let header: Vec<String> = (1..=p).map(|k| format!("x{k}")).chain((1..=p).map(|k| format!("t{k}"))).collect();
    let mut text = header.join(",");
    text.push('\n');
    for (s, t) in source.rows().into_iter().zip(image.rows()) {
        let fields: Vec<String> = s.iter().chain(t.iter()).map(|v| v.to_string()).collect();
        text.push_str(&fields.join(","));
        text.push('\n');
    }
    text
}

/// Reads a plan CSV back into a dense `n x m` matrix.
pub fn read_plan_csv(text: &str, n: usize, m: usize) -> Result<Array2<f64>, String> {
    let mut plan = Array2::zeros((n, m));
    for (line, row) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = row.split(',').collect();
        let parse_err = || format!("line {}: malformed plan row {row:?}", line + 1);
        if fields.len() != 3 {
            return Err(parse_err());
        }
        let i: usize = fields[0].parse().map_err(|_| parse_err())?;
        let j: usize = fields[1].parse().map_err(|_| parse_err())?;
        let mass: f64 = fields[2].parse().map_err(|_| parse_err())?;
        if i >= n || j >= m {
            return Err(parse_err());
        }
        plan[[i, j]] = mass;
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn plan_csv_drops_tiny_entries_and_counts_them() {
        let plan = array![[0.5, 1e-13], [0.0, 0.5 - 1e-13]];
        let (text, dropped) = plan_csv(plan.view());
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("i,j,mass\n0,0,0.5\n"));
        assert_eq!(dropped, 1e-13);
        let back = read_plan_csv(&text, 2, 2).unwrap();
        assert_eq!(back[[0, 0]], 0.5);
        assert_eq!(back[[0, 1]], 0.0);
    }

    #[test]
    fn map_csv_round_trips_values_exactly() {
        let s = array![[0.1, 1.0 / 3.0]];
        let t = array![[-2.5e-17, 7.0]];
        let text = map_csv(s.view(), t.view());
        assert_eq!(text.lines().next().unwrap(), "x1,x2,t1,t2");
        let values: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(values, vec![0.1, 1.0 / 3.0, -2.5e-17, 7.0]);
    }

    #[test]
    fn dense_limit_is_enforced() {
        assert!(check_dense(2000, 2000).is_ok());
        assert!(matches!(check_dense(2001, 2000), Err(CliError::Resource(_))));
        assert!(matches!(check_dense(usize::MAX, 2), Err(CliError::Resource(_))));
    }

    #[test]
    fn solver_errors_map_to_exit_codes() {
        assert_eq!(CliError::from(OtError::TooLarge("x".into())).exit_code(), 4);
        assert_eq!(CliError::from(OtError::Singular("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(OtError::InfeasibleKernel("x".into())).exit_code(), 2);
    }
}
