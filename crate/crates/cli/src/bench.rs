//! Seeded scaling experiments: wall time and iteration counts against `n`.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use ndarray::{s, Array2, ArrayView2};
use otkit_core::gaussian::{bures_wasserstein, clustered_gaussian_sample, gaussian_pair, standard_gaussian_sample, GaussianMoments};
use otkit_core::measures::{make_cost_matrix, SimplexWeights};
use otkit_core::nystrom::{estimate_eta, nys_sink_uniform};
use otkit_core::projection::{ppmm, random_projection_otm, ProjectionConfig};
use otkit_core::sinkhorn::{sinkhorn_knopp, SinkhornConfig};
use serde::Serialize;

use crate::commands::{CliError, DEFAULT_RANK};
use crate::report::{sha256_file, FileDigest, SCHEMA_VERSION};

pub const DENSE_BENCH_LIMIT: usize = 5_000;
pub const FACTORED_BENCH_LIMIT: usize = 100_000;
pub const DEFAULT_REPETITIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    SinkhornScaling,
    NysScaling,
    PpmmVsRandom,
}

impl Suite {
    pub fn default_sizes(self) -> Vec<usize> {
        match self {
            Suite::SinkhornScaling => vec![250, 500, 1000],
            Suite::NysScaling => vec![2000, 4000, 8000, 16000],
            Suite::PpmmVsRandom => vec![500],
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub suite: Suite,
    pub sizes: Option<Vec<usize>>,
    pub seed: u64,
    pub rank: Option<usize>,
    pub repetitions: usize,
    pub out: PathBuf,
    pub timing: bool,
}

/// One `(method, n, s, p)` cell; the time is the median over repetitions.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub method: &'static str,
    pub n: usize,
    pub s: Option<usize>,
    pub p: usize,
    pub wall_time_ms: f64,
    pub iterations: usize,
    pub distance: f64,
    /// Closed-form W2, where one exists.
    pub reference: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Slope {
    pub method: &'static str,
    pub p: usize,
    pub s: Option<usize>,
    /// Least-squares slope of `log time` against `log n`.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationComparison {
    pub n: usize,
    pub p: usize,
    pub ppmm_iterations: usize,
    pub random_iterations: usize,
    pub ppmm_not_slower: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchSummary {
    pub schema_version: u32,
    pub command: &'static str,
    pub suite: Suite,
    pub seed: u64,
    pub repetitions: usize,
    pub rows: Vec<BenchRow>,
    pub slopes: Vec<Slope>,
    pub iteration_comparisons: Vec<IterationComparison>,
    pub output: FileDigest,
}

struct Measured {
    iterations: usize,
    distance: f64,
    converged: bool,
}

/// Runs `f` `reps` times and returns the median wall time with the last result.
fn timed<F>(reps: usize, timing: bool, mut f: F) -> Result<(f64, Measured), CliError>
where
    F: FnMut() -> Result<Measured, CliError>,
{
    let reps = if timing { reps.max(1) } else { 1 };
    let mut times = Vec::with_capacity(reps);
    let mut last = None;
    for _ in 0..reps {
        let start = Instant::now();
        last = Some(f()?);
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let median = if timing { times[times.len() / 2] } else { 0.0 };
    Ok((median, last.expect("at least one repetition")))
}

/// Least-squares slope of `ln y` on `ln x`; `None` with fewer than two
/// usable points.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Source and target for the dense scaling suite: two planar Gaussian
/// samples, the target shifted by one unit.
pub fn sinkhorn_bench_pair(n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let x = standard_gaussian_sample(n, 2, seed);
    let mut y = standard_gaussian_sample(n, 2, seed.wrapping_add(1));
    y.column_mut(0).mapv_inplace(|v| v + 1.0);
    (x, y)
}

/// Source and target for the factored suite: `2n` points over five
/// well-separated planar clusters, split in half, the target shifted by
/// one unit.
pub fn clustered_bench_pair(n: usize, seed: u64) -> Result<(Array2<f64>, Array2<f64>), CliError> {
    let z = clustered_gaussian_sample(2 * n, 2, 5, 10.0, 1.0, seed)?;
    let x = z.slice(s![..n, ..]).to_owned();
    let mut y = z.slice(s![n.., ..]).to_owned();
    y.column_mut(0).mapv_inplace(|v| v + 1.0);
    Ok((x, y))
}

/// Entropic strength for the clustered pair: `2 / median cost`, a fifth of
/// the CLI default, which keeps the dense oracle at about a hundred
/// iterations.
pub fn clustered_bench_eta(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<f64, CliError> {
    Ok(0.2 * estimate_eta(x, y)?)
}

/// Gaussian pair with a mean shift of 5 along the first axis and variance
/// scaled by 4 on the first and 1/4 on the last coordinate.
pub fn gaussian_bench_pair(n: usize, p: usize, seed: u64) -> Result<(Array2<f64>, Array2<f64>), CliError> {
    let mut shift = vec![0.0; p];
    shift[0] = 5.0;
    let mut scales = vec![1.0; p];
    scales[0] = 2.0;
    if p > 1 {
        scales[p - 1] = 0.5;
    }
    Ok(gaussian_pair(n, &shift, &scales, seed)?)
}

pub fn run_bench(opts: &BenchOptions) -> Result<BenchSummary, CliError> {
    let sizes = opts.sizes.clone().unwrap_or_else(|| opts.suite.default_sizes());
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(CliError::Input("--sizes must list positive sizes".into()));
    }
    let limit = match opts.suite {
        Suite::NysScaling => FACTORED_BENCH_LIMIT,
        _ => DENSE_BENCH_LIMIT,
    };
    if let Some(&n) = sizes.iter().find(|&&n| n > limit) {
        return Err(CliError::Resource(format!("size {n} exceeds the {limit} limit of this suite")));
    }
    let reps = opts.repetitions;
    let mut rows = Vec::new();
    let mut comparisons = Vec::new();

    match opts.suite {
        Suite::SinkhornScaling => {
            for &n in &sizes {
                let (x, y) = sinkhorn_bench_pair(n, opts.seed);
                let w = SimplexWeights::uniform(n)?;
                let (t, m) = timed(reps, opts.timing, || {
                    let cost = make_cost_matrix(x.view(), y.view())?;
                    let cfg = SinkhornConfig::defaults_for(&cost)?;
                    let res = sinkhorn_knopp(&cost, &w, &w, &cfg)?;
                    Ok(Measured { iterations: res.state.iteration, distance: res.distance_value.sqrt(), converged: res.converged })
                })?;
                rows.push(row("sinkhorn", n, None, 2, t, m, None));
            }
        }
        Suite::NysScaling => {
            for &n in &sizes {
                let (x, y) = clustered_bench_pair(n, opts.seed)?;
                let rank = opts.rank.unwrap_or(DEFAULT_RANK).min(2 * n);
                let w = SimplexWeights::uniform(n)?;
                let (t, m) = timed(reps, opts.timing, || {
                    let cfg = SinkhornConfig::with_eta(clustered_bench_eta(x.view(), y.view())?)?;
                    let res = nys_sink_uniform(x.view(), y.view(), &w, &w, rank, opts.seed, &cfg)?;
                    Ok(Measured {
                        iterations: res.iterations(),
                        distance: if res.distance_value >= 0.0 { res.distance_value.sqrt() } else { f64::NAN },
                        converged: res.converged,
                    })
                })?;
                rows.push(row("nys-sink", n, Some(rank), 2, t, m, None));
            }
        }
        Suite::PpmmVsRandom => {
            for &n in &sizes {
                for p in [2usize, 10] {
                    let (x, y) = gaussian_bench_pair(n, p, opts.seed)?;
                    let reference = bures_wasserstein(
                        &GaussianMoments::from_sample(x.view())?,
                        &GaussianMoments::from_sample(y.view())?,
                    )?;
                    let cfg = ProjectionConfig::with_seed(opts.seed);
                    let (t, random) = timed(reps, opts.timing, || {
                        let out = random_projection_otm(x.view(), y.view(), &cfg)?;
                        Ok(Measured {
                            iterations: out.trace.iterations(),
                            distance: out.wasserstein_estimate(),
                            converged: out.trace.converged,
                        })
                    })?;
                    let random_iterations = random.iterations;
                    rows.push(row("random-projection", n, None, p, t, random, Some(reference)));
                    let (t, pp) = timed(reps, opts.timing, || {
                        let out = ppmm(x.view(), y.view(), &cfg)?;
                        Ok(Measured {
                            iterations: out.trace.iterations(),
                            distance: out.wasserstein_estimate(),
                            converged: out.trace.converged,
                        })
                    })?;
                    comparisons.push(IterationComparison {
                        n,
                        p,
                        ppmm_iterations: pp.iterations,
                        random_iterations,
                        ppmm_not_slower: pp.iterations <= random_iterations,
                    });
                    rows.push(row("ppmm", n, None, p, t, pp, Some(reference)));
                }
            }
        }
    }

    fs::write(&opts.out, rows_csv(&rows)).map_err(|e| CliError::Output(format!("{}: {e}", opts.out.display())))?;
    let sha256 = sha256_file(&opts.out).map_err(|e| CliError::Output(format!("{}: {e}", opts.out.display())))?;
    Ok(BenchSummary {
        schema_version: SCHEMA_VERSION,
        command: "bench",
        suite: opts.suite,
        seed: opts.seed,
        repetitions: if opts.timing { reps.max(1) } else { 1 },
        slopes: slopes(&rows),
        rows,
        iteration_comparisons: comparisons,
        output: FileDigest { path: opts.out.display().to_string(), sha256 },
    })
}

fn row(method: &'static str, n: usize, s: Option<usize>, p: usize, t: f64, m: Measured, reference: Option<f64>) -> BenchRow {
    BenchRow {
        method,
        n,
        s,
        p,
        wall_time_ms: t,
        iterations: m.iterations,
        distance: m.distance,
        reference,
        converged: m.converged,
    }
}

fn slopes(rows: &[BenchRow]) -> Vec<Slope> {
    let mut groups: Vec<(&'static str, usize, Option<usize>)> = Vec::new();
    for r in rows {
        let key = (r.method, r.p, r.s);
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    groups
        .into_iter()
        .map(|(method, p, s)| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| r.method == method && r.p == p && r.s == s)
                .map(|r| (r.n as f64, r.wall_time_ms))
                .unzip();
            Slope { method, p, s, slope: loglog_slope(&xs, &ys) }
        })
        .collect()
}

pub fn rows_csv(rows: &[BenchRow]) -> String {
    let opt = |v: Option<String>| v.unwrap_or_default();
    let mut text = String::from("method,n,s,p,wall_time_ms,iterations,distance,reference,converged\n");
    for r in rows {
        writeln!(
            text,
            "{},{},{},{},{},{},{},{},{}",
            r.method,
            r.n,
            opt(r.s.map(|s| s.to_string())),
            r.p,
            r.wall_time_ms,
            r.iterations,
            r.distance,
            opt(r.reference.map(|v| v.to_string())),
            r.converged
        )
        .expect("string write");
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn slope_needs_two_positive_points() {
        assert_eq!(loglog_slope(&[1.0, 2.0], &[0.0, 0.0]), None);
        assert_eq!(loglog_slope(&[1.0], &[1.0]), None);
    }

    #[test]
    fn oversize_request_is_a_resource_error() {
        let dir = tempfile::tempdir().unwrap();
        let opts = BenchOptions {
            suite: Suite::SinkhornScaling,
            sizes: Some(vec![6000]),
            seed: 0,
            rank: None,
            repetitions: 1,
            out: dir.path().join("b.csv"),
            timing: false,
        };
        assert_eq!(run_bench(&opts).unwrap_err().exit_code(), 4);
    }

    #[test]
    fn clustered_pair_has_requested_shape() {
        let (x, y) = clustered_bench_pair(100, 3).unwrap();
        assert_eq!(x.dim(), (100, 2));
        assert_eq!(y.dim(), (100, 2));
    }
}
