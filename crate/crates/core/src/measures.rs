//! Discrete measures, cost matrices, couplings and map estimates.
//!
//! Everything here is immutable after construction. The solvers in the
//! sibling modules take these types by reference and never mutate them.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{OtError, Result};

/// Weight sums further than this from 1 are rejected rather than renormalized.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

/// Probability vector on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    /// Validates `w` and divides by its sum.
    ///
    /// Entries must be finite and nonnegative, and the sum must lie within
    /// [`WEIGHT_SUM_TOLERANCE`] of one.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(OtError::Empty("weights"));
        }
        if let Some(index) = w.iter().position(|v| !v.is_finite()) {
            return Err(OtError::InvalidWeights(format!("entry {index} is not finite")));
        }
        if let Some(index) = w.iter().position(|&v| v < 0.0) {
            return Err(OtError::NegativeEntry { what: "weights", index });
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(OtError::InvalidWeights(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self(w.into_iter().map(|v| v / sum).collect()))
    }

    /// Rescales arbitrary nonnegative masses onto the simplex.
    pub fn from_masses(masses: Vec<f64>) -> Result<Self> {
        let sum: f64 = masses.iter().sum();
        if !(sum.is_finite() && sum > 0.0) {
            return Err(OtError::InvalidWeights(format!("total mass {sum} is not positive")));
        }
        Self::new(masses.into_iter().map(|v| v / sum).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(OtError::Empty("weights"));
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// True when every entry equals `1/n` up to rounding.
    pub fn is_uniform(&self) -> bool {
        let target = 1.0 / self.0.len() as f64;
        self.0.iter().all(|&v| (v - target).abs() <= 1e-12 * target.max(1e-300) + 1e-15)
    }
}

impl std::ops::Index<usize> for SimplexWeights {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Weighted point cloud: `points` is `n x p`, one support point per row.
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    points: Array2<f64>,
    weights: SimplexWeights,
}

impl DiscreteMeasure {
    pub fn new(points: Array2<f64>, weights: SimplexWeights) -> Result<Self> {
        if points.nrows() != weights.len() {
            return Err(OtError::DimensionMismatch(format!(
                "{} points but {} weights",
                points.nrows(),
                weights.len()
            )));
        }
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(OtError::Empty("points"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(OtError::NonFinite("points"));
        }
        Ok(Self { points, weights })
    }

    pub fn uniform(points: Array2<f64>) -> Result<Self> {
        let weights = SimplexWeights::uniform(points.nrows())?;
        Self::new(points, weights)
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn weights(&self) -> &SimplexWeights {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Reads the CSV measure format: a header row, columns `x1..xp`, then an
    /// optional trailing `weight` column. Without it the weights are uniform.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| csv_error(e, 1))?
            .iter()
            .map(str::to_owned)
            .collect::<Vec<_>>();
        if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
            return Err(OtError::Parse { line: 1, message: "missing header row".into() });
        }
        let has_weight = headers.last().is_some_and(|h| h.eq_ignore_ascii_case("weight"));
        let dim = headers.len() - usize::from(has_weight);
        if dim == 0 {
            return Err(OtError::Parse { line: 1, message: "no coordinate columns".into() });
        }

        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| csv_error(e, 0))?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != headers.len() {
                return Err(OtError::Parse {
                    line,
                    message: format!("expected {} fields, found {}", headers.len(), record.len()),
                });
            }
            for (k, field) in record.iter().enumerate() {
                let value: f64 = field.parse().map_err(|_| OtError::Parse {
                    line,
                    message: format!("field {} ({:?}) is not a number", k + 1, field),
                })?;
                if !value.is_finite() {
                    return Err(OtError::Parse { line, message: format!("field {} is not finite", k + 1) });
                }
                if has_weight && k == dim {
                    weights.push(value);
                } else {
                    coords.push(value);
                }
            }
        }
        let n = coords.len() / dim;
        if n == 0 {
            return Err(OtError::Empty("measure file has no rows"));
        }
        let points = Array2::from_shape_vec((n, dim), coords)
            .map_err(|e| OtError::DimensionMismatch(e.to_string()))?;
        let weights = if has_weight {
            SimplexWeights::new(weights)?
        } else {
            SimplexWeights::uniform(n)?
        };
        Self::new(points, weights)
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    /// Writes the CSV measure format. The weight column is emitted only when
    /// the weights are not uniform.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let with_weight = !self.weights.is_uniform();
        let mut header: Vec<String> = (1..=self.dim()).map(|k| format!("x{k}")).collect();
        if with_weight {
            header.push("weight".into());
        }
        writeln!(out, "{}", header.join(","))?;
        for (i, row) in self.points.outer_iter().enumerate() {
            let mut fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            if with_weight {
                fields.push(format!("{}", self.weights[i]));
            }
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

fn csv_error(e: csv::Error, fallback_line: u64) -> OtError {
    let line = e.position().map_or(fallback_line, |p| p.line());
    OtError::Parse { line, message: e.to_string() }
}

/// Pairwise squared-Euclidean costs, `n x m`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    /// Wraps an existing matrix after checking it is finite and nonnegative.
    pub fn from_array(c: Array2<f64>) -> Result<Self> {
        if c.is_empty() {
            return Err(OtError::Empty("cost matrix"));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(OtError::NonFinite("cost matrix"));
        }
        if let Some(index) = c.iter().position(|&v| v < 0.0) {
            return Err(OtError::NegativeEntry { what: "cost matrix", index });
        }
        Ok(Self(c))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn transposed(&self) -> CostMatrix {
        CostMatrix(self.0.t().to_owned())
    }

    /// Median of all entries, used for scale-aware parameter defaults.
    pub fn median(&self) -> f64 {
        let mut v: Vec<f64> = self.0.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        let k = v.len();
        if k % 2 == 1 {
            v[k / 2]
        } else {
            0.5 * (v[k / 2 - 1] + v[k / 2])
        }
    }

    /// Frobenius inner product with a plan of the same shape.
    pub fn dot(&self, plan: ArrayView2<'_, f64>) -> Result<f64> {
        check_shape(plan.dim(), self.shape(), "plan vs cost")?;
        Ok(ndarray::Zip::from(plan).and(&self.0).fold(0.0, |acc, &p, &c| acc + p * c))
    }
}

/// Squared Euclidean distance between two equal-length slices.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Builds `c[i][j] = |a_i - b_j|^2`.
///
/// Rows are assembled in parallel but each entry is computed the same way
/// regardless of thread count, so the output is bit-reproducible.
pub fn make_cost_matrix(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<CostMatrix> {
    if a.ncols() != b.ncols() {
        return Err(OtError::DimensionMismatch(format!(
            "source has {} columns, target has {}",
            a.ncols(),
            b.ncols()
        )));
    }
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(OtError::Empty("point set"));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(OtError::NonFinite("points"));
    }
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let (n, m) = (a.nrows(), b.nrows());
    let mut c = Array2::<f64>::zeros((n, m));
    c.axis_iter_mut(Axis(0)).into_par_iter().enumerate().for_each(|(i, mut row)| {
        let ai = a.row(i);
        let ai = ai.as_slice().expect("standard layout");
        for (j, out) in row.iter_mut().enumerate() {
            let bj = b.row(j);
            *out = squared_distance(ai, bj.as_slice().expect("standard layout"));
        }
    });
    Ok(CostMatrix(c))
}

/// Shannon entropy `sum P log(1/P)` with `0 log(1/0) = 0`.
pub fn entropy(plan: ArrayView2<'_, f64>) -> Result<f64> {
    let mut h = 0.0;
    for (index, &p) in plan.iter().enumerate() {
        if p < 0.0 {
            return Err(OtError::NegativeEntry { what: "plan", index });
        }
        if !p.is_finite() {
            return Err(OtError::NonFinite("plan"));
        }
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    Ok(h)
}

/// L1 marginal residual `|P 1 - p|_1 + |P^T 1 - q|_1`.
pub fn marginal_violation(plan: ArrayView2<'_, f64>, p: &SimplexWeights, q: &SimplexWeights) -> Result<f64> {
    check_shape(plan.dim(), (p.len(), q.len()), "plan vs marginals")?;
    let rows = plan.sum_axis(Axis(1));
    let cols = plan.sum_axis(Axis(0));
    let row_err: f64 = rows.iter().zip(p.as_slice()).map(|(r, w)| (r - w).abs()).sum();
    let col_err: f64 = cols.iter().zip(q.as_slice()).map(|(c, w)| (c - w).abs()).sum();
    Ok(row_err + col_err)
}

pub(crate) fn check_shape(got: (usize, usize), want: (usize, usize), what: &str) -> Result<()> {
    if got != want {
        return Err(OtError::DimensionMismatch(format!(
            "{what}: got {}x{}, expected {}x{}",
            got.0, got.1, want.0, want.1
        )));
    }
    Ok(())
}

/// A transport plan together with its marginals and objective `<P, C>`.
#[derive(Debug, Clone)]
pub struct Coupling {
    pub plan: Array2<f64>,
    pub row_marginal: SimplexWeights,
    pub col_marginal: SimplexWeights,
    pub objective: f64,
}

impl Coupling {
    pub fn new(plan: Array2<f64>, p: SimplexWeights, q: SimplexWeights, cost: &CostMatrix) -> Result<Self> {
        check_shape(plan.dim(), (p.len(), q.len()), "plan vs marginals")?;
        if let Some(index) = plan.iter().position(|&v| v < 0.0) {
            return Err(OtError::NegativeEntry { what: "plan", index });
        }
        let objective = cost.dot(plan.view())?;
        Ok(Self { plan, row_marginal: p, col_marginal: q, objective })
    }

    pub fn marginal_violation(&self) -> f64 {
        marginal_violation(self.plan.view(), &self.row_marginal, &self.col_marginal)
            .expect("shape checked at construction")
    }

    pub fn nonzeros(&self, threshold: f64) -> usize {
        self.plan.iter().filter(|&&v| v > threshold).count()
    }
}

/// Images of each source point under an estimated Monge map, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportMapEstimate {
    source: Array2<f64>,
    image: Array2<f64>,
}

impl TransportMapEstimate {
    pub fn new(source: Array2<f64>, image: Array2<f64>) -> Result<Self> {
        check_shape(image.dim(), source.dim(), "map image vs source")?;
        Ok(Self { source, image })
    }

    pub fn identity(source: Array2<f64>) -> Self {
        let image = source.clone();
        Self { source, image }
    }

    pub fn source(&self) -> ArrayView2<'_, f64> {
        self.source.view()
    }

    pub fn image(&self) -> ArrayView2<'_, f64> {
        self.image.view()
    }

    pub fn len(&self) -> usize {
        self.source.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.source.nrows() == 0
    }

    pub fn into_parts(self) -> (Array2<f64>, Array2<f64>) {
        (self.source, self.image)
    }
}
