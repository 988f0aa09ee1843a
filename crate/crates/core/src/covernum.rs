//! Finite metric spaces, greedy covers and packings, entropy curves.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};
use crate::exec::Execution;
use crate::procs::{Index, ProcessModel};

type DistFn = Arc<dyn Fn(usize, usize) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Source {
    /// Row-major `n x n`.
    Matrix(Vec<f64>),
    /// Euclidean distance between rows of an `n x dim` matrix.
    Features { dim: usize, data: Vec<f64> },
    Callback(DistFn),
}

/// A finite index set with a metric, stored as a matrix, as Euclidean
/// feature vectors, or as a callback.
#[derive(Clone)]
pub struct FiniteMetricSpace {
    n: usize,
    source: Source,
    labels: Option<Vec<f64>>,
}

impl fmt::Debug for FiniteMetricSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.source {
            Source::Matrix(_) => "matrix",
            Source::Features { .. } => "features",
            Source::Callback(_) => "callback",
        };
        f.debug_struct("FiniteMetricSpace")
            .field("n_points", &self.n)
            .field("source", &kind)
            .finish()
    }
}

/// Models with at most this many coefficients are materialized as features.
const MAX_FEATURE_DIM: usize = 256;

impl FiniteMetricSpace {
    /// Validates symmetry, a zero diagonal and nonnegativity.
    pub fn from_matrix(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return invalid(format!("expected {} entries, got {}", n * n, data.len()));
        }
        for i in 0..n {
            if data[i * n + i] != 0.0 {
                return invalid(format!("dist({i},{i}) is not zero"));
            }
            for j in 0..i {
                let (a, b) = (data[i * n + j], data[j * n + i]);
                if a != b {
                    return invalid(format!("dist({i},{j}) != dist({j},{i})"));
                }
                if !(a >= 0.0) {
                    return invalid(format!("dist({i},{j}) = {a} is not a nonnegative number"));
                }
            }
        }
        Ok(Self {
            n,
            source: Source::Matrix(data),
            labels: None,
        })
    }

    pub fn from_features(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return invalid("feature data length must be a multiple of a positive dim");
        }
        if data.iter().any(|x| !x.is_finite()) {
            return invalid("feature data must be finite");
        }
        Ok(Self {
            n: data.len() / dim,
            source: Source::Features { dim, data },
            labels: None,
        })
    }

    /// Points on the line with `|s - t|`.
    pub fn from_points_1d(xs: &[f64]) -> Result<Self> {
        let mut s = Self::from_features(1, xs.to_vec())?;
        s.labels = Some(xs.to_vec());
        Ok(s)
    }

    /// The caller is responsible for `f` being a metric.
    pub fn from_fn<F>(n: usize, f: F) -> Self
    where
        F: Fn(usize, usize) -> f64 + Send + Sync + 'static,
    {
        Self {
            n,
            source: Source::Callback(Arc::new(f)),
            labels: None,
        }
    }

    /// The intrinsic metric of `model` restricted to `grid`.
    pub fn from_model(model: &ProcessModel, grid: &[Index]) -> Result<Self> {
        let labels = Some(grid.iter().map(Index::coordinate).collect());
        let mut space = match model {
            ProcessModel::Sequence { .. } | ProcessModel::Ultrametric(_) => {
                let model = model.clone();
                let grid = grid.to_vec();
                for t in &grid {
                    model.std_dev(t)?;
                }
                Self::from_fn(grid.len(), move |i, j| {
                    model
                        .intrinsic_distance(&grid[i], &grid[j])
                        .expect("indices validated")
                })
            }
            _ => {
                let design = model.design(grid)?;
                let dim = design.n_coeffs();
                if dim <= MAX_FEATURE_DIM {
                    let mut data = vec![0.0; grid.len() * dim];
                    for i in 0..grid.len() {
                        for (c, v) in design.row(i) {
                            data[i * dim + c] = v;
                        }
                    }
                    Self {
                        n: grid.len(),
                        source: Source::Features { dim, data },
                        labels: None,
                    }
                } else {
                    let model = model.clone();
                    let grid = grid.to_vec();
                    Self::from_fn(grid.len(), move |i, j| {
                        model
                            .intrinsic_distance(&grid[i], &grid[j])
                            .expect("indices validated")
                    })
                }
            }
        };
        space.labels = labels;
        Ok(space)
    }

    pub fn with_labels(mut self, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != self.n {
            return invalid("label count differs from point count");
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        match &self.source {
            Source::Matrix(m) => m[i * self.n + j],
            Source::Features { dim, data } => {
                let (a, b) = (&data[i * dim..(i + 1) * dim], &data[j * dim..(j + 1) * dim]);
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            }
            Source::Callback(f) => f(i, j),
        }
    }

    /// Exact diameter by exhaustive search.
    pub fn diameter(&self, exec: Execution) -> f64 {
        exec.map(self.n, |i| (0..i).map(|j| self.dist(i, j)).fold(0.0, f64::max))
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// Materializes the distance matrix.
    pub fn to_matrix(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for j in 0..i {
                let d = self.dist(i, j);
                m[i * self.n + j] = d;
                m[j * self.n + i] = d;
            }
        }
        m
    }

    /// Restriction to the listed points, in that order.
    pub fn subspace(&self, points: &[usize]) -> Result<Self> {
        if let Some(&bad) = points.iter().find(|&&p| p >= self.n) {
            return Err(Error::OutOfRange(format!("point {bad} of {}", self.n)));
        }
        let k = points.len();
        let mut m = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..a {
                let d = self.dist(points[a], points[b]);
                m[a * k + b] = d;
                m[b * k + a] = d;
            }
        }
        let mut s = Self::from_matrix(k, m)?;
        if let Some(l) = &self.labels {
            s.labels = Some(points.iter().map(|&p| l[p]).collect());
        }
        Ok(s)
    }

    /// Number of triples violating the triangle inequality by more than `tol`,
    /// over all triples when `n <= exhaustive_limit`, else over a
    /// deterministic stride sample of the first coordinate.
    pub fn triangle_violations(&self, tol: f64, exhaustive_limit: usize) -> u64 {
        let n = self.n;
        let stride = if n <= exhaustive_limit { 1 } else { n / exhaustive_limit.max(1) + 1 };
        let mut bad = 0;
        for i in (0..n).step_by(stride) {
            for j in 0..n {
                let dij = self.dist(i, j);
                for k in 0..n {
                    if dij > self.dist(i, k) + self.dist(k, j) + tol {
                        bad += 1;
                    }
                }
            }
        }
        bad
    }
}

/// Result of a greedy cover and a greedy packing at one radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringResult {
    pub epsilon: f64,
    pub n_cover: usize,
    pub centers: Vec<usize>,
    pub n_packing: usize,
    pub packing_points: Vec<usize>,
    /// Size of a maximal `2 epsilon`-separated set; a lower bound for the
    /// covering number at `epsilon`.
    pub n_packing_double: usize,
}

impl CoveringResult {
    /// `n_packing(2 eps) <= n_cover(eps) <= n_packing(eps)`.
    pub fn bracket_holds(&self) -> bool {
        self.n_packing_double <= self.n_cover && self.n_cover <= self.n_packing
    }
}

/// Greedy insertion in index order: a point joins if it is farther than
/// `eps` from every point already chosen.
fn greedy_separated(space: &FiniteMetricSpace, eps: f64) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    for i in 0..space.n_points() {
        if chosen.iter().all(|&c| space.dist(i, c) > eps) {
            chosen.push(i);
        }
    }
    chosen
}

/// Sweep in index order; the first uncovered point `i` is pushed forward to
/// the last point of the run `i, i+1, ...` staying within `eps` of `i`, and
/// that point becomes the center. Optimal on a line.
fn shifted_sweep(space: &FiniteMetricSpace, eps: f64) -> Vec<usize> {
    let n = space.n_points();
    let mut covered = vec![false; n];
    let mut centers = Vec::new();
    let mut i = 0;
    while i < n {
        if covered[i] {
            i += 1;
            continue;
        }
        let mut c = i;
        while c + 1 < n && space.dist(i, c + 1) <= eps {
            c += 1;
        }
        centers.push(c);
        for (k, cov) in covered.iter_mut().enumerate() {
            if !*cov && space.dist(c, k) <= eps {
                *cov = true;
            }
        }
        i += 1;
    }
    centers
}

/// Greedy cover and greedy packing at radius `epsilon`.
///
/// Two sweeps in index order are run: one where the first uncovered point
/// becomes a center (its centers are also a maximal packing), and one where
/// that point is first pushed forward along the index order. The smaller
/// cover is returned, lowest-index rule on ties.
pub fn greedy_cover(space: &FiniteMetricSpace, epsilon: f64) -> Result<CoveringResult> {
    if !(epsilon > 0.0) {
        return domain(format!("epsilon must be positive, got {epsilon}"));
    }
    let packing = greedy_separated(space, epsilon);
    let shifted = shifted_sweep(space, epsilon);
    let centers = if shifted.len() < packing.len() {
        shifted
    } else {
        packing.clone()
    };
    let double = greedy_separated(space, 2.0 * epsilon);
    Ok(CoveringResult {
        epsilon,
        n_cover: centers.len(),
        centers,
        n_packing: packing.len(),
        packing_points: packing,
        n_packing_double: double.len(),
    })
}

/// Assigns every point to its nearest center, ties to the lowest index.
pub fn assign_to_centers(space: &FiniteMetricSpace, centers: &[usize]) -> Vec<usize> {
    (0..space.n_points())
        .map(|i| {
            let mut best = (f64::INFINITY, usize::MAX);
            for (k, &c) in centers.iter().enumerate() {
                let d = space.dist(i, c);
                if d < best.0 {
                    best = (d, k);
                }
            }
            best.1
        })
        .collect()
}

/// Checks that every point lies within `eps` of a center and that the
/// packing points are pairwise farther than `eps` apart.
pub fn verify_cover(space: &FiniteMetricSpace, res: &CoveringResult) -> bool {
    let covered =
        (0..space.n_points()).all(|i| res.centers.iter().any(|&c| space.dist(i, c) <= res.epsilon));
    let separated = res.packing_points.iter().enumerate().all(|(a, &i)| {
        res.packing_points[..a]
            .iter()
            .all(|&j| space.dist(i, j) > res.epsilon)
    });
    covered && separated
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub epsilon: f64,
    pub n_cover: usize,
    pub n_packing: usize,
    pub n_packing_double: usize,
}

/// Greedy cover counts at each radius; radii must be positive and strictly
/// decreasing.
pub fn entropy_curve(
    space: &FiniteMetricSpace,
    epsilons: &[f64],
    exec: Execution,
) -> Result<Vec<EntropyRow>> {
    if epsilons.is_empty() {
        return domain("epsilon list is empty");
    }
    if epsilons.iter().any(|&e| !(e > 0.0)) {
        return domain("epsilons must be positive");
    }
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return domain("epsilons must be strictly decreasing");
    }
    let rows = exec.map(epsilons.len(), |k| {
        let r = greedy_cover(space, epsilons[k]).expect("epsilon validated");
        EntropyRow {
            epsilon: r.epsilon,
            n_cover: r.n_cover,
            n_packing: r.n_packing,
            n_packing_double: r.n_packing_double,
        }
    });
    Ok(rows)
}

/// `eps_j = 2^-j D` for `j = 0..=j_max`.
pub fn dyadic_epsilons(diameter: f64, j_max: u32) -> Vec<f64> {
    (0..=j_max).map(|j| diameter * 2f64.powi(-(j as i32))).collect()
}

pub fn entropy_csv(rows: &[EntropyRow]) -> String {
    let mut s = String::from("epsilon,n_cover,n_packing\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.epsilon, r.n_cover, r.n_packing));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_used: usize,
}

/// Least squares of `ln y` on `ln x` over points with `x` in `x_range`
/// (inclusive) and both coordinates positive.
pub fn fit_loglog_slope(points: &[(f64, f64)], x_range: Option<(f64, f64)>) -> Result<LogLogFit> {
    let used: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
        .filter(|(x, _)| x_range.map_or(true, |(lo, hi)| *x >= lo && *x <= hi))
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if used.len() < 3 {
        return domain(format!("need at least 3 usable points, got {}", used.len()));
    }
    let n = used.len() as f64;
    let mx = used.iter().map(|p| p.0).sum::<f64>() / n;
    let my = used.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = used.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = used.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = used.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return domain("all x values coincide");
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LogLogFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        n_used: used.len(),
    })
}
