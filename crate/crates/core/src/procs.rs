//! Gaussian process models on finite index sets.
//!
//! Every model here is a linear image of i.i.d. standard Gaussians:
//! `X(t) = sum_j w_j(t) g_j`. A [`Design`] stores the sparse weight rows for a
//! grid, and sampling, intrinsic distances and grid-sup bias bounds are all
//! derived from it.

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};
use crate::exec::Execution;
use crate::gaussmath::{GaussianStream, SeedSpec};
use crate::loud::{padic_grid, sawtooth_ratio, LoudFamily, PadicPoint, Ratio, DEFAULT_TAIL_TOL};
use crate::ultra::ZProcess;

/// A point of a model's index set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Index {
    Time(PadicPoint),
    Term(u64),
    Infinity,
    Leaf(usize),
}

impl Index {
    /// Position on the real line for time indices; `n` for terms.
    pub fn coordinate(&self) -> f64 {
        match self {
            Index::Time(t) => t.to_f64(),
            Index::Term(n) => *n as f64,
            Index::Infinity => f64::INFINITY,
            Index::Leaf(i) => *i as f64,
        }
    }
}

pub fn time_grid(base: u64, exp: u32) -> Result<Vec<Index>> {
    Ok(padic_grid(base, exp)?.into_iter().map(Index::Time).collect())
}

/// `{1, ..., n_max} ∪ {∞}`.
pub fn sequence_grid(n_max: u64) -> Vec<Index> {
    (1..=n_max)
        .map(Index::Term)
        .chain(std::iter::once(Index::Infinity))
        .collect()
}

pub fn leaf_grid(n_leaves: usize) -> Vec<Index> {
    (0..n_leaves).map(Index::Leaf).collect()
}

/// Base and exponent of a grid that is exactly `j / base^exp`, `j = 0..=base^exp`.
pub fn uniform_grid_exp(grid: &[Index]) -> Option<(u64, u32)> {
    let Some(Index::Time(first)) = grid.first() else {
        return None;
    };
    let (base, exp) = (first.base, first.exp);
    let n = (base as u128).checked_pow(exp)?;
    if grid.len() as u128 != n + 1 {
        return None;
    }
    let ok = grid.iter().enumerate().all(|(j, ix)| {
        matches!(ix, Index::Time(t) if t.base == base && t.exp == exp && t.num == j as u128)
    });
    ok.then_some((base, exp))
}

/// Increasing weight `phi` of an independent sequence `G_n = g_n / phi(n)`.
pub trait SequenceWeight: Debug + Send + Sync {
    /// `phi(x)` for real `x >= 1`.
    fn value(&self, x: f64) -> f64;

    /// `phi(exp(ln_x))`, usable far beyond the range of `f64` arguments.
    fn value_ln(&self, ln_x: f64) -> f64;

    /// `ln x` for the real solution of `phi(x) = y`, `y > phi(1)`.
    fn ln_inverse_real(&self, y: f64) -> f64;

    fn label(&self) -> String;

    /// `ln min{n >= 1 : phi(n) >= y}`. Exact for results below 2^52; beyond
    /// that the rounding to an integer is below `f64` resolution.
    fn ln_generalized_inverse(&self, y: f64) -> f64 {
        match self.generalized_inverse(y) {
            Some(n) => (n as f64).ln(),
            None => self.ln_inverse_real(y),
        }
    }

    /// `min{n >= 1 : phi(n) >= y}` when it is below 2^52.
    fn generalized_inverse(&self, y: f64) -> Option<u64> {
        if y <= self.value(1.0) {
            return Some(1);
        }
        let lx = self.ln_inverse_real(y);
        if lx >= 52.0 * std::f64::consts::LN_2 {
            return None;
        }
        let mut n = (lx.exp().ceil() as u64).max(1);
        while n > 1 && self.value((n - 1) as f64) >= y {
            n -= 1;
        }
        while self.value(n as f64) < y {
            n += 1;
        }
        Some(n)
    }
}

fn shifted_ln(ln_x: f64) -> f64 {
    // ln(x + 2) from ln x
    ln_x + (2.0 * (-ln_x).exp()).ln_1p()
}

fn unshift_ln(l: f64) -> f64 {
    // ln(x) from ln(x + 2) = l
    l + (-2.0 * (-l).exp()).ln_1p()
}

/// `phi(n) = (ln(n + 2))^beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogPower {
    pub beta: f64,
}

impl SequenceWeight for LogPower {
    fn value(&self, x: f64) -> f64 {
        (x + 2.0).ln().powf(self.beta)
    }

    fn value_ln(&self, ln_x: f64) -> f64 {
        shifted_ln(ln_x).powf(self.beta)
    }

    fn ln_inverse_real(&self, y: f64) -> f64 {
        unshift_ln(y.powf(1.0 / self.beta))
    }

    fn label(&self) -> String {
        format!("(ln(n+2))^{}", self.beta)
    }
}

/// `phi(n) = (ln(n + 2))^(1/2) (ln ln(n + 2))^(1 + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogPower {
    pub h: f64,
}

impl LogLogPower {
    fn of_l(&self, l: f64) -> f64 {
        l.sqrt() * l.ln().powf(1.0 + self.h)
    }
}

impl SequenceWeight for LogLogPower {
    fn value(&self, x: f64) -> f64 {
        self.of_l((x + 2.0).ln())
    }

    fn value_ln(&self, ln_x: f64) -> f64 {
        self.of_l(shifted_ln(ln_x))
    }

    fn ln_inverse_real(&self, y: f64) -> f64 {
        let mut lo = 3f64.ln();
        let mut hi = 2.0 * lo;
        while self.of_l(hi) < y {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.of_l(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        unshift_ln(hi)
    }

    fn label(&self) -> String {
        format!("(ln(n+2))^0.5 (ln ln(n+2))^{}", 1.0 + self.h)
    }
}

/// Serializable choice of sequence weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum WeightSpec {
    LogPower { beta: f64 },
    LogLogPower { h: f64 },
}

impl WeightSpec {
    pub fn build(&self) -> Result<Arc<dyn SequenceWeight>> {
        match *self {
            WeightSpec::LogPower { beta } => {
                if !(beta > 0.0 && beta.is_finite()) {
                    return invalid(format!("beta must be positive, got {beta}"));
                }
                Ok(Arc::new(LogPower { beta }))
            }
            WeightSpec::LogLogPower { h } => {
                if !(h > 0.0 && h.is_finite()) {
                    return invalid(format!("h must be positive, got {h}"));
                }
                Ok(Arc::new(LogLogPower { h }))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifshitsSpec {
    alpha: f64,
    tail_tol: f64,
    n_terms: u32,
}

impl LifshitsSpec {
    pub fn new(alpha: f64, tail_tol: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return invalid(format!("alpha must lie in (0,2), got {alpha}"));
        }
        if !(tail_tol > 0.0) {
            return invalid("tail_tol must be positive");
        }
        let q = 2f64.powf(-alpha / 2.0);
        let mut n = 1;
        while q.powi(n as i32 + 1) / (1.0 - q) >= tail_tol {
            n += 1;
        }
        Ok(Self {
            alpha,
            tail_tol,
            n_terms: n,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_terms(&self) -> u32 {
        self.n_terms
    }

    /// Weight of `g_0` is `t`; weight of `g_n` is `2^(-alpha n / 2) psi(2^n t)`.
    fn weights(&self, t: &Ratio) -> Vec<(u32, f64)> {
        let mut w = Vec::with_capacity(self.n_terms as usize + 1);
        if t.num != 0 {
            w.push((0, t.to_f64()));
        }
        for n in 1..=self.n_terms {
            // psi(2^n t) is the saw-tooth of half-period 2^-(n+1)
            let v = 2f64.powf(-self.alpha * n as f64 / 2.0) * sawtooth_ratio(t, 2, n as u64 + 1);
            if v != 0.0 {
                w.push((n, v));
            }
        }
        w
    }
}

/// Sum over pairwise coprime `p` of `a_p g_p f_p(t)` with `f_p` the Loud
/// function of `(p, 1, alpha_p)` and `a_p = 2^(-beta p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AperiodicSpec {
    primes: Vec<u64>,
    alphas: Vec<f64>,
    beta: f64,
    families: Vec<LoudFamily>,
}

/// `alpha_p = 1 / (2 ln p (1 + ln ln p))`, which stays below 1/2 for every
/// `p >= 3` and makes `alpha_p ln p` strictly decreasing.
pub fn default_alpha(p: u64) -> f64 {
    let l = (p as f64).ln();
    1.0 / (2.0 * l * (1.0 + l.ln()))
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl AperiodicSpec {
    pub fn new(primes: Vec<u64>, alphas: Vec<f64>, beta: f64) -> Result<Self> {
        if primes.is_empty() {
            return invalid("prime_set is empty");
        }
        if primes.len() != alphas.len() {
            return invalid("prime_set and alpha_of_p differ in length");
        }
        if !(beta > 0.0 && beta < 1.0) {
            return invalid(format!("beta must lie in (0,1), got {beta}"));
        }
        for (i, &p) in primes.iter().enumerate() {
            if p <= 2 {
                return invalid(format!("prime_set entries must exceed 2, got {p}"));
            }
            if i > 0 && p <= primes[i - 1] {
                return invalid("prime_set must be strictly increasing");
            }
            for &q in &primes[..i] {
                if gcd(p, q) != 1 {
                    return invalid(format!("{q} and {p} are not coprime"));
                }
            }
        }
        for (i, &a) in alphas.iter().enumerate() {
            if !(a > 0.0 && a < 0.5) {
                return invalid(format!("alpha_p must lie in (0,1/2), got {a} for p={}", primes[i]));
            }
            if i > 0 && a > alphas[i - 1] {
                return invalid("alpha_p must be nonincreasing in p");
            }
        }
        let families = primes
            .iter()
            .zip(&alphas)
            .map(|(&p, &a)| LoudFamily::new(p, 1, a))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            primes,
            alphas,
            beta,
            families,
        })
    }

    /// The set `{3, 5, 7, 11, 13}` with [`default_alpha`] and `beta = 1/4`.
    pub fn default_instance() -> Self {
        let primes = vec![3, 5, 7, 11, 13];
        let alphas = primes.iter().map(|&p| default_alpha(p)).collect();
        Self::new(primes, alphas, 0.25).expect("default instance is valid")
    }

    pub fn primes(&self) -> &[u64] {
        &self.primes
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn families(&self) -> &[LoudFamily] {
        &self.families
    }

    pub fn coefficient(&self, i: usize) -> f64 {
        2f64.powf(-self.beta * self.primes[i] as f64)
    }

    /// Sum of the truncation tolerances weighted by `a_p`.
    pub fn tail_bound(&self) -> f64 {
        (0..self.primes.len())
            .map(|i| self.coefficient(i) * self.families[i].tail_tol())
            .sum()
    }

    fn weights(&self, t: &Ratio) -> Vec<(u32, f64)> {
        (0..self.primes.len())
            .filter_map(|i| {
                let v = self.coefficient(i) * self.families[i].f_ratio(t);
                (v != 0.0).then_some((i as u32, v))
            })
            .collect()
    }

    /// `||X(s) - X(t)||_2` at arbitrary rationals.
    pub fn distance_ratio(&self, s: &Ratio, t: &Ratio) -> f64 {
        (0..self.primes.len())
            .map(|i| {
                let f = &self.families[i];
                (self.coefficient(i) * (f.f_ratio(s) - f.f_ratio(t))).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Finite-set surrogates of the growth conditions on `alpha_p`.
    pub fn condition_report(&self, h_grid: &[f64]) -> AperiodicConditions {
        let alpha_log_p: Vec<f64> = self
            .primes
            .iter()
            .zip(&self.alphas)
            .map(|(&p, &a)| a * (p as f64).ln())
            .collect();
        let decreasing = alpha_log_p.windows(2).all(|w| w[1] < w[0]);
        let increasing_for = |h: f64| {
            let v: Vec<f64> = self
                .primes
                .iter()
                .zip(&alpha_log_p)
                .map(|(&p, &al)| (h * p as f64 * std::f64::consts::LN_2).exp() * al)
                .collect();
            v.windows(2).all(|w| w[1] > w[0])
        };
        let mut hs: Vec<f64> = h_grid.to_vec();
        hs.sort_by(f64::total_cmp);
        let h_increasing: Vec<(f64, bool)> = hs.iter().map(|&h| (h, increasing_for(h))).collect();
        let min_h = h_increasing.iter().find(|(_, ok)| *ok).map(|(h, _)| *h);
        AperiodicConditions {
            alpha_log_p,
            alpha_log_p_decreasing: decreasing,
            alphas_below_half: self.alphas.iter().all(|&a| a < 0.5),
            h_increasing,
            min_h_increasing: min_h,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AperiodicConditions {
    /// `alpha_p ln p` for each `p`; the limit condition asks that it vanish.
    pub alpha_log_p: Vec<f64>,
    pub alpha_log_p_decreasing: bool,
    pub alphas_below_half: bool,
    /// For each tested `h`: whether `2^(h p) alpha_p ln p` increases over the set.
    pub h_increasing: Vec<(f64, bool)>,
    pub min_h_increasing: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    ScaledLoud,
    LoudSeries,
    Lifshits,
    AperiodicCoprime,
    IndependentSequence,
    UltrametricZ,
}

/// Serializable constructor arguments for [`build_process`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessParams {
    ScaledLoud {
        p: u64,
        a: u32,
        alpha: f64,
        #[serde(default = "default_tol")]
        tail_tol: f64,
    },
    LoudSeries {
        p: u64,
        a: u32,
        alpha: f64,
        #[serde(default = "default_tol")]
        tail_tol: f64,
    },
    Lifshits {
        alpha: f64,
        #[serde(default = "default_tol")]
        tail_tol: f64,
    },
    AperiodicCoprime {
        primes: Vec<u64>,
        /// Defaults to [`default_alpha`] per entry.
        #[serde(default)]
        alphas: Option<Vec<f64>>,
        beta: f64,
    },
    IndependentSequence {
        weight: WeightSpec,
        n_max: u64,
    },
    /// Balanced tree with `branching^depth` leaves and diameter `diameter`.
    UltrametricZ {
        branching: usize,
        depth: usize,
        diameter: f64,
    },
}

fn default_tol() -> f64 {
    DEFAULT_TAIL_TOL
}

#[derive(Debug, Clone)]
pub enum ProcessModel {
    /// `X(t) = g f(t)`.
    ScaledLoud(LoudFamily),
    /// `X(t) = sum_k g_k phi_k(t)`.
    LoudSeries(LoudFamily),
    Lifshits(LifshitsSpec),
    Aperiodic(AperiodicSpec),
    /// `G_n = g_n / phi(n)`, `G_inf = 0`, sampled for `n <= n_max`.
    Sequence {
        phi: Arc<dyn SequenceWeight>,
        n_max: u64,
    },
    Ultrametric(Arc<ZProcess>),
}

pub fn build_process(params: &ProcessParams) -> Result<ProcessModel> {
    Ok(match params {
        ProcessParams::ScaledLoud {
            p,
            a,
            alpha,
            tail_tol,
        } => ProcessModel::ScaledLoud(LoudFamily::with_tol(*p, *a, *alpha, *tail_tol)?),
        ProcessParams::LoudSeries {
            p,
            a,
            alpha,
            tail_tol,
        } => ProcessModel::LoudSeries(LoudFamily::with_tol(*p, *a, *alpha, *tail_tol)?),
        ProcessParams::Lifshits { alpha, tail_tol } => {
            ProcessModel::Lifshits(LifshitsSpec::new(*alpha, *tail_tol)?)
        }
        ProcessParams::AperiodicCoprime {
            primes,
            alphas,
            beta,
        } => {
            let alphas = alphas
                .clone()
                .unwrap_or_else(|| primes.iter().map(|&p| default_alpha(p)).collect());
            ProcessModel::Aperiodic(AperiodicSpec::new(primes.clone(), alphas, *beta)?)
        }
        ProcessParams::IndependentSequence { weight, n_max } => {
            if *n_max == 0 {
                return invalid("n_max must be positive");
            }
            ProcessModel::Sequence {
                phi: weight.build()?,
                n_max: *n_max,
            }
        }
        ProcessParams::UltrametricZ {
            branching,
            depth,
            diameter,
        } => {
            let tree = crate::ultra::UltrametricTree::balanced(*branching, *depth, *diameter)?;
            ProcessModel::Ultrametric(Arc::new(ZProcess::new(Arc::new(tree))))
        }
    })
}

/// Sparse weight rows of a model on a grid, in compressed row form.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    n_coeffs: usize,
    offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl Design {
    pub fn from_rows(n_coeffs: usize, rows: Vec<Vec<(u32, f64)>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        offsets.push(0);
        for row in rows {
            for (c, v) in row.into_iter().filter(|&(_, v)| v != 0.0) {
                cols.push(c);
                vals.push(v);
            }
            offsets.push(cols.len());
        }
        Self {
            n_coeffs,
            offsets,
            cols,
            vals,
        }
    }

    pub fn n_points(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.cols[r.clone()]
            .iter()
            .zip(&self.vals[r])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn value(&self, i: usize, g: &[f64]) -> f64 {
        self.row(i).map(|(c, v)| v * g[c]).sum()
    }

    pub fn std_dev(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn eval(&self, g: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.value(i, g);
        }
    }

    pub fn sup_abs(&self, g: &[f64]) -> f64 {
        (0..self.n_points())
            .map(|i| self.value(i, g).abs())
            .fold(0.0, f64::max)
    }

    /// Coefficient draw of path `path` under `seed`.
    pub fn draw(&self, seed: SeedSpec, path: u64, g: &mut [f64]) {
        GaussianStream::new(seed.substream(path)).fill(&mut g[..self.n_coeffs]);
    }

    /// `E X(s) X(t)` for grid positions `i`, `j`.
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        let mut acc = 0.0;
        let mut b = self.row(j).peekable();
        for (c, v) in self.row(i) {
            while let Some(&(cb, _)) = b.peek() {
                if cb < c {
                    b.next();
                } else {
                    break;
                }
            }
            if let Some(&(cb, vb)) = b.peek() {
                if cb == c {
                    acc += v * vb;
                }
            }
        }
        acc
    }
}

/// Sampled paths, one row per path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMatrix {
    pub n_paths: usize,
    pub n_points: usize,
    pub data: Vec<f64>,
}

impl PathMatrix {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.n_points..(r + 1) * self.n_points]
    }
}

/// Default cap on `n_paths * grid_len` for [`ProcessModel::sample_paths`].
pub const DEFAULT_PATH_BUDGET: u128 = 1 << 26;

/// How the supremum over the full index set can exceed the grid supremum.
#[derive(Debug, Clone, PartialEq)]
pub enum GridExcess {
    /// The grid is the whole index set.
    Exact,
    /// `sup |X| <= sup_grid |X| + sum_j w_j |g_j'|` with `g_j'` standard
    /// Gaussians (not necessarily independent).
    Remainder(Vec<f64>),
    /// Terms beyond `n_max` of an independent sequence are missing.
    SequenceTail { n_max: u64 },
    Unknown,
}

impl ProcessModel {
    pub fn kind(&self) -> ProcessKind {
        match self {
            ProcessModel::ScaledLoud(_) => ProcessKind::ScaledLoud,
            ProcessModel::LoudSeries(_) => ProcessKind::LoudSeries,
            ProcessModel::Lifshits(_) => ProcessKind::Lifshits,
            ProcessModel::Aperiodic(_) => ProcessKind::AperiodicCoprime,
            ProcessModel::Sequence { .. } => ProcessKind::IndependentSequence,
            ProcessModel::Ultrametric(_) => ProcessKind::UltrametricZ,
        }
    }

    pub fn n_coeffs(&self) -> usize {
        match self {
            ProcessModel::ScaledLoud(_) => 1,
            ProcessModel::LoudSeries(f) => f.n_terms() as usize,
            ProcessModel::Lifshits(l) => l.n_terms as usize + 1,
            ProcessModel::Aperiodic(a) => a.primes.len(),
            ProcessModel::Sequence { n_max, .. } => *n_max as usize,
            ProcessModel::Ultrametric(z) => z.n_coeffs(),
        }
    }

    fn time_ratio(&self, t: &Index) -> Result<(PadicPoint, Option<Ratio>)> {
        let Index::Time(p) = t else {
            return domain(format!("{:?} expects time indices, got {t:?}", self.kind()));
        };
        let x = p.to_f64();
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::OutOfRange(format!("time {x} outside [0,1]")));
        }
        Ok((*p, Ratio::try_from(*p).ok()))
    }

    /// Sparse coefficient weights of `X(t)`, sorted by coefficient index.
    pub fn weights(&self, t: &Index) -> Result<Vec<(u32, f64)>> {
        match self {
            ProcessModel::ScaledLoud(f) => {
                let (p, _) = self.time_ratio(t)?;
                let v = f.f_at(&p);
                Ok(if v != 0.0 { vec![(0, v)] } else { vec![] })
            }
            ProcessModel::LoudSeries(f) => {
                let (p, _) = self.time_ratio(t)?;
                Ok((1..=f.n_terms())
                    .filter_map(|k| {
                        let v = f.basis_at(k, &p);
                        (v != 0.0).then_some((k - 1, v))
                    })
                    .collect())
            }
            ProcessModel::Lifshits(l) => {
                let (_, r) = self.time_ratio(t)?;
                let r = r.ok_or_else(|| Error::OutOfRange("denominator too large".into()))?;
                Ok(l.weights(&r))
            }
            ProcessModel::Aperiodic(a) => {
                let (_, r) = self.time_ratio(t)?;
                let r = r.ok_or_else(|| Error::OutOfRange("denominator too large".into()))?;
                Ok(a.weights(&r))
            }
            ProcessModel::Sequence { phi, n_max } => match *t {
                Index::Term(n) if n >= 1 && n <= *n_max => {
                    Ok(vec![((n - 1) as u32, 1.0 / phi.value(n as f64))])
                }
                Index::Term(n) => Err(Error::OutOfRange(format!(
                    "term {n} outside 1..={n_max}"
                ))),
                Index::Infinity => Ok(vec![]),
                _ => domain("sequence models expect term indices"),
            },
            ProcessModel::Ultrametric(z) => match *t {
                Index::Leaf(i) => z.leaf_weights(i),
                _ => domain("ultrametric models expect leaf indices"),
            },
        }
    }

    pub fn design(&self, grid: &[Index]) -> Result<Design> {
        let rows = grid
            .iter()
            .map(|t| self.weights(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Design::from_rows(self.n_coeffs(), rows))
    }

    /// `||X(s) - X(t)||_2`.
    pub fn intrinsic_distance(&self, s: &Index, t: &Index) -> Result<f64> {
        match self {
            ProcessModel::Sequence { phi, .. } => {
                let inv = |i: &Index| -> Result<f64> {
                    match *i {
                        Index::Term(n) if n >= 1 => Ok(1.0 / phi.value(n as f64)),
                        Index::Infinity => Ok(0.0),
                        _ => domain(format!("bad sequence index {i:?}")),
                    }
                };
                let (a, b) = (inv(s)?, inv(t)?);
                if s == t {
                    return Ok(0.0);
                }
                Ok((a * a + b * b).sqrt())
            }
            ProcessModel::Ultrametric(z) => match (*s, *t) {
                (Index::Leaf(i), Index::Leaf(j)) => z.distance(i, j),
                _ => domain("ultrametric models expect leaf indices"),
            },
            _ => {
                if s == t {
                    self.weights(s)?;
                    return Ok(0.0);
                }
                let (a, b) = (self.weights(s)?, self.weights(t)?);
                Ok(sparse_diff_norm(&a, &b))
            }
        }
    }

    pub fn std_dev(&self, t: &Index) -> Result<f64> {
        match (self, t) {
            (ProcessModel::Sequence { phi, .. }, Index::Term(n)) if *n >= 1 => {
                Ok(1.0 / phi.value(*n as f64))
            }
            (ProcessModel::Ultrametric(z), Index::Leaf(i)) => Ok(z.variance(*i)?.sqrt()),
            _ => Ok(self.weights(t)?.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()),
        }
    }

    /// `max_t ||X(t)||_2` over the grid.
    pub fn sup_sigma(&self, grid: &[Index]) -> Result<f64> {
        grid.iter()
            .map(|t| self.std_dev(t))
            .try_fold(0.0f64, |m, s| Ok(m.max(s?)))
    }

    /// The grid the model is usually evaluated on.
    pub fn default_grid(&self) -> Result<Vec<Index>> {
        match self {
            ProcessModel::ScaledLoud(f) | ProcessModel::LoudSeries(f) if f.p() == 2 => {
                time_grid(2, 12)
            }
            ProcessModel::ScaledLoud(f) | ProcessModel::LoudSeries(f) => {
                // largest exponent with at most 2^12 cells
                let e = (12.0 / (f.p() as f64).log2()).floor() as u32;
                time_grid(f.p(), e.max(1))
            }
            ProcessModel::Lifshits(_) | ProcessModel::Aperiodic(_) => time_grid(2, 12),
            ProcessModel::Sequence { n_max, .. } => Ok(sequence_grid(*n_max)),
            ProcessModel::Ultrametric(z) => Ok(leaf_grid(z.n_leaves())),
        }
    }

    /// Bound on how far the supremum over the full index set can exceed the
    /// supremum over `grid`.
    pub fn grid_excess(&self, grid: &[Index]) -> GridExcess {
        match self {
            ProcessModel::Ultrametric(z) => {
                let all = grid.len() == z.n_leaves()
                    && grid.iter().enumerate().all(|(i, t)| *t == Index::Leaf(i));
                if all {
                    GridExcess::Exact
                } else {
                    GridExcess::Unknown
                }
            }
            ProcessModel::Sequence { n_max, .. } => {
                let all = grid.len() as u64 == n_max + 1
                    && grid.iter().take(*n_max as usize).enumerate().all(|(i, t)| *t == Index::Term(i as u64 + 1))
                    && grid.last() == Some(&Index::Infinity);
                if all {
                    GridExcess::SequenceTail { n_max: *n_max }
                } else {
                    GridExcess::Unknown
                }
            }
            _ => {
                let Some((base, exp)) = uniform_grid_exp(grid) else {
                    return GridExcess::Unknown;
                };
                let half_mesh = 0.5 * (base as f64).powi(-(exp as i32));
                match self {
                    ProcessModel::ScaledLoud(f) => GridExcess::Remainder(vec![
                        f.constants().k_script * half_mesh.powf(f.alpha()),
                    ]),
                    ProcessModel::LoudSeries(f) => {
                        // teeth whose breakpoints are grid points are linear on
                        // each cell; the finer ones contribute at most twice
                        // their height
                        let aligned = base == f.p();
                        let kmax = 3 * f.n_terms() + 10;
                        GridExcess::Remainder(
                            (1..=kmax)
                                .filter(|&k| !aligned || 2 * f.a() * k > exp)
                                .map(|k| 2.0 * f.amplitude(k))
                                .collect(),
                        )
                    }
                    ProcessModel::Lifshits(l) => {
                        let kmax = 3 * l.n_terms + 10;
                        let aligned = base == 2;
                        GridExcess::Remainder(
                            (1..=kmax)
                                .filter(|&n| !aligned || n + 1 > exp)
                                .map(|n| 2.0 * 2f64.powf(-l.alpha * n as f64 / 2.0))
                                .collect(),
                        )
                    }
                    ProcessModel::Aperiodic(a) => GridExcess::Remainder(
                        (0..a.primes.len())
                            .map(|i| {
                                let f = &a.families[i];
                                a.coefficient(i) * f.constants().k_script * half_mesh.powf(f.alpha())
                            })
                            .collect(),
                    ),
                    _ => unreachable!(),
                }
            }
        }
    }

    pub fn sample_paths(
        &self,
        grid: &[Index],
        n_paths: usize,
        seed: SeedSpec,
        exec: Execution,
    ) -> Result<PathMatrix> {
        self.sample_paths_with_budget(grid, n_paths, seed, exec, DEFAULT_PATH_BUDGET)
    }

    /// Row `r` is the realization drawn from `seed.substream(r)`.
    pub fn sample_paths_with_budget(
        &self,
        grid: &[Index],
        n_paths: usize,
        seed: SeedSpec,
        exec: Execution,
        budget: u128,
    ) -> Result<PathMatrix> {
        let requested = n_paths as u128 * grid.len() as u128;
        if requested > budget {
            return Err(Error::Budget {
                what: "path matrix entries",
                requested,
                limit: budget,
            });
        }
        let design = self.design(grid)?;
        let n_points = grid.len();
        let mut data = vec![0.0; n_paths * n_points];
        if n_points > 0 {
            let mut rows: Vec<&mut [f64]> = data.chunks_mut(n_points).collect();
            exec.for_each_mut(&mut rows, |r, row| {
                let mut g = vec![0.0; design.n_coeffs()];
                design.draw(seed, r as u64, &mut g);
                design.eval(&g, row);
            });
        }
        Ok(PathMatrix {
            n_paths,
            n_points,
            data,
        })
    }

    pub fn as_loud(&self) -> Option<&LoudFamily> {
        match self {
            ProcessModel::ScaledLoud(f) | ProcessModel::LoudSeries(f) => Some(f),
            _ => None,
        }
    }
}

fn sparse_diff_norm(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() || j < b.len() {
        let ca = a.get(i).map_or(u32::MAX, |x| x.0);
        let cb = b.get(j).map_or(u32::MAX, |x| x.0);
        let d = if ca == cb {
            let d = a[i].1 - b[j].1;
            i += 1;
            j += 1;
            d
        } else if ca < cb {
            i += 1;
            a[i - 1].1
        } else {
            j += 1;
            b[j - 1].1
        };
        acc += d * d;
    }
    acc.sqrt()
}

/// Smallest observed `d(s,t) / |s-t|^(alpha/2)` over dyadic lags `2^-j`,
/// `j = 1..=max_j`, starting from every point of the `2^grid_exp` grid.
pub fn lifshits_fit_constant(spec: &LifshitsSpec, grid_exp: u32, max_j: u32) -> Result<f64> {
    let model = ProcessModel::Lifshits(*spec);
    let mut c = f64::INFINITY;
    for j in 1..=max_j.min(grid_exp) {
        let step = 1u128 << (grid_exp - j);
        let lag = 2f64.powi(-(j as i32));
        let mut s = 0u128;
        while s + step <= 1u128 << grid_exp {
            let a = Index::Time(PadicPoint::new(s, 2, grid_exp));
            let b = Index::Time(PadicPoint::new(s + step, 2, grid_exp));
            c = c.min(model.intrinsic_distance(&a, &b)? / lag.powf(spec.alpha / 2.0));
            s += step;
        }
    }
    Ok(c)
}

/// One special-lag check of the aperiodic construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AperiodicLagCheck {
    pub p: u64,
    pub m: u32,
    pub checks: u64,
    pub violations: u64,
    /// Smallest `||X(s)-X(t)||_2 / (a_p kappa_p |s-t|^alpha_p)` observed.
    pub min_ratio: f64,
}

/// Checks `||X(s) - X(t)||_2 >= a_p kappa_p |s - t|^(alpha_p)` at
/// `|s - t| = p^(-2(m+1))` for `m` in `lags`, over `s = j p^(-2(m+1))` with
/// `j` stepping through `[0, 1)` in at most `max_starts` equal strides.
pub fn aperiodic_lag_checks(
    spec: &AperiodicSpec,
    lags: std::ops::RangeInclusive<u32>,
    max_starts: u64,
) -> Result<Vec<AperiodicLagCheck>> {
    let slack = 2.0 * spec.tail_bound();
    let mut out = Vec::new();
    for (i, &p) in spec.primes.iter().enumerate() {
        let fam = &spec.families[i];
        let kappa = fam.constants().kappa;
        let a_p = spec.coefficient(i);
        for m in lags.clone() {
            let den = (p as u128)
                .checked_pow(2 * (m + 1))
                .filter(|&d| d <= crate::loud::MAX_RATIO_DEN)
                .ok_or_else(|| Error::OutOfRange(format!("lag {p}^-{} too fine", 2 * (m + 1))))?;
            let lag = 1.0 / den as f64;
            let bound = a_p * kappa * lag.powf(fam.alpha());
            let stride = (den / max_starts as u128).max(1);
            let mut check = AperiodicLagCheck {
                p,
                m,
                checks: 0,
                violations: 0,
                min_ratio: f64::INFINITY,
            };
            let mut j = 0u128;
            while j + 1 <= den {
                let s = Ratio::new(j, den)?;
                let t = Ratio::new(j + 1, den)?;
                let d = spec.distance_ratio(&s, &t);
                check.checks += 1;
                if d < bound - slack {
                    check.violations += 1;
                }
                check.min_ratio = check.min_ratio.min(d / bound);
                j += stride;
            }
            out.push(check);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loud() -> LoudFamily {
        LoudFamily::new(2, 2, 0.5).unwrap()
    }

    #[test]
    fn sequence_distances() {
        let m = build_process(&ProcessParams::IndependentSequence {
            weight: WeightSpec::LogPower { beta: 1.0 },
            n_max: 100,
        })
        .unwrap();
        let phi = |n: f64| (n + 2.0).ln();
        let (a, b) = (Index::Term(3), Index::Term(7));
        assert_eq!(m.intrinsic_distance(&a, &a).unwrap(), 0.0);
        let expect = (phi(3.0).powi(-2) + phi(7.0).powi(-2)).sqrt();
        assert!((m.intrinsic_distance(&a, &b).unwrap() - expect).abs() < 1e-15);
        assert!((m.intrinsic_distance(&a, &Index::Infinity).unwrap() - 1.0 / phi(3.0)).abs() < 1e-15);
        assert_eq!(m.sup_sigma(&sequence_grid(100)).unwrap(), 1.0 / phi(1.0));
    }

    #[test]
    fn generalized_inverse_is_minimal() {
        let w = LogPower { beta: 1.0 };
        for &y in &[0.5, 1.0986, 2.0, 3.7, 10.0] {
            let n = w.generalized_inverse(y).unwrap();
            assert!(w.value(n as f64) >= y);
            assert!(n == 1 || w.value((n - 1) as f64) < y);
        }
        let ll = LogLogPower { h: 0.5 };
        for &y in &[0.1, 1.0, 2.0, 5.0] {
            let n = ll.generalized_inverse(y).unwrap();
            assert!(ll.value(n as f64) >= y);
            assert!(n == 1 || ll.value((n - 1) as f64) < y);
        }
        // far beyond f64 range
        let lx = w.ln_generalized_inverse(1e6);
        assert!((lx - 1e6).abs() < 1e-6);
        assert!((w.value_ln(lx) - 1e6).abs() < 1e-6);
    }

    #[test]
    fn scaled_loud_paths_are_rank_one() {
        let m = ProcessModel::ScaledLoud(loud());
        let grid = time_grid(2, 8).unwrap();
        let paths = m.sample_paths(&grid, 20, SeedSpec::new(1, 0), Execution::Parallel).unwrap();
        let t0 = 1;
        let f0 = loud().f_at(&PadicPoint::new(1, 2, 8));
        assert!(f0 != 0.0);
        for r in 0..paths.n_paths {
            let row = paths.row(r);
            for (j, t) in grid.iter().enumerate() {
                let Index::Time(p) = t else { unreachable!() };
                let expect = loud().f_at(p) / f0;
                assert!((row[j] / row[t0] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_and_budget() {
        let m = ProcessModel::LoudSeries(loud());
        let grid = time_grid(2, 4).unwrap();
        let p = m.sample_paths(&grid, 0, SeedSpec::new(0, 0), Execution::Sequential).unwrap();
        assert!(p.data.is_empty());
        let err = m
            .sample_paths_with_budget(&grid, 10, SeedSpec::new(0, 0), Execution::Sequential, 100)
            .unwrap_err();
        assert!(matches!(err, Error::Budget { .. }));
    }

    #[test]
    fn sampling_is_worker_independent() {
        let m = ProcessModel::LoudSeries(loud());
        let grid = time_grid(2, 6).unwrap();
        let seed = SeedSpec::new(42, 7);
        let a = m.sample_paths(&grid, 64, seed, Execution::Sequential).unwrap();
        let b = m.sample_paths(&grid, 64, seed, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loud_series_distance_matches_family() {
        let f = loud();
        let m = ProcessModel::LoudSeries(f);
        let s = PadicPoint::new(3, 2, 10);
        let t = PadicPoint::new(700, 2, 10);
        let d = m.intrinsic_distance(&Index::Time(s), &Index::Time(t)).unwrap();
        assert!((d - f.l2_increment_at(&s, &t)).abs() < 1e-15);
        let sc = ProcessModel::ScaledLoud(f);
        let d1 = sc.intrinsic_distance(&Index::Time(s), &Index::Time(t)).unwrap();
        assert!((d1 - (f.f_at(&s) - f.f_at(&t)).abs()).abs() < 1e-15);
    }

    #[test]
    fn empirical_covariance_matches_design() {
        let m = ProcessModel::LoudSeries(loud());
        let grid = vec![
            Index::Time(PadicPoint::new(5, 2, 8)),
            Index::Time(PadicPoint::new(77, 2, 8)),
        ];
        let design = m.design(&grid).unwrap();
        let n = 100_000;
        let paths = m.sample_paths(&grid, n, SeedSpec::new(9, 1), Execution::Parallel).unwrap();
        let mut c = 0.0;
        for r in 0..n {
            let row = paths.row(r);
            c += row[0] * row[1];
        }
        c /= n as f64;
        let exact = design.covariance(0, 1);
        let scale = design.std_dev(0) * design.std_dev(1);
        assert!((c - exact).abs() < 5.0 * scale / (n as f64).sqrt(), "{c} vs {exact}");

        let mut d2 = 0.0;
        for r in 0..n {
            let row = paths.row(r);
            d2 += (row[0] - row[1]).powi(2);
        }
        let d = (d2 / n as f64).sqrt();
        let exact_d = m.intrinsic_distance(&grid[0], &grid[1]).unwrap();
        assert!((d - exact_d).abs() < 5.0 * exact_d / (n as f64).sqrt());
    }

    #[test]
    fn aperiodic_default_instance() {
        let a = AperiodicSpec::default_instance();
        assert!(a.alphas().iter().all(|&x| x > 0.0 && x < 0.5));
        let rep = a.condition_report(&[0.05, 0.1, 0.25, 0.5, 1.0]);
        assert!(rep.alpha_log_p_decreasing);
        assert_eq!(rep.min_h_increasing, Some(0.25));
        assert!(AperiodicSpec::new(vec![3, 9], vec![0.3, 0.2], 0.25).is_err());
        assert!(AperiodicSpec::new(vec![3, 5], vec![0.6, 0.2], 0.25).is_err());
        assert!(AperiodicSpec::new(vec![2, 5], vec![0.3, 0.2], 0.25).is_err());
    }

    #[test]
    fn aperiodic_lag_bounds() {
        let a = AperiodicSpec::default_instance();
        let checks = aperiodic_lag_checks(&a, 1..=2, 400).unwrap();
        for c in &checks {
            assert_eq!(c.violations, 0, "{c:?}");
        }
    }

    #[test]
    fn lifshits_distance_and_constant() {
        let l = LifshitsSpec::new(0.5, 1e-12).unwrap();
        let m = ProcessModel::Lifshits(l);
        let a = Index::Time(PadicPoint::new(0, 2, 6));
        let b = Index::Time(PadicPoint::new(1, 2, 6));
        // d^2 = (1/64)^2 + sum_n 2^(-alpha n) psi(2^n / 64)^2
        let mut d2 = (1.0f64 / 64.0).powi(2);
        for n in 1..=l.n_terms() {
            let x = (2f64.powi(n as i32) / 64.0).fract();
            let psi = 1.0 - (2.0 * x - 1.0).abs();
            d2 += 2f64.powf(-0.5 * n as f64) * psi * psi;
        }
        assert!((m.intrinsic_distance(&a, &b).unwrap() - d2.sqrt()).abs() < 1e-12);
        let c = lifshits_fit_constant(&l, 8, 8).unwrap();
        assert!(c > 0.0 && c.is_finite());
    }

    #[test]
    fn wrong_index_kind_is_rejected() {
        let m = ProcessModel::LoudSeries(loud());
        assert!(m.weights(&Index::Term(1)).is_err());
        assert!(m.weights(&Index::Time(PadicPoint::new(3, 2, 1))).is_err());
    }

    #[test]
    fn params_round_trip() {
        let p = ProcessParams::AperiodicCoprime {
            primes: vec![3, 5],
            alphas: None,
            beta: 0.25,
        };
        let s = serde_json::to_string(&p).unwrap();
        let q: ProcessParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        assert!(build_process(&q).is_ok());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn metric_axioms_on_grid(a in 0u128..=256, b in 0u128..=256, c in 0u128..=256) {
                let m = ProcessModel::LoudSeries(LoudFamily::new(2, 2, 0.5).unwrap());
                let ix = |j| Index::Time(PadicPoint::new(j, 2, 8));
                let dab = m.intrinsic_distance(&ix(a), &ix(b)).unwrap();
                let dba = m.intrinsic_distance(&ix(b), &ix(a)).unwrap();
                let dac = m.intrinsic_distance(&ix(a), &ix(c)).unwrap();
                let dbc = m.intrinsic_distance(&ix(b), &ix(c)).unwrap();
                prop_assert_eq!(dab, dba);
                prop_assert!(dac <= dab + dbc + 1e-14);
            }
        }
    }
}
