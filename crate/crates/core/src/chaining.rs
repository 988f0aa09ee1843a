//! Nested partition chains, majorizing measures and the chaining lower bound
//! for small-ball probabilities.
//!
//! A chain `Pi_0, Pi_1, ...` with cells of diameter at most `2^-n D` and a
//! probability `mu` give
//! `H(n) = sup_t sum_{m>n} 2^-m D sqrt(ln(v(m) / mu(pi_m(t))))`, and for
//! `H(n) <= eps sigma` the small-ball probability at `2 eps sigma` is at least
//! `C exp(-N_n ln(1/eps))`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::covernum::{assign_to_centers, greedy_cover, FiniteMetricSpace};
use crate::error::{domain, invalid, Error, Result};
use crate::exec::Execution;
use crate::procs::SequenceWeight;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainLevel {
    /// Cell index of every point.
    pub cell_of: Vec<u32>,
    pub n_cells: usize,
    /// Cell of the previous level containing each cell (empty at level 0).
    pub parent: Vec<u32>,
}

/// Nested finite partitions of `0..n_points`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionChain {
    diameter: f64,
    n_points: usize,
    levels: Vec<ChainLevel>,
}

impl PartitionChain {
    /// Builds a chain from raw labels per level; labels are renumbered in order
    /// of first appearance and each level is intersected with the previous
    /// one, so the result is nested. Level 0 may be any labelling.
    pub fn from_assignments(diameter: f64, labels: Vec<Vec<usize>>) -> Result<Self> {
        let Some(first) = labels.first() else {
            return invalid("a chain needs at least one level");
        };
        let n = first.len();
        if labels.iter().any(|l| l.len() != n) {
            return invalid("every level must label every point");
        }
        let mut levels: Vec<ChainLevel> = Vec::with_capacity(labels.len());
        for raw in labels {
            let mut map = std::collections::HashMap::new();
            let mut cell_of = Vec::with_capacity(n);
            let mut parent = Vec::new();
            for (i, &lab) in raw.iter().enumerate() {
                let prev = levels.last().map(|l| l.cell_of[i]);
                let key = (prev, lab);
                let next = map.len() as u32;
                let id = *map.entry(key).or_insert_with(|| {
                    if let Some(p) = prev {
                        parent.push(p);
                    }
                    next
                });
                cell_of.push(id);
            }
            levels.push(ChainLevel {
                n_cells: map.len(),
                cell_of,
                parent,
            });
        }
        Ok(Self {
            diameter,
            n_points: n,
            levels,
        })
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// Index of the deepest level.
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, n: usize) -> &ChainLevel {
        &self.levels[n.min(self.depth())]
    }

    /// Levels past the deepest one repeat it.
    pub fn n_cells(&self, n: usize) -> usize {
        self.level(n).n_cells
    }

    pub fn cell_of(&self, t: usize, n: usize) -> usize {
        self.level(n).cell_of[t] as usize
    }

    pub fn cells(&self, n: usize) -> Vec<Vec<usize>> {
        let lvl = self.level(n);
        let mut cells = vec![Vec::new(); lvl.n_cells];
        for (t, &c) in lvl.cell_of.iter().enumerate() {
            cells[c as usize].push(t);
        }
        cells
    }

    pub fn is_fully_resolved(&self, n: usize) -> bool {
        self.n_cells(n) == self.n_points
    }

    /// Checks nestedness and that every level-`n` cell has diameter at most
    /// `2^-n D (1 + rel_tol)`; returns the number of offending cells.
    pub fn verify(&self, space: &FiniteMetricSpace, rel_tol: f64) -> Result<usize> {
        if space.n_points() != self.n_points {
            return invalid("space and chain differ in size");
        }
        for (n, lvl) in self.levels.iter().enumerate().skip(1) {
            let prev = &self.levels[n - 1];
            for t in 0..self.n_points {
                if lvl.parent[lvl.cell_of[t] as usize] != prev.cell_of[t] {
                    return Err(Error::Invariant(format!("level {n} does not refine level {}", n - 1)));
                }
            }
        }
        let mut bad = 0;
        for n in 0..self.levels.len() {
            let bound = self.diameter * 2f64.powi(-(n as i32)) * (1.0 + rel_tol);
            for cell in self.cells(n) {
                let ok = cell.iter().enumerate().all(|(a, &u)| {
                    cell[..a].iter().all(|&v| space.dist(u, v) <= bound)
                });
                if !ok {
                    bad += 1;
                }
            }
        }
        Ok(bad)
    }
}

/// Chain by greedy covers at radius `2^-(n+1) D`, nearest-center assignment
/// and intersection with the previous level, verified cell by cell.
pub fn build_partition_chain(
    space: &FiniteMetricSpace,
    depth: usize,
    exec: Execution,
) -> Result<PartitionChain> {
    if depth < 1 {
        return domain("depth must be >= 1");
    }
    if space.n_points() == 0 {
        return domain("empty space");
    }
    let d = space.diameter(exec);
    let labels: Vec<Vec<usize>> = exec.map(depth + 1, |n| {
        if n == 0 || d == 0.0 {
            return vec![0; space.n_points()];
        }
        let r = d * 2f64.powi(-(n as i32) - 1);
        let cover = greedy_cover(space, r).expect("positive radius");
        assign_to_centers(space, &cover.centers)
    });
    let chain = PartitionChain::from_assignments(d, labels)?;
    let bad = chain.verify(space, 1e-12)?;
    if bad > 0 {
        return Err(Error::Invariant(format!("{bad} cells exceed their diameter bound")));
    }
    Ok(chain)
}

/// A probability on the points of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorizingMeasure {
    weights: Vec<f64>,
}

impl MajorizingMeasure {
    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0 / n as f64; n],
        }
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return invalid("measure weights must be finite and nonnegative");
        }
        let s: f64 = w.iter().sum();
        if !(s > 0.0) {
            return invalid("measure has zero mass");
        }
        Ok(Self {
            weights: w.into_iter().map(|x| x / s).collect(),
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cell_measures(&self, chain: &PartitionChain, n: usize) -> Vec<f64> {
        let lvl = chain.level(n);
        let mut m = vec![0.0; lvl.n_cells];
        for (t, &c) in lvl.cell_of.iter().enumerate() {
            m[c as usize] += self.weights[t];
        }
        m
    }
}

/// The weights `v(m)` with `sum 1/v(m) < inf`.
#[derive(Clone)]
pub enum WeightSequence {
    /// `v(m) = m^2` (`v(0) = 1`).
    Square,
    /// `v(m) = 1 / omega(2^-m D)` with `omega(u) = u^power`.
    InversePower { power: f64, diameter: f64 },
    Custom(Arc<dyn Fn(usize) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for WeightSequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightSequence::Square => write!(f, "Square"),
            WeightSequence::InversePower { power, diameter } => {
                write!(f, "InversePower({power}, {diameter})")
            }
            WeightSequence::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl WeightSequence {
    pub fn ln_v(&self, m: usize) -> f64 {
        match self {
            WeightSequence::Square => 2.0 * (m.max(1) as f64).ln(),
            WeightSequence::InversePower { power, diameter } => {
                -power * (diameter.ln() - m as f64 * std::f64::consts::LN_2)
            }
            WeightSequence::Custom(f) => f(m).ln(),
        }
    }

    /// Partial sum of `1/v(m)` up to `cutoff`, with the last term, as a
    /// numerical summability certificate for monotone families.
    pub fn summability(&self, cutoff: usize) -> (f64, f64) {
        let terms: Vec<f64> = (0..=cutoff).map(|m| (-self.ln_v(m)).exp()).collect();
        (terms.iter().sum(), *terms.last().unwrap())
    }
}

/// `H(n)` split into the part summed explicitly and a bound on the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HValue {
    pub value: f64,
    pub tail_bound: f64,
}

impl HValue {
    pub fn total(&self) -> f64 {
        self.value + self.tail_bound
    }
}

/// Number of extra levels summed for tail bounds; `2^-1100` underflows.
const TAIL_LEVELS: usize = 1100;

/// `H(n)` for a finite chain: the supremum over points of the sum over
/// `n < m <= depth_cutoff`, plus a bound on the levels past the cutoff using
/// the smallest point mass.
pub fn h_function(
    chain: &PartitionChain,
    mu: &MajorizingMeasure,
    v: &WeightSequence,
    n: usize,
    depth_cutoff: usize,
) -> Result<HValue> {
    if mu.weights.len() != chain.n_points {
        return invalid("measure and chain differ in size");
    }
    let d = chain.diameter;
    let mut per_level: Vec<Vec<f64>> = Vec::new();
    for m in (n + 1)..=depth_cutoff {
        let cm = mu.cell_measures(chain, m);
        if cm.iter().any(|&x| x <= 0.0) {
            return Err(Error::Domain(format!("zero-measure cell at level {m}")));
        }
        let scale = d * 2f64.powi(-(m as i32));
        let lv = v.ln_v(m);
        per_level.push(
            cm.iter()
                .map(|&c| scale * (lv - c.ln()).max(0.0).sqrt())
                .collect(),
        );
    }
    let mut value = 0.0f64;
    for t in 0..chain.n_points {
        let s: f64 = ((n + 1)..=depth_cutoff)
            .zip(&per_level)
            .map(|(m, row)| row[chain.cell_of(t, m)])
            .sum();
        value = value.max(s);
    }
    let min_mass = mu.weights.iter().copied().filter(|&w| w > 0.0).fold(f64::INFINITY, f64::min);
    let start = depth_cutoff.max(n) + 1;
    let tail_bound: f64 = (start..start + TAIL_LEVELS)
        .map(|m| d * 2f64.powi(-(m as i32)) * (v.ln_v(m) - min_mass.ln()).max(0.0).sqrt())
        .sum();
    Ok(HValue { value, tail_bound })
}

/// Anything that provides `H(n)` and the cell counts `N_n`.
pub trait ChainBound {
    fn max_level(&self) -> usize;
    fn h(&self, n: usize) -> Result<HValue>;
    /// `ln N_n`.
    fn ln_cell_count(&self, n: usize) -> f64;
}

/// A finite chain with its measure and weights.
#[derive(Debug, Clone)]
pub struct FiniteChain {
    pub chain: PartitionChain,
    pub mu: MajorizingMeasure,
    pub v: WeightSequence,
    pub depth_cutoff: usize,
}

impl ChainBound for FiniteChain {
    fn max_level(&self) -> usize {
        self.depth_cutoff
    }

    fn h(&self, n: usize) -> Result<HValue> {
        h_function(&self.chain, &self.mu, &self.v, n, self.depth_cutoff)
    }

    fn ln_cell_count(&self, n: usize) -> f64 {
        (self.chain.n_cells(n) as f64).ln()
    }
}

/// Smallest level `n` with `H(n) <= eps sigma` (explicit part plus tail
/// bound).
pub fn n_of_epsilon(chain: &dyn ChainBound, epsilon: f64, sigma: f64) -> Result<usize> {
    if !(epsilon > 0.0 && sigma > 0.0) {
        return domain("epsilon and sigma must be positive");
    }
    let target = epsilon * sigma;
    let h0 = chain.h(0)?.total();
    if target >= h0 {
        return domain(format!("eps * sigma = {target} is not below H(0) = {h0}"));
    }
    for n in 1..=chain.max_level() {
        if chain.h(n)?.total() <= target {
            return Ok(n);
        }
    }
    Err(Error::Domain(format!(
        "chain too shallow: H({}) still exceeds {target}; increase the depth",
        chain.max_level()
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmExponent {
    pub level: usize,
    /// `ln N_{n(eps)}`.
    pub ln_cells: f64,
    /// `N_{n(eps)} ln(1/eps)`, possibly `inf` when it overflows.
    pub exponent: f64,
    /// `ln` of the exponent, finite whenever `eps < 1`.
    pub ln_exponent: f64,
}

/// The exponent `N_{n(eps)} ln(1/eps)` of the chaining lower bound.
pub fn mm_lower_exponent(chain: &dyn ChainBound, epsilon: f64, sigma: f64) -> Result<MmExponent> {
    let level = n_of_epsilon(chain, epsilon, sigma)?;
    let ln_cells = chain.ln_cell_count(level);
    let l = (1.0 / epsilon).ln();
    Ok(MmExponent {
        level,
        ln_cells,
        exponent: ln_cells.exp() * l,
        ln_exponent: if l > 0.0 { ln_cells + l.ln() } else { f64::NEG_INFINITY },
    })
}

pub fn chain_csv(chain: &dyn ChainBound, levels: usize) -> Result<String> {
    let mut s = String::from("level,N_n,H_n\n");
    for n in 0..=levels.min(chain.max_level()) {
        s.push_str(&format!(
            "{n},{},{}\n",
            chain.ln_cell_count(n).exp(),
            chain.h(n)?.total()
        ));
    }
    Ok(s)
}

/// An integer that may be far beyond `u64`, kept as its logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BigCount {
    pub ln: f64,
    pub exact: Option<u64>,
}

impl BigCount {
    fn from_ln(ln: f64, exact: Option<u64>) -> Self {
        Self { ln, exact }
    }

    fn minus_one_ln(&self) -> f64 {
        match self.exact {
            Some(n) if n >= 2 => ((n - 1) as f64).ln(),
            Some(_) => f64::NEG_INFINITY,
            None => self.ln + (-(-self.ln).exp()).ln_1p(),
        }
    }

    fn lt(&self, other: &BigCount) -> bool {
        match (self.exact, other.exact) {
            (Some(a), Some(b)) => a < b,
            _ => self.ln < other.ln,
        }
    }
}

/// Which tail cell the sieve uses at level `nu >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SieveVariant {
    /// Singletons below `F_nu`, tail `[F_nu, inf)`.
    Unshifted,
    /// Singletons below `F_{nu+1}`, tail `[F_{nu+1}, inf)`; every cell then
    /// has diameter at most `2^-nu D`.
    Shifted,
}

/// The sieve partitions of `N ∪ {inf}` for `G_n = g_n / phi(n)`, with
/// `mu{t} = c t^-2` and `v(m) = m^2`.
#[derive(Debug, Clone)]
pub struct SieveChain {
    phi: Arc<dyn SequenceWeight>,
    depth: usize,
    variant: SieveVariant,
    diameter: f64,
    sigma: f64,
    /// `F_n = phi^-1(1 / eps_n)`, `n = 0..=depth + 1 + TAIL_LEVELS`.
    f: Vec<BigCount>,
}

const LN_C: f64 = -0.497_700_070_843_400_7; // ln(6 / pi^2)

/// Trigamma `sum_{k>=0} (x+k)^-2` for `x >= 1`.
fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 20.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x + x2 / 2.0 + x2 / x * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0)))
}

/// `ln sum_{t >= F} t^-2` from `ln F`.
fn ln_tail_zeta2(f: &BigCount) -> f64 {
    match f.exact {
        Some(n) => trigamma(n as f64).ln(),
        None => {
            let inv = (-f.ln).exp();
            -f.ln + (0.5 * inv + inv * inv / 6.0).ln_1p()
        }
    }
}

impl SieveChain {
    pub fn new(phi: Arc<dyn SequenceWeight>, depth: usize, variant: SieveVariant) -> Result<Self> {
        if depth < 1 {
            return domain("depth must be >= 1");
        }
        let (p1, p2) = (phi.value(1.0), phi.value(2.0));
        if !(p1 > 0.0 && p2 >= p1) {
            return invalid("phi must be positive and nondecreasing");
        }
        let diameter = (p1.powi(-2) + p2.powi(-2)).sqrt();
        let mut f = Vec::new();
        for n in 0..=(depth + 2 + TAIL_LEVELS) {
            let y = 2f64.powi(n as i32) / diameter;
            if !y.is_finite() {
                break;
            }
            let exact = phi.generalized_inverse(y);
            let ln = match exact {
                Some(k) => (k as f64).ln(),
                None => phi.ln_inverse_real(y),
            };
            if !ln.is_finite() {
                break;
            }
            f.push(BigCount::from_ln(ln, exact));
        }
        let chain = Self {
            phi,
            depth,
            variant,
            diameter,
            sigma: 1.0 / p1,
            f,
        };
        chain.check_growth()?;
        Ok(chain)
    }

    /// Checks `sqrt(ln n) = o(phi(n))` on the computed range: the ratio
    /// `phi(n) / sqrt(ln n)` must increase along `n = F_k`.
    fn check_growth(&self) -> Result<()> {
        let ratios: Vec<f64> = self
            .f
            .iter()
            .filter(|b| b.ln > 1.0)
            .take(self.depth + 2)
            .map(|b| self.phi.value_ln(b.ln) / b.ln.sqrt())
            .collect();
        if ratios.windows(2).any(|w| w[1] < w[0]) {
            return invalid("phi(n)/sqrt(ln n) does not increase on the computed range");
        }
        Ok(())
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn eps(&self, n: usize) -> f64 {
        self.diameter * 2f64.powi(-(n as i32))
    }

    /// `F_n`.
    pub fn f(&self, n: usize) -> Option<BigCount> {
        self.f.get(n).copied()
    }

    /// Boundary of the tail cell at level `nu`.
    fn boundary(&self, nu: usize) -> Option<BigCount> {
        match self.variant {
            SieveVariant::Unshifted => self.f(nu),
            SieveVariant::Shifted => self.f(nu + 1),
        }
    }

    /// `ln mu` of the tail cell at level `m >= 1`.
    fn ln_mu_tail(&self, m: usize) -> f64 {
        match self.boundary(m) {
            Some(b) => LN_C + ln_tail_zeta2(&b),
            None => f64::NEG_INFINITY,
        }
    }

    /// `ln mu{t}` from `ln t`.
    fn ln_mu_point(ln_t: f64) -> f64 {
        LN_C - 2.0 * ln_t
    }

    /// Largest level whose tail term is still computable.
    fn last_level(&self) -> usize {
        let k = match self.variant {
            SieveVariant::Unshifted => self.f.len() - 1,
            SieveVariant::Shifted => self.f.len() - 2,
        };
        k.min(self.depth + TAIL_LEVELS)
    }

    /// Term of the `H` sum at level `m` for a point whose position relative
    /// to the boundary is given: `in_tail` or singleton with mass `ln_mu`.
    fn term(&self, m: usize, ln_mu: f64) -> f64 {
        if self.eps(m) == 0.0 {
            return 0.0;
        }
        self.eps(m) * (2.0 * (m.max(1) as f64).ln() - ln_mu).max(0.0).sqrt()
    }

    /// Explicit candidates for the supremum: `t = inf` and, for each level
    /// `k`, the largest integer below the level-`k` boundary. Within each
    /// class of points sharing their tail levels the sum grows with `t`.
    fn candidate_sum(&self, n: usize, cand: Option<&BigCount>, upto: usize) -> f64 {
        ((n + 1)..=upto)
            .map(|m| {
                let b = self.boundary(m).expect("level in range");
                let ln_mu = match cand {
                    None => self.ln_mu_tail(m),
                    Some(c) => {
                        // t = c - 1 lies in the tail iff b <= c - 1, i.e. b < c
                        if b.lt(c) {
                            self.ln_mu_tail(m)
                        } else {
                            Self::ln_mu_point(c.minus_one_ln())
                        }
                    }
                };
                self.term(m, ln_mu)
            })
            .sum()
    }

    /// `ln N_nu`: `1` at level 0, else `(#singletons) + 1`, which is the
    /// boundary value.
    pub fn ln_cells(&self, nu: usize) -> f64 {
        if nu == 0 {
            return 0.0;
        }
        self.boundary(nu).map_or(f64::INFINITY, |b| b.ln)
    }

    /// Levels `1..=depth` whose cells violate the diameter bound
    /// `2^-nu D`; only the tail cell can, and its diameter is attained by its
    /// two smallest points (or by its smallest point and `inf`).
    pub fn diameter_violations(&self) -> Vec<usize> {
        (1..=self.depth)
            .filter(|&nu| {
                let Some(b) = self.boundary(nu) else {
                    return false;
                };
                let a = 1.0 / self.phi.value_ln(b.ln);
                let next_ln = match b.exact {
                    Some(k) => ((k + 1) as f64).ln(),
                    None => b.ln,
                };
                let c = 1.0 / self.phi.value_ln(next_ln);
                (a * a + c * c).sqrt() > self.eps(nu) * (1.0 + 1e-12)
            })
            .collect()
    }

    /// Checks both ball statements for every `u < n_enum` and for the four
    /// integers nearest each class boundary `F_k`, `k <= depth + 1`, at every
    /// level `n <= depth`.
    pub fn ball_structure_check(&self, n_enum: u64) -> BallCheck {
        let mut us: Vec<BigCount> = (1..n_enum)
            .map(|u| BigCount::from_ln((u as f64).ln(), Some(u)))
            .collect();
        for k in 0..=(self.depth + 1).min(self.f.len() - 1) {
            let b = self.f[k];
            match b.exact {
                Some(x) => {
                    for u in [x.saturating_sub(2), x.saturating_sub(1), x, x + 1] {
                        if u >= n_enum {
                            us.push(BigCount::from_ln((u as f64).ln(), Some(u)));
                        }
                    }
                }
                None => {
                    us.push(b);
                    us.push(BigCount::from_ln(b.minus_one_ln(), None));
                }
            }
        }
        let mut check = BallCheck::default();
        for u in &us {
            let a = 1.0 / self.phi.value_ln(u.ln);
            // nu(u): F_nu <= u < F_{nu+1}
            let Some(nu) = (0..self.f.len() - 1).find(|&k| !u.lt(&self.f[k]) && u.lt(&self.f[k + 1]))
            else {
                continue;
            };
            for n in 0..=self.depth {
                if n > nu {
                    // nearest other points: the largest phi(v), approached as
                    // v -> inf, gives distance a from above
                    check.singleton_checks += 1;
                    if a <= self.eps(n) {
                        check.singleton_failures += 1;
                    }
                } else if n < nu {
                    let Some(b) = self.f(n + 1) else { continue };
                    check.tail_checks += 1;
                    let c = 1.0 / self.phi.value_ln(b.ln);
                    if (a * a + c * c).sqrt() > self.eps(n) {
                        check.tail_failures += 1;
                    }
                }
            }
        }
        check
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BallCheck {
    pub singleton_checks: u64,
    pub singleton_failures: u64,
    pub tail_checks: u64,
    pub tail_failures: u64,
}

impl BallCheck {
    pub fn passed(&self) -> bool {
        self.singleton_failures == 0 && self.tail_failures == 0
    }
}

impl ChainBound for SieveChain {
    fn max_level(&self) -> usize {
        self.depth
    }

    fn h(&self, n: usize) -> Result<HValue> {
        let upto = self.depth.max(n);
        let mut value = self.candidate_sum(n, None, upto);
        for k in 1..=(upto + 1) {
            let Some(c) = self.boundary(k) else { break };
            if c.exact.is_some_and(|x| x < 2) {
                continue;
            }
            value = value.max(self.candidate_sum(n, Some(&c), upto));
        }
        // past the cutoff a point is either in the tail cell or a singleton
        // below the boundary, whose mass is at least c / (boundary - 1)^2
        let last = self.last_level();
        let tail_bound = ((upto + 1)..=last)
            .map(|m| {
                let b = self.boundary(m).expect("level in range");
                let ln_mu = self.ln_mu_tail(m).min(Self::ln_mu_point(b.minus_one_ln()));
                self.term(m, ln_mu)
            })
            .sum();
        Ok(HValue { value, tail_bound })
    }

    fn ln_cell_count(&self, n: usize) -> f64 {
        self.ln_cells(n)
    }
}

/// Dyadic-interval chain on `[0, 1]` with Lebesgue measure for a process with
/// `||X(s) - X(t)||_2 <= delta(|s - t|)`, `delta(u) = u^a`, weights
/// `v(m) = 1 / omega(2^-m D)`, `omega(u) = u^b` and `D = delta(1) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalExample {
    pub delta_power: f64,
    pub omega_power: f64,
}

impl IntervalExample {
    pub fn new(delta_power: f64, omega_power: f64) -> Result<Self> {
        if !(delta_power > 0.0 && omega_power > 0.0) {
            return invalid("powers must be positive");
        }
        Ok(Self {
            delta_power,
            omega_power,
        })
    }

    fn delta_inv(&self, u: f64) -> f64 {
        u.powf(1.0 / self.delta_power)
    }

    /// Cells at level `m` are intervals of length `2^-k` with `k` the least
    /// integer making `2^-k <= delta^-1(2^-m)`, so their measure is at least
    /// half of `delta^-1(2^-m)`.
    fn cell_exp(&self, m: usize) -> i32 {
        let target = self.delta_inv(2f64.powi(-(m as i32)));
        (-target.log2()).ceil().max(0.0) as i32
    }

    fn ln_cell_mass(&self, m: usize) -> f64 {
        -(self.cell_exp(m) as f64) * std::f64::consts::LN_2
    }

    pub fn h(&self, n: usize) -> f64 {
        ((n + 1)..(n + 1 + TAIL_LEVELS))
            .map(|m| (m, 2f64.powi(-(m as i32))))
            .take_while(|&(_, eps)| eps > 0.0)
            .map(|(m, eps)| {
                let ln_v = -self.omega_power * eps.ln();
                eps * (ln_v - self.ln_cell_mass(m)).max(0.0).sqrt()
            })
            .sum()
    }

    /// `2 int_0^{eps_n} sqrt(ln(2 / (delta^-1(u) omega(u)))) du` by Simpson's
    /// rule after `u = eps_n e^-s`.
    pub fn integral_bound(&self, n: usize) -> f64 {
        let top = 2f64.powi(-(n as i32));
        let g = |s: f64| {
            let u = top * (-s).exp();
            let ln_arg = 2f64.ln() - self.delta_inv(u).ln() - self.omega_power * u.ln();
            ln_arg.max(0.0).sqrt() * u
        };
        let (smax, steps) = (80.0, 20_000);
        let h = smax / steps as f64;
        let mut acc = g(0.0) + g(smax);
        for i in 1..steps {
            acc += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        2.0 * acc * h / 3.0
    }

    /// Number of cells at level `n`.
    pub fn n_cells(&self, n: usize) -> f64 {
        2f64.powi(self.cell_exp(n))
    }
}
