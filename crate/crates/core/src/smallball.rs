//! Small-ball probabilities: Monte Carlo estimates, exact products for
//! independent sequences, and explicit two-sided bounds.

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};
use crate::exec::Execution;
use crate::gaussmath::{
    ln_add_exp, ln_interval_unchecked, ln_neg_ln_interval_unchecked, ln_tail_unchecked,
    log_std_normal_interval, std_normal_interval, SeedSpec,
};
use crate::loud::LoudFamily;
use crate::procs::{uniform_grid_exp, Design, GridExcess, Index, ProcessModel, SequenceWeight};

/// Monte Carlo estimate of `P{sup_grid |X| <= eps}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub epsilon: f64,
    pub p_hat: f64,
    pub std_err: f64,
    pub n_samples: u64,
    pub hits: u64,
    pub seed: SeedSpec,
    pub grid_size: usize,
    /// Bound on `p_hat - P{sup |X| <= eps}` from the grid (the grid supremum
    /// never exceeds the full one); `None` when the model gives no handle on
    /// the points between grid points.
    pub bias_note: Option<f64>,
}

fn estimate(epsilon: f64, hits: u64, n: u64, seed: SeedSpec, grid_size: usize) -> McEstimate {
    let p = hits as f64 / n as f64;
    McEstimate {
        epsilon,
        p_hat: p,
        std_err: (p * (1.0 - p) / n as f64).sqrt(),
        n_samples: n,
        hits,
        seed,
        grid_size,
        bias_note: None,
    }
}

/// Threshold for the remainder Gaussians: `P{|g| > z_j}` sums to about 1e-7.
fn remainder_level(j: usize) -> f64 {
    5.5 + 2.0 * ((j + 1) as f64).ln().sqrt()
}

fn sup_samples(design: &Design, n: usize, seed: SeedSpec, exec: Execution) -> Vec<f64> {
    exec.map(n, |r| {
        let mut g = vec![0.0; design.n_coeffs()];
        design.draw(seed, r as u64, &mut g);
        design.sup_abs(&g)
    })
}

/// Estimates at several `eps` from one set of sample paths.
pub fn mc_small_ball_curve(
    model: &ProcessModel,
    grid: &[Index],
    epsilons: &[f64],
    n_samples: usize,
    seed: SeedSpec,
    exec: Execution,
) -> Result<Vec<McEstimate>> {
    if n_samples == 0 {
        return domain("n_samples must be positive");
    }
    if grid.is_empty() {
        return domain("empty grid");
    }
    if epsilons.iter().any(|&e| !(e > 0.0)) {
        return domain("epsilon must be positive");
    }
    let design = model.design(grid)?;
    let sups = sup_samples(&design, n_samples, seed, exec);
    let count = |e: f64| sups.iter().filter(|&&s| s <= e).count() as u64;
    let n = n_samples as u64;
    let excess = model.grid_excess(grid);
    epsilons
        .iter()
        .map(|&e| {
            let mut est = estimate(e, count(e), n, seed, grid.len());
            est.bias_note = match &excess {
                GridExcess::Exact => Some(0.0),
                GridExcess::Remainder(w) => {
                    let r: f64 = w.iter().enumerate().map(|(j, x)| x * remainder_level(j)).sum();
                    let fail: f64 = (0..w.len()).map(|j| ln_tail_unchecked(remainder_level(j)).exp()).sum();
                    let shifted = if e > r { count(e - r) as f64 / n as f64 } else { 0.0 };
                    Some(est.p_hat - shifted + fail)
                }
                GridExcess::SequenceTail { n_max } => match model {
                    ProcessModel::Sequence { phi, .. } => Some(sequence_tail_mass(phi.as_ref(), e, *n_max)?),
                    _ => None,
                },
                GridExcess::Unknown => None,
            };
            Ok(est)
        })
        .collect()
}

/// Fraction of `n_samples` paths with `max_grid |X| <= eps`; path `r` uses
/// `seed.substream(r)`, so the result does not depend on `exec`.
pub fn mc_small_ball(
    model: &ProcessModel,
    grid: &[Index],
    epsilon: f64,
    n_samples: usize,
    seed: SeedSpec,
    exec: Execution,
) -> Result<McEstimate> {
    Ok(mc_small_ball_curve(model, grid, &[epsilon], n_samples, seed, exec)?.remove(0))
}

/// Estimates `P{max_grid X - min_grid X <= eps}`, the small-ball probability
/// of `sup_{s,t} |X(s) - X(t)|`.
pub fn mc_oscillation(
    model: &ProcessModel,
    grid: &[Index],
    epsilon: f64,
    n_samples: usize,
    seed: SeedSpec,
    exec: Execution,
) -> Result<McEstimate> {
    if n_samples == 0 || grid.is_empty() {
        return domain("need samples and a nonempty grid");
    }
    if !(epsilon > 0.0) {
        return domain("epsilon must be positive");
    }
    let design = model.design(grid)?;
    let hits = exec.count(n_samples, |r| {
        let mut g = vec![0.0; design.n_coeffs()];
        let mut x = vec![0.0; design.n_points()];
        design.draw(seed, r as u64, &mut g);
        design.eval(&g, &mut x);
        let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        hi - lo <= epsilon
    });
    Ok(estimate(epsilon, hits, n_samples as u64, seed, grid.len()))
}

/// `P{sup |c f| <= eps}` for the rank-one process `c f(t)` on a grid, with
/// the band coming from the points between grid points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledLoudExact {
    pub grid_sup: f64,
    /// Bound on `sup |f|` over the whole period.
    pub sup_upper: f64,
    /// `2 Phi(eps / grid_sup) - 1`: the grid small-ball probability.
    pub prob_grid: f64,
    pub log_prob_grid: f64,
    /// Lower bound for the true small-ball probability.
    pub prob_lower: f64,
}

pub fn scaled_loud_exact(fam: &LoudFamily, grid: &[Index], epsilon: f64) -> Result<ScaledLoudExact> {
    if !(epsilon > 0.0) {
        return domain("epsilon must be positive");
    }
    let Some((base, exp)) = uniform_grid_exp(grid) else {
        return domain("scaled_loud_exact needs a uniform p-adic grid of [0, 1]");
    };
    let model = ProcessModel::ScaledLoud(fam.clone());
    let design = model.design(grid)?;
    let m = (0..design.n_points()).map(|i| design.std_dev(i)).fold(0.0, f64::max);
    if m == 0.0 {
        return Err(Error::Invariant("f vanishes on the grid".into()));
    }
    let half_mesh = 0.5 * (base as f64).powi(-(exp as i32));
    let sup_upper = m + fam.constants().k_script * half_mesh.powf(fam.alpha());
    Ok(ScaledLoudExact {
        grid_sup: m,
        sup_upper,
        prob_grid: std_normal_interval(epsilon / m)?,
        log_prob_grid: log_std_normal_interval(epsilon / m)?,
        prob_lower: std_normal_interval(epsilon / sup_upper)?,
    })
}

/// Bracket for `ln sum_{n >= n_start} f(n)` of a positive nonincreasing `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LnSumBracket {
    pub ln_lo: f64,
    pub ln_hi: f64,
    /// `ln` of the bound used for everything past the last block.
    pub ln_tail: f64,
    pub n_direct: u64,
    /// `ln n` where the explicit blocks stop.
    pub u_end: f64,
    pub n_blocks: u64,
}

const DIRECT_TERMS: u64 = 1 << 20;
const MAX_BLOCKS: u64 = 50_000_000;
const NEGLIGIBLE: f64 = 40.0;

/// `ln(e^b - e^a + shift)`, or `-inf` when that is not positive.
fn ln_count(a: f64, b: f64, shift: f64) -> f64 {
    let base = (-(a - b).exp_m1()).ln() + b; // ln(e^b - e^a)
    let x = (shift * (-base).exp()).ln_1p();
    if x.is_nan() {
        f64::NEG_INFINITY
    } else {
        base + x
    }
}

/// Sums `exp(ln_f(ln n))` for `n >= n_start` with `ln_f` nonincreasing in
/// `n`: directly while `n` is small, then over blocks `e^a <= n < e^b`
/// bracketed by `#block * f(e^b) <= sum <= #block * f(e^a)`, with blocks
/// narrow enough that `ln f(a) - ln f(b) <= eta` wherever they matter.
/// The part past the last block is bounded by
/// `f(N) + int_{ln N}^inf e^{L(u)} du <= f(N) + e^{L(U)} / |L'(U)|`,
/// `L(u) = u + ln f(u)`, valid once `L` is concave and decreasing; concavity
/// is checked on a geometric sample of the remaining range.
pub fn ln_sum_decreasing(ln_f: &dyn Fn(f64) -> f64, n_start: u64, eta: f64) -> Result<LnSumBracket> {
    if n_start == 0 {
        return domain("sums start at n >= 1");
    }
    if !(eta > 0.0) {
        return domain("eta must be positive");
    }
    // coarse pass to find the scale of the sum, then the real one
    let coarse = ln_sum_pass(ln_f, n_start, 1.0, None)?;
    ln_sum_pass(ln_f, n_start, eta, Some(coarse.ln_hi))
}

fn concave_beyond(l: &dyn Fn(f64) -> f64, u: f64, w: f64) -> bool {
    let mut pts = vec![u - w, u];
    let mut step = w;
    while pts.len() < 40 {
        step *= 1.6;
        pts.push(pts.last().unwrap() + step);
    }
    let vals: Vec<f64> = pts.iter().map(|&x| l(x)).collect();
    pts.windows(3).zip(vals.windows(3)).all(|(p, v)| {
        let s1 = (v[1] - v[0]) / (p[1] - p[0]);
        let s2 = (v[2] - v[1]) / (p[2] - p[1]);
        s2 <= s1 * (1.0 - 1e-12) + 1e-12 * s1.abs() || v[2] == f64::NEG_INFINITY
    })
}

fn ln_sum_pass(ln_f: &dyn Fn(f64) -> f64, n_start: u64, eta: f64, ln_ref: Option<f64>) -> Result<LnSumBracket> {
    let mut acc = f64::NEG_INFINITY;
    let mut n = n_start;
    let mut prev = f64::INFINITY;
    while n < n_start.saturating_add(DIRECT_TERMS) {
        let v = ln_f((n as f64).ln());
        if v > prev + 1e-9 * prev.abs().max(1.0) {
            return invalid(format!("summand increases at n = {n}"));
        }
        prev = v;
        acc = ln_add_exp(acc, v);
        n += 1;
        if v < acc - NEGLIGIBLE - 20.0 && n > n_start + 64 {
            break;
        }
    }
    let n_direct = n - n_start;
    let l = |u: f64| u + ln_f(u);
    let mut lo = acc;
    let mut hi = acc;
    let mut a = (n as f64).ln();
    let mut fa = ln_f(a);
    let mut step: f64 = 1e-3;
    let mut blocks = 0u64;
    loop {
        if fa == f64::NEG_INFINITY {
            return Ok(LnSumBracket { ln_lo: lo, ln_hi: hi, ln_tail: f64::NEG_INFINITY, n_direct, u_end: a, n_blocks: blocks });
        }
        // tail check: past the peak of L with a concave remainder
        if blocks > 0 {
            let w = step.max(1e-6);
            let slope = (l(a) - l(a - w)) / w;
            if slope < 0.0 {
                let ln_tail = ln_add_exp(fa, l(a) - (-slope).ln());
                let reference = ln_ref.unwrap_or(hi).max(hi);
                if ln_tail < reference + eta.ln() - 10.0 && concave_beyond(&l, a, w) {
                    return Ok(LnSumBracket {
                        ln_lo: lo,
                        ln_hi: ln_add_exp(hi, ln_tail),
                        ln_tail,
                        n_direct,
                        u_end: a,
                        n_blocks: blocks,
                    });
                }
            }
        }
        if blocks >= MAX_BLOCKS || !a.is_finite() || a > 1e15 {
            return Err(Error::Diverges(format!(
                "no tail bound after {blocks} blocks (ln n = {a:.3e}); the series may diverge"
            )));
        }
        let budget = match ln_ref {
            Some(r) if l(a) + step.min(64.0) < r - NEGLIGIBLE => 1.0,
            _ => eta,
        };
        step = (step * 2.0).min(64.0);
        let mut fb = ln_f(a + step);
        while fa - fb > budget && step > 1e-12 {
            step *= 0.5;
            fb = ln_f(a + step);
        }
        let b = a + step;
        lo = ln_add_exp(lo, ln_count(a, b, -1.0) + fb);
        hi = ln_add_exp(hi, ln_count(a, b, 1.0) + fa);
        a = b;
        fa = fb;
        blocks += 1;
    }
}

/// Upper bound on `sum_{n > n_max} P{|g| > eps phi(n)}`.
pub fn sequence_tail_mass(phi: &dyn SequenceWeight, epsilon: f64, n_max: u64) -> Result<f64> {
    let f = |u: f64| ln_tail_unchecked(epsilon * phi.value_ln(u));
    Ok(ln_sum_decreasing(&f, n_max + 1, 0.1)?.ln_hi.exp())
}

/// `log P{sup_n |g_n| / phi(n) <= eps} = sum_n log P{|g| <= eps phi(n)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductBound {
    /// Geometric midpoint of the bracket (`-inf` when it overflows).
    pub log_value: f64,
    pub log_lower: f64,
    pub log_upper: f64,
    /// Bound on the contribution of the factors past the explicit blocks.
    pub tail_log_bound: f64,
    pub n_factors_direct: u64,
    /// `ln` of the index where the explicit blocks stop.
    pub ln_last_index: f64,
    /// Bracket for `ln(-log P)`.
    pub ln_neg_log_lo: f64,
    pub ln_neg_log_hi: f64,
}

/// Exact product for an independent sequence, bracketed to relative width
/// about `rel_tol` on `-log P`.
pub fn independent_product(phi: &dyn SequenceWeight, epsilon: f64, rel_tol: f64) -> Result<ProductBound> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return domain("epsilon must be positive");
    }
    for k in 0..200 {
        let u = k as f64 * 0.25;
        if phi.value_ln(u + 0.25) < phi.value_ln(u) {
            return invalid("phi must be nondecreasing");
        }
    }
    let f = |u: f64| ln_neg_ln_interval_unchecked(epsilon * phi.value_ln(u));
    let b = ln_sum_decreasing(&f, 1, rel_tol)?;
    let mid = 0.5 * (b.ln_lo + b.ln_hi);
    Ok(ProductBound {
        log_value: -mid.exp(),
        log_lower: -b.ln_hi.exp(),
        log_upper: -b.ln_lo.exp(),
        tail_log_bound: b.ln_tail.exp(),
        n_factors_direct: b.n_direct,
        ln_last_index: b.u_end,
        ln_neg_log_lo: b.ln_lo,
        ln_neg_log_hi: b.ln_hi,
    })
}

/// Two-sided bounds on `log P{sum_{n>=1} |g_n| rho^n <= eps}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricBounds {
    pub log_lower: f64,
    pub log_upper: f64,
    pub n_lower_terms: u32,
    pub n_upper_terms: u32,
}

/// Lower: split `eps` as `sum (eps / H) rho^(n/2)` with
/// `H = sum_{n>=1} rho^(n/2)` and require `|g_n| rho^n <= (eps/H) rho^(n/2)`.
/// Upper: `|g_n| <= eps rho^-n` for `n <= N'`,
/// `N' = floor(ln(1/eps) / (2 ln(1/rho)))`.
pub fn geometric_ball_bounds(rho: f64, epsilon: f64) -> Result<GeometricBounds> {
    if !(rho > 0.0 && rho < 1.0) {
        return domain("rho must lie in (0, 1)");
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return domain("epsilon must be positive");
    }
    let sr = rho.sqrt();
    let h = sr / (1.0 - sr);
    let mut lower = 0.0;
    let mut n = 1u32;
    loop {
        let z = epsilon / h * sr.powi(-(n as i32));
        let t = ln_interval_unchecked(z);
        lower += t;
        if -t < 1e-300 || z > 38.0 {
            // following terms shrink faster than geometrically
            lower -= 2.0 * ln_tail_unchecked(epsilon / h * sr.powi(-(n as i32 + 1))).exp();
            break;
        }
        n += 1;
    }
    let n_up = ((1.0 / epsilon).ln() / (2.0 * (1.0 / rho).ln())).floor().max(0.0) as u32;
    let upper = (1..=n_up).map(|k| ln_interval_unchecked(epsilon * rho.powi(-(k as i32)))).sum();
    Ok(GeometricBounds {
        log_lower: lower,
        log_upper: upper,
        n_lower_terms: n,
        n_upper_terms: n_up,
    })
}

/// Sandwich for `log P{sup |X| <= eps}` of the loud series
/// `X = sum_k g_k phi_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoudSandwich {
    pub log_lower: f64,
    pub log_upper: f64,
    pub k_used: u32,
}

fn loud_upper(fam: &LoudFamily, epsilon: f64, k_max: u32) -> (f64, u32) {
    let p2a = (fam.p() as f64).powi(2 * fam.a() as i32);
    let mut acc = 0.0f64;
    let mut used = 0;
    for k in 1..=k_max {
        let z = p2a.powf(fam.alpha() * k as f64) * (1.0 + 1.0 / p2a) * epsilon;
        let t = ln_interval_unchecked(z);
        if -t < 1e-17 * acc.abs().max(1e-300) {
            break;
        }
        acc += t;
        used = k;
    }
    (acc, used)
}

/// For even `p`, `X(p^-2Ak)` only involves `g_1..g_k`, which gives
/// `|g_k| <= p^(2A alpha k) (1 + p^-2A) eps` on the small ball; the lower
/// side uses `|X| <= sum_k |g_k| rho^k`, `rho = p^(-2 alpha A)`.
pub fn loudseries_sandwich(fam: &LoudFamily, epsilon: f64) -> Result<LoudSandwich> {
    if fam.p() % 2 != 0 {
        return domain("the loud-series sandwich needs an even p");
    }
    let g = geometric_ball_bounds(fam.amplitude(1), epsilon)?;
    let (up, k) = loud_upper(fam, epsilon, 10_000);
    Ok(LoudSandwich {
        log_lower: g.log_lower,
        log_upper: up,
        k_used: k,
    })
}

/// Same, with the upper side restricted to the points `p^-2Ak` lying on the
/// `p^-grid_exp` grid, so that it bounds the grid small-ball probability.
pub fn loudseries_sandwich_grid(fam: &LoudFamily, epsilon: f64, grid_exp: u32) -> Result<LoudSandwich> {
    let mut s = loudseries_sandwich(fam, epsilon)?;
    let (up, k) = loud_upper(fam, epsilon, grid_exp / (2 * fam.a()));
    s.log_upper = up;
    s.k_used = k;
    Ok(s)
}

/// Entropy-based lower bound `log P >= -K psi(eps)`, reported with the
/// doubling constants of `psi` over a log-spaced grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TalagrandReport {
    pub log_bound: f64,
    /// `min psi(eps/2) / psi(eps)` over the range.
    pub c1: f64,
    /// `max psi(eps/2) / psi(eps)` over the range.
    pub c2: f64,
    /// `c1 >= 1 + margin`.
    pub doubling_ok: bool,
}

pub fn talagrand_lower_bound(
    psi: &dyn Fn(f64) -> f64,
    k_const: f64,
    epsilon: f64,
    range: (f64, f64),
    n_grid: usize,
    margin: f64,
) -> Result<TalagrandReport> {
    let (lo, hi) = range;
    if !(lo > 0.0 && hi > lo && n_grid >= 2) {
        return domain("need 0 < lo < hi and at least two grid points");
    }
    let (mut c1, mut c2) = (f64::INFINITY, 0.0f64);
    for i in 0..n_grid {
        let e = lo * (hi / lo).powf(i as f64 / (n_grid - 1) as f64);
        let r = psi(e / 2.0) / psi(e);
        if !r.is_finite() {
            return invalid(format!("psi ratio undefined at {e}"));
        }
        c1 = c1.min(r);
        c2 = c2.max(r);
    }
    Ok(TalagrandReport {
        log_bound: -k_const * psi(epsilon),
        c1,
        c2,
        doubling_ok: c1 >= 1.0 + margin,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidakReport {
    pub joint_p_hat: f64,
    pub std_err: f64,
    pub marginal_product: f64,
    /// The product exceeds the joint estimate by more than three standard
    /// errors.
    pub violated: bool,
}

/// Lower-triangular factor of a positive semidefinite matrix; pivots within
/// rounding of zero are treated as zero.
fn psd_cholesky(cov: &[f64], dim: usize) -> Result<Vec<f64>> {
    let scale = (0..dim).map(|i| cov[i * dim + i].abs()).fold(0.0, f64::max).max(1e-300);
    let tol = 1e-10 * scale;
    let mut l = vec![0.0; dim * dim];
    for j in 0..dim {
        let mut d = cov[j * dim + j];
        for k in 0..j {
            d -= l[j * dim + k] * l[j * dim + k];
        }
        if d < -tol {
            return invalid("covariance is not positive semidefinite");
        }
        let piv = d.max(0.0).sqrt();
        l[j * dim + j] = piv;
        for i in (j + 1)..dim {
            let mut s = cov[i * dim + j];
            for k in 0..j {
                s -= l[i * dim + k] * l[j * dim + k];
            }
            if piv > tol.sqrt() {
                l[i * dim + j] = s / piv;
            } else if s.abs() > tol.sqrt() {
                return invalid("covariance is not positive semidefinite");
            }
        }
    }
    Ok(l)
}

/// Compares `P{max_j |X_j| <= z}` by Monte Carlo with the product of the
/// marginals for a centered Gaussian vector with covariance `cov`
/// (row-major `dim x dim`).
pub fn sidak_check(
    cov: &[f64],
    dim: usize,
    z: f64,
    n_samples: usize,
    seed: SeedSpec,
    exec: Execution,
) -> Result<SidakReport> {
    if cov.len() != dim * dim || dim == 0 {
        return invalid("covariance must be a nonempty square matrix");
    }
    if (0..dim).any(|i| (0..i).any(|j| (cov[i * dim + j] - cov[j * dim + i]).abs() > 1e-12)) {
        return invalid("covariance must be symmetric");
    }
    if !(z > 0.0) || n_samples == 0 {
        return domain("need z > 0 and samples");
    }
    let l = psd_cholesky(cov, dim)?;
    let hits = exec.count(n_samples, |r| {
        let g = crate::gaussmath::gaussian_stream(seed.substream(r as u64), dim);
        (0..dim).all(|i| {
            let x: f64 = (0..=i).map(|k| l[i * dim + k] * g[k]).sum();
            x.abs() <= z
        })
    });
    let mut prod = 1.0;
    for i in 0..dim {
        let s = cov[i * dim + i].max(0.0).sqrt();
        if s > 0.0 {
            prod *= std_normal_interval(z / s)?;
        }
    }
    let est = estimate(z, hits, n_samples as u64, seed, dim);
    Ok(SidakReport {
        joint_p_hat: est.p_hat,
        std_err: est.std_err,
        marginal_product: prod,
        violated: prod > est.p_hat + 3.0 * est.std_err,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallBallRow {
    pub epsilon: f64,
    pub log_lower: f64,
    pub log_upper: f64,
    pub mc_p_hat: Option<f64>,
    pub mc_std_err: Option<f64>,
}

pub fn smallball_csv(rows: &[SmallBallRow]) -> String {
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    let mut s = String::from("epsilon,log_lower,log_upper,mc_p_hat,mc_std_err\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epsilon,
            r.log_lower,
            r.log_upper,
            opt(r.mc_p_hat),
            opt(r.mc_std_err)
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::procs::{build_process, sequence_grid, time_grid, LogPower, ProcessParams};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn seed() -> SeedSpec {
        SeedSpec::new(11, 3)
    }

    #[test]
    fn product_single_factor() {
        // phi so large past n = 1 that only the first factor matters
        #[derive(Debug)]
        struct Steep;
        impl SequenceWeight for Steep {
            fn value(&self, x: f64) -> f64 {
                self.value_ln(x.ln())
            }
            fn value_ln(&self, u: f64) -> f64 {
                if u < 0.5 {
                    1.0
                } else {
                    1e6 * (1.0 + u)
                }
            }
            fn ln_inverse_real(&self, _: f64) -> f64 {
                1.0
            }
            fn label(&self) -> String {
                "steep".into()
            }
        }
        let b = independent_product(&Steep, 0.5, 1e-6).unwrap();
        let want = std_normal_interval(0.5).unwrap().ln();
        assert!((b.log_value - want).abs() < 1e-12 * want.abs());
    }

    #[test]
    fn product_matches_direct_sum_when_short() {
        let phi = LogPower { beta: 1.0 };
        let eps = 2.0;
        let direct: f64 = (1..200_000u64)
            .map(|n| ln_interval_unchecked(eps * ((n + 2) as f64).ln()))
            .sum();
        let b = independent_product(&phi, eps, 1e-4).unwrap();
        assert!(b.log_lower <= direct + 1e-12 && direct <= b.log_upper + 1e-9);
        assert!((b.log_value - direct).abs() < 1e-3 * direct.abs(), "{} vs {direct}", b.log_value);
    }

    #[test]
    fn product_bracket_is_tight_for_small_eps() {
        let phi = LogPower { beta: 1.0 };
        let b = independent_product(&phi, 0.02, 1e-3).unwrap();
        assert!(b.ln_neg_log_hi - b.ln_neg_log_lo < 5e-3);
        // -log P is about e^(1/(2 eps^2)) up to lower-order factors
        let scale = 1.0 / (2.0 * 0.02f64.powi(2));
        assert!((b.ln_neg_log_lo / scale - 1.0).abs() < 0.1, "{}", b.ln_neg_log_lo);
    }

    #[test]
    fn slow_growth_diverges() {
        #[derive(Debug)]
        struct Sqrt;
        impl SequenceWeight for Sqrt {
            fn value(&self, x: f64) -> f64 {
                self.value_ln(x.ln())
            }
            fn value_ln(&self, u: f64) -> f64 {
                0.5 * (u + 1.0).sqrt()
            }
            fn ln_inverse_real(&self, y: f64) -> f64 {
                (2.0 * y).powi(2) - 1.0
            }
            fn label(&self) -> String {
                "sqrt".into()
            }
        }
        assert!(matches!(independent_product(&Sqrt, 1.0, 1e-2), Err(Error::Diverges(_))));
    }

    #[test]
    fn geometric_bounds_order() {
        for &eps in &[1e-1, 1e-3, 1e-6] {
            let b = geometric_ball_bounds(0.5, eps).unwrap();
            assert!(b.log_lower <= b.log_upper);
        }
        assert!(geometric_ball_bounds(1.0, 0.1).is_err());
    }

    #[test]
    fn geometric_bounds_bracket_mc() {
        // Sum |g_n| rho^n with rho = 1/4 is well approximated by 30 terms
        let rho: f64 = 0.25;
        let eps = 0.1;
        let n = 200_000;
        let hits = Execution::Parallel.count(n, |r| {
            let g = crate::gaussmath::gaussian_stream(seed().substream(r as u64), 30);
            g.iter().enumerate().map(|(k, x)| x.abs() * rho.powi(k as i32 + 1)).sum::<f64>() <= eps
        });
        let p = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let b = geometric_ball_bounds(rho, eps).unwrap();
        assert!(b.log_lower.exp() <= p + 3.0 * se);
        assert!(p <= b.log_upper.exp() + 3.0 * se);
    }

    #[test]
    fn sandwich_needs_even_p() {
        let fam = LoudFamily::new(3, 1, 0.3).unwrap();
        assert!(matches!(loudseries_sandwich(&fam, 0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn sandwich_brackets_grid_mc() {
        let fam = LoudFamily::new(2, 2, 0.5).unwrap();
        let model = ProcessModel::LoudSeries(fam.clone());
        let grid = time_grid(2, 12).unwrap();
        let est = mc_small_ball_curve(&model, &grid, &[0.05, 0.1, 0.2], 20_000, seed(), Execution::Parallel).unwrap();
        for e in est {
            let s = loudseries_sandwich_grid(&fam, e.epsilon, 12).unwrap();
            assert!(s.log_lower.exp() <= e.p_hat + 3.0 * e.std_err);
            assert!(e.p_hat <= s.log_upper.exp() + 3.0 * e.std_err, "{e:?} {s:?}");
        }
    }

    #[test]
    fn scaled_loud_band() {
        let fam = LoudFamily::new(2, 2, 0.5).unwrap();
        let grid = time_grid(2, 10).unwrap();
        let x = scaled_loud_exact(&fam, &grid, 0.01).unwrap();
        assert!(x.sup_upper > x.grid_sup && x.prob_lower <= x.prob_grid);
        let model = ProcessModel::ScaledLoud(fam);
        let mc = mc_small_ball(&model, &grid, 0.3, 50_000, seed(), Execution::Parallel).unwrap();
        let ex = scaled_loud_exact(model.as_loud().unwrap(), &grid, 0.3).unwrap();
        assert!((mc.p_hat - ex.prob_grid).abs() <= 4.0 * mc.std_err);
    }

    #[test]
    fn mc_is_execution_independent() {
        let model = build_process(&ProcessParams::UltrametricZ {
            branching: 2,
            depth: 4,
            diameter: 1.0,
        })
        .unwrap();
        let grid = model.default_grid().unwrap();
        let a = mc_small_ball(&model, &grid, 1.0, 3000, seed(), Execution::Sequential).unwrap();
        let b = mc_small_ball(&model, &grid, 1.0, 3000, seed(), Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.bias_note, Some(0.0));
        assert!(mc_small_ball(&model, &grid, 0.0, 10, seed(), Execution::Sequential).is_err());
        assert!(mc_small_ball(&model, &[], 1.0, 10, seed(), Execution::Sequential).is_err());
    }

    #[test]
    fn sequence_mc_matches_product() {
        let phi = Arc::new(LogPower { beta: 1.0 });
        let model = ProcessModel::Sequence { phi: phi.clone(), n_max: 2000 };
        let grid = sequence_grid(2000);
        let eps = 1.2;
        let mc = mc_small_ball(&model, &grid, eps, 20_000, seed(), Execution::Parallel).unwrap();
        let exact = independent_product(phi.as_ref(), eps, 1e-4).unwrap();
        let bias = mc.bias_note.unwrap();
        assert!(bias >= 0.0);
        assert!(exact.log_value.exp() <= mc.p_hat + 3.0 * mc.std_err);
        assert!(mc.p_hat - bias <= exact.log_value.exp() + 3.0 * mc.std_err, "{mc:?} {exact:?}");
    }

    #[test]
    fn sidak_examples() {
        let r = sidak_check(&[1.0, 0.0, 0.0, 1.0], 2, 1.0, 40_000, seed(), Execution::Parallel).unwrap();
        let p = std_normal_interval(1.0).unwrap();
        assert!((r.marginal_product - p * p).abs() < 1e-15);
        assert!((r.joint_p_hat - p * p).abs() < 4.0 * r.std_err);
        let r1 = sidak_check(&[1.0, 1.0, 1.0, 1.0], 2, 1.0, 40_000, seed(), Execution::Parallel).unwrap();
        assert!((r1.joint_p_hat - p).abs() < 4.0 * r1.std_err);
        assert!(!r1.violated);
        assert!(sidak_check(&[1.0, 2.0, 2.0, 1.0], 2, 1.0, 10, seed(), Execution::Parallel).is_err());
    }

    #[test]
    fn talagrand_doubling_of_log() {
        let psi = |e: f64| (1.0 / e).ln();
        let r = talagrand_lower_bound(&psi, 1.0, 1e-3, (1e-6, 1e-1), 50, 0.1).unwrap();
        assert!(!r.doubling_ok);
        let pow = |e: f64| e.powi(-2);
        let r2 = talagrand_lower_bound(&pow, 1.0, 1e-3, (1e-6, 1e-1), 50, 0.1).unwrap();
        assert!(r2.doubling_ok && (r2.c1 - 4.0).abs() < 1e-9);
    }

    #[test]
    fn csv_header() {
        let s = smallball_csv(&[SmallBallRow {
            epsilon: 0.1,
            log_lower: -3.0,
            log_upper: -1.0,
            mc_p_hat: None,
            mc_std_err: None,
        }]);
        assert!(s.starts_with("epsilon,log_lower,log_upper"));
        assert!(s.ends_with("0.1,-3,-1,,\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn product_is_monotone_in_eps(e in 0.05f64..3.0, f in 1.05f64..2.0) {
            let phi = LogPower { beta: 1.0 };
            let a = independent_product(&phi, e, 1e-3).unwrap();
            let b = independent_product(&phi, e * f, 1e-3).unwrap();
            prop_assert!(b.log_upper >= a.log_lower);
            prop_assert!(a.log_lower <= a.log_upper);
        }

        #[test]
        fn geometric_bounds_are_ordered(rho in 0.05f64..0.9, le in -12.0f64..0.0) {
            let b = geometric_ball_bounds(rho, le.exp()).unwrap();
            prop_assert!(b.log_lower <= b.log_upper + 1e-12);
            prop_assert!(b.log_upper <= 0.0);
        }
    }
}
