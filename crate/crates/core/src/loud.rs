//! Saw-tooth waves, Loud's function and its p-adic generalisation.
//!
//! A [`LoudFamily`] with parameters `(p, A, alpha)` defines the teeth
//! `phi_k(t) = p^(-2 alpha A k) * phi(t, p^(-2 A k))` and their sum `f`.
//! Points of the form `num / p^e` are evaluated with integer arithmetic
//! through [`PadicPoint`], so deep teeth are exact on p-adic grids.

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};

/// Triangle wave of half-period `h`: 0 at even multiples of `h`, 1 at odd
/// multiples, linear in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SawtoothSpec {
    h: f64,
}

impl SawtoothSpec {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return domain(format!("saw-tooth half-period must be positive, got {h}"));
        }
        Ok(Self { h })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Exact for power-of-two `h`; otherwise the phase carries the rounding
    /// error of `t / h`.
    pub fn eval(&self, t: f64) -> f64 {
        let r = t.rem_euclid(2.0 * self.h) / self.h;
        if r <= 1.0 {
            r
        } else {
            2.0 - r
        }
    }
}

pub fn sawtooth_eval(spec: SawtoothSpec, t: f64) -> f64 {
    spec.eval(t)
}

/// The rational `num / base^exp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PadicPoint {
    pub num: u128,
    pub base: u64,
    pub exp: u32,
}

impl PadicPoint {
    pub fn new(num: u128, base: u64, exp: u32) -> Self {
        Self { num, base, exp }
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 * (self.base as f64).powi(-(self.exp as i32))
    }

    /// The same rational written over `base^exp` with a larger `exp`.
    pub fn refine(&self, exp: u32) -> Result<PadicPoint> {
        if exp < self.exp {
            return domain("refine to a smaller exponent");
        }
        let scale = (self.base as u128)
            .checked_pow(exp - self.exp)
            .ok_or_else(|| Error::OutOfRange(format!("{}^{} overflows", self.base, exp)))?;
        let num = self
            .num
            .checked_mul(scale)
            .ok_or_else(|| Error::OutOfRange("p-adic numerator overflows".into()))?;
        Ok(PadicPoint::new(num, self.base, exp))
    }

    /// `self + other` for two points over the same base.
    pub fn add(&self, other: &PadicPoint) -> Result<PadicPoint> {
        if self.base != other.base {
            return domain("adding p-adic points over different bases");
        }
        let e = self.exp.max(other.exp);
        let (a, b) = (self.refine(e)?, other.refine(e)?);
        let num = a
            .num
            .checked_add(b.num)
            .ok_or_else(|| Error::OutOfRange("p-adic numerator overflows".into()))?;
        Ok(PadicPoint::new(num, self.base, e))
    }
}

/// A nonnegative rational `num / den` with `den <= 2^62`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u128,
    pub den: u128,
}

pub const MAX_RATIO_DEN: u128 = 1 << 62;

impl Ratio {
    pub fn new(num: u128, den: u128) -> Result<Self> {
        if den == 0 || den > MAX_RATIO_DEN {
            return Err(Error::OutOfRange(format!("denominator {den} outside 1..=2^62")));
        }
        Ok(Self { num, den })
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn add(&self, other: &Ratio) -> Result<Ratio> {
        let g = gcd(self.den, other.den);
        let den = (self.den / g)
            .checked_mul(other.den)
            .ok_or_else(|| Error::OutOfRange("ratio denominator overflows".into()))?;
        let num = self
            .num
            .checked_mul(den / self.den)
            .and_then(|a| other.num.checked_mul(den / other.den).and_then(|b| a.checked_add(b)))
            .ok_or_else(|| Error::OutOfRange("ratio numerator overflows".into()))?;
        let g = gcd(num, den).max(1);
        Ratio::new(num / g, den / g)
    }
}

impl TryFrom<PadicPoint> for Ratio {
    type Error = Error;

    fn try_from(t: PadicPoint) -> Result<Ratio> {
        let den = (t.base as u128)
            .checked_pow(t.exp)
            .ok_or_else(|| Error::OutOfRange(format!("{}^{} overflows", t.base, t.exp)))?;
        Ratio::new(t.num, den)
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `b^e mod m` for `m <= 2^63`.
fn pow_mod(mut b: u128, mut e: u64, m: u128) -> u128 {
    let mut acc = 1 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = acc * b % m;
        }
        b = b * b % m;
        e >>= 1;
    }
    acc
}

/// The saw-tooth `phi(t, base^-pow)` at a rational `t`, exact up to the final
/// division.
pub fn sawtooth_ratio(t: &Ratio, base: u64, pow: u64) -> f64 {
    // t / h = num base^pow / den, reduced modulo 2
    let m = 2 * t.den;
    let r = (t.num % m) * pow_mod(base as u128, pow, m) % m;
    if r <= t.den {
        r as f64 / t.den as f64
    } else {
        (m - r) as f64 / t.den as f64
    }
}

/// `base^exp + 1` equally spaced points `j / base^exp` on `[0, 1]`.
pub fn padic_grid(base: u64, exp: u32) -> Result<Vec<PadicPoint>> {
    let n = (base as u128)
        .checked_pow(exp)
        .ok_or_else(|| Error::OutOfRange(format!("{base}^{exp} overflows")))?;
    if n > (1u128 << 32) {
        return Err(Error::Budget {
            what: "grid points",
            requested: n + 1,
            limit: 1u128 << 32,
        });
    }
    Ok((0..=n).map(|j| PadicPoint::new(j, base, exp)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoudConstants {
    pub c1: f64,
    pub c2: f64,
    pub kappa: f64,
    pub k_script: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoudFamily {
    p: u64,
    a: u32,
    alpha: f64,
    tail_tol: f64,
    n_terms: u32,
}

pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

impl LoudFamily {
    pub fn new(p: u64, a: u32, alpha: f64) -> Result<Self> {
        Self::with_tol(p, a, alpha, DEFAULT_TAIL_TOL)
    }

    pub fn with_tol(p: u64, a: u32, alpha: f64, tail_tol: f64) -> Result<Self> {
        if p < 2 {
            return invalid(format!("p must be >= 2, got {p}"));
        }
        if a == 0 {
            return invalid("A must be a positive integer");
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return invalid(format!("alpha must lie in (0,1), got {alpha}"));
        }
        if !(tail_tol > 0.0 && tail_tol.is_finite()) {
            return invalid(format!("tail_tol must be positive, got {tail_tol}"));
        }
        let pf = p as f64;
        if pf.powf(2.0 * (1.0 - alpha) * a as f64) <= 2.0 {
            return invalid(format!(
                "p^(2(1-alpha)A) must exceed 2 (p={p}, A={a}, alpha={alpha})"
            ));
        }
        let q = pf.powf(-2.0 * alpha * a as f64);
        // smallest K with q^(K+1) / (1 - q) < tol
        let k = ((tail_tol * (1.0 - q)).ln() / q.ln() - 1.0).floor().max(0.0) as u32;
        let mut n_terms = k.max(1);
        while q.powi(n_terms as i32 + 1) / (1.0 - q) >= tail_tol {
            n_terms += 1;
        }
        while n_terms > 1 && q.powi(n_terms as i32) / (1.0 - q) < tail_tol {
            n_terms -= 1;
        }
        Ok(Self {
            p,
            a,
            alpha,
            tail_tol,
            n_terms,
        })
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn a(&self) -> u32 {
        self.a
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tail_tol(&self) -> f64 {
        self.tail_tol
    }

    /// Number of teeth summed; the omitted tail is below `tail_tol`.
    pub fn n_terms(&self) -> u32 {
        self.n_terms
    }

    /// Half-period `p^(-2Ak)` of tooth `k`.
    pub fn half_period(&self, k: u32) -> f64 {
        (self.p as f64).powf(-2.0 * (self.a * k) as f64)
    }

    /// Height `p^(-2 alpha A k)` of tooth `k`.
    pub fn amplitude(&self, k: u32) -> f64 {
        (self.p as f64).powf(-2.0 * self.alpha * (self.a * k) as f64)
    }

    /// Period of `f`: twice the half-period of the first tooth.
    pub fn period(&self) -> f64 {
        2.0 * self.half_period(1)
    }

    pub fn basis_eval(&self, k: u32, t: f64) -> Result<f64> {
        if k < 1 {
            return domain("tooth index k must be >= 1");
        }
        let h = self.half_period(k);
        Ok(self.amplitude(k) * SawtoothSpec { h }.eval(t))
    }

    /// Saw-tooth value of tooth `k` (without its amplitude) at a rational
    /// point, exact up to the final division.
    pub fn tooth_shape_ratio(&self, k: u32, t: &Ratio) -> f64 {
        sawtooth_ratio(t, self.p, 2 * (self.a as u64) * k as u64)
    }

    pub fn f_ratio(&self, t: &Ratio) -> f64 {
        (1..=self.n_terms)
            .map(|k| self.amplitude(k) * self.tooth_shape_ratio(k, t))
            .sum()
    }

    /// Saw-tooth value of tooth `k` (without its amplitude) at a p-adic point.
    ///
    /// Exact whenever `t.base == p` or `t.base^t.exp <= 2^62`; falls back to
    /// floating point otherwise.
    pub fn tooth_shape_at(&self, k: u32, t: &PadicPoint) -> f64 {
        if t.base != self.p {
            if let Ok(r) = Ratio::try_from(*t) {
                return self.tooth_shape_ratio(k, &r);
            }
            return SawtoothSpec {
                h: self.half_period(k),
            }
            .eval(t.to_f64());
        }
        let s = 2 * self.a * k;
        let e = t.exp;
        if s >= e {
            // t / h = num * p^(s - e) is an integer
            let odd = if s > e && self.p % 2 == 0 {
                false
            } else {
                t.num % 2 == 1
            };
            return if odd { 1.0 } else { 0.0 };
        }
        let den = match (self.p as u128).checked_pow(e - s) {
            Some(d) if d <= u128::MAX / 2 => d,
            _ => {
                return SawtoothSpec {
                    h: self.half_period(k),
                }
                .eval(t.to_f64())
            }
        };
        let r = t.num % (2 * den);
        if r <= den {
            r as f64 / den as f64
        } else {
            (2 * den - r) as f64 / den as f64
        }
    }

    pub fn basis_at(&self, k: u32, t: &PadicPoint) -> f64 {
        self.amplitude(k) * self.tooth_shape_at(k, t)
    }

    /// Truncated series `f(t)`, error below `tail_tol` plus the rounding of
    /// `t` itself: `f` is only alpha-Hoelder, so an input perturbation of one
    /// ulp moves the value by up to `k_script * ulp^alpha`. Exact p-adic
    /// inputs should go through [`LoudFamily::f_at`].
    pub fn f_eval(&self, t: f64) -> f64 {
        (1..=self.n_terms)
            .map(|k| self.amplitude(k) * SawtoothSpec { h: self.half_period(k) }.eval(t))
            .sum()
    }

    pub fn f_at(&self, t: &PadicPoint) -> f64 {
        (1..=self.n_terms).map(|k| self.basis_at(k, t)).sum()
    }

    /// All truncated teeth `phi_1(t), ..., phi_K(t)`.
    pub fn basis_vector(&self, t: &PadicPoint) -> Vec<f64> {
        (1..=self.n_terms).map(|k| self.basis_at(k, t)).collect()
    }

    /// `||X(s) - X(t)||_2` for the series process with independent
    /// coefficients.
    pub fn l2_increment(&self, s: f64, t: f64) -> f64 {
        (1..=self.n_terms)
            .map(|k| {
                let st = SawtoothSpec {
                    h: self.half_period(k),
                };
                (self.amplitude(k) * (st.eval(s) - st.eval(t))).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn l2_increment_at(&self, s: &PadicPoint, t: &PadicPoint) -> f64 {
        (1..=self.n_terms)
            .map(|k| (self.basis_at(k, s) - self.basis_at(k, t)).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn constants(&self) -> LoudConstants {
        let pf = self.p as f64;
        let a = self.a as f64;
        let al = self.alpha;
        let c1 = pf.powf(-2.0 * a);
        let k_script = pf.powf(4.0 * a * al) / (1.0 - pf.powf(-4.0 * (1.0 - al) * a))
            + 1.0 / (1.0 - pf.powf(-4.0 * al * a));
        let r = pf.powf(-2.0 * (1.0 - al) * a);
        LoudConstants {
            c1,
            c2: k_script.sqrt(),
            kappa: r * (1.0 - 2.0 * r) / (1.0 - r),
            k_script,
        }
    }
}

pub fn loud_basis_eval(fam: &LoudFamily, k: u32, t: f64) -> Result<f64> {
    fam.basis_eval(k, t)
}

pub fn loud_f_eval(fam: &LoudFamily, t: f64) -> f64 {
    fam.f_eval(t)
}

pub fn loud_constants(fam: &LoudFamily) -> LoudConstants {
    fam.constants()
}

pub fn loud_l2_increment(fam: &LoudFamily, s: f64, t: f64) -> f64 {
    fam.l2_increment(s, t)
}

/// Outcome of checking the increment inequalities on a p-adic grid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IncrementAudit {
    pub grid_exp: u32,
    pub pairs_checked: u64,
    /// Pairs with `d_X < c1 |s-t|^alpha - slack`.
    pub l2_lower_violations: u64,
    pub l2_upper_violations: u64,
    pub lag_checks: u64,
    /// Special-lag pairs with `|f(s)-f(t)| < kappa |s-t|^alpha - slack`.
    pub lag_lower_violations: u64,
    pub f_upper_violations: u64,
    /// A pair `(s, t)` witnessing the first lower-bound violation of `d_X`.
    pub first_l2_lower_violation: Option<(f64, f64, f64)>,
    pub first_lag_violation: Option<(f64, f64, f64)>,
}

impl IncrementAudit {
    pub fn violations(&self) -> u64 {
        self.l2_lower_violations
            + self.l2_upper_violations
            + self.lag_lower_violations
            + self.f_upper_violations
    }
}

/// Checks the two-sided increment inequalities exhaustively over all pairs of
/// the grid `j / p^grid_exp`, and the lower bound for `f` at the lags
/// `p^(-2A(m+1))`, `m` in `lags`, starting from every grid point.
pub fn increment_audit(
    fam: &LoudFamily,
    grid_exp: u32,
    lags: std::ops::RangeInclusive<u32>,
) -> Result<IncrementAudit> {
    let grid = padic_grid(fam.p, grid_exp)?;
    let consts = fam.constants();
    let slack = 2.0 * fam.tail_tol;
    let alpha = fam.alpha;
    let basis: Vec<Vec<f64>> = grid.iter().map(|t| fam.basis_vector(t)).collect();
    let fvals: Vec<f64> = basis.iter().map(|b| b.iter().sum()).collect();
    let xs: Vec<f64> = grid.iter().map(|t| t.to_f64()).collect();

    let mut audit = IncrementAudit {
        grid_exp,
        ..Default::default()
    };
    for i in 0..grid.len() {
        for j in (i + 1)..grid.len() {
            let lag = (xs[j] - xs[i]).powf(alpha);
            let d = basis[i]
                .iter()
                .zip(&basis[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            audit.pairs_checked += 1;
            if d < consts.c1 * lag - slack {
                audit.l2_lower_violations += 1;
                audit.first_l2_lower_violation.get_or_insert((xs[i], xs[j], d));
            }
            if d > consts.c2 * lag + slack {
                audit.l2_upper_violations += 1;
            }
            if (fvals[i] - fvals[j]).abs() > consts.k_script * lag + slack {
                audit.f_upper_violations += 1;
            }
        }
    }

    for m in lags {
        let e = 2 * fam.a * (m + 1);
        let step = PadicPoint::new(1, fam.p, e);
        for (i, s) in grid.iter().enumerate() {
            let t = s.add(&step)?;
            if t.to_f64() > 1.0 {
                continue;
            }
            let df = (fam.f_at(&t) - fvals[i]).abs();
            let lag = step.to_f64().powf(alpha);
            audit.lag_checks += 1;
            if df < consts.kappa * lag - slack {
                audit.lag_lower_violations += 1;
                audit.first_lag_violation.get_or_insert((xs[i], t.to_f64(), df));
            }
        }
    }
    Ok(audit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fam() -> LoudFamily {
        LoudFamily::new(2, 2, 0.5).unwrap()
    }

    #[test]
    fn sawtooth_values() {
        let s = SawtoothSpec::new(0.5).unwrap();
        assert_eq!(s.eval(0.5), 1.0);
        assert_eq!(s.eval(1.0), 0.0);
        assert_eq!(s.eval(0.25), 0.5);
        assert_eq!(s.eval(-0.25), 0.5);
        assert!(SawtoothSpec::new(0.0).is_err());
        assert!(SawtoothSpec::new(-1.0).is_err());
    }

    #[test]
    fn sawtooth_slope_is_inverse_half_period() {
        let h = 0.125;
        let s = SawtoothSpec::new(h).unwrap();
        let dt = 1e-6;
        for &t in &[0.01, 0.05, 0.13, 0.2, 0.37] {
            let slope = (s.eval(t + dt) - s.eval(t)) / dt;
            assert!((slope.abs() - 1.0 / h).abs() < 1e-6, "t={t} slope={slope}");
        }
    }

    #[test]
    fn rejects_invalid_families() {
        assert!(LoudFamily::new(1, 2, 0.5).is_err());
        assert!(LoudFamily::new(2, 0, 0.5).is_err());
        assert!(LoudFamily::new(2, 2, 1.0).is_err());
        // 2^(2 * 0.5 * 1) = 2 is not > 2
        assert!(LoudFamily::new(2, 1, 0.5).is_err());
        assert!(LoudFamily::with_tol(2, 2, 0.5, 0.0).is_err());
    }

    #[test]
    fn basis_examples() {
        let f = fam();
        assert_eq!(f.basis_eval(1, 0.0).unwrap(), 0.0);
        assert_eq!(f.basis_eval(1, 2f64.powi(-4)).unwrap(), 0.25);
        assert_eq!(f.basis_eval(2, 2f64.powi(-8)).unwrap(), 2f64.powi(-4));
        assert!(f.basis_eval(0, 0.1).is_err());
    }

    #[test]
    fn truncation_is_minimal() {
        let f = fam();
        let q = f.amplitude(1);
        let k = f.n_terms() as i32;
        assert!(q.powi(k + 1) / (1.0 - q) < f.tail_tol());
        assert!(q.powi(k) / (1.0 - q) >= f.tail_tol());
    }

    #[test]
    fn constants_for_reference_family() {
        let c = fam().constants();
        assert!((c.c1 - 0.0625).abs() < 1e-15);
        assert!((c.kappa - 1.0 / 6.0).abs() < 1e-15);
        assert!((c.c2 - (272.0f64 / 15.0).sqrt()).abs() < 1e-12);
        assert!((c.k_script - 272.0 / 15.0).abs() < 1e-12);
        assert!(c.c1 <= c.c2 && c.kappa <= c.k_script);
    }

    #[test]
    fn f_vanishes_at_zero_and_is_periodic() {
        let f = fam();
        assert_eq!(f.f_eval(0.0), 0.0);
        let per = f.period();
        assert_eq!(per, 0.125);
        let step = PadicPoint::new(1, 2, 3);
        for j in (0..4096u128).step_by(7) {
            let t = PadicPoint::new(j, 2, 14);
            assert_eq!(f.f_at(&t), f.f_at(&t.add(&step).unwrap()));
        }
    }

    #[test]
    fn exact_value_at_two_pow_minus_eight() {
        // tooth 1: h = 1/16, t = 1/256 -> shape 1/16, amplitude 1/4
        // tooth 2: h = 1/256, t at an odd multiple -> shape 1, amplitude 1/16
        // teeth k >= 3: t is an even multiple of h -> 0
        let expect = 0.25 / 16.0 + 1.0 / 16.0;
        let f = fam();
        let t = PadicPoint::new(1, 2, 8);
        assert_eq!(f.f_at(&t), expect);
        assert!((f.f_eval(t.to_f64()) - expect).abs() < 1e-15);
        // d(0, 2^-8)^2 = (1/64)^2 + (1/16)^2
        let d = f.l2_increment_at(&PadicPoint::new(0, 2, 8), &t);
        assert!((d - ((1.0f64 / 64.0).powi(2) + (1.0f64 / 16.0).powi(2)).sqrt()).abs() < 1e-15);
        assert!((f.l2_increment(0.0, t.to_f64()) - d).abs() < 1e-15);
    }

    #[test]
    fn padic_matches_float_evaluation() {
        for (p, a, alpha) in [(2u64, 2u32, 0.5), (3, 1, 0.3), (5, 1, 0.2)] {
            let f = LoudFamily::new(p, a, alpha).unwrap();
            for j in [0u128, 1, 7, 40, 81, 200, 242] {
                let t = PadicPoint::new(j, p, 5);
                if t.to_f64() > 1.0 {
                    continue;
                }
                // floats are dyadic, so only p = 2 is exact in floating point
                let tol = if p == 2 {
                    1e-15
                } else {
                    f.constants().k_script * (4.0 * f64::EPSILON).powf(alpha)
                };
                assert!((f.f_at(&t) - f.f_eval(t.to_f64())).abs() < tol, "p={p} j={j}");
            }
        }
    }

    #[test]
    fn ratio_evaluation_matches_padic() {
        let f = LoudFamily::new(3, 1, 0.3).unwrap();
        for j in [0u128, 1, 5, 80, 242, 729] {
            let t = PadicPoint::new(j, 3, 6);
            let r = Ratio::try_from(t).unwrap();
            for k in 1..=f.n_terms() {
                assert_eq!(f.tooth_shape_at(k, &t), f.tooth_shape_ratio(k, &r));
            }
        }
        // (1/2) / 3^-2 = 4.5, which is 0.5 modulo 2
        let half = Ratio::new(1, 2).unwrap();
        assert_eq!(f.tooth_shape_ratio(1, &half), 0.5);
        let a = Ratio::new(1, 4).unwrap().add(&Ratio::new(1, 9).unwrap()).unwrap();
        assert_eq!(a, Ratio::new(13, 36).unwrap());
        assert!(Ratio::new(1, 0).is_err());
    }

    #[test]
    fn l2_increment_is_zero_on_diagonal() {
        let f = fam();
        assert_eq!(f.l2_increment(0.3, 0.3), 0.0);
    }

    #[test]
    fn increment_bounds_at_aligned_special_lags() {
        // For s a multiple of the lag p^(-2A(m+1)) both the two-sided l2 bounds
        // and the lower bound for f hold.
        let f = fam();
        let c = f.constants();
        let slack = 2.0 * f.tail_tol();
        for m in 1..=4u32 {
            let e = 2 * f.a() * (m + 1);
            let lag = 2f64.powi(-(e as i32));
            for j in (0..(1u128 << e)).step_by(((1u128 << e) / 512).max(1) as usize) {
                let s = PadicPoint::new(j, 2, e);
                let t = PadicPoint::new(j + 1, 2, e);
                let d = f.l2_increment_at(&s, &t);
                assert!(d >= c.c1 * lag.sqrt() - slack);
                assert!(d <= c.c2 * lag.sqrt() + slack);
                let df = (f.f_at(&s) - f.f_at(&t)).abs();
                assert!(df >= c.kappa * lag.sqrt() - slack, "m={m} j={j}");
            }
        }
    }

    #[test]
    fn l2_lower_bound_fails_at_period_multiples() {
        // f and the series process are periodic with period 2^-3, so the
        // intrinsic distance vanishes at that lag while c1 |s-t|^alpha > 0.
        let f = fam();
        let s = PadicPoint::new(0, 2, 8);
        let t = PadicPoint::new(32, 2, 8);
        assert_eq!(f.l2_increment_at(&s, &t), 0.0);
        let audit = increment_audit(&f, 6, 1..=1).unwrap();
        assert!(audit.l2_lower_violations > 0);
        assert_eq!(audit.l2_upper_violations, 0);
        assert_eq!(audit.f_upper_violations, 0);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sawtooth_range_and_period(h in 1e-3f64..10.0, t in -100.0f64..100.0) {
                let s = SawtoothSpec::new(h).unwrap();
                let v = s.eval(t);
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert!((v - s.eval(t + 2.0 * h)).abs() < 1e-9);
            }

            #[test]
            fn upper_bounds_hold(s in 0.0f64..1.0, t in 0.0f64..1.0) {
                let f = LoudFamily::new(2, 2, 0.5).unwrap();
                let c = f.constants();
                let lag = (s - t).abs().sqrt();
                prop_assert!(f.l2_increment(s, t) <= c.c2 * lag + 1e-11);
                prop_assert!((f.f_eval(s) - f.f_eval(t)).abs() <= c.k_script * lag + 1e-11);
            }

            #[test]
            fn l2_metric_is_symmetric_and_triangular(
                a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0
            ) {
                let f = LoudFamily::new(3, 1, 0.3).unwrap();
                prop_assert_eq!(f.l2_increment(a, b), f.l2_increment(b, a));
                prop_assert!(f.l2_increment(a, c) <= f.l2_increment(a, b) + f.l2_increment(b, c) + 1e-12);
            }
        }
    }
}
