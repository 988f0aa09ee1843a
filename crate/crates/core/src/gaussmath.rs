//! Scalar Gaussian special functions and the reproducible Gaussian streams
//! shared by every stochastic operation in the crate.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
/// ln(sqrt(2/pi))
const LN_SQRT_2_OVER_PI: f64 = -0.225_791_352_644_727_4;
/// ln(sqrt(pi))
const LN_SQRT_PI: f64 = 0.572_364_942_924_700_1;

fn check_arg(z: f64) -> Result<()> {
    if z.is_nan() || z < 0.0 {
        return domain(format!("expected z >= 0, got {z}"));
    }
    Ok(())
}

/// `P{|g| <= z}` for a standard Gaussian `g`.
pub fn std_normal_interval(z: f64) -> Result<f64> {
    check_arg(z)?;
    if z.is_infinite() {
        return Ok(1.0);
    }
    let x = z * FRAC_1_SQRT_2;
    Ok(if x < 0.5 { libm::erf(x) } else { 1.0 - libm::erfc(x) })
}

/// `log P{|g| <= z}`, accurate for tiny `z` where the probability underflows
/// relative precision and for large `z` where it rounds to one.
pub fn log_std_normal_interval(z: f64) -> Result<f64> {
    check_arg(z)?;
    Ok(ln_interval_unchecked(z))
}

pub(crate) fn ln_interval_unchecked(z: f64) -> f64 {
    if z == 0.0 {
        return f64::NEG_INFINITY;
    }
    if z.is_infinite() {
        return 0.0;
    }
    if z < 1e-12 {
        // P = z sqrt(2/pi) (1 - z^2/6 + O(z^4))
        return z.ln() + LN_SQRT_2_OVER_PI - z * z / 6.0;
    }
    if z < 1.0 {
        libm::erf(z * FRAC_1_SQRT_2).ln()
    } else {
        (-libm::erfc(z * FRAC_1_SQRT_2)).ln_1p()
    }
}

/// `log P{|g| > z}`, finite for every finite `z` (no underflow to `-inf`).
pub fn log_std_normal_tail(z: f64) -> Result<f64> {
    check_arg(z)?;
    Ok(ln_tail_unchecked(z))
}

pub(crate) fn ln_tail_unchecked(z: f64) -> f64 {
    if z.is_infinite() {
        return f64::NEG_INFINITY;
    }
    let x = z * FRAC_1_SQRT_2;
    if x < 0.5 {
        return (-libm::erf(x)).ln_1p();
    }
    if x < 25.0 {
        return libm::erfc(x).ln();
    }
    // erfc(x) = exp(-x^2) / (x sqrt(pi)) * (1 - 1/(2x^2) + 3/(4x^4) - 15/(8x^6) + 105/(16x^8) - ...)
    let r = 1.0 / (2.0 * x * x);
    let series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r * (1.0 - 9.0 * r))));
    -x * x - x.ln() - LN_SQRT_PI + series.ln()
}

/// `log(-log P{|g| <= z})`: the scale on which products of many factors close
/// to one are summed without cancellation. `+inf` at `z = 0`, `-inf` at
/// `z = inf`.
pub fn log_neg_log_interval(z: f64) -> Result<f64> {
    check_arg(z)?;
    Ok(ln_neg_ln_interval_unchecked(z))
}

pub(crate) fn ln_neg_ln_interval_unchecked(z: f64) -> f64 {
    if z == 0.0 {
        return f64::INFINITY;
    }
    if z.is_infinite() {
        return f64::NEG_INFINITY;
    }
    let ln_q = ln_tail_unchecked(z);
    if ln_q < -14.0 {
        // -ln(1-q) = q (1 + q/2 + q^2/3 + ...)
        let q = ln_q.exp();
        ln_q + (q / 2.0 + q * q / 3.0).ln_1p()
    } else {
        (-ln_interval_unchecked(z)).ln()
    }
}

/// Identifies one reproducible stream of Gaussian variates.
///
/// The stream for `(master_seed, stream_id)` is the same no matter how many
/// other streams are consumed concurrently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    /// The substream for path (or worker) `index` under this seed.
    ///
    /// Substreams of distinct `(self, index)` pairs never coincide as long as
    /// `stream_id` values stay below 2^32 and `index` below 2^32.
    pub fn substream(&self, index: u64) -> SeedSpec {
        SeedSpec {
            master_seed: self.master_seed,
            stream_id: (self.stream_id << 32) ^ index,
        }
    }

    pub fn stream(&self) -> GaussianStream {
        GaussianStream::new(*self)
    }
}

/// Standard Gaussian variates from a ChaCha8 keystream, using the Box-Muller
/// transform of uniform pairs.
#[derive(Debug, Clone)]
pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: SeedSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.master_seed);
        rng.set_stream(seed.stream_id);
        Self { rng, spare: None }
    }

    /// Uniform on (0, 1].
    fn uniform_open0(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform_open0();
        let u2 = self.uniform_open0();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.next_gaussian();
        }
    }
}

impl Iterator for GaussianStream {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(self.next_gaussian())
    }
}

/// The first `n` variates of the stream identified by `seed`.
pub fn gaussian_stream(seed: SeedSpec, n: usize) -> Vec<f64> {
    GaussianStream::new(seed).take(n).collect()
}

/// Numerically stable `log(exp(a) + exp(b))`.
pub(crate) fn ln_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Adaptive Simpson quadrature of the standard normal density on [0, z],
    /// doubled. Independent of the erf-based implementation.
    fn quad_interval(z: f64) -> f64 {
        fn density(x: f64) -> f64 {
            (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
        }
        fn simpson(a: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (density(a) + 4.0 * density(0.5 * (a + b)) + density(b))
        }
        fn adapt(a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (l, r) = (simpson(a, m), simpson(m, b));
            if depth == 0 || (l + r - whole).abs() <= 15.0 * tol {
                return l + r + (l + r - whole) / 15.0;
            }
            adapt(a, m, l, tol / 2.0, depth - 1) + adapt(m, b, r, tol / 2.0, depth - 1)
        }
        2.0 * adapt(0.0, z, simpson(0.0, z), 1e-17, 50)
    }

    #[test]
    fn interval_trivial_values() {
        assert_eq!(std_normal_interval(0.0).unwrap(), 0.0);
        assert_eq!(std_normal_interval(f64::INFINITY).unwrap(), 1.0);
        assert_eq!(log_std_normal_interval(f64::INFINITY).unwrap(), 0.0);
    }

    #[test]
    fn interval_matches_quadrature() {
        let oracle = quad_interval(1.0);
        assert!((oracle - 0.682_689_492_137_086).abs() < 1e-14);
        assert!((std_normal_interval(1.0).unwrap() - oracle).abs() < 1e-14);
        for &z in &[0.01, 0.3, 2.0, 3.7, 6.0] {
            assert!((std_normal_interval(z).unwrap() - quad_interval(z)).abs() < 1e-14, "z={z}");
        }
        let l = log_std_normal_interval(1.0).unwrap();
        assert!((l - oracle.ln()).abs() < 1e-10 * oracle.ln().abs());
    }

    #[test]
    fn tiny_argument_asymptotics() {
        let z: f64 = 1e-8;
        let expect = z.ln() + 0.5 * (2.0 / std::f64::consts::PI).ln();
        assert!((log_std_normal_interval(z).unwrap() - expect).abs() < 1e-10);
        // continuity across the 1e-12 switch
        let a = log_std_normal_interval(0.999_999e-12).unwrap();
        let b = log_std_normal_interval(1.000_001e-12).unwrap();
        assert!((a - b).abs() < 1e-5);
    }

    #[test]
    fn domain_errors() {
        assert!(std_normal_interval(-1.0).is_err());
        assert!(std_normal_interval(f64::NAN).is_err());
        assert!(log_std_normal_interval(-0.1).is_err());
        assert!(log_std_normal_tail(f64::NAN).is_err());
    }

    #[test]
    fn tail_asymptotic_is_continuous() {
        let z0 = 25.0 * std::f64::consts::SQRT_2;
        let below = libm::erfc((z0 - 1e-9) * FRAC_1_SQRT_2).ln();
        let above = log_std_normal_tail(z0 + 1e-9).unwrap();
        assert!((below - above).abs() < 1e-9 * below.abs());
        assert!(log_std_normal_tail(1000.0).unwrap().is_finite());
    }

    #[test]
    fn neg_log_matches_direct_form() {
        for &z in &[0.1, 1.0, 3.0, 5.0] {
            let direct = (-log_std_normal_interval(z).unwrap()).ln();
            let got = log_neg_log_interval(z).unwrap();
            assert!((direct - got).abs() < 1e-9, "z={z}");
        }
        // deep in the tail: -ln P ~ P{|g|>z}
        let z: f64 = 20.0;
        assert!((log_neg_log_interval(z).unwrap() - log_std_normal_tail(z).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn stream_determinism_and_moments() {
        assert!(gaussian_stream(SeedSpec::new(1, 2), 0).is_empty());
        let a = gaussian_stream(SeedSpec::new(7, 3), 1000);
        let b = gaussian_stream(SeedSpec::new(7, 3), 1000);
        assert_eq!(a, b);
        assert_ne!(a, gaussian_stream(SeedSpec::new(7, 4), 1000));

        let n = 1_000_000;
        let xs = gaussian_stream(SeedSpec::new(2024, 0), n);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let rn = (n as f64).sqrt();
        assert!(mean.abs() < 4.0 / rn, "mean {mean}");
        assert!((var - 1.0).abs() < 8.0 / rn, "var {var}");
    }

    #[test]
    fn substreams_are_distinct() {
        let s = SeedSpec::new(5, 1);
        let a = gaussian_stream(s.substream(0), 8);
        let b = gaussian_stream(s.substream(1), 8);
        assert_ne!(a, b);
    }

    #[test]
    fn ln_add_exp_basic() {
        assert!((ln_add_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(ln_add_exp(f64::NEG_INFINITY, 3.0), 3.0);
        assert!((ln_add_exp(1000.0, 1000.0) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn interval_is_monotone(a in 0.0f64..40.0, b in 0.0f64..40.0) {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                prop_assert!(std_normal_interval(lo).unwrap() <= std_normal_interval(hi).unwrap());
            }

            #[test]
            fn log_agrees_with_linear(z in 1e-6f64..10.0) {
                let p = std_normal_interval(z).unwrap();
                let lp = log_std_normal_interval(z).unwrap();
                prop_assert!((lp.exp() - p).abs() <= 1e-10 * p);
            }
        }
    }
}
