//! Platform-independent Gaussian CDF.
//!
//! The range coder's frequency tables are built from these functions, so they
//! use only IEEE-754 basic operations (`+ - * /`, `round`) with fixed iteration
//! schedules: the same inputs produce the same bits on every platform. Absolute
//! error of [`phi`] is below `1e-13`.

use std::f64::consts::{LOG2_E, SQRT_2};

#[allow(clippy::excessive_precision)]
const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-01;
#[allow(clippy::excessive_precision)]
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
#[allow(clippy::excessive_precision)]
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_677_94;

/// Below this the Taylor series of `Phi - 1/2` is used, above it the Mills
/// ratio continued fraction.
const SERIES_LIMIT: f64 = 3.0;
const CF_DEPTH: u32 = 240;

/// Deterministic `e^x`.
pub fn exp(x: f64) -> f64 {
    if x.is_nan() {
        return x;
    }
    if x > 709.78 {
        return f64::INFINITY;
    }
    if x < -745.2 {
        return 0.0;
    }
    let n = (x * LOG2_E).round();
    let r = (x - n * LN2_HI) - n * LN2_LO;
    // Taylor polynomial of degree 14 on |r| <= ln2/2.
    let mut p = 1.0;
    let mut k = 14.0;
    while k >= 1.0 {
        p = 1.0 + p * r / k;
        k -= 1.0;
    }
    ldexp(p, n as i32)
}

fn ldexp(v: f64, n: i32) -> f64 {
    let pow2 = |e: i32| f64::from_bits(((e + 1023) as u64) << 52);
    if n > 1023 {
        v * pow2(1023) * pow2(n - 1023)
    } else if n < -1022 {
        v * pow2(-1022) * pow2((n + 1022).max(-1022))
    } else {
        v * pow2(n)
    }
}

/// Deterministic natural logarithm for positive finite `x`.
pub fn ln(x: f64) -> f64 {
    if x.is_nan() || x < 0.0 {
        return f64::NAN;
    }
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    if x.is_infinite() {
        return x;
    }
    let (mut x, mut e) = (x, 0i64);
    if x < f64::MIN_POSITIVE {
        x *= f64::from_bits((1023u64 + 54) << 52);
        e -= 54;
    }
    let bits = x.to_bits();
    e += ((bits >> 52) & 0x7ff) as i64 - 1023;
    let mut m = f64::from_bits((bits & 0x000f_ffff_ffff_ffff) | (1023u64 << 52));
    if m > SQRT_2 {
        m /= 2.0;
        e += 1;
    }
    // ln m = 2 atanh(s), |s| <= 0.1716
    let s = (m - 1.0) / (m + 1.0);
    let s2 = s * s;
    let mut sum = 0.0;
    let mut k = 41.0;
    while k >= 1.0 {
        sum = 1.0 / k + s2 * sum;
        k -= 2.0;
    }
    let e = e as f64;
    e * LN2_HI + (e * LN2_LO + 2.0 * s * sum)
}

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * exp(-0.5 * x * x)
}

/// Upper tail `Q(x) = 1 - Phi(x)` computed without cancellation for `x >= 0`.
pub fn upper_tail(x: f64) -> f64 {
    if x.is_nan() {
        return x;
    }
    if x < 0.0 {
        return 1.0 - upper_tail(-x);
    }
    if x < SERIES_LIMIT {
        0.5 - central_mass(x)
    } else if x > 40.0 {
        0.0
    } else {
        let mut t = x;
        let mut k = CF_DEPTH as f64;
        while k >= 1.0 {
            t = x + k / t;
            k -= 1.0;
        }
        pdf(x) / t
    }
}

/// `Phi(x) - 1/2` by its Taylor series; accurate for `|x| < 3`.
fn central_mass(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 1.0;
    while n < 120.0 {
        term *= -x2 / (2.0 * n);
        let contrib = term / (2.0 * n + 1.0);
        sum += contrib;
        if contrib.abs() < 1e-18 * sum.abs() {
            break;
        }
        n += 1.0;
    }
    FRAC_1_SQRT_2PI * sum
}

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 - upper_tail(x)
    } else {
        upper_tail(-x)
    }
}

/// Mass of `N(0, sigma^2)` on the unit bin centred at `offset`, i.e.
/// `Phi((offset + 1/2)/sigma) - Phi((offset - 1/2)/sigma)`, evaluated
/// symmetrically so the result is even in `offset`.
pub fn unit_bin_mass(offset: f64, sigma: f64) -> f64 {
    let a = offset.abs();
    let hi = (a + 0.5) / sigma;
    let lo = (a - 0.5) / sigma;
    if lo >= 0.0 {
        upper_tail(lo) - upper_tail(hi)
    } else {
        1.0 - upper_tail(hi) - upper_tail(-lo)
    }
}
