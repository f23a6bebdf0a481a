//! Standard normal tails and the truncated-normal CDF, evaluated with relative
//! accuracy far into the tails.

use libm::{erf, erfc};
use statrs::distribution::{ContinuousCDF, Normal};

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// Scaled complementary error function `e^{x²} erfc(x)` for `x ≥ 0`.
pub fn erfcx(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        // only used on the non-negative half line internally
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    if x < 3.0 {
        let hi = x * x;
        let lo = x.mul_add(x, -hi);
        return erfc(x) * hi.exp() * lo.exp();
    }
    // continued fraction  1/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + …))))
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..2000 {
        let a = k as f64 / 2.0;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    FRAC_1_SQRT_PI / f
}

/// `ln Q(z)` for `z ≥ 0`, where `Q = 1 − Φ` is the upper tail.
fn ln_upper_tail(z: f64) -> f64 {
    if z == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    (0.5 * erfcx(z / std::f64::consts::SQRT_2)).ln() - 0.5 * z * z
}

/// Upper tail `Q(z) = 1 − Φ(z)`.
pub fn upper_tail(z: f64) -> f64 {
    if z >= 0.0 {
        ln_upper_tail(z).exp()
    } else {
        1.0 - upper_tail(-z)
    }
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    if z < 0.0 {
        upper_tail(-z)
    } else {
        1.0 - upper_tail(z)
    }
}

/// Standard normal quantile, refined by two Newton steps on [`norm_cdf`].
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let mut z = Normal::standard().inverse_cdf(p);
    for _ in 0..2 {
        let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if density > 0.0 {
            z -= (norm_cdf(z) - p) / density;
        }
    }
    z
}

/// `Φ(hi) − Φ(lo)` as `exp(scale) · mantissa`, where `width = hi − lo` is supplied
/// separately so it can be formed without cancellation.
fn phi_diff(lo: f64, hi: f64, width: f64) -> (f64, f64) {
    if lo >= 0.0 {
        tail_diff(lo, hi, width)
    } else if hi <= 0.0 {
        tail_diff(-hi, -lo, width)
    } else {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let left = if lo == f64::NEG_INFINITY { 1.0 } else { erf(-lo * s) };
        let right = if hi == f64::INFINITY { 1.0 } else { erf(hi * s) };
        (0.0, 0.5 * (left + right))
    }
}

/// `Q(lo) − Q(hi)` for `0 ≤ lo ≤ hi`.
fn tail_diff(lo: f64, hi: f64, width: f64) -> (f64, f64) {
    let scale = ln_upper_tail(lo);
    if hi == f64::INFINITY {
        return (scale, 1.0);
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let ratio = (erfcx(hi * s) / erfcx(lo * s)).ln();
    let d = ratio - 0.5 * width * (hi + lo);
    (scale, -d.exp_m1())
}

/// Value of the truncated-normal CDF, flagged when `x` fell outside `[a, b]` and
/// was clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedCdf {
    pub value: f64,
    pub clamped: bool,
}

/// CDF at `x` of `N(mu, sigma2)` truncated to `[a, b]`:
/// `(Φ((x−μ)/σ) − Φ((a−μ)/σ)) / (Φ((b−μ)/σ) − Φ((a−μ)/σ))`.
///
/// Tail differences are taken on the side of the mean where they do not cancel,
/// using `erfcx` so that intervals many standard deviations out stay accurate.
pub fn truncated_normal_cdf(x: f64, mu: f64, sigma2: f64, a: f64, b: f64) -> TruncatedCdf {
    debug_assert!(a < b && sigma2 > 0.0);
    if x <= a {
        return TruncatedCdf {
            value: 0.0,
            clamped: x < a,
        };
    }
    if x >= b {
        return TruncatedCdf {
            value: 1.0,
            clamped: x > b,
        };
    }
    let sd = sigma2.sqrt();
    let std = |v: f64| {
        if v.is_infinite() {
            v
        } else {
            (v - mu) / sd
        }
    };
    let (za, zx, zb) = (std(a), std(x), std(b));
    let wx = if a.is_infinite() { f64::INFINITY } else { (x - a) / sd };
    let wb = if a.is_infinite() || b.is_infinite() {
        f64::INFINITY
    } else {
        (b - a) / sd
    };
    let (s1, m1) = phi_diff(za, zx, wx);
    let (s2, m2) = phi_diff(za, zb, wb);
    if !(m2 > 0.0) {
        // interval carries no representable mass; fall back to position in the interval
        let v = if a.is_finite() && b.is_finite() {
            (x - a) / (b - a)
        } else {
            0.5
        };
        return TruncatedCdf {
            value: v,
            clamped: false,
        };
    }
    let v = ((s1 - s2).exp() * m1 / m2).clamp(0.0, 1.0);
    TruncatedCdf {
        value: v,
        clamped: false,
    }
}
