//! Standard normal functions and moments of the truncated normal distribution.
//!
//! Tail computations go through the scaled complementary error function
//! `erfcx(x) = exp(x^2) erfc(x)` or the Laplace continued fraction for the
//! Mills ratio, so moments stay accurate for intervals many standard
//! deviations away from the mean.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Exp, Open01};

use crate::error::{Error, Result};
use crate::marginal::LatentInterval;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
// sqrt(2 / pi)
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        return 0.0;
    }
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

#[inline]
pub fn std_normal_ln_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Φ(z).
#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Upper tail 1 - Φ(z), accurate for large positive z.
#[inline]
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z * FRAC_1_SQRT_2)
}

/// Φ⁻¹(p) for p in (0, 1).
///
/// Wichura's AS 241 rational approximation followed by one Newton step on
/// the CDF (or the survival function in the upper half, where `1 - p` is
/// exact).
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidProbability(p));
    }
    let x = ppnd16(p);
    let step = if p < 0.5 {
        (std_normal_cdf(x) - p) / std_normal_pdf(x)
    } else {
        -(std_normal_sf(x) - (1.0 - p)) / std_normal_pdf(x)
    };
    if step.is_finite() {
        Ok(x - step)
    } else {
        Ok(x)
    }
}

/// Φ⁻¹ that maps 0 and 1 to the infinities instead of erroring.
pub(crate) fn std_normal_quantile_ext(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        // p is strictly inside (0, 1) here
        std_normal_quantile(p).unwrap_or(f64::NAN)
    }
}

fn ppnd16(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((2509.080_928_730_122_7 * r + 33430.575_583_588_13) * r
            + 67265.770_927_008_7)
            * r
            + 45921.953_931_549_87)
            * r
            + 13731.693_765_509_461)
            * r
            + 1971.590_950_306_551_3)
            * r
            + 133.141_667_891_784_38)
            * r
            + 3.387_132_872_796_366_5;
        let den = ((((((5226.495_278_852_546 * r + 28729.085_735_721_943) * r
            + 39307.895_800_092_71)
            * r
            + 21213.794_301_586_597)
            * r
            + 5394.196_021_424_751)
            * r
            + 687.187_007_492_057_9)
            * r
            + 42.313_330_701_600_91)
            * r
            + 1.0;
        return q * num / den;
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 0.022_723_844_989_269_184) * r
            + 0.241_780_725_177_450_6)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 0.015_198_666_563_616_457)
            * r
            + 0.148_103_976_427_480_08)
            * r
            + 0.689_767_334_985_1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_9)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 0.014_875_361_290_850_615)
            * r
            + 0.136_929_880_922_735_8)
            * r
            + 0.599_832_206_555_887_9)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// Scaled complementary error function `exp(x^2) * erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    if x < 0.0 {
        let hi = x * x;
        let lo = x.mul_add(x, -hi);
        return 2.0 * hi.exp() * (1.0 + lo) - erfcx(-x);
    }
    if x < 26.0 {
        // x^2 split into hi + lo so exp(x^2) carries no rounding from the square
        let hi = x * x;
        let lo = x.mul_add(x, -hi);
        return hi.exp() * (1.0 + lo) * libm::erfc(x);
    }
    // erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    let mut t = 0.0;
    for k in (1..=40).rev() {
        t = (k as f64 * 0.5) / (x + t);
    }
    1.0 / (PI.sqrt() * (x + t))
}

/// Moments of a normal distribution restricted to a [`LatentInterval`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedMoments {
    pub mean: f64,
    pub var: f64,
    /// Probability the untruncated normal assigns to the interval.
    pub mass: f64,
    /// `ln(mass)`, finite even when `mass` underflows.
    pub log_mass: f64,
    /// Set when the moments could not be resolved numerically and the nearest
    /// endpoint was returned instead.
    pub zero_mass: bool,
}

/// Mean, variance and probability mass of `N(mu, var)` truncated to `interval`.
pub fn truncnorm_moments(mu: f64, var: f64, interval: LatentInterval) -> TruncatedMoments {
    let (lo, hi) = (interval.lower, interval.upper);
    if interval.is_point() {
        return TruncatedMoments {
            mean: lo,
            var: 0.0,
            mass: 0.0,
            log_mass: f64::NEG_INFINITY,
            zero_mass: true,
        };
    }
    if !(var > 0.0) || !var.is_finite() {
        let inside = mu >= lo && mu <= hi;
        return TruncatedMoments {
            mean: mu.clamp(lo, hi),
            var: 0.0,
            mass: if inside { 1.0 } else { 0.0 },
            log_mass: if inside { 0.0 } else { f64::NEG_INFINITY },
            zero_mass: !inside,
        };
    }
    let sd = var.sqrt();
    let a = (lo - mu) / sd;
    let b = (hi - mu) / sd;
    let (m, v, log_mass) = standard_moments(a, b);
    let mean = mu + sd * m;
    let tvar = var * v;
    if !mean.is_finite() || !tvar.is_finite() || !log_mass.is_finite() {
        let nearest = if (lo - mu).abs() <= (hi - mu).abs() {
            lo
        } else {
            hi
        };
        return TruncatedMoments {
            mean: nearest,
            var: 0.0,
            mass: 0.0,
            log_mass: f64::NEG_INFINITY,
            zero_mass: true,
        };
    }
    TruncatedMoments {
        mean: mean.clamp(lo, hi),
        var: tvar.clamp(0.0, var),
        mass: log_mass.exp(),
        log_mass,
        zero_mass: false,
    }
}

/// Moments of N(0, 1) on [a, b] as (mean, variance, ln mass).
fn standard_moments(a: f64, b: f64) -> (f64, f64, f64) {
    if a == f64::NEG_INFINITY && b == f64::INFINITY {
        return (0.0, 1.0, 0.0);
    }
    if b <= 0.0 {
        let (m, v, lm) = standard_moments(-b, -a);
        return (-m, v, lm);
    }
    if a.is_finite() && b.is_finite() {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        if c.abs() * h + 0.5 * h * h <= 8.0 {
            return narrow_moments(c, h);
        }
    }
    if a < 0.0 {
        // straddles zero: no cancellation in the mass
        let lower_tail = std_normal_sf(-a);
        let upper_tail = std_normal_sf(b);
        let z = (1.0 - lower_tail) - upper_tail;
        let pa = std_normal_pdf(a);
        let pb = std_normal_pdf(b);
        let mean = (pa - pb) / z;
        let apa = if a.is_finite() { a * pa } else { 0.0 };
        let bpb = if b.is_finite() { b * pb } else { 0.0 };
        let var = 1.0 + (apa - bpb) / z - mean * mean;
        return (mean, var.max(0.0), z.ln());
    }
    if a < 5.0 {
        let exa = erfcx(a * FRAC_1_SQRT_2);
        let (r, exb) = if b.is_finite() {
            ((-(b - a) * (b + a) * 0.5).exp(), erfcx(b * FRAC_1_SQRT_2))
        } else {
            (0.0, 0.0)
        };
        let zs = exa - r * exb;
        let k = SQRT_2_OVER_PI / zs;
        let mean = k * (1.0 - r);
        let bm = if b.is_finite() { (b - mean) * r } else { 0.0 };
        let var = 1.0 + k * ((a - mean) - bm);
        let log_mass = 0.5f64.ln() - 0.5 * a * a + zs.ln();
        return (mean, var.max(0.0), log_mass);
    }
    let ta = upper_tail(a);
    if !b.is_finite() {
        return (ta.mean, ta.var, ta.log_sf);
    }
    let tb = upper_tail(b);
    // q = P(z > b) / P(z > a)
    let q = (tb.log_sf - ta.log_sf).exp();
    let one_q = 1.0 - q;
    let mean = (ta.mean - q * tb.mean) / one_q;
    let var = (ta.var
        - q * tb.var
        - one_q * (mean - ta.mean).powi(2)
        - q * (tb.mean - ta.mean).powi(2))
        / one_q;
    (mean, var.max(0.0), ta.log_sf + (-q).ln_1p())
}

struct UpperTail {
    mean: f64,
    var: f64,
    log_sf: f64,
}

/// Moments of N(0,1) on [a, ∞) for a ≥ 5 via the Mills-ratio continued fraction
/// λ(a) = a + 1/(a + 2/(a + 3/(a + ...))).
fn upper_tail(a: f64) -> UpperTail {
    let mut k_tail = 0.0;
    for k in (2..=160).rev() {
        k_tail = k as f64 / (a + k_tail);
    }
    let delta = 1.0 / (a + k_tail);
    let lambda = a + delta;
    UpperTail {
        mean: lambda,
        // 1 - λ(λ - a) rewritten without cancellation
        var: delta * (k_tail - delta),
        log_sf: std_normal_ln_pdf(a) - lambda.ln(),
    }
}

fn narrow_moments(c: f64, h: f64) -> (f64, f64, f64) {
    let (nodes, weights) = gauss_legendre();
    let mut i0 = 0.0;
    let mut i1 = 0.0;
    let mut g = [0.0; GL_POINTS];
    for (k, (&x, &w)) in nodes.iter().zip(weights.iter()).enumerate() {
        let s = h * x;
        g[k] = w * (-c * s - 0.5 * s * s).exp();
        i0 += g[k];
        i1 += g[k] * s;
    }
    let shift = i1 / i0;
    let mut i2 = 0.0;
    for (k, &x) in nodes.iter().enumerate() {
        let d = h * x - shift;
        i2 += g[k] * d * d;
    }
    let log_mass = (h * i0).ln() - 0.5 * c * c - LN_SQRT_2PI;
    (c + shift, i2 / i0, log_mass)
}

const GL_POINTS: usize = 32;

fn gauss_legendre() -> &'static ([f64; GL_POINTS], [f64; GL_POINTS]) {
    static RULE: OnceLock<([f64; GL_POINTS], [f64; GL_POINTS])> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_POINTS;
        let mut nodes = [0.0; GL_POINTS];
        let mut weights = [0.0; GL_POINTS];
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        (nodes, weights)
    })
}

/// Draw from `N(mu, var)` truncated to `interval`.
pub fn sample_truncnorm<R: Rng + ?Sized>(
    rng: &mut R,
    mu: f64,
    var: f64,
    interval: LatentInterval,
) -> f64 {
    if interval.is_point() {
        return interval.lower;
    }
    if !(var > 0.0) || !var.is_finite() {
        return mu.clamp(interval.lower, interval.upper);
    }
    let sd = var.sqrt();
    let a = (interval.lower - mu) / sd;
    let b = (interval.upper - mu) / sd;
    let z = sample_standard(rng, a, b);
    (mu + sd * z).clamp(interval.lower, interval.upper)
}

fn sample_standard<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    if b <= 0.0 {
        return -sample_standard(rng, -b, -a);
    }
    let u: f64 = Open01.sample(rng);
    if a < 0.0 {
        let pa = std_normal_sf(-a);
        let pb = 1.0 - std_normal_sf(b);
        return std_normal_quantile_ext(pa + (pb - pa) * u).clamp(a, b);
    }
    if a < 8.0 {
        let qa = std_normal_sf(a);
        let qb = if b.is_finite() { std_normal_sf(b) } else { 0.0 };
        return (-std_normal_quantile_ext(qb + (qa - qb) * u)).clamp(a, b);
    }
    // far tail: rejection sampling
    if b.is_finite() && (b - a) * a < 1.0 {
        loop {
            let z = a + (b - a) * rng.random::<f64>();
            let accept: f64 = Open01.sample(rng);
            if accept <= (0.5 * (a - z) * (a + z)).exp() {
                return z;
            }
        }
    }
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    let exp = Exp::new(rate).expect("positive rate");
    loop {
        let z = a + exp.sample(rng);
        let accept: f64 = Open01.sample(rng);
        if z <= b && accept <= (-0.5 * (z - rate) * (z - rate)).exp() {
            return z;
        }
    }
}
