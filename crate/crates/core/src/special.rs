//! Gamma-family special functions and the chi-squared / normal distributions
//! needed for cutoffs, consistency factors, Q-Q plots and class-map axes.
//!
//! The regularized incomplete gamma function is evaluated with its power
//! series below `a + 1` and with a modified Lentz continued fraction above,
//! which keeps both tails accurate to a few ulps. Quantiles are found by a
//! bracketed Newton iteration that solves against whichever tail is smaller.

use std::f64::consts::{PI, SQRT_2};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("probability {0} outside the open interval (0, 1)")]
    Probability(f64),
    #[error("degrees of freedom must be at least 1, got {0}")]
    DegreesOfFreedom(usize),
}

const EPS: f64 = 1e-17;
const MAX_ITER: usize = 10_000;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_continued_fraction(a: f64, x: f64) -> f64 {
    let tiny = f64::MIN_POSITIVE / EPS;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_continued_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_continued_fraction(a, x)
    }
}

pub fn chi2_cdf(x: f64, dof: usize) -> f64 {
    gamma_p(0.5 * dof as f64, 0.5 * x)
}

pub fn chi2_sf(x: f64, dof: usize) -> f64 {
    gamma_q(0.5 * dof as f64, 0.5 * x)
}

pub fn chi2_pdf(x: f64, dof: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = 0.5 * dof as f64;
    ((k - 1.0) * x.ln() - 0.5 * x - k * 2f64.ln() - ln_gamma(k)).exp()
}

fn check_prob(prob: f64) -> Result<(), DomainError> {
    if prob > 0.0 && prob < 1.0 {
        Ok(())
    } else {
        Err(DomainError::Probability(prob))
    }
}

/// Quantile of the chi-squared distribution with `dof` degrees of freedom.
pub fn chi2_quantile(dof: usize, prob: f64) -> Result<f64, DomainError> {
    if dof == 0 {
        return Err(DomainError::DegreesOfFreedom(dof));
    }
    check_prob(prob)?;
    let k = dof as f64;
    // Solve on the smaller tail so that the residual keeps full relative precision.
    let upper = prob > 0.5;
    let target = if upper { 1.0 - prob } else { prob };
    let residual = |x: f64| {
        if upper {
            target - chi2_sf(x, dof)
        } else {
            chi2_cdf(x, dof) - target
        }
    };

    let mut lo = 0.0;
    let mut hi = k.max(1.0);
    while residual(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }

    // Wilson-Hilferty starting point
    let z = normal_quantile(prob)?;
    let c = 2.0 / (9.0 * k);
    let mut x = k * (1.0 - c + z * c.sqrt()).powi(3);
    if !(x > lo && x < hi) {
        x = 0.5 * (lo + hi);
    }

    for _ in 0..200 {
        let r = residual(x);
        if r == 0.0 {
            return Ok(x);
        }
        if r < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let pdf = chi2_pdf(x, dof);
        let mut next = if pdf > 0.0 { x - r / pdf } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs() || hi - lo <= 1e-15 * hi {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// Error function, from `P(1/2, x^2)`.
pub fn erf(x: f64) -> f64 {
    let v = gamma_p(0.5, x * x);
    if x < 0.0 {
        -v
    } else {
        v
    }
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        1.0 + gamma_p(0.5, x * x)
    } else {
        gamma_q(0.5, x * x)
    }
}

/// Inverse error function on (-1, 1).
pub fn erf_inv(y: f64) -> Result<f64, DomainError> {
    if !(y > -1.0 && y < 1.0) {
        return Err(DomainError::Probability(0.5 * (1.0 + y)));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let mut x = normal_quantile(0.5 * (1.0 + y))? / SQRT_2;
    let two_over_sqrt_pi = 2.0 / PI.sqrt();
    for _ in 0..4 {
        let step = (erf(x) - y) / (two_over_sqrt_pi * (-x * x).exp());
        if !step.is_finite() {
            break;
        }
        x -= step;
        if step.abs() <= 1e-16 * x.abs() {
            break;
        }
    }
    Ok(x)
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Standard normal quantile: Acklam's rational approximation refined by
/// Halley steps against `normal_cdf`.
pub fn normal_quantile(prob: f64) -> Result<f64, DomainError> {
    check_prob(prob)?;
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let p_low = 0.024_25;
    let mut x = if prob < p_low {
        let q = (-2.0 * prob.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if prob <= 1.0 - p_low {
        let q = prob - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - prob).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    for _ in 0..3 {
        // residual on the smaller tail
        let e = if x < 0.0 {
            normal_cdf(x) - prob
        } else {
            (1.0 - prob) - normal_cdf(-x)
        };
        let u = e / normal_pdf(x);
        if !u.is_finite() {
            break;
        }
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(x)
}
