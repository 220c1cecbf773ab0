//! Shared oracle numerics for the integration tests.
//!
//! Everything here is independent of the library under test: density
//! integration uses hardcoded Gauss-Legendre nodes, normalization constants
//! come from the exact half-integer gamma recursion, and quantile oracles
//! are plain bisection against the integrated CDFs.

#![allow(dead_code)]

/// 16-point Gauss-Legendre abscissae/weights on [0, 1] (symmetric halves).
const GL: [(f64, f64); 8] = [
    (0.095_012_509_837_637_44, 0.189_450_610_455_068_5),
    (0.281_603_550_779_258_9, 0.182_603_415_044_923_6),
    (0.458_016_777_657_227_4, 0.169_156_519_395_002_5),
    (0.617_876_244_402_643_7, 0.149_595_988_816_576_7),
    (0.755_404_408_355_003_0, 0.124_628_971_255_533_9),
    (0.865_631_202_387_831_7, 0.095_158_511_682_492_78),
    (0.944_575_023_073_232_6, 0.062_253_523_938_647_89),
    (0.989_400_934_991_649_9, 0.027_152_459_411_754_095),
];

/// Composite 16-point Gauss-Legendre quadrature of `f` over [a, b].
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let lo = a + k as f64 * h;
        let mid = lo + 0.5 * h;
        let half = 0.5 * h;
        let mut acc = 0.0;
        for &(x, w) in &GL {
            acc += w * (f(mid - half * x) + f(mid + half * x));
        }
        total += acc * half;
    }
    total
}

/// ln Gamma(two_a / 2) by the exact recursion for integer and half-integer
/// arguments: Gamma(1) = 1, Gamma(1/2) = sqrt(pi), Gamma(z+1) = z Gamma(z).
pub fn ln_gamma_half(two_a: u64) -> f64 {
    assert!(two_a >= 1);
    let mut acc: f64;
    let mut z: f64;
    if two_a % 2 == 0 {
        acc = 0.0; // ln Gamma(1)
        z = 1.0;
    } else {
        acc = 0.5 * std::f64::consts::PI.ln(); // ln Gamma(1/2)
        z = 0.5;
    }
    while z + 0.5 < two_a as f64 / 2.0 + 0.25 {
        acc += z.ln();
        z += 1.0;
    }
    acc
}

/// Standard normal CDF by density integration.
pub fn normal_cdf_oracle(x: f64) -> f64 {
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let body = |t: f64| norm * (-0.5 * t * t).exp();
    let ax = x.abs().min(40.0);
    let panels = 16 + (4.0 * ax) as usize;
    let half = integrate(body, 0.0, ax, panels);
    if x >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

/// Chi-squared CDF with k degrees of freedom via the substitution x = u^2,
/// which removes the integrable singularity at the origin for k = 1.
pub fn chi2_cdf_oracle(k: u64, x: f64) -> f64 {
    assert!(k >= 1);
    if x <= 0.0 {
        return 0.0;
    }
    let ln_norm = (k as f64 / 2.0) * 2.0f64.ln() + ln_gamma_half(k);
    let body = |u: f64| {
        if u == 0.0 && k == 1 {
            return 0.0;
        }
        let ln_f = 2.0f64.ln() + (k as f64 - 1.0) * u.ln() - 0.5 * u * u - ln_norm;
        ln_f.exp()
    };
    let hi = x.sqrt();
    let panels = (64 + 2 * (hi as usize)).min(512);
    integrate(body, 0.0, hi, panels).min(1.0)
}

/// Student t CDF with k degrees of freedom by density integration.
pub fn student_t_cdf_oracle(k: u64, t: f64) -> f64 {
    assert!(k >= 1);
    let kf = k as f64;
    let ln_norm = ln_gamma_half(k + 1)
        - ln_gamma_half(k)
        - 0.5 * (kf * std::f64::consts::PI).ln();
    let body = |s: f64| (ln_norm - 0.5 * (kf + 1.0) * (1.0 + s * s / kf).ln()).exp();
    let at = t.abs();
    // The density has a unit-scale peak at the origin and, for small k, a
    // heavy tail reaching past 1e4; a single uniform grid cannot serve both.
    // Fine panels cover [0, 64], and the smooth tail gets its own grid whose
    // panels stay short relative to their distance from the origin.
    let split = at.min(64.0);
    let panels = 48 + (2.0 * split) as usize;
    let mut half = integrate(&body, 0.0, split, panels);
    if at > split {
        let tail_panels = (((at - split) / 16.0) as usize + 16).min(1024);
        half += integrate(&body, split, at, tail_panels);
    }
    if t >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

/// F distribution CDF via the substitution x = u^2 (regular at 0 for all
/// d1 >= 1); normalization through the exact half-integer beta function.
pub fn f_cdf_oracle(d1: u64, d2: u64, x: f64) -> f64 {
    assert!(d1 >= 1 && d2 >= 1);
    if x <= 0.0 {
        return 0.0;
    }
    let (a, b) = (d1 as f64, d2 as f64);
    let ln_beta = ln_gamma_half(d1) + ln_gamma_half(d2) - ln_gamma_half(d1 + d2);
    let ln_scale = 0.5 * a * (a / b).ln();
    let body = |u: f64| {
        if u == 0.0 && d1 == 1 {
            return 0.0;
        }
        let ln_f = 2.0f64.ln() + ln_scale + (a - 1.0) * u.ln()
            - 0.5 * (a + b) * (1.0 + a * u * u / b).ln()
            - ln_beta;
        ln_f.exp()
    };
    let hi = x.sqrt();
    let panels = (96 + 4 * (hi as usize)).min(768);
    integrate(body, 0.0, hi, panels).min(1.0)
}

/// Quantile by bisection against a monotone CDF. The bracket [lo, hi] must
/// straddle the quantile; 200 halvings take it to full f64 resolution.
pub fn bisect_quantile<F: Fn(f64) -> f64>(cdf: F, p: f64, mut lo: f64, mut hi: f64) -> f64 {
    assert!(cdf(lo) <= p && cdf(hi) >= p, "bracket does not straddle p");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Binomial standard error of a frequency estimate.
pub fn mc_stderr(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Empirical quantile (linear interpolation) of an unsorted slice.
pub fn empirical_quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

/// Closed-form calibration of the oracles themselves; call from a test
/// before trusting the quadrature at scale.
pub fn assert_oracles_match_closed_forms() {
    // chi2 with 2 dof is Exp(mean 2).
    let x = 3.7;
    assert!((chi2_cdf_oracle(2, x) - (1.0 - (-x / 2.0).exp())).abs() < 1e-13);
    // t with 1 dof is Cauchy.
    let t = 2.3f64;
    let cauchy = 0.5 + t.atan() / std::f64::consts::PI;
    assert!((student_t_cdf_oracle(1, t) - cauchy).abs() < 1e-12);
    // F(d, d) has median exactly 1.
    assert!((f_cdf_oracle(6, 6, 1.0) - 0.5).abs() < 1e-13);
    // Normal CDF at 1.96.
    assert!((normal_cdf_oracle(1.959_963_984_540_054) - 0.975).abs() < 1e-13);
}
