//! Small numeric helpers: normal distribution functions, quadrature,
//! summary statistics, and seed derivation.

use statrs::distribution::{ContinuousCDF, Normal};

/// erf(t) for 0 <= t < 2 by the Maclaurin series with term recurrence.
fn erf_series(t: f64) -> f64 {
    let t2 = t * t;
    let mut u = t;
    let mut sum = t;
    for n in 1..200 {
        u *= -t2 / n as f64;
        let add = u / (2 * n + 1) as f64;
        sum += add;
        if add.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

/// erfc(t) for t >= 2 by the continued fraction
/// sqrt(pi) e^(t^2) erfc(t) = 1/(t + (1/2)/(t + 1/(t + (3/2)/(t + ...)))),
/// evaluated with the modified Lentz algorithm. Good relative accuracy deep
/// into the tail.
fn erfc_cont_frac(t: f64) -> f64 {
    let mut f = t;
    let mut c = t;
    let mut d = 0.0;
    let mut a = 0.5;
    for _ in 0..300 {
        d = 1.0 / (t + a * d);
        c = t + a / c;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
        a += 0.5;
    }
    (-t * t).exp() / std::f64::consts::PI.sqrt() / f
}

/// Standard normal CDF, accurate to roughly 1e-15 absolute (and to good
/// relative accuracy in the lower tail).
pub fn normal_cdf(x: f64) -> f64 {
    let t = x / std::f64::consts::SQRT_2;
    let phi = if x >= 0.0 {
        if t < 2.0 {
            0.5 * (1.0 + erf_series(t))
        } else {
            1.0 - 0.5 * erfc_cont_frac(t)
        }
    } else if -t < 2.0 {
        0.5 * (1.0 - erf_series(-t))
    } else {
        0.5 * erfc_cont_frac(-t)
    };
    phi.clamp(0.0, 1.0)
}

/// Standard normal quantile function, accurate to better than 1e-10
/// absolute for p in (0, 1). A library starting value is polished with
/// Newton steps against the high-accuracy CDF, so the accuracy does not
/// depend on the starting approximation.
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile argument must be in (0, 1)");
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    let mut x = n.inverse_cdf(p);
    for _ in 0..4 {
        let f = normal_cdf(x) - p;
        let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if pdf <= f64::MIN_POSITIVE {
            break;
        }
        let step = f / pdf;
        x -= step;
        if step.abs() < 1e-14 * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

/// Adaptive Simpson quadrature on [a, b] to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        // conservative acceptance (no 15x Richardson slack); the extra
        // subdivisions are cheap for the smooth integrands used here
        if depth == 0 || delta.abs() <= tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(&f, a, fa, b, fb);
    recurse(&f, a, fa, b, fb, whole, m, fm, tol, 48)
}

/// Arithmetic mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    let ss = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>();
    (ss / (n - 1) as f64).sqrt()
}

/// Ordinary least-squares slope of y against x.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let sxy = x
        .iter()
        .zip(y.iter())
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>();
    let sxx = x.iter().map(|a| (a - mx) * (a - mx)).sum::<f64>();
    sxy / sxx
}

/// Kolmogorov-Smirnov statistic of a sorted sample against the standard
/// normal: sup_x |F_n(x) - Phi(x)|.
pub fn ks_statistic_vs_normal(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let mut sup: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let phi = normal_cdf(x);
        let lo = (i as f64 / n - phi).abs();
        let hi = ((i + 1) as f64 / n - phi).abs();
        sup = sup.max(lo).max(hi);
    }
    sup
}

/// Derives an independent sub-seed from a master seed and an index.
/// splitmix64 finalizer over the xored pair; replicate/trial RNG streams are
/// keyed this way so results do not depend on execution order.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
