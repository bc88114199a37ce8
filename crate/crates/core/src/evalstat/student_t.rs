//! Student's t tail probabilities through the regularized incomplete beta
//! function.

/// Default absolute tolerance of the continued fraction.
pub const DEFAULT_TOLERANCE: f64 = 1e-12;

const MAX_ITER: usize = 10_000;
const TINY: f64 = 1e-300;

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

/// Natural log of the gamma function for positive arguments (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
/// Stops once a convergent changes the running value by less than `tol`
/// in absolute terms.
fn beta_cf(a: f64, b: f64, x: f64, tol: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        let before = h;
        h *= delta;
        if (h - before).abs() <= tol * h.abs().min(1.0) || (delta - 1.0).abs() < f64::EPSILON {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64, tol: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x, tol) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x, tol) / b
    }
}

/// Upper tail `P(T > t)` for `t ≥ 0`.
fn upper_tail(t: f64, df: f64, tol: f64) -> f64 {
    let x = df / (df + t * t);
    0.5 * inc_beta(df / 2.0, 0.5, x, tol)
}

/// Two-sided p-value `P(|T| ≥ |t|)`. Returns `None` when `df` is zero.
pub fn student_t_two_sided_p(t: f64, df: u64) -> Option<f64> {
    student_t_two_sided_p_with_tol(t, df, DEFAULT_TOLERANCE)
}

pub fn student_t_two_sided_p_with_tol(t: f64, df: u64, tol: f64) -> Option<f64> {
    if df == 0 || t.is_nan() {
        return None;
    }
    if t == 0.0 {
        return Some(1.0);
    }
    Some((2.0 * upper_tail(t.abs(), df as f64, tol)).min(1.0))
}

/// One-sided p-value `P(T ≥ t)`.
pub fn student_t_upper_p(t: f64, df: u64) -> Option<f64> {
    if df == 0 || t.is_nan() {
        return None;
    }
    let tail = upper_tail(t.abs(), df as f64, DEFAULT_TOLERANCE);
    Some(if t >= 0.0 { tail } else { 1.0 - tail })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_at_known_points() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        // ln(9!) = ln 362880
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn median_and_cauchy() {
        for df in [1, 2, 7, 48, 1000] {
            assert_eq!(student_t_two_sided_p(0.0, df), Some(1.0));
        }
        let p = student_t_two_sided_p(1.0, 1).unwrap();
        assert!((p - 0.5).abs() < 1e-12, "{p}");
        assert_eq!(student_t_two_sided_p(1.0, 0), None);
    }

    #[test]
    fn df_two_closed_form() {
        // P(|T| > t) = 1 - t / sqrt(2 + t²) for two degrees of freedom
        for t in [0.1, 0.5, 1.0, 3.0, 10.0] {
            let exact = 1.0 - t / (2.0f64 + t * t).sqrt();
            let p = student_t_two_sided_p(t, 2).unwrap();
            assert!((p - exact).abs() < 1e-13 * exact.max(1e-3), "{t}: {p} vs {exact}");
        }
    }

    #[test]
    fn one_sided_is_half_for_positive_t() {
        let two = student_t_two_sided_p(2.5, 10).unwrap();
        let one = student_t_upper_p(2.5, 10).unwrap();
        assert!((2.0 * one - two).abs() < 1e-15);
        assert!((student_t_upper_p(-2.5, 10).unwrap() - (1.0 - one)).abs() < 1e-15);
    }
}
