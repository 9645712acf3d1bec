//! Standard normal tail functions and truncated-normal moments.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Beyond this many standard deviations tail ratios use the continued fraction.
const TAIL_SWITCH: f64 = 6.0;

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn norm_log_pdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * PI).ln()
}

/// Upper tail `Q(x) = 1 - Phi(x)`.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// Mills ratio `Q(x) / phi(x)` for `x >= 0`.
fn mills(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    if x < TAIL_SWITCH {
        return norm_sf(x) / norm_pdf(x);
    }
    // Lentz evaluation of 1/(x+1/(x+2/(x+3/(x+...)))).
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..200 {
        let a = k as f64;
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
    1.0 / f
}

/// Moments of a unit normal truncated to `[a, b]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncatedMoments {
    pub mean: f64,
    pub var: f64,
    /// Natural log of `P(a <= t <= b)`.
    pub log_mass: f64,
}

/// Mean, variance and log-mass of `N(0,1)` restricted to `[a, b]`.
pub fn truncated_std_normal(a: f64, b: f64) -> TruncatedMoments {
    debug_assert!(a <= b);
    if a >= 0.0 {
        return upper_tail(a, b);
    }
    if b <= 0.0 {
        let m = upper_tail(-b, -a);
        return TruncatedMoments { mean: -m.mean, ..m };
    }
    // The interval contains the mode; no cancellation issues.
    let z = 1.0 - norm_sf(b) - norm_sf(-a);
    let (pa, pb) = (norm_pdf(a), norm_pdf(b));
    let apa = if a.is_finite() { a * pa } else { 0.0 };
    let bpb = if b.is_finite() { b * pb } else { 0.0 };
    let mean = (pa - pb) / z;
    let var = (1.0 + (apa - bpb) / z - mean * mean).max(0.0);
    TruncatedMoments { mean, var, log_mass: z.ln() }
}

/// Case `0 <= a <= b`, written relative to `phi(a)` to avoid underflow.
fn upper_tail(a: f64, b: f64) -> TruncatedMoments {
    let ratio = if b.is_infinite() {
        0.0
    } else {
        (-(b - a) * (b + a) * 0.5).exp()
    };
    let d = mills(a) - mills(b) * ratio;
    let bpb = if b.is_infinite() { 0.0 } else { b * ratio };
    let mean = (1.0 - ratio) / d;
    let var = (1.0 + (a - bpb) / d - mean * mean).max(0.0);
    TruncatedMoments {
        mean,
        var,
        log_mass: norm_log_pdf(a) + d.ln(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quad(a: f64, b: f64) -> (f64, f64, f64) {
        let lo = a.max(-12.0);
        let hi = b.min(12.0);
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 } * h * norm_pdf(x);
            z += w;
            m1 += w * x;
            m2 += w * x * x;
        }
        let mean = m1 / z;
        (z, mean, m2 / z - mean * mean)
    }

    #[test]
    fn mills_ratio_is_continuous_at_switch() {
        let below = norm_sf(TAIL_SWITCH - 1e-9) / norm_pdf(TAIL_SWITCH - 1e-9);
        assert_relative_eq!(mills(TAIL_SWITCH), below, max_relative = 1e-8);
    }

    #[test]
    fn truncated_moments_match_quadrature() {
        for &(a, b) in &[
            (-1.0, 2.0),
            (0.5, 1.5),
            (-3.0, -2.5),
            (2.0, f64::INFINITY),
            (f64::NEG_INFINITY, -0.3),
            (-0.01, 0.01),
        ] {
            let t = truncated_std_normal(a, b);
            let (z, m, v) = quad(a, b);
            assert_relative_eq!(t.log_mass.exp(), z, max_relative = 1e-7);
            assert_relative_eq!(t.mean, m, epsilon = 1e-7);
            assert_relative_eq!(t.var, v, epsilon = 1e-7, max_relative = 1e-6);
        }
    }

    #[test]
    fn deep_tail_stays_finite() {
        let t = truncated_std_normal(40.0, f64::INFINITY);
        // Mean of a far tail approaches a + 1/a.
        assert_relative_eq!(t.mean, 40.0 + 1.0 / 40.0, max_relative = 1e-3);
        assert!(t.var > 0.0 && t.var < 1e-3);
        assert!(t.log_mass < -800.0 && t.log_mass.is_finite());
    }

    #[test]
    fn whole_line_is_standard() {
        let t = truncated_std_normal(f64::NEG_INFINITY, f64::INFINITY);
        assert_eq!(t.mean, 0.0);
        assert_relative_eq!(t.var, 1.0, epsilon = 1e-15);
        assert_relative_eq!(t.log_mass, 0.0, epsilon = 1e-15);
    }
}
