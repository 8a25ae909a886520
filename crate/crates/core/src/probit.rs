//! Standard normal helpers for the probit link and truncated-normal
//! augmentation.

use statrs::function::erf::{erfc, erfc_inv};

use crate::rng::{open_unit, std_normal, FmRng};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn normal_pdf(t: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * t * t).exp()
}

#[inline]
pub fn normal_cdf(t: f64) -> f64 {
    0.5 * erfc(-t / std::f64::consts::SQRT_2)
}

/// Quantile function of the standard normal; `u` in (0, 1).
///
/// `erfc_inv` alone is good to about 1e-11; one Newton step on the side of
/// the smaller tail brings it to rounding level.
pub fn normal_quantile(u: f64) -> f64 {
    let x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u);
    let pdf = normal_pdf(x);
    if !x.is_finite() || pdf == 0.0 {
        return x;
    }
    if u < 0.5 {
        x - (normal_cdf(x) - u) / pdf
    } else {
        x + (normal_cdf(-x) - (1.0 - u)) / pdf
    }
}

/// Inverse Mills ratio `phi(t) / Phi(t)`.
///
/// Below `t = -8` the ratio of two underflowing quantities is replaced by the
/// asymptotic series `x / (1 - 1/x^2 + 3/x^4 - 15/x^6 + 105/x^8)`, `x = -t`.
pub fn inverse_mills(t: f64) -> f64 {
    if t < -8.0 {
        let x = -t;
        let x2 = 1.0 / (x * x);
        x / (1.0 - x2 * (1.0 - x2 * (3.0 - x2 * (15.0 - 105.0 * x2))))
    } else {
        normal_pdf(t) / normal_cdf(t)
    }
}

/// Mean of a unit-variance normal centred at `center` restricted to the
/// half-line whose sign is `label` (+1 or -1).
#[inline]
pub fn truncated_mean(center: f64, label: f64) -> f64 {
    center + label * inverse_mills(label * center)
}

/// Draws `t ~ N(0, 1)` conditioned on `t > lower`.
///
/// Inverse-CDF on the upper tail mass for `lower <= 6`, Robert's (1995)
/// exponential-proposal rejection sampler beyond.
pub fn sample_lower_truncated(rng: &mut FmRng, lower: f64) -> f64 {
    if lower <= 6.0 {
        let tail = normal_cdf(-lower);
        let t = -normal_quantile(open_unit(rng) * tail);
        // guard against the quantile rounding onto the boundary
        t.max(lower)
    } else {
        let rate = 0.5 * (lower + (lower * lower + 4.0).sqrt());
        loop {
            let z = lower - open_unit(rng).ln() / rate;
            let d = z - rate;
            if open_unit(rng) <= (-0.5 * d * d).exp() {
                return z;
            }
        }
    }
}

/// Draws `z ~ N(center, 1)` conditioned on `sign(z) = label`.
pub fn sample_truncated(rng: &mut FmRng, center: f64, label: f64) -> f64 {
    // label * z = label * center + t with t > -label * center
    let m = label * center;
    label * (m + sample_lower_truncated(rng, -m))
}

/// Draws `N(mean, variance)`.
#[inline]
pub fn sample_normal(rng: &mut FmRng, mean: f64, variance: f64) -> f64 {
    mean + variance.sqrt() * std_normal(rng)
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln sigmoid(t)` without overflow for large `|t|`.
#[inline]
pub fn ln_sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        -(-t).exp().ln_1p()
    } else {
        t - t.exp().ln_1p()
    }
}

/// `ln Phi(t)`, switching to the Mills-ratio form in the far left tail.
pub fn ln_normal_cdf(t: f64) -> f64 {
    if t < -8.0 {
        // Phi(t) = phi(t) / inverse_mills(t)
        -0.5 * t * t - 0.5 * (2.0 * std::f64::consts::PI).ln() - inverse_mills(t).ln()
    } else {
        normal_cdf(t).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    // Simpson's rule on [a, b] with n (even) panels.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn truncated_mean_matches_quadrature() {
        let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        for &(c, y) in &[(0.0_f64, 1.0_f64), (0.7, -1.0), (-1.3, 1.0), (2.5, 1.0)] {
            // support of label * z > 0, 12 sd past the centre is negligible
            let (a, b) = if y > 0.0 {
                (0.0, c.max(0.0) + 12.0)
            } else {
                (c.min(0.0) - 12.0, 0.0)
            };
            let mass = simpson(|z| pdf(z - c), a, b, 200_000);
            let first = simpson(|z| z * pdf(z - c), a, b, 200_000);
            let oracle = first / mass;
            assert!(
                (truncated_mean(c, y) - oracle).abs() < 1e-9,
                "c={c} y={y}: {} vs {oracle}",
                truncated_mean(c, y)
            );
        }
        assert!((truncated_mean(0.0, 1.0) - 0.797_884_56).abs() < 1e-8);
    }

    #[test]
    fn mills_asymptotic_is_continuous() {
        let left = inverse_mills(-8.0 - 1e-12);
        let right = inverse_mills(-8.0 + 1e-12);
        assert!((left - right).abs() / right < 1e-6, "{left} {right}");
        assert!(inverse_mills(-40.0).is_finite());
        assert!((inverse_mills(-40.0) - 40.0).abs() < 0.03);
    }

    #[test]
    fn truncated_sampler_mean() {
        let mut rng = rng_from_seed(1);
        let n = 100_000;
        let m: f64 = (0..n)
            .map(|_| sample_truncated(&mut rng, 0.0, 1.0))
            .sum::<f64>()
            / n as f64;
        assert!((m - 0.797_884_56).abs() < 0.01, "{m}");
    }

    #[test]
    fn truncated_sampler_respects_sign_in_both_regimes() {
        let mut rng = rng_from_seed(2);
        for &c in &[-20.0, -7.0, -3.0, 0.0, 3.0, 7.0, 20.0] {
            let mut sum = 0.0;
            for _ in 0..20_000 {
                let z = sample_truncated(&mut rng, c, 1.0);
                assert!(z >= 0.0);
                let z2 = sample_truncated(&mut rng, c, -1.0);
                assert!(z2 <= 0.0);
                sum += z;
            }
            let mean = sum / 20_000.0;
            assert!(
                (mean - truncated_mean(c, 1.0)).abs() < 0.02,
                "c={c}: {mean}"
            );
        }
    }

    #[test]
    fn log_links() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((ln_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert!((ln_sigmoid(2.0) - sigmoid(2.0).ln()).abs() < 1e-15);
        assert!((ln_normal_cdf(-7.9) - normal_cdf(-7.9).ln()).abs() < 1e-9);
        assert!((ln_normal_cdf(-8.1) - normal_cdf(-8.1).ln()).abs() < 1e-6);
        assert!(
            (normal_quantile(normal_cdf(1.3)) - 1.3).abs() < 1e-12,
            "{}",
            normal_quantile(normal_cdf(1.3)) - 1.3
        );
    }
}
