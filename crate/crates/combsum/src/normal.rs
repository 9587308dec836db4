//! Standard normal density, distribution function, and upper tail.
//!
//! The upper tail is evaluated through the complementary error function,
//! never as `1.0 - cdf(u)`: past `u ~ 6` the subtraction would cancel every
//! significant digit while `erfc` keeps full relative accuracy out to the
//! underflow edge.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Density of N(0, 1).
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Distribution function of N(0, 1).
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail of N(0, 1), `P(Z >= u)`, accurate in relative terms for
/// large `u`.
pub fn sf(u: f64) -> f64 {
    0.5 * libm::erfc(u * FRAC_1_SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Maclaurin series for erf, alternating and rapidly convergent for
    /// |x| <= 2; independent of libm.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0u32;
        loop {
            n += 1;
            // term_n = (-1)^n x^(2n+1) / (n! (2n+1))
            term *= -x * x / n as f64;
            let contrib = term / (2 * n + 1) as f64;
            sum += contrib;
            if contrib.abs() <= 1e-20 * sum.abs() {
                break;
            }
        }
        sum * 2.0 / PI.sqrt()
    }

    /// Laplace continued fraction for the Mills ratio, evaluated by backward
    /// recurrence; converges quickly for u >= 4.
    fn tail_continued_fraction(u: f64) -> f64 {
        let mut f = 0.0;
        for k in (1..=500u32).rev() {
            f = k as f64 / (u + f);
        }
        pdf(u) / (u + f)
    }

    /// Reference tails computed from two independent expansions and frozen;
    /// the series/fraction code below re-derives them on every run.
    const TAILS: [(f64, f64); 5] = [
        (0.0, 0.5),
        (1.0, 0.158_655_253_931_457_05),
        (2.0, 0.022_750_131_948_179_21),
        (5.0, 2.866_515_718_791_939e-7),
        (8.0, 6.220_960_574_271_784e-16),
    ];

    fn oracle_tail(u: f64) -> f64 {
        if u <= 2.5 {
            0.5 * (1.0 - erf_series(u * FRAC_1_SQRT_2))
        } else {
            tail_continued_fraction(u)
        }
    }

    #[test]
    fn oracle_reproduces_frozen_tails() {
        for &(u, want) in &TAILS {
            let got = oracle_tail(u);
            assert!(
                (got - want).abs() <= 1e-13 * want.max(1e-300),
                "oracle at u={u}: {got:e} vs {want:e}"
            );
        }
    }

    #[test]
    fn sf_matches_oracle_to_twelve_digits() {
        for &(u, want) in &TAILS {
            let got = sf(u);
            assert!(
                (got - want).abs() <= 1e-12 * want,
                "sf({u}) = {got:e}, want {want:e}"
            );
        }
    }

    #[test]
    fn cdf_and_sf_are_complementary_where_both_are_order_one() {
        for u in [-1.5, -0.3, 0.0, 0.7, 1.2, 2.4] {
            assert!((cdf(u) + sf(u) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sf_keeps_relative_accuracy_where_naive_subtraction_dies() {
        // 1 - cdf(9) has no correct digits left in f64; sf(9) must stay
        // within the continued-fraction oracle.
        let got = sf(9.0);
        let want = tail_continued_fraction(9.0);
        assert!((got - want).abs() <= 1e-12 * want);
        assert!(got > 0.0);
    }
}
