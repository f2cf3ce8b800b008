//! Temporal correlation from the Jakes Doppler spectrum.

use std::f64::consts::{FRAC_PI_4, PI};

const SERIES_LIMIT: f64 = 8.0;

/// Bessel function of the first kind, order zero.
///
/// Power series below |x| = 8, Hankel asymptotic expansion above (truncated
/// at its smallest term).
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x < SERIES_LIMIT {
        // Σ (-x²/4)^k / (k!)²
        let q = -0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..200 {
            term *= q / ((k * k) as f64);
            sum += term;
            if term.abs() <= 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        sum
    } else {
        // a_k = Π_{i≤k} -(2i-1)² / (8 i x)
        let mut p = 1.0;
        let mut q = 0.0;
        let mut term = 1.0f64;
        for k in 1..60 {
            let next = term * -(((2 * k - 1) * (2 * k - 1)) as f64) / (8.0 * k as f64 * x);
            if next.abs() >= term.abs() {
                break;
            }
            term = next;
            // odd k contribute to Q with alternating sign, even k to P
            if k % 2 == 1 {
                q += if (k / 2) % 2 == 0 { term } else { -term };
            } else {
                p += if (k / 2) % 2 == 0 { term } else { -term };
            }
        }
        let chi = x - FRAC_PI_4;
        (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
    }
}

/// `ρ = J₀(2π f_d T)` clipped to `[1e-6, 1]`.
pub fn jakes_rho(doppler_hz: f64, interval_s: f64) -> f64 {
    debug_assert!(doppler_hz >= 0.0 && interval_s >= 0.0);
    bessel_j0(2.0 * PI * doppler_hz * interval_s).clamp(1e-6, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn j0_at_zero_and_one() {
        assert_eq!(bessel_j0(0.0), 1.0);
        assert!((bessel_j0(1.0) - 0.765_197_686_557_966_6).abs() < 1e-14);
    }

    #[test]
    fn j0_continuous_across_split() {
        let below = bessel_j0(8.0 - 1e-9);
        let above = bessel_j0(8.0);
        assert!((below - above).abs() < 1e-6, "{below} vs {above}");
        // J0(8) = 0.171650807137553906...
        assert!((above - 0.171_650_807_137_553_9).abs() < 1e-6);
    }

    #[test]
    fn j0_large_argument() {
        // J0(20) = 0.167024664340583...
        assert!((bessel_j0(20.0) - 0.167_024_664_340_583).abs() < 1e-10);
    }

    #[test]
    fn jakes_limits() {
        assert_eq!(jakes_rho(0.0, 1e-3), 1.0);
        let at_first_zero = 2.404826 / (2.0 * PI);
        assert_eq!(jakes_rho(at_first_zero, 1.0), 1e-6);
        let unit = 1.0 / (2.0 * PI);
        assert!((jakes_rho(unit, 1.0) - 0.76520).abs() < 1e-5);
    }
}
