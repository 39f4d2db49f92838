//! Scalar special functions used by the tape: log-Gamma and digamma.

use std::f64::consts::PI;

/// Lanczos coefficients (g = 7, n = 9).
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

const LANCZOS_G: f64 = 7.0;

/// Natural log of the Gamma function for x > 0.
pub fn lgamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let xm1 = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (xm1 + i as f64);
    }
    let t = xm1 + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (xm1 + 0.5) * t.ln() - t + acc.ln()
}

/// Digamma psi(x) for x > 0: recurrence up to x >= 10, then the asymptotic series.
pub fn digamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli-number series through x^-14; |error| < 1e-14 for x >= 10.
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    acc + x.ln() - 0.5 * inv - series
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lgamma_known_values() {
        assert!(lgamma(1.0).abs() < 1e-12);
        assert!(lgamma(2.0).abs() < 1e-12);
        // Gamma(1/2) = sqrt(pi)
        assert!((lgamma(0.5) - PI.sqrt().ln()).abs() < 1e-12);
        // Gamma(5) = 24
        assert!((lgamma(5.0) - 24.0_f64.ln()).abs() < 1e-12);
        // Gamma(10) = 362880
        assert!((lgamma(10.0) - 362_880.0_f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn lgamma_accuracy_across_range() {
        // Recurrence check: lgamma(x+1) = lgamma(x) + ln(x) on (0, 50].
        let mut x = 0.05;
        while x < 50.0 {
            let lhs = lgamma(x + 1.0);
            let rhs = lgamma(x) + x.ln();
            assert!((lhs - rhs).abs() < 1e-10, "x = {x}: {lhs} vs {rhs}");
            x += 0.173;
        }
    }

    #[test]
    fn digamma_known_values() {
        const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
        assert!((digamma(1.0) + EULER_GAMMA).abs() < 1e-12);
        // psi(2) = 1 - gamma
        assert!((digamma(2.0) - (1.0 - EULER_GAMMA)).abs() < 1e-12);
        // psi(1/2) = -gamma - 2 ln 2
        assert!((digamma(0.5) + EULER_GAMMA + 2.0 * 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn digamma_matches_lgamma_derivative() {
        let eps = 1e-6;
        for &x in &[0.3, 0.9, 1.5, 2.41, 7.7, 23.0, 49.5] {
            let fd = (lgamma(x + eps) - lgamma(x - eps)) / (2.0 * eps);
            let rel = (digamma(x) - fd).abs() / fd.abs().max(1.0);
            assert!(rel < 1e-8, "x = {x}: psi = {}, fd = {fd}", digamma(x));
        }
    }
}
