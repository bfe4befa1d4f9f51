//! Log-gamma, digamma and trigamma for positive real arguments.

use std::f64::consts::PI;

use crate::error::{invalid, Result};

const LANCZOS_G: f64 = 7.0;
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

/// Shift used before the asymptotic expansions of ψ and ψ'.
const ASYMPTOTIC_FROM: f64 = 6.0;

/// `ln Γ(x)` with no argument check. Lanczos (g = 7, 9 terms) plus reflection
/// below 1/2.
pub(crate) fn ln_gamma_raw(x: f64) -> f64 {
    if x < 0.5 {
        // Γ(x)Γ(1−x) = π / sin(πx)
        return (PI / (PI * x).sin().abs()).ln() - ln_gamma_raw(1.0 - x);
    }
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

pub(crate) fn digamma_raw(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli-number series in 1/x².
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    acc + x.ln() - 0.5 * inv - series
}

pub(crate) fn trigamma_raw(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        * (1.0
            + inv
                * (0.5
                    + inv
                        * (1.0 / 6.0
                            - inv2
                                * (1.0 / 30.0
                                    - inv2
                                        * (1.0 / 42.0
                                            - inv2 * (1.0 / 30.0 - inv2 * (5.0 / 66.0 - inv2 * 691.0 / 2730.0)))))));
    acc + series
}

fn check_positive(x: f64, what: &str) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{what} needs a positive finite argument, got {x}")))
    }
}

pub fn log_gamma(x: f64) -> Result<f64> {
    check_positive(x, "log_gamma")?;
    Ok(ln_gamma_raw(x))
}

pub fn digamma(x: f64) -> Result<f64> {
    check_positive(x, "digamma")?;
    Ok(digamma_raw(x))
}

pub fn trigamma(x: f64) -> Result<f64> {
    check_positive(x, "trigamma")?;
    Ok(trigamma_raw(x))
}
