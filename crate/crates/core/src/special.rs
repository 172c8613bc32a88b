//! Special functions: Gamma wrappers, unit-ball volume and modified Bessel
//! functions of the first kind in exponentially scaled form.

use std::f64::consts::PI;

pub fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// Volume of the unit ball in dimension `n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    PI.powf(h) / gamma(h + 1.0)
}

/// Argument above which the asymptotic expansion replaces the power series.
const ASYMPTOTIC_SWITCH: f64 = 25.0;

/// `y^{-nu} I_nu(y) e^{-y}` for `nu > -1`, `y >= 0`.
///
/// The reduced form is an entire function of `y^2`, finite at the origin
/// where it equals `2^{-nu} / Gamma(nu + 1)`.
pub fn reduced_bessel_i_scaled(nu: f64, y: f64) -> f64 {
    debug_assert!(nu > -1.0);
    debug_assert!(y >= 0.0);
    if y < ASYMPTOTIC_SWITCH {
        let quarter = 0.25 * y * y;
        let mut term = (-nu * std::f64::consts::LN_2 - ln_gamma(nu + 1.0)).exp();
        let mut sum = term;
        for k in 1..400 {
            let kf = k as f64;
            term *= quarter / (kf * (kf + nu));
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
        }
        sum * (-y).exp()
    } else {
        scaled_asymptotic(nu, y) * y.powf(-nu)
    }
}

/// `e^{-y} I_nu(y)` for large `y` (Hankel expansion, truncated at the
/// smallest term).
fn scaled_asymptotic(nu: f64, y: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut prev = f64::INFINITY;
    for k in 1..200 {
        let odd = (2 * k - 1) as f64;
        term *= -(mu - odd * odd) / (k as f64 * 8.0 * y);
        if term.abs() >= prev {
            break;
        }
        sum += term;
        prev = term.abs();
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum / (2.0 * PI * y).sqrt()
}

/// `e^{-y} I_nu(y)` for `nu > -1`, `y > 0`.
pub fn bessel_i_scaled(nu: f64, y: f64) -> f64 {
    if y == 0.0 {
        return if nu == 0.0 { 1.0 } else if nu > 0.0 { 0.0 } else { f64::INFINITY };
    }
    reduced_bessel_i_scaled(nu, y) * y.powf(nu)
}

/// The ratio `I_{nu+1}(y) / I_nu(y)`, equal to zero at `y = 0`.
pub fn bessel_i_ratio(nu: f64, y: f64) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    y * reduced_bessel_i_scaled(nu + 1.0, y) / reduced_bessel_i_scaled(nu, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn integer_orders_match_tabulated_values() {
        // Abramowitz & Stegun table 9.8
        assert_relative_eq!(bessel_i_scaled(0.0, 1.0) * 1f64.exp(), 1.266_065_877_752_008_4, max_relative = 1e-14);
        assert_relative_eq!(bessel_i_scaled(1.0, 1.0) * 1f64.exp(), 0.565_159_103_992_485_0, max_relative = 1e-14);
        assert_relative_eq!(bessel_i_scaled(0.0, 10.0), 0.127_833_337_163_428_2, max_relative = 1e-13);
    }

    #[test]
    fn half_orders_reduce_to_hyperbolic_functions() {
        for &x in &[1e-3, 0.3, 2.0, 9.0, 24.9, 25.1, 40.0, 300.0] {
            let c = (2.0 / (PI * x)).sqrt();
            let cosh_scaled = 0.5 * (1.0 + (-2.0 * x).exp());
            let sinh_scaled = 0.5 * (1.0 - (-2.0 * x).exp());
            assert_relative_eq!(bessel_i_scaled(-0.5, x), c * cosh_scaled, max_relative = 1e-13);
            assert_relative_eq!(bessel_i_scaled(0.5, x), c * sinh_scaled, max_relative = 1e-13);
        }
    }

    #[test]
    fn series_and_asymptotic_branches_agree_at_switch() {
        for &nu in &[-0.75, -0.25, 0.0, 0.3, 1.0, 2.5] {
            let below = reduced_bessel_i_scaled(nu, ASYMPTOTIC_SWITCH - 1e-9);
            let above = reduced_bessel_i_scaled(nu, ASYMPTOTIC_SWITCH + 1e-9);
            // the two arguments differ by 2e-9 and the log-derivative is up to 0.1
            assert_relative_eq!(below, above, max_relative = 5e-10);
        }
    }

    #[test]
    fn ratio_satisfies_recurrence() {
        // I_{nu-1} - I_{nu+1} = (2 nu / y) I_nu
        for &nu in &[0.25, 0.75, 1.5] {
            for &y in &[0.1, 1.0, 7.0, 30.0] {
                let lhs = bessel_i_scaled(nu - 1.0, y) - bessel_i_scaled(nu + 1.0, y);
                let rhs = 2.0 * nu / y * bessel_i_scaled(nu, y);
                assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn unit_ball_volumes() {
        assert_relative_eq!(unit_ball_volume(1), 2.0, max_relative = 1e-15);
        assert_relative_eq!(unit_ball_volume(2), PI, max_relative = 1e-15);
        assert_relative_eq!(unit_ball_volume(3), 4.0 * PI / 3.0, max_relative = 1e-15);
    }
}
