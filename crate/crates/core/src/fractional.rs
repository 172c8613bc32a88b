//! Fractional powers `(-A)^s` through the semigroup, potentials `I_alpha`,
//! the Poisson-semigroup representation and the classical Riesz oracle.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg;
use crate::quadrature::{GaussLegendre, LogGrid};
use crate::semigroup::{poisson_weight, semigroup_profile, Estimate, IntegralValue, LogIntegral, QuadratureSpec};
use crate::special::{gamma, unit_ball_volume};
use crate::testfuncs::Field;
use crate::operator::OperatorSpec;

/// Orders of the fractional operators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FracParams {
    pub s: f64,
    pub alpha: f64,
}

impl FracParams {
    pub fn validate(&self) -> Result<()> {
        check_order(self.s)?;
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(domain(format!("potential order must lie in (0, 2), got {}", self.alpha)));
        }
        Ok(())
    }
}

fn check_order(s: f64) -> Result<()> {
    if !(s > 0.0 && s < 1.0) {
        return Err(domain(format!("fractional order must lie in (0, 1), got {s}")));
    }
    Ok(())
}

/// Time window of the log-grid integrals; tails outside are corrected
/// analytically (left) or by a fitted power law (right).
pub const T_MIN: f64 = 1e-10;
pub const T_MAX: f64 = 1e12;

/// Upper limit of an inner integral whose integrand only reaches its
/// asymptotic regime once the variable exceeds `scale`.
fn inner_limit(scale: f64) -> f64 {
    T_MAX.max(1e6 * scale)
}

/// `s / Gamma(1 - s)`.
pub fn balakrishnan_constant(s: f64) -> f64 {
    s / gamma(1.0 - s)
}

/// `int_0^inf t^{-1-s} inc(t) dt` where `inc(t) = F(t) - F(0) = O(t)`.
pub fn balakrishnan_integral(s: f64, step: f64, inc: impl Fn(f64) -> Result<f64> + Sync) -> Result<IntegralValue> {
    LogIntegral::new(T_MIN, T_MAX, step, Some(1.0 - s)).run(|t| Ok(t.powf(-s) * inc(t)?))
}

fn estimate(scale: f64, v: IntegralValue) -> Estimate {
    Estimate { value: scale * v.value, stderr: (scale * v.error).abs() }
}

/// `(-A)^s f(X) = -(s / Gamma(1-s)) int_0^inf t^{-1-s} (P_t f(X) - f(X)) dt`.
pub fn fractional_power(spec: &OperatorSpec, f: &dyn Field, s: f64, x: &[f64], quad: &QuadratureSpec) -> Result<Estimate> {
    check_order(s)?;
    let profile = semigroup_profile(spec, f, x, quad);
    let f0 = f.value(x);
    let v = balakrishnan_integral(s, quad.log_step(), |t| Ok(profile(t)? - f0))?;
    Ok(estimate(-balakrishnan_constant(s), v))
}

/// Reject drifts for which the potential integral cannot converge.
fn require_nonnegative_trace(spec: &OperatorSpec) -> Result<()> {
    if spec.trace_b < 0.0 {
        return Err(Error::Divergent(format!(
            "tr B = {} < 0: P_t f does not decay, so int t^(alpha/2-1) P_t f dt diverges",
            spec.trace_b
        )));
    }
    Ok(())
}

/// `I_alpha f(X) = (1 / Gamma(alpha/2)) int_0^inf t^{alpha/2 - 1} P_t f(X) dt`.
pub fn riesz_potential(spec: &OperatorSpec, f: &dyn Field, alpha: f64, x: &[f64], quad: &QuadratureSpec) -> Result<Estimate> {
    FracParams { s: 0.5, alpha }.validate()?;
    require_nonnegative_trace(spec)?;
    let profile = semigroup_profile(spec, f, x, quad);
    let a = alpha / 2.0;
    let v = LogIntegral::new(T_MIN, T_MAX, quad.log_step(), Some(a)).run(|t| Ok(t.powf(a) * profile(t)?))?;
    Ok(estimate(1.0 / gamma(a), v))
}

/// `(-A)^s f(X) = -(2s / Gamma(1-2s)) int_0^inf z^{-1-2s} (P_z f(X) - f(X)) dz`
/// through the Poisson semigroup, for `0 < s < 1/2`.
pub fn fractional_via_poisson(spec: &OperatorSpec, f: &dyn Field, s: f64, x: &[f64], quad: &QuadratureSpec) -> Result<Estimate> {
    if !(s > 0.0 && s < 0.5) {
        return Err(domain(format!("the Poisson representation needs 0 < s < 1/2, got {s}")));
    }
    let step = quad.log_step();
    let t_grid = LogGrid::new(1e-16, 1e16, step);
    let times = t_grid.times();
    let profile = semigroup_profile(spec, f, x, quad);
    let values: Result<Vec<f64>> = times.par_iter().map(|&t| profile(t)).collect();
    let values = values?;
    let f0 = f.value(x);
    let t_integral = LogIntegral { grid: t_grid, left_exponent: None };
    // P_z f(X) - f(X), using that the subordination weight has unit mass
    let poisson_increment = |z: f64| -> Result<f64> {
        let h: Vec<f64> = times.iter().zip(&values).map(|(&t, &v)| t * poisson_weight(z, t) * (v - f0)).collect();
        Ok(t_integral.from_samples(&h)?.value)
    };
    let two_s = 2.0 * s;
    let v = LogIntegral::new(1e-5, 1e5, step, Some(1.0 - two_s)).run(|z| Ok(z.powf(-two_s) * poisson_increment(z)?))?;
    Ok(estimate(-two_s / gamma(1.0 - two_s), v))
}

/// Both sides of an identity that should hold exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub error_estimate: f64,
}

impl IdentityCheck {
    pub fn gap(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// `(-A)^{s+s'} f(X)` against `(-A)^s ((-A)^{s'} f)(X)`.
///
/// The inner power is never tabulated: `P_tau` commutes with `(-A)^{s'}`,
/// so `P_tau g - g` with `g = (-A)^{s'} f` is itself a Balakrishnan
/// integral of the double increment `F(tau+sigma) - F(tau) - F(sigma) + F(0)`
/// of `F(t) = P_t f(X)`.
pub fn semigroup_property_check(
    spec: &OperatorSpec,
    f: &dyn Field,
    s: f64,
    s2: f64,
    x: &[f64],
    quad: &QuadratureSpec,
) -> Result<IdentityCheck> {
    check_order(s)?;
    check_order(s2)?;
    if s + s2 > 1.0 {
        return Err(domain(format!("need s + s' <= 1, got {}", s + s2)));
    }
    let lhs = if s + s2 == 1.0 {
        -generator_value(spec, f, x)?
    } else {
        fractional_power(spec, f, s + s2, x, quad)?.value
    };
    let step = quad.log_step();
    let profile = semigroup_profile(spec, f, x, quad);
    let f0 = f.value(x);
    let c2 = balakrishnan_constant(s2);
    let outer = balakrishnan_integral(s, step, |tau| {
        let f_tau = profile(tau)?;
        let inner = LogIntegral::new(T_MIN, inner_limit(tau), step, Some(1.0 - s2));
        let samples: Result<Vec<f64>> = inner
            .times()
            .iter()
            .map(|&sigma| Ok(sigma.powf(-s2) * (profile(tau + sigma)? - f_tau - profile(sigma)? + f0)))
            .collect();
        let v = inner.from_samples(&samples?)?;
        Ok(-c2 * v.value)
    })?;
    let rhs = -balakrishnan_constant(s) * outer.value;
    Ok(IdentityCheck { lhs, rhs, error_estimate: balakrishnan_constant(s) * outer.error })
}

/// `A f(X)` from the exact Hessian.
pub fn generator_value(spec: &OperatorSpec, f: &dyn Field, x: &[f64]) -> Result<f64> {
    let h = f.hessian(x).ok_or_else(|| Error::Unsupported("field has no exact Hessian".into()))?;
    let g = linalg::vector(&f.gradient(x));
    Ok(spec.generator(&h, &g, &linalg::vector(x)))
}

/// `I_alpha((-A)^{alpha/2} f)(X)` and `(-A)^{alpha/2}(I_alpha f)(X)`,
/// both of which should return `f(X)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionCheck {
    pub f_value: f64,
    pub potential_of_power: f64,
    pub power_of_potential: f64,
}

impl InversionCheck {
    pub fn max_error(&self) -> f64 {
        (self.potential_of_power - self.f_value).abs().max((self.power_of_potential - self.f_value).abs())
    }
}

/// Round trips through `I_alpha` and `(-A)^{alpha/2}`; nested integrals use
/// the commutation of both operators with `P_t`.
pub fn inversion_check(spec: &OperatorSpec, f: &dyn Field, alpha: f64, x: &[f64], quad: &QuadratureSpec) -> Result<InversionCheck> {
    FracParams { s: alpha / 2.0, alpha }.validate()?;
    require_nonnegative_trace(spec)?;
    let s = alpha / 2.0;
    let step = quad.log_step();
    let profile = semigroup_profile(spec, f, x, quad);
    let cs = balakrishnan_constant(s);
    // P_t (-A)^s f (X) = -(c_s) int tau^{-1-s} (F(t + tau) - F(t)) dtau
    let power_at = |t: f64| -> Result<f64> {
        let f_t = profile(t)?;
        let inner = LogIntegral::new(T_MIN, inner_limit(t), step, Some(1.0 - s));
        let samples: Result<Vec<f64>> = inner.times().iter().map(|&tau| Ok(tau.powf(-s) * (profile(t + tau)? - f_t))).collect();
        Ok(-cs * inner.from_samples(&samples?)?.value)
    };
    let outer = LogIntegral::new(T_MIN, T_MAX, step, Some(s)).run(|t| Ok(t.powf(s) * power_at(t)?))?;
    let potential_of_power = outer.value / gamma(s);
    // P_tau I f - I f = (1/Gamma(s)) int t^{s-1} (F(t + tau) - F(t)) dt
    let potential_increment = |tau: f64| -> Result<f64> {
        let inner = LogIntegral::new(T_MIN, inner_limit(tau), step, Some(s));
        let samples: Result<Vec<f64>> = inner.times().iter().map(|&t| Ok(t.powf(s) * (profile(t + tau)? - profile(t)?))).collect();
        Ok(inner.from_samples(&samples?)?.value / gamma(s))
    };
    let power_of_potential = -cs * balakrishnan_integral(s, step, potential_increment)?.value;
    Ok(InversionCheck { f_value: f.value(x), potential_of_power, power_of_potential })
}

/// `C_{N,s} = s 4^s Gamma(N/2 + s) / (pi^{N/2} Gamma(1 - s))`.
pub fn riesz_constant(n: usize, s: f64) -> f64 {
    let h = n as f64 / 2.0;
    s * 4f64.powf(s) * gamma(h + s) / (PI.powf(h) * gamma(1.0 - s))
}

/// Average of `f` over the sphere of radius `rho` around `x` (`N <= 3`).
fn sphere_average(f: &dyn Field, x: &[f64], rho: f64) -> f64 {
    match x.len() {
        1 => 0.5 * (f.value(&[x[0] + rho]) + f.value(&[x[0] - rho])),
        2 => {
            let m = 64;
            (0..m)
                .map(|k| {
                    let a = 2.0 * PI * k as f64 / m as f64;
                    f.value(&[x[0] + rho * a.cos(), x[1] + rho * a.sin()])
                })
                .sum::<f64>()
                / m as f64
        }
        _ => {
            let gl = GaussLegendre::new(32);
            let m = 64;
            let mut acc = 0.0;
            for (c, w) in gl.mapped(-1.0, 1.0) {
                let sn = (1.0 - c * c).max(0.0).sqrt();
                for k in 0..m {
                    let a = 2.0 * PI * k as f64 / m as f64;
                    let y = [x[0] + rho * sn * a.cos(), x[1] + rho * sn * a.sin(), x[2] + rho * c];
                    acc += w * f.value(&y);
                }
            }
            acc / (2.0 * m as f64)
        }
    }
}

fn sphere_area(n: usize) -> f64 {
    n as f64 * unit_ball_volume(n)
}

/// Classical `(-Delta)^s f(X) = -C_{N,s} PV int (f(Y) - f(X)) |Y - X|^{-N-2s} dY`,
/// evaluated in polar coordinates: the spherical averages remove the odd
/// part, so the radial integrand is `O(rho^{1-2s})` at the origin.
pub fn classical_frac_laplacian_oracle(f: &dyn Field, s: f64, x: &[f64]) -> Result<f64> {
    check_order(s)?;
    let n = x.len();
    if n == 0 || n > 3 || f.dim() != n {
        return Err(Error::Unsupported("the Riesz oracle handles 1 <= N <= 3".into()));
    }
    let f0 = f.value(x);
    let integral = LogIntegral::new(1e-4, 1e6, 0.02, Some(2.0 - 2.0 * s))
        .run(|rho| Ok(rho.powf(-2.0 * s) * (sphere_average(f, x, rho) - f0)))?;
    Ok(-riesz_constant(n, s) * sphere_area(n) * integral.value)
}

/// Classical Riesz potential `c int f(Y) |X - Y|^{alpha - N} dY` with
/// `c = Gamma((N - alpha)/2) / (4^{alpha/2} pi^{N/2} Gamma(alpha/2))`.
pub fn classical_riesz_potential_oracle(f: &dyn Field, alpha: f64, x: &[f64]) -> Result<f64> {
    let n = x.len();
    if !(alpha > 0.0 && alpha < n as f64) || n > 3 {
        return Err(domain("classical Riesz potential needs 0 < alpha < N <= 3"));
    }
    let h = n as f64 / 2.0;
    let c = gamma((n as f64 - alpha) / 2.0) / (4f64.powf(alpha / 2.0) * PI.powf(h) * gamma(alpha / 2.0));
    // polar: int rho^{N-1} rho^{alpha-N} |S| A(rho) drho
    let integral = LogIntegral::new(1e-8, 1e4, 0.02, Some(alpha))
        .run(|rho| Ok(rho.powf(alpha) * sphere_average(f, x, rho)))?;
    Ok(c * sphere_area(n) * integral.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testfuncs::TestFunction;
    use approx::assert_relative_eq;

    fn quad() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    /// `(-Delta)^s exp(-y^2)` at 0 in dimension one, by the Fourier multiplier.
    fn fourier_oracle(s: f64) -> f64 {
        // int (2 pi |xi|)^{2s} sqrt(pi) e^{-pi^2 xi^2} dxi = 2^{2s} Gamma(s + 1/2) / sqrt(pi)
        let gl = GaussLegendre::new(400);
        2.0 * gl.integrate(0.0, 4.0, |xi| (2.0 * PI * xi).powf(2.0 * s) * PI.sqrt() * (-PI * PI * xi * xi).exp())
    }

    #[test]
    fn heat_matches_fourier_and_riesz() {
        let f = TestFunction::gaussian(&[0.0], 1.0, 1.0);
        let heat = OperatorSpec::heat(1);
        let v = fractional_power(&heat, &f, 0.5, &[0.0], &quad()).unwrap().value;
        let fourier = fourier_oracle(0.5);
        assert_relative_eq!(fourier, 2.0 / PI.sqrt(), max_relative = 1e-12);
        assert!((v - fourier).abs() < 1e-5, "{v} vs {fourier}");
        for &s in &[0.1, 0.5, 0.9] {
            let x = [0.3];
            let a = fractional_power(&heat, &f, s, &x, &quad()).unwrap().value;
            let b = classical_frac_laplacian_oracle(&f, s, &x).unwrap();
            assert!((a - b).abs() < 1e-5, "s = {s}: {a} vs {b}");
        }
    }

    #[test]
    fn riesz_oracle_in_two_dimensions() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(8);
        let f = TestFunction::random(&mut rng, 2, 2, 2);
        let x = [0.2, -0.1];
        let a = fractional_power(&OperatorSpec::heat(2), &f, 0.35, &x, &quad()).unwrap().value;
        let b = classical_frac_laplacian_oracle(&f, 0.35, &x).unwrap();
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }

    #[test]
    fn scaling_law() {
        let f = TestFunction::gaussian(&[0.2], 1.0, 1.0);
        let heat = OperatorSpec::heat(1);
        let (s, lambda, x) = (0.3, 1.7, 0.25);
        let scaled = fractional_power(&heat, &f.dilate(lambda), s, &[x], &quad()).unwrap().value;
        let base = fractional_power(&heat, &f, s, &[lambda * x], &quad()).unwrap().value;
        assert!((scaled - lambda.powf(2.0 * s) * base).abs() < 1e-6);
    }

    #[test]
    fn constant_shift_and_far_mass() {
        let f = TestFunction::gaussian(&[0.0], 1.0, 1.0);
        let shifted = TestFunction::combine(1.0, &f, 3.0, &TestFunction::affine(&[0.0], 1.0)).unwrap();
        let s = 0.9;
        let a = classical_frac_laplacian_oracle(&f, s, &[0.1]).unwrap();
        let b = classical_frac_laplacian_oracle(&shifted, s, &[0.1]).unwrap();
        assert!((a - b).abs() < 1e-8);
        // a unit Gaussian 50 units away changes the value by about
        // C_{1,s} sqrt(pi) / 50^{1+2s}
        let far = TestFunction::combine(1.0, &f, 1.0, &TestFunction::gaussian(&[50.0], 1.0, 1.0)).unwrap();
        let c = classical_frac_laplacian_oracle(&far, s, &[0.0]).unwrap();
        let base = classical_frac_laplacian_oracle(&f, s, &[0.0]).unwrap();
        let predicted = -riesz_constant(1, s) * PI.sqrt() / 50f64.powf(1.0 + 2.0 * s);
        assert_relative_eq!(c - base, predicted, max_relative = 1e-2);
    }

    #[test]
    fn poisson_representation_agrees() {
        let f = TestFunction::gaussian(&[0.1, 0.0], 1.0, 1.0);
        for spec in [OperatorSpec::heat(2), OperatorSpec::kolmogorov(1)] {
            for &s in &[0.1, 0.25, 0.4] {
                let a = fractional_power(&spec, &f, s, &[0.3, 0.2], &quad()).unwrap().value;
                let b = fractional_via_poisson(&spec, &f, s, &[0.3, 0.2], &quad()).unwrap().value;
                assert!((a - b).abs() < 1e-4, "s = {s}: {a} vs {b}");
            }
        }
        let one = TestFunction::affine(&[0.0, 0.0], 1.0);
        assert_eq!(fractional_via_poisson(&OperatorSpec::heat(2), &one, 0.3, &[0.0, 0.0], &quad()).unwrap().value, 0.0);
        assert!(fractional_via_poisson(&OperatorSpec::heat(2), &one, 0.5, &[0.0, 0.0], &quad()).is_err());
    }

    #[test]
    fn newtonian_potential_oracle() {
        let f = TestFunction::gaussian(&[0.0, 0.0, 0.0], 1.0, 1.0);
        let heat = OperatorSpec::heat(3);
        let v = riesz_potential(&heat, &f, 1.0, &[0.0, 0.0, 0.0], &quad()).unwrap().value;
        assert_relative_eq!(v, 1.0 / PI.sqrt(), max_relative = 1e-6);
        let x = [0.3, -0.2, 0.5];
        let oracle = classical_riesz_potential_oracle(&f, 1.0, &x).unwrap();
        let v = riesz_potential(&heat, &f, 1.0, &x, &quad()).unwrap().value;
        assert!((v - oracle).abs() < 1e-4);
        assert!(matches!(
            riesz_potential(&OperatorSpec::ornstein_uhlenbeck(3), &f, 1.0, &x, &quad()),
            Err(Error::Divergent(_))
        ));
        assert!(riesz_potential(&OperatorSpec::heat(1), &TestFunction::gaussian(&[0.0], 1.0, 1.0), 1.5, &[0.0], &quad()).is_err());
    }

    #[test]
    fn inversion_round_trip() {
        let f = TestFunction::gaussian(&[0.2, -0.1], 1.0, 1.0);
        for spec in [OperatorSpec::heat(2), OperatorSpec::kolmogorov(1)] {
            let c = inversion_check(&spec, &f, 1.0, &[0.1, 0.3], &quad()).unwrap();
            assert!(c.max_error() < 1e-4, "{c:?}");
        }
    }

    #[test]
    fn semigroup_property() {
        let f = TestFunction::gaussian(&[0.2, -0.1], 1.0, 1.0);
        let c = semigroup_property_check(&OperatorSpec::heat(2), &f, 0.5, 0.5, &[0.1, 0.3], &quad()).unwrap();
        assert!(c.gap() < 1e-3, "{c:?}");
        let c = semigroup_property_check(&OperatorSpec::kolmogorov(1), &f, 0.3, 0.4, &[0.1, 0.3], &quad()).unwrap();
        assert!(c.gap() < 5e-3, "{c:?}");
        assert!(semigroup_property_check(&OperatorSpec::heat(2), &f, 0.6, 0.5, &[0.1, 0.3], &quad()).is_err());
    }

    #[test]
    fn limit_s_to_one() {
        let f = TestFunction::gaussian(&[0.2, -0.1], 1.0, 1.0);
        let spec = OperatorSpec::kolmogorov(1);
        let x = [0.1, 0.3];
        let v = fractional_power(&spec, &f, 0.999, &x, &quad()).unwrap().value;
        let a = generator_value(&spec, &f, &x).unwrap();
        assert!((v + a).abs() < 1e-2 * a.abs().max(1.0));
    }

    #[test]
    fn linearity_and_maximum_principle() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(9);
        let spec = OperatorSpec::kolmogorov(1);
        let f = TestFunction::random(&mut rng, 2, 2, 2);
        let g = TestFunction::random(&mut rng, 2, 2, 2);
        let h = TestFunction::combine(0.7, &f, -1.3, &g).unwrap();
        let x = [0.1, -0.2];
        let fh = fractional_power(&spec, &h, 0.4, &x, &quad()).unwrap().value;
        let ff = fractional_power(&spec, &f, 0.4, &x, &quad()).unwrap().value;
        let fg = fractional_power(&spec, &g, 0.4, &x, &quad()).unwrap().value;
        assert!((fh - (0.7 * ff - 1.3 * fg)).abs() < 1e-9);
        let bump = TestFunction::gaussian(&[0.4, 0.4], 1.0, 2.0);
        assert!(fractional_power(&spec, &bump, 0.4, &[0.4, 0.4], &quad()).unwrap().value >= 0.0);
    }

    #[test]
    fn order_is_validated() {
        let f = TestFunction::gaussian(&[0.0], 1.0, 1.0);
        assert!(fractional_power(&OperatorSpec::heat(1), &f, 1.0, &[0.0], &quad()).is_err());
        assert!(fractional_power(&OperatorSpec::heat(1), &f, 0.0, &[0.0], &quad()).is_err());
    }
}
