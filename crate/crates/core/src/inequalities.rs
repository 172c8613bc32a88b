//! Gaussian and pseudo-ball Poincaré inequalities and the gradient bound
//! behind them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{require_positive_time, Error, Result};
use crate::kernel::pseudo_ball_contains;
use crate::linalg::{self, Matrix};
use crate::operator::{gramians, OperatorSpec};
use crate::quadrature::{replicate_stats, ShiftedHalton};
use crate::semigroup::{QuadratureSpec, Semigroup};
use crate::special::unit_ball_volume;
use crate::testfuncs::{CompactBump, Field, Product, TestFunction};

/// One verified inequality `lhs <= rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub stderr: f64,
    pub pass: bool,
    pub params: serde_json::Value,
}

/// Slack allowed for rounding in deterministic checks.
pub fn report_tolerance(rhs: f64) -> f64 {
    1e-12 * rhs.abs().max(1.0)
}

impl InequalityCheck {
    pub fn new(name: &str, lhs: f64, rhs: f64, stderr: f64, params: serde_json::Value) -> Self {
        let tol = if stderr > 0.0 { 3.0 * stderr } else { report_tolerance(rhs) };
        Self { name: name.into(), lhs, rhs, margin: rhs - lhs, stderr, pass: lhs <= rhs + tol, params }
    }
}

fn check_field(spec: &OperatorSpec, f: &dyn Field, x: &[f64]) -> Result<()> {
    if f.dim() != spec.dim || x.len() != spec.dim {
        return Err(Error::InvalidInput("dimension mismatch between operator, field and point".into()));
    }
    Ok(())
}

fn quad_form(m: &Matrix, v: &[f64]) -> f64 {
    linalg::quad_form(m, &linalg::vector(v))
}

/// `int |f(Y) - P_t f(X)|^2 p(X, Y, t) dY <= 2t int <K(t) Df, Df> p(X, Y, t) dY`.
pub fn gaussian_poincare_check(spec: &OperatorSpec, f: &dyn Field, t: f64, x: &[f64], quad: &QuadratureSpec) -> Result<InequalityCheck> {
    require_positive_time(t)?;
    check_field(spec, f, x)?;
    let sg = Semigroup::new(spec, t, quad)?;
    let k = gramians(spec, t)?.k_t;
    // the mean on the same rule keeps lhs a variance of that rule
    let mean = sg.expect(x, |y| f.value(y));
    let lhs = sg.expect(x, |y| (f.value(y) - mean).powi(2));
    let rhs = 2.0 * t * sg.expect(x, |y| quad_form(&k, &f.gradient(y)));
    Ok(InequalityCheck::new("gaussian_poincare", lhs, rhs, 0.0, json!({ "t": t, "x": x })))
}

/// `P_t(f^2)(X) - (P_t f(X))^2`, the same variance computed through the
/// semigroup instead of around the mean.
pub fn semigroup_variance(spec: &OperatorSpec, f: &dyn Field, t: f64, x: &[f64], quad: &QuadratureSpec) -> Result<f64> {
    require_positive_time(t)?;
    check_field(spec, f, x)?;
    let sg = Semigroup::new(spec, t, quad)?;
    let m = sg.expect(x, |y| f.value(y));
    Ok(sg.expect(x, |y| f.value(y).powi(2)) - m * m)
}

/// `<Q D P_tau f(X), D P_tau f(X)> <= P_tau(<e^{tau B} Q e^{tau B*} Df, Df>)(X)`,
/// with `D P_tau f = e^{tau B*} P_tau(Df)`.
pub fn bakry_emery_check(spec: &OperatorSpec, f: &dyn Field, tau: f64, x: &[f64], quad: &QuadratureSpec) -> Result<InequalityCheck> {
    require_positive_time(tau)?;
    check_field(spec, f, x)?;
    let sg = Semigroup::new(spec, tau, quad)?;
    let e = &sg.law.exp_tb;
    let n = spec.dim;
    let mean_grad: Vec<f64> = (0..n).map(|i| sg.expect(x, |y| f.gradient(y)[i])).collect();
    let grad = e.transpose() * linalg::vector(&mean_grad);
    let lhs = linalg::quad_form(&spec.q, &grad);
    let weight = e * &spec.q * e.transpose();
    let rhs = sg.expect(x, |y| quad_form(&weight, &f.gradient(y)));
    Ok(InequalityCheck::new("bakry_emery", lhs, rhs, 0.0, json!({ "tau": tau, "x": x })))
}

/// `psi(s) = P_s((P_{t-s} f)^2)(X)` on interior nodes, with the end values
/// `psi(0) = (P_t f(X))^2` and `psi(t) = P_t(f^2)(X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiProbe {
    pub s: Vec<f64>,
    pub psi: Vec<f64>,
    pub at_zero: f64,
    pub at_t: f64,
}

impl PsiProbe {
    /// Largest decrease between consecutive values (including the ends).
    pub fn max_decrease(&self) -> f64 {
        let mut all = vec![self.at_zero];
        all.extend(&self.psi);
        all.push(self.at_t);
        all.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
    }
}

pub fn psi_monotonicity_probe(spec: &OperatorSpec, f: &TestFunction, t: f64, x: &[f64], n_s: usize, quad: &QuadratureSpec) -> Result<PsiProbe> {
    require_positive_time(t)?;
    check_field(spec, f, x)?;
    if n_s < 3 {
        return Err(Error::InvalidInput("need at least three interior nodes".into()));
    }
    let s: Vec<f64> = (1..=n_s).map(|i| t * i as f64 / (n_s + 1) as f64).collect();
    let psi: Result<Vec<f64>> = s
        .par_iter()
        .map(|&si| {
            let outer = Semigroup::new(spec, si, quad)?;
            let inner = Semigroup::new(spec, t - si, quad)?;
            Ok(outer.expect(x, |y| inner.apply_test_function(f, y).powi(2)))
        })
        .collect();
    let full = Semigroup::new(spec, t, quad)?;
    let at_zero = full.apply_test_function(f, x).powi(2);
    let at_t = full.expect(x, |y| f.value(y).powi(2));
    Ok(PsiProbe { s, psi: psi?, at_zero, at_t })
}

/// The function tested on pseudo-balls: a bump adapted to
/// `B_{4r^2}(X, 2r)` times a test function.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpProfile {
    /// Radii of the flat part and of the support, as fractions of `2r`.
    pub inner_fraction: f64,
    pub outer_fraction: f64,
    pub modulation: TestFunction,
}

/// Centre, metric `K(t)^{-1}` and `K(t)` of the pseudo-ball `B_t(X, .)`.
fn pseudo_ball_frame(spec: &OperatorSpec, x: &[f64], t: f64) -> Result<(Vec<f64>, Matrix, Matrix)> {
    let g = gramians(spec, t)?;
    let c = &g.exp_tb * linalg::vector(x);
    Ok((c.as_slice().to_vec(), g.inv_k_t, g.k_t))
}

/// Uniform samples of `B_t(X, rho) = {c + rho K(t)^{1/2} v : |v| < 1}` by
/// accepted randomized Halton points of the cube.
struct BallSampler {
    center: Vec<f64>,
    map: Matrix,
    volume: f64,
    points: ShiftedHalton,
}

impl BallSampler {
    fn new(spec: &OperatorSpec, x: &[f64], t: f64, rho: f64, quad: &QuadratureSpec) -> Result<Self> {
        let (center, _, k) = pseudo_ball_frame(spec, x, t)?;
        let root = linalg::sym_sqrt(&k);
        let n = spec.dim;
        let volume = unit_ball_volume(n) * rho.powi(n as i32) * root.determinant().abs();
        let points = ShiftedHalton::new(n, (quad.mc_samples / 8).max(64), 8, quad.rng_seed);
        Ok(Self { center, map: root * rho, volume, points })
    }

    /// Per replicate: the mean of `g` over the ball.
    fn means(&self, g: impl Fn(&[f64]) -> Vec<f64> + Sync, width: usize) -> Vec<Vec<f64>> {
        let n = self.center.len();
        (0..self.points.replicates)
            .into_par_iter()
            .map(|r| {
                let mut u = vec![0.0; n];
                let mut y = vec![0.0; n];
                let mut acc = vec![0.0; width];
                let mut count = 0usize;
                for i in 0..self.points.samples {
                    self.points.point(r, i, &mut u);
                    let v: Vec<f64> = u.iter().map(|a| 2.0 * a - 1.0).collect();
                    if v.iter().map(|a| a * a).sum::<f64>() >= 1.0 {
                        continue;
                    }
                    for a in 0..n {
                        y[a] = self.center[a] + (0..n).map(|b| self.map[(a, b)] * v[b]).sum::<f64>();
                    }
                    for (s, val) in acc.iter_mut().zip(g(&y)) {
                        *s += val;
                    }
                    count += 1;
                }
                acc.iter().map(|s| s / count.max(1) as f64).collect()
            })
            .collect()
    }
}

/// `int_{B_{r^2}(X,r)} |f - f_r|^2 <= 2 e^{1/4} r^2 int_{B_{4r^2}(X,2r)} <K(r^2) Df, Df>`
/// for `f` = bump adapted to the larger ball times the modulation.
pub fn local_poincare_check(
    spec: &OperatorSpec,
    x: &[f64],
    r: f64,
    profile: &BumpProfile,
    quad: &QuadratureSpec,
) -> Result<InequalityCheck> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(crate::error::domain(format!("radius must be positive, got {r}")));
    }
    if x.len() != spec.dim || profile.modulation.dim() != spec.dim {
        return Err(Error::InvalidInput("dimension mismatch".into()));
    }
    if !(profile.outer_fraction > profile.inner_fraction && profile.inner_fraction >= 0.0) {
        return Err(Error::InvalidInput("bump needs 0 <= inner < outer".into()));
    }
    let t_big = 4.0 * r * r;
    let (center, metric, k_big) = pseudo_ball_frame(spec, x, t_big)?;
    let bump = CompactBump::with_metric(
        center.clone(),
        profile.inner_fraction * 2.0 * r,
        profile.outer_fraction * 2.0 * r,
        metric,
    )?;
    // the support boundary must lie inside the larger pseudo-ball
    let root = linalg::sym_sqrt(&k_big);
    let n = spec.dim;
    for k in 0..(2 * n) {
        let mut dir = vec![0.0; n];
        dir[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
        let edge: Vec<f64> =
            (0..n).map(|a| center[a] + profile.outer_fraction * 2.0 * r * (0..n).map(|b| root[(a, b)] * dir[b]).sum::<f64>()).collect();
        if profile.outer_fraction >= 1.0 || !pseudo_ball_contains(spec, x, 2.0 * r, t_big, &edge)? {
            return Err(Error::Precondition(format!(
                "support of f leaks outside B_(4r^2)(X, 2r) (outer fraction {})",
                profile.outer_fraction
            )));
        }
    }
    let f = Product { left: &bump, right: &profile.modulation };
    let k_small = gramians(spec, r * r)?.k_t;
    let small = BallSampler::new(spec, x, r * r, r, quad)?;
    let big = BallSampler::new(spec, x, t_big, 2.0 * r, quad)?;
    let moments = small.means(|y| {
        let v = f.value(y);
        vec![v, v * v]
    }, 2);
    let lhs_reps: Vec<f64> = moments.iter().map(|m| small.volume * (m[1] - m[0] * m[0]).max(0.0)).collect();
    let energy = big.means(|y| vec![quad_form(&k_small, &f.gradient(y))], 1);
    let energy_reps: Vec<f64> = energy.iter().map(|m| big.volume * m[0]).collect();
    let (lhs, lhs_err) = replicate_stats(&lhs_reps);
    let (e, e_err) = replicate_stats(&energy_reps);
    let constant = 2.0 * 0.25f64.exp();
    let rhs = constant * r * r * e;
    let stderr = (lhs_err * lhs_err + (constant * r * r * e_err).powi(2)).sqrt();
    let ratio = if e > 0.0 { lhs / (r * r * e) } else { 0.0 };
    Ok(InequalityCheck::new(
        "local_poincare",
        lhs,
        rhs,
        stderr,
        json!({ "r": r, "x": x, "ratio": ratio, "constant": constant }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testfuncs::random_spd;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quad() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    fn specs() -> Vec<OperatorSpec> {
        vec![OperatorSpec::heat(2), OperatorSpec::kolmogorov(1), OperatorSpec::ornstein_uhlenbeck(2)]
    }

    #[test]
    fn linear_functions_give_equality() {
        let a = [0.7, -1.2];
        let f = TestFunction::affine(&a, 0.3);
        for spec in specs() {
            for &t in &[0.1, 1.0, 3.0] {
                let c = gaussian_poincare_check(&spec, &f, t, &[0.4, -0.2], &quad()).unwrap();
                let k = gramians(&spec, t).unwrap().k_t;
                let exact = 2.0 * t * quad_form(&k, &a);
                assert!((c.lhs - exact).abs() < 1e-9 * exact.max(1.0) && c.margin.abs() < 1e-9, "{c:?}");
                let be = bakry_emery_check(&spec, &f, t, &[0.4, -0.2], &quad()).unwrap();
                let e = crate::operator::matrix_exponential(&spec.b, t).unwrap();
                let g = e.transpose() * linalg::vector(&a);
                assert_relative_eq!(be.lhs, linalg::quad_form(&spec.q, &g), max_relative = 1e-12);
                assert!(be.margin.abs() < 1e-9 && be.pass);
            }
        }
        let one = TestFunction::affine(&[0.0, 0.0], 2.0);
        let c = gaussian_poincare_check(&OperatorSpec::heat(2), &one, 1.0, &[0.0, 0.0], &quad()).unwrap();
        assert!(c.lhs.abs() < 1e-15 && c.rhs == 0.0 && c.pass);
    }

    #[test]
    fn nash_inequality_on_random_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let heat = OperatorSpec::heat(2);
        for _ in 0..20 {
            let f = TestFunction::random(&mut rng, 2, 2, 2);
            let c = gaussian_poincare_check(&heat, &f, 1.0, &[0.0, 0.0], &quad()).unwrap();
            assert!(c.pass, "{c:?}");
            let v = semigroup_variance(&heat, &f, 1.0, &[0.0, 0.0], &quad()).unwrap();
            let exact_mean = f.exact_semigroup(&heat, 1.0, &[0.0, 0.0]).unwrap();
            let rule_mean = Semigroup::new(&heat, 1.0, &quad()).unwrap().expect(&[0.0, 0.0], |y| f.value(y));
            assert!((exact_mean - rule_mean).abs() < 1e-3);
            assert!((v - c.lhs).abs() < 1e-9 * v.abs().max(1.0));
        }
        for spec in specs() {
            let f = TestFunction::random(&mut rng, 2, 3, 2);
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let c = gaussian_poincare_check(&spec, &f, 0.6, &x, &quad()).unwrap();
            assert!(c.pass, "{c:?}");
        }
        assert!(gaussian_poincare_check(&heat, &TestFunction::zero(2), 0.0, &[0.0, 0.0], &quad()).is_err());
    }

    #[test]
    fn gradient_bound() {
        let f = TestFunction::gaussian(&[0.3, 0.0], 1.0, 1.0);
        let c = bakry_emery_check(&OperatorSpec::heat(2), &f, 0.5, &[0.1, 0.2], &quad()).unwrap();
        assert!(c.pass && c.margin > 1e-6, "{c:?}");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = OperatorSpec::kolmogorov(1);
        for _ in 0..10 {
            let f = TestFunction::random(&mut rng, 2, 2, 2);
            let tau = rng.random_range(0.05..2.0);
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let c = bakry_emery_check(&spec, &f, tau, &x, &quad()).unwrap();
            assert!(c.pass, "{c:?}");
        }
        assert!(bakry_emery_check(&spec, &f, -1.0, &[0.0, 0.0], &quad()).is_err());
    }

    #[test]
    fn psi_is_monotone() {
        let f = TestFunction::gaussian(&[0.3, -0.2], 0.9, 1.0);
        let p = psi_monotonicity_probe(&OperatorSpec::heat(2), &f, 1.0, &[0.0, 0.0], 7, &quad()).unwrap();
        assert!(p.psi.windows(2).all(|w| w[1] > w[0]), "{p:?}");
        assert!(p.max_decrease() <= 0.0);
        // end values: derivative is bounded, so nodes near the ends converge linearly
        let near = psi_monotonicity_probe(&OperatorSpec::heat(2), &f, 1.0, &[0.0, 0.0], 999, &quad()).unwrap();
        assert!((near.psi[0] - near.at_zero).abs() < 2e-3);
        assert!((near.psi[998] - near.at_t).abs() < 2e-3);
        let k = psi_monotonicity_probe(&OperatorSpec::kolmogorov(1), &f, 1.5, &[0.2, 0.1], 5, &quad()).unwrap();
        assert!(k.max_decrease() <= 1e-12, "{k:?}");
        let c = psi_monotonicity_probe(&OperatorSpec::heat(2), &TestFunction::affine(&[0.0, 0.0], 1.5), 1.0, &[0.0, 0.0], 4, &quad()).unwrap();
        assert!(c.psi.iter().all(|v| (v - 2.25).abs() < 1e-12));
    }

    #[test]
    fn local_poincare_heat_and_kolmogorov() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let heat = OperatorSpec::heat(2);
        let profile = BumpProfile { inner_fraction: 0.2, outer_fraction: 0.9, modulation: TestFunction::affine(&[0.0, 0.0], 1.0) };
        let c = local_poincare_check(&heat, &[0.0, 0.0], 1.0, &profile, &quad()).unwrap();
        assert!(c.pass && c.lhs > 0.0, "{c:?}");
        let zero = BumpProfile { modulation: TestFunction::zero(2), ..profile.clone() };
        let c = local_poincare_check(&heat, &[0.0, 0.0], 1.0, &zero, &quad()).unwrap();
        assert!(c.lhs == 0.0 && c.rhs == 0.0 && c.pass);
        let spec = OperatorSpec::kolmogorov(1);
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let modulation = TestFunction::random(&mut rng, 2, 2, 1);
            let profile = BumpProfile {
                inner_fraction: rng.random_range(0.0..0.4),
                outer_fraction: rng.random_range(0.6..0.99),
                modulation,
            };
            let c = local_poincare_check(&spec, &[0.0, 0.0], 1.0, &profile, &quad()).unwrap();
            assert!(c.pass, "{c:?}");
            worst = worst.max(c.params["ratio"].as_f64().unwrap());
        }
        assert!(worst <= 2.0 * 0.25f64.exp());
        let leak = BumpProfile { outer_fraction: 1.2, ..profile };
        assert!(matches!(local_poincare_check(&spec, &[0.0, 0.0], 1.0, &leak, &quad()), Err(Error::Precondition(_))));
    }

    #[test]
    fn ball_sampler_moments() {
        // int_{|y| < 1} |y|^2 dy = pi / 2 in the plane
        let s = BallSampler::new(&OperatorSpec::heat(2), &[0.0, 0.0], 1.0, 1.0, &quad()).unwrap();
        assert_relative_eq!(s.volume, std::f64::consts::PI, max_relative = 1e-12);
        let reps: Vec<f64> = s.means(|y| vec![y[0] * y[0] + y[1] * y[1]], 1).iter().map(|m| s.volume * m[0]).collect();
        let (v, err) = replicate_stats(&reps);
        assert!((v - std::f64::consts::FRAC_PI_2).abs() < 1e-3 && err < 1e-3, "{v} {err}");
        // anisotropic ellipsoid: volume pi sqrt(det K)
        let q = random_spd(&mut ChaCha8Rng::seed_from_u64(3), 2, 0.5, 2.0);
        let spec = OperatorSpec::new(q.clone(), Matrix::zeros(2, 2)).unwrap();
        let s = BallSampler::new(&spec, &[0.0, 0.0], 1.0, 1.0, &quad()).unwrap();
        assert_relative_eq!(s.volume, std::f64::consts::PI * q.determinant().sqrt(), max_relative = 1e-12);
    }
}
