//! The explicit fundamental solution `p(X, Y, t)`, its pseudo-distance,
//! pseudo-balls, volume function and logarithmic derivatives.

use std::f64::consts::PI;

use crate::error::{domain, Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::operator::{gramians, GramianBundle, KernelConstants, OperatorSpec};

/// Below this time the prefactor `1/V(t)` is not trusted.
pub const MIN_TIME: f64 = 1e-12;

fn check_time(t: f64) -> Result<()> {
    if !(t >= MIN_TIME) || !t.is_finite() {
        return Err(domain(format!("kernel time must lie in [{MIN_TIME}, inf), got {t}")));
    }
    Ok(())
}

fn check_point(spec: &OperatorSpec, v: &[f64]) -> Result<()> {
    if v.len() != spec.dim || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("point must be a finite {}-vector", spec.dim)));
    }
    Ok(())
}

fn bundle(spec: &OperatorSpec, t: f64) -> Result<GramianBundle> {
    check_time(t)?;
    spec.require_hypoelliptic()?;
    gramians(spec, t)
}

fn pseudo_distance_with(g: &GramianBundle, x: &[f64], y: &[f64]) -> f64 {
    let d = linalg::vector(y) - &g.exp_tb * linalg::vector(x);
    linalg::quad_form(&g.inv_k_t, &d).max(0.0).sqrt()
}

/// `m_t(X, Y) = <K(t)^{-1}(Y - e^{tB}X), Y - e^{tB}X>^{1/2}`.
pub fn pseudo_distance(spec: &OperatorSpec, x: &[f64], y: &[f64], t: f64) -> Result<f64> {
    check_point(spec, x)?;
    check_point(spec, y)?;
    Ok(pseudo_distance_with(&bundle(spec, t)?, x, y))
}

/// `V(t) = omega_N det(t K(t))^{1/2}`.
pub fn volume(spec: &OperatorSpec, t: f64) -> Result<f64> {
    let g = bundle(spec, t)?;
    Ok(KernelConstants::new(spec.dim).omega_n * g.det_tk.sqrt())
}

pub fn pseudo_ball_contains(spec: &OperatorSpec, x: &[f64], r: f64, t: f64, y: &[f64]) -> Result<bool> {
    if !(r > 0.0) {
        return Err(domain("pseudo-ball radius must be positive"));
    }
    Ok(pseudo_distance(spec, x, y, t)? < r)
}

/// Kernel value with the agreement of its two closed forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelEval {
    pub value: f64,
    pub m_t: f64,
    pub log_value: f64,
    /// Disagreement of the two closed forms: `|log A - log B|`, divided by
    /// the Gaussian exponent `m_t^2 / 4t` once that exceeds one (the
    /// attainable accuracy is relative to the exponent there).
    pub form_residual: f64,
}

/// Evaluator that caches the Gramians at one time.
#[derive(Debug, Clone)]
pub struct Kernel<'a> {
    pub spec: &'a OperatorSpec,
    pub bundle: GramianBundle,
    log_prefactor: f64,
    log_prefactor_c: f64,
}

impl<'a> Kernel<'a> {
    pub fn new(spec: &'a OperatorSpec, t: f64) -> Result<Self> {
        let bundle = bundle(spec, t)?;
        let kc = KernelConstants::new(spec.dim);
        let volume = kc.omega_n * bundle.det_tk.sqrt();
        let n = spec.dim as f64;
        let log_prefactor = kc.c_n.ln() - volume.ln();
        let log_prefactor_c = -0.5 * n * (4.0 * PI).ln() - t * spec.trace_b - 0.5 * bundle.det_c.ln();
        Ok(Self { spec, bundle, log_prefactor, log_prefactor_c })
    }

    pub fn t(&self) -> f64 {
        self.bundle.t
    }

    /// `log p` in the `c_N / V(t)` form.
    pub fn log_value(&self, x: &[f64], y: &[f64]) -> f64 {
        let m = pseudo_distance_with(&self.bundle, x, y);
        self.log_prefactor - m * m / (4.0 * self.t())
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        self.log_value(x, y).exp()
    }

    /// `log p` in the `C(t)` form.
    pub fn log_value_c(&self, x: &[f64], y: &[f64]) -> f64 {
        let w = linalg::vector(x) - &self.bundle.exp_minus_tb * linalg::vector(y);
        self.log_prefactor_c - linalg::quad_form(&self.bundle.inv_c_t, &w) / 4.0
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> KernelEval {
        let m_t = pseudo_distance_with(&self.bundle, x, y);
        let log_value = self.log_prefactor - m_t * m_t / (4.0 * self.t());
        let value = log_value.exp();
        let exponent = m_t * m_t / (4.0 * self.t());
        let form_residual = (log_value - self.log_value_c(x, y)).abs() / exponent.max(1.0);
        KernelEval { value, m_t, log_value, form_residual }
    }

    /// `grad_X log p` and `d/dt log p`.
    pub fn log_derivatives(&self, x: &[f64], y: &[f64]) -> LogDerivatives {
        let g = &self.bundle;
        let b = &self.spec.b;
        let yv = linalg::vector(y);
        let back = &g.exp_minus_tb * &yv;
        let w = linalg::vector(x) - &back;
        let v = &g.inv_c_t * &w;
        let c_dot = &g.exp_minus_tb * &self.spec.q * g.exp_minus_tb.transpose();
        let dt = -self.spec.trace_b - 0.5 * (&g.inv_c_t * &c_dot).trace() + 0.25 * linalg::quad_form(&c_dot, &v)
            - 0.5 * v.dot(&(b * &back));
        LogDerivatives { grad_x: -0.5 * v, dt }
    }

    /// `tr(Q C^{-1}(t)) / 2`.
    pub fn half_trace_q_cinv(&self) -> f64 {
        0.5 * (&self.spec.q * &self.bundle.inv_c_t).trace()
    }
}

pub fn heat_kernel(spec: &OperatorSpec, x: &[f64], y: &[f64], t: f64) -> Result<KernelEval> {
    check_point(spec, x)?;
    check_point(spec, y)?;
    Ok(Kernel::new(spec, t)?.eval(x, y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogDerivatives {
    pub grad_x: Vector,
    pub dt: f64,
}

pub fn kernel_log_derivatives(spec: &OperatorSpec, x: &[f64], y: &[f64], t: f64) -> Result<LogDerivatives> {
    check_point(spec, x)?;
    check_point(spec, y)?;
    Ok(Kernel::new(spec, t)?.log_derivatives(x, y))
}

/// Both sides of the Li-Yau identity for the kernel with pole at time `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentitySides {
    pub lhs: f64,
    pub rhs: f64,
}

impl IdentitySides {
    pub fn gap(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// `<Q grad log p, grad log p> + <BX, grad log p> - d_t log p` against
/// `tr(Q C^{-1}(t - tau)) / 2`.
pub fn liyau_kernel_identity(spec: &OperatorSpec, x: &[f64], y: &[f64], t: f64, tau: f64) -> Result<IdentitySides> {
    if !(t > tau) {
        return Err(domain(format!("need t > tau, got t = {t}, tau = {tau}")));
    }
    check_point(spec, x)?;
    check_point(spec, y)?;
    let k = Kernel::new(spec, t - tau)?;
    let d = k.log_derivatives(x, y);
    let xv = linalg::vector(x);
    let lhs = linalg::quad_form(&spec.q, &d.grad_x) + (&spec.b * &xv).dot(&d.grad_x) - d.dt;
    Ok(IdentitySides { lhs, rhs: k.half_trace_q_cinv() })
}

/// Normalising constant of the explicit Kolmogorov kernel in `R^{2n}`,
/// fixed by requiring unit mass.
pub fn kolmogorov_constant(n: usize) -> f64 {
    // in one block, p_0 = c / t^2 exp(-E/t) with E a quadratic form of
    // determinant 3/4 in the scaled variables; its Gaussian integral is
    // pi / sqrt(3/4) = 2 pi / sqrt(3)
    (3f64.sqrt() / (2.0 * PI)).powi(n as i32)
}

/// Kolmogorov's explicit kernel for `Delta_v + <v, D_x>` on `R^{2n}`, with
/// `X = (v, x)`, `Y = (w, y)`.
pub fn kolmogorov_explicit(n: usize, x: &[f64], y: &[f64], t: f64) -> f64 {
    let (v, xx) = x.split_at(n);
    let (w, yy) = y.split_at(n);
    let mut a = 0.0;
    let mut b = 0.0;
    let mut c = 0.0;
    for i in 0..n {
        let dv = v[i] - w[i];
        let e = yy[i] - xx[i] - t * v[i];
        let f = xx[i] - yy[i] + t * v[i];
        a += dv * dv;
        b += dv * e;
        c += f * f;
    }
    let expo = -(a + 3.0 / t * b + 3.0 / (t * t) * c) / t;
    kolmogorov_constant(n) / t.powi(2 * n as i32) * expo.exp()
}

/// `p` tabulated on the whitened variable: `Y = e^{tB}X + sqrt(4t) K^{1/2} u`.
pub fn whitening(spec: &OperatorSpec, t: f64) -> Result<(Matrix, Matrix)> {
    let g = bundle(spec, t)?;
    Ok((g.exp_tb.clone(), linalg::sym_sqrt(&(&g.k_t * (4.0 * t)))))
}

/// `E[g(Y)]` for `Y ~ p(X, ., t) dY` on a tensor Gauss-Hermite rule, with
/// `g` handed the whitened node as well.
fn whitened_expectation(spec: &OperatorSpec, x: &[f64], t: f64, order: usize, g: impl Fn(&[f64], &Vector) -> f64) -> Result<f64> {
    let (e, root) = whitening(spec, t)?;
    let mean = &e * linalg::vector(x);
    let cub = crate::quadrature::HermiteCubature::new(spec.dim, order);
    Ok(cub
        .iter()
        .map(|(u, w)| {
            let uv = linalg::vector(u);
            let y = &mean + &root * &uv;
            w * g(y.as_slice(), &uv)
        })
        .sum())
}

/// `int p(X, Y, t) dY`: the explicit kernel divided by the density of its
/// whitened law, integrated on that law.
pub fn kernel_mass(spec: &OperatorSpec, x: &[f64], t: f64, order: usize) -> Result<f64> {
    check_point(spec, x)?;
    let k = Kernel::new(spec, t)?;
    let (_, root) = whitening(spec, t)?;
    let log_norm = root.determinant().abs().ln() + 0.5 * spec.dim as f64 * PI.ln();
    whitened_expectation(spec, x, t, order, |y, u| (k.log_value(x, y) + log_norm + u.norm_squared()).exp())
}

/// `int g(Z) dZ` by Gauss-Hermite on the Gaussian `N(mean, cov)`.
fn integrate_against(mean: &Vector, cov: &Matrix, order: usize, g: impl Fn(&[f64]) -> f64) -> f64 {
    let root = linalg::sym_sqrt(&(cov * 2.0));
    let log_norm = root.determinant().abs().ln() + 0.5 * mean.len() as f64 * PI.ln();
    let cub = crate::quadrature::HermiteCubature::new(mean.len(), order);
    cub.iter()
        .map(|(u, w)| {
            let uv = linalg::vector(u);
            let z = mean + &root * &uv;
            w * g(z.as_slice()) * (log_norm + uv.norm_squared()).exp()
        })
        .sum()
}

/// Relative residual of `int p(X, Z, s) p(Z, Y, t) dZ = p(X, Y, s + t)`;
/// the rule sits on the Gaussian shape of the product in `Z`.
pub fn chapman_kolmogorov_residual(spec: &OperatorSpec, x: &[f64], y: &[f64], s: f64, t: f64, order: usize) -> Result<f64> {
    check_point(spec, x)?;
    check_point(spec, y)?;
    let first = Kernel::new(spec, s)?;
    let second = Kernel::new(spec, t)?;
    let p1 = linalg::spd_inverse(&(&first.bundle.k_t * (2.0 * s)))?;
    let p2 = &second.bundle.inv_c_t * 0.5;
    let cov = linalg::symmetrize(&linalg::spd_inverse(&linalg::symmetrize(&(&p1 + &p2)))?);
    let mean = &cov * (&p1 * (&first.bundle.exp_tb * linalg::vector(x)) + &p2 * (&second.bundle.exp_minus_tb * linalg::vector(y)));
    let lhs = integrate_against(&mean, &cov, order, |z| (first.log_value(x, z) + second.log_value(z, y)).exp());
    let rhs = Kernel::new(spec, s + t)?.value(x, y);
    Ok((lhs - rhs).abs() / rhs)
}
