//! The Bessel extension kernel, the Neumann fundamental solution of the
//! extended operator, its semigroup on separable data, Li-Yau bounds, the
//! optimal control curve and the sharp Harnack inequality.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{domain, require_positive_time, Error, Result};
use crate::inequalities::InequalityCheck;
use crate::kernel::Kernel;
use crate::linalg::{self, Matrix, Vector};
use crate::operator::{gramians, matrix_exponential, OperatorSpec};
use crate::quadrature::{GaussLegendre, TanhSinh};
use crate::semigroup::{support_box, QuadratureSpec, Semigroup};
use crate::special::{bessel_i_ratio, reduced_bessel_i_scaled};
use crate::testfuncs::{Field, TestFunction};

/// Bessel parameter `a` of `d_zz + (a / z) d_z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtensionParams {
    pub a: f64,
}

impl ExtensionParams {
    pub fn new(a: f64) -> Result<Self> {
        if !(a > -1.0) || !a.is_finite() {
            return Err(domain(format!("Bessel parameter must exceed -1, got {a}")));
        }
        Ok(Self { a })
    }

    /// Li-Yau bounds need `a >= 0` away from the boundary `z = 0`.
    pub fn require_liyau(&self, z: f64) -> Result<()> {
        if z > 0.0 && self.a < 0.0 {
            return Err(domain(format!("interior points (z = {z}) need a >= 0, got a = {}", self.a)));
        }
        Ok(())
    }

    fn nu(&self) -> f64 {
        0.5 * (self.a - 1.0)
    }
}

/// A point `(X, z, t)` of the extended space-time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionPoint {
    pub x: Vec<f64>,
    pub z: f64,
    pub t: f64,
}

impl ExtensionPoint {
    pub fn new(x: Vec<f64>, z: f64, t: f64) -> Result<Self> {
        if !(z >= 0.0) {
            return Err(domain(format!("extension variable must be nonnegative, got {z}")));
        }
        require_positive_time(t)?;
        Ok(Self { x, z, t })
    }
}

fn check_bessel_args(a: f64, z: f64, zeta: f64, t: f64) -> Result<ExtensionParams> {
    let p = ExtensionParams::new(a)?;
    require_positive_time(t)?;
    if !(z >= 0.0) || !(zeta >= 0.0) {
        return Err(domain(format!("need z, zeta >= 0, got {z}, {zeta}")));
    }
    Ok(p)
}

fn log_bessel(p: ExtensionParams, z: f64, zeta: f64, t: f64) -> f64 {
    let y = z * zeta / (2.0 * t);
    -0.5 * (p.a + 1.0) * (2.0 * t).ln() + reduced_bessel_i_scaled(p.nu(), y).ln() - (z - zeta).powi(2) / (4.0 * t)
}

/// `log p^(a)(z, zeta, t)`.
pub fn bessel_kernel_log(a: f64, z: f64, zeta: f64, t: f64) -> Result<f64> {
    let p = check_bessel_args(a, z, zeta, t)?;
    Ok(log_bessel(p, z, zeta, t))
}

/// `p^(a)(z, zeta, t)`, the half-line heat kernel for the measure `zeta^a dzeta`.
pub fn bessel_kernel(a: f64, z: f64, zeta: f64, t: f64) -> Result<f64> {
    Ok(bessel_kernel_log(a, z, zeta, t)?.exp())
}

/// `d_z log p^(a)` and `d_t log p^(a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesselLogDerivatives {
    pub dz: f64,
    pub dt: f64,
}

fn bessel_derivs(p: ExtensionParams, z: f64, zeta: f64, t: f64) -> BesselLogDerivatives {
    let y = z * zeta / (2.0 * t);
    let r = bessel_i_ratio(p.nu(), y);
    BesselLogDerivatives {
        dz: zeta / (2.0 * t) * r - z / (2.0 * t),
        dt: -(p.a + 1.0) / (2.0 * t) - y / t * r + (z * z + zeta * zeta) / (4.0 * t * t),
    }
}

pub fn bessel_log_derivatives(a: f64, z: f64, zeta: f64, t: f64) -> Result<BesselLogDerivatives> {
    let p = check_bessel_args(a, z, zeta, t)?;
    Ok(bessel_derivs(p, z, zeta, t))
}

/// `z^a d_z p^(a)(z, zeta, t)`, the weighted flux through the boundary.
pub fn neumann_flux(a: f64, z: f64, zeta: f64, t: f64) -> Result<f64> {
    let p = check_bessel_args(a, z, zeta, t)?;
    Ok(z.powf(a) * log_bessel(p, z, zeta, t).exp() * bessel_derivs(p, z, zeta, t).dz)
}

/// `G^(a)((X, t, z); (Y, tau, zeta)) = p(X, Y, t - tau) p^(a)(z, zeta, t - tau)`.
pub fn neumann_fundamental_solution(spec: &OperatorSpec, a: f64, at: &ExtensionPoint, from: &ExtensionPoint) -> Result<f64> {
    Ok(log_neumann(spec, a, at, from)?.exp())
}

pub fn log_neumann(spec: &OperatorSpec, a: f64, at: &ExtensionPoint, from: &ExtensionPoint) -> Result<f64> {
    if !(at.t > from.t) {
        return Err(domain(format!("need t > tau, got t = {}, tau = {}", at.t, from.t)));
    }
    check_points(spec, &[&at.x, &from.x])?;
    let dt = at.t - from.t;
    let k = Kernel::new(spec, dt)?;
    Ok(k.log_value(&at.x, &from.x) + bessel_kernel_log(a, at.z, from.z, dt)?)
}

fn check_points(spec: &OperatorSpec, xs: &[&[f64]]) -> Result<()> {
    if xs.iter().any(|x| x.len() != spec.dim) {
        return Err(Error::InvalidInput(format!("points must have dimension {}", spec.dim)));
    }
    Ok(())
}

/// Smooth profile `g(zeta)` for separable extension data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ZProfile {
    Constant { value: f64 },
    /// `base + height * exp(1 - 1 / (1 - ((zeta - center) / radius)^2))` inside the window.
    Bump { center: f64, radius: f64, height: f64, base: f64 },
}

impl ZProfile {
    pub fn value(&self, zeta: f64) -> f64 {
        match *self {
            ZProfile::Constant { value } => value,
            ZProfile::Bump { center, radius, height, base } => {
                let u = (zeta - center) / radius;
                if u.abs() >= 1.0 {
                    base
                } else {
                    base + height * (1.0 - 1.0 / (1.0 - u * u)).exp()
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ZProfile::Constant { value } if value.is_finite() => Ok(()),
            ZProfile::Bump { radius, height, base, center } if radius > 0.0 && height.is_finite() && base.is_finite() && center.is_finite() => Ok(()),
            _ => Err(Error::InvalidInput(format!("invalid z-profile {self:?}"))),
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        match *self {
            ZProfile::Constant { value } => value >= 0.0,
            ZProfile::Bump { height, base, .. } => base >= 0.0 && base + height >= 0.0,
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match *self {
            ZProfile::Constant { .. } => vec![],
            ZProfile::Bump { center, radius, .. } => vec![center - radius, center, center + radius],
        }
    }
}

/// Separable datum `phi(Y, zeta) = f(Y) g(zeta)`.
#[derive(Debug, Clone)]
pub struct ExtensionDatum {
    pub f: TestFunction,
    pub g: ZProfile,
}

impl ExtensionDatum {
    /// Datum that does not depend on `zeta`.
    pub fn z_independent(f: TestFunction) -> Self {
        Self { f, g: ZProfile::Constant { value: 1.0 } }
    }
}

/// `int_0^inf h(zeta) zeta^a dzeta` for `h` concentrated near the listed
/// `(center, width)` pairs; tanh-sinh on panels between breakpoints.
fn half_line_integral(a: f64, bumps: &[(f64, f64)], extra: &[f64], h: impl Fn(f64) -> f64) -> f64 {
    let upper = bumps.iter().map(|&(c, w)| c.max(0.0) + 40.0 * w).fold(0.0, f64::max);
    let mut cuts = vec![0.0, upper];
    for &(c, w) in bumps {
        for k in [-20.0, -10.0, -5.0, -2.0, 0.0, 2.0, 5.0, 10.0, 20.0] {
            cuts.push(c + k * w);
        }
    }
    cuts.extend_from_slice(extra);
    cuts.retain(|&c| (0.0..=upper).contains(&c));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|b, a| (*b - *a).abs() <= 1e-12 * upper);
    let rule = TanhSinh::new(1.0 / 32.0);
    cuts.windows(2)
        .map(|w| rule.integrate(w[0], w[1], |zeta| if zeta > 0.0 { h(zeta) * zeta.powf(a) } else { 0.0 }))
        .sum()
}

/// `G_t g(z) = int p^(a)(z, zeta, t) g(zeta) zeta^a dzeta` with its `z`- and `t`-derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesselSemigroupValue {
    pub value: f64,
    pub dz: f64,
    pub dt: f64,
}

pub fn bessel_semigroup(a: f64, g: &ZProfile, z: f64, t: f64) -> Result<BesselSemigroupValue> {
    let p = check_bessel_args(a, z, 0.0, t)?;
    g.validate()?;
    let width = (2.0 * t).sqrt();
    let mut bumps = vec![(z, width)];
    if z > 10.0 * width {
        bumps.push((0.0, width));
    }
    let extra = g.breakpoints();
    let mut out = [0.0; 3];
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = half_line_integral(p.a, &bumps, &extra, |zeta| {
            let w = log_bessel(p, z, zeta, t).exp() * g.value(zeta);
            match k {
                0 => w,
                1 => w * bessel_derivs(p, z, zeta, t).dz,
                _ => w * bessel_derivs(p, z, zeta, t).dt,
            }
        });
    }
    Ok(BesselSemigroupValue { value: out[0], dz: out[1], dt: out[2] })
}

/// `int p^(a)(z, w, s) p^(a)(w, zeta, t) w^a dw`.
pub fn bessel_chapman_kolmogorov(a: f64, z: f64, zeta: f64, s: f64, t: f64) -> Result<f64> {
    let p = check_bessel_args(a, z, zeta, s)?;
    require_positive_time(t)?;
    let bumps = [(z, (2.0 * s).sqrt()), (zeta, (2.0 * t).sqrt()), (0.0, (2.0 * s.max(t)).sqrt())];
    Ok(half_line_integral(p.a, &bumps, &[], |w| (log_bessel(p, z, w, s) + log_bessel(p, w, zeta, t)).exp()))
}

/// `P_t f(X)` with `grad_X` and `d_t`; derivatives by central differences
/// of the Gauss-Hermite value.
#[derive(Debug, Clone, PartialEq)]
pub struct SemigroupJet {
    pub value: f64,
    pub grad: Vector,
    pub dt: f64,
}

pub fn semigroup_jet(spec: &OperatorSpec, f: &TestFunction, x: &[f64], t: f64, quad: &QuadratureSpec) -> Result<SemigroupJet> {
    require_positive_time(t)?;
    check_points(spec, &[x])?;
    if f.dim() != spec.dim {
        return Err(Error::InvalidInput("test function dimension differs from the operator".into()));
    }
    let sg = Semigroup::new(spec, t, quad)?;
    let value = sg.apply_test_function(f, x);
    let mut grad = Vector::zeros(spec.dim);
    let mut xp = x.to_vec();
    for i in 0..spec.dim {
        let h = 1e-4 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let up = sg.apply_test_function(f, &xp);
        xp[i] = x[i] - h;
        let down = sg.apply_test_function(f, &xp);
        xp[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    let h = 1e-4 * t;
    let up = Semigroup::new(spec, t + h, quad)?.apply_test_function(f, x);
    let down = Semigroup::new(spec, t - h, quad)?.apply_test_function(f, x);
    Ok(SemigroupJet { value, grad, dt: (up - down) / (2.0 * h) })
}

/// `P^(a)_t phi(X, z)` for separable `phi`.
pub fn extension_semigroup(spec: &OperatorSpec, a: f64, phi: &ExtensionDatum, point: &ExtensionPoint, quad: &QuadratureSpec) -> Result<f64> {
    ExtensionParams::new(a)?;
    check_points(spec, &[&point.x])?;
    let sg = Semigroup::new(spec, point.t, quad)?;
    let px = sg.apply_test_function(&phi.f, &point.x);
    Ok(px * bessel_semigroup(a, &phi.g, point.z, point.t)?.value)
}

/// `<Q Du, Du> + <BX, Du> - d_t u` for the `X`-part of `u`.
fn x_part(spec: &OperatorSpec, x: &[f64], grad: &Vector, dt: f64) -> f64 {
    let bx = &spec.b * linalg::vector(x);
    linalg::quad_form(&spec.q, grad) + bx.dot(grad) - dt
}

fn strict(mut c: InequalityCheck) -> InequalityCheck {
    c.pass = c.lhs < c.rhs;
    c
}

/// Li-Yau bound for `u = log G^(a)(. ; Y, tau, zeta)` at `point`:
/// `<Q D_X u, D_X u> + (d_z u)^2 + <BX, D_X u> - d_t u < tr(Q C^{-1}(t - tau)) / 2 + (a + 1) / (2 (t - tau))`.
pub fn liyau_extension_check(spec: &OperatorSpec, a: f64, point: &ExtensionPoint, pole: &ExtensionPoint) -> Result<InequalityCheck> {
    let p = ExtensionParams::new(a)?;
    p.require_liyau(point.z)?;
    if !(point.t > pole.t) {
        return Err(domain(format!("need t > tau, got t = {}, tau = {}", point.t, pole.t)));
    }
    check_points(spec, &[&point.x, &pole.x])?;
    let dt = point.t - pole.t;
    let k = Kernel::new(spec, dt)?;
    let d = k.log_derivatives(&point.x, &pole.x);
    let xp = x_part(spec, &point.x, &d.grad_x, d.dt);
    let xr = k.half_trace_q_cinv();
    let bd = bessel_derivs(p, point.z, pole.z, dt);
    let lhs = xp + bd.dz * bd.dz - bd.dt;
    let rhs = xr + (a + 1.0) / (2.0 * dt);
    Ok(strict(InequalityCheck::new(
        "liyau_extension_kernel",
        lhs,
        rhs,
        0.0,
        json!({ "a": a, "x": point.x, "z": point.z, "t": point.t, "y": pole.x, "zeta": pole.z, "tau": pole.t, "x_part": xp, "x_rhs": xr }),
    )))
}

/// Li-Yau bound for `u = log P^(a)_t phi` with `phi > 0` separable.
pub fn liyau_extension_semigroup_check(
    spec: &OperatorSpec,
    a: f64,
    phi: &ExtensionDatum,
    point: &ExtensionPoint,
    quad: &QuadratureSpec,
) -> Result<InequalityCheck> {
    let p = ExtensionParams::new(a)?;
    p.require_liyau(point.z)?;
    let jet = semigroup_jet(spec, &phi.f, &point.x, point.t, quad)?;
    let g = bessel_semigroup(a, &phi.g, point.z, point.t)?;
    if !(jet.value > 0.0) || !(g.value > 0.0) {
        return Err(Error::Precondition("extension semigroup must be positive at the point".into()));
    }
    let xp = x_part(spec, &point.x, &(&jet.grad / jet.value), jet.dt / jet.value);
    let dz = g.dz / g.value;
    let lhs = xp + dz * dz - g.dt / g.value;
    let xr = gramians(spec, point.t).map(|b| 0.5 * (&spec.q * &b.inv_c_t).trace())?;
    let rhs = xr + (a + 1.0) / (2.0 * point.t);
    Ok(strict(InequalityCheck::new(
        "liyau_extension_semigroup",
        lhs,
        rhs,
        0.0,
        json!({ "a": a, "x": point.x, "z": point.z, "t": point.t }),
    )))
}

/// Control path `gamma' = B gamma + Q^{1/2} omega` from `X` at `tau = 0` to
/// `Y` at `tau = t - s`, with its cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalCurve {
    pub tau: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub omega: Vec<Vec<f64>>,
    /// `int |omega|^2` by Gauss-Legendre.
    pub cost: f64,
    /// `<C^{-1}(t - s) w, w>` with `w = X - e^{-(t - s)B} Y`.
    pub closed_cost: f64,
}

/// Precomputed data of the control problem over a horizon.
pub struct ControlProblem<'a> {
    spec: &'a OperatorSpec,
    x: Vector,
    v: Vector,
    horizon: f64,
    q_root: Matrix,
    closed_cost: f64,
}

impl<'a> ControlProblem<'a> {
    pub fn new(spec: &'a OperatorSpec, x: &[f64], y: &[f64], horizon: f64) -> Result<Self> {
        require_positive_time(horizon)?;
        check_points(spec, &[x, y])?;
        let g = gramians(spec, horizon)?;
        let xv = linalg::vector(x);
        let w = &xv - &g.exp_minus_tb * linalg::vector(y);
        let v = &g.inv_c_t * &w;
        Ok(Self { spec, closed_cost: v.dot(&w), x: xv, v, horizon, q_root: linalg::sym_sqrt(&spec.q) })
    }

    pub fn gamma(&self, tau: f64) -> Result<Vector> {
        if tau == 0.0 {
            return Ok(self.x.clone());
        }
        let g = gramians(self.spec, tau)?;
        Ok(&g.exp_tb * (&self.x - &g.c_t * &self.v))
    }

    /// `omega = -Q^{1/2} e^{-tau B^T} v`.
    pub fn omega(&self, tau: f64) -> Result<Vector> {
        let e = matrix_exponential(&(-self.spec.b.transpose()), tau)?;
        Ok(-(&self.q_root * (e * &self.v)))
    }

    /// Residual of `gamma' - B gamma - Q^{1/2} omega` with `gamma'` by central differences.
    pub fn admissibility_residual(&self, tau: f64) -> Result<f64> {
        let h = 1e-5 * self.horizon;
        let (lo, hi) = ((tau - h).max(0.0), (tau + h).min(self.horizon));
        let deriv = (self.gamma(hi)? - self.gamma(lo)?) / (hi - lo);
        let mid = (lo + hi) / 2.0;
        let r = deriv - &self.spec.b * self.gamma(mid)? - &self.q_root * self.omega(mid)?;
        Ok(r.amax())
    }
}

pub fn optimal_curve(spec: &OperatorSpec, x: &[f64], y: &[f64], t: f64, s: f64, n_tau: usize) -> Result<OptimalCurve> {
    if !(s > 0.0 && s < t) {
        return Err(domain(format!("need 0 < s < t, got s = {s}, t = {t}")));
    }
    if n_tau < 2 {
        return Err(Error::InvalidInput("need at least two path nodes".into()));
    }
    let cp = ControlProblem::new(spec, x, y, t - s)?;
    let mut tau = Vec::with_capacity(n_tau);
    let mut gamma = Vec::with_capacity(n_tau);
    let mut omega = Vec::with_capacity(n_tau);
    for i in 0..n_tau {
        let ti = cp.horizon * i as f64 / (n_tau - 1) as f64;
        tau.push(ti);
        gamma.push(cp.gamma(ti)?.as_slice().to_vec());
        omega.push(cp.omega(ti)?.as_slice().to_vec());
    }
    // pin the endpoint to the exact target
    gamma[n_tau - 1] = y.to_vec();
    let gl = GaussLegendre::new(24);
    let mut cost = 0.0;
    let panels = 4;
    for k in 0..panels {
        let (lo, hi) = (cp.horizon * k as f64 / panels as f64, cp.horizon * (k + 1) as f64 / panels as f64);
        for (node, w) in gl.mapped(lo, hi) {
            cost += w * cp.omega(node)?.norm_squared();
        }
    }
    Ok(OptimalCurve { tau, gamma, omega, cost, closed_cost: cp.closed_cost })
}

/// Multiplier of `P^(a)_t phi(X, z)` in the Harnack bound.
pub fn harnack_factor(spec: &OperatorSpec, a: f64, y: &[f64], zeta: f64, s: f64, x: &[f64], z: f64, t: f64) -> Result<f64> {
    if !(s > 0.0 && s < t) {
        return Err(domain(format!("need 0 < s < t, got s = {s}, t = {t}")));
    }
    check_points(spec, &[x, y])?;
    let n = spec.dim as f64;
    let gt = gramians(spec, t)?;
    let gs = gramians(spec, s)?;
    let cp = ControlProblem::new(spec, x, y, t - s)?;
    let log_det_k = |g: &crate::operator::GramianBundle| g.det_tk.ln() - n * g.t.ln();
    let log = 0.5 * (n + a + 1.0) * (t / s).ln()
        + 0.5 * (log_det_k(&gt) - log_det_k(&gs))
        + (z - zeta).powi(2) / (4.0 * (t - s))
        + 0.25 * cp.closed_cost;
    Ok(log.exp())
}

/// Relative slack of the Harnack comparison.
pub const HARNACK_TOL: f64 = 1e-8;

fn require_nonnegative(phi: &ExtensionDatum, probes: &[&[f64]]) -> Result<()> {
    if !phi.g.is_nonnegative() {
        return Err(Error::Precondition("z-profile takes negative values".into()));
    }
    let (lo, hi) = support_box(&phi.f)?;
    let n = lo.len();
    let m = 9usize;
    let total = m.pow(n as u32);
    let mut y = vec![0.0; n];
    let mut sampled = false;
    let mut positive = false;
    for idx in 0..total {
        let mut r = idx;
        for i in 0..n {
            y[i] = lo[i] + (hi[i] - lo[i]) * (r % m) as f64 / (m - 1) as f64;
            r /= m;
        }
        let v = phi.f.value(&y);
        sampled = true;
        positive |= v > 0.0;
        if v < 0.0 {
            return Err(Error::Precondition(format!("datum is negative at {y:?}")));
        }
    }
    for p in probes {
        let v = phi.f.value(p);
        positive |= v > 0.0;
        if v < 0.0 {
            return Err(Error::Precondition(format!("datum is negative at {p:?}")));
        }
    }
    if !sampled || !positive {
        return Err(Error::Precondition("datum vanishes on all probes".into()));
    }
    Ok(())
}

/// `P^(a)_s phi(Y, zeta) <= P^(a)_t phi(X, z) * factor`.
pub fn harnack_check(
    spec: &OperatorSpec,
    a: f64,
    phi: &ExtensionDatum,
    earlier: &ExtensionPoint,
    later: &ExtensionPoint,
    quad: &QuadratureSpec,
) -> Result<InequalityCheck> {
    let p = ExtensionParams::new(a)?;
    if !(earlier.z == 0.0 && later.z == 0.0) {
        p.require_liyau(earlier.z.max(later.z))?;
    }
    require_nonnegative(phi, &[&earlier.x, &later.x])?;
    let factor = harnack_factor(spec, a, &earlier.x, earlier.z, earlier.t, &later.x, later.z, later.t)?;
    let lhs = extension_semigroup(spec, a, phi, earlier, quad)?;
    let rhs = extension_semigroup(spec, a, phi, later, quad)? * factor;
    let mut c = InequalityCheck::new(
        "harnack",
        lhs,
        rhs,
        0.0,
        json!({ "a": a, "y": earlier.x, "zeta": earlier.z, "s": earlier.t, "x": later.x, "z": later.z, "t": later.t }),
    );
    c.pass = lhs <= rhs * (1.0 + HARNACK_TOL);
    Ok(c)
}

/// One step of the sharpness probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpnessPoint {
    pub eps: f64,
    /// Observed ratio over the Harnack bound.
    pub ratio: f64,
    /// `(((t + eps) / (s + eps)) / (t / s))^{(N + a + 1) / 2}` type closed form
    /// (exact for dilation-invariant volumes).
    pub closed_form: f64,
}

/// Setup of the sharpness probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpnessSetup {
    pub s: f64,
    pub t: f64,
    pub z: f64,
}

impl Default for SharpnessSetup {
    fn default() -> Self {
        Self { s: 1.0, t: 2.0, z: 1e-3 }
    }
}

/// Harnack ratio for `u = G^(a)(. ; 0, -eps, 0)` between `(0, s, z)` and
/// `(0, t, z)`, divided by the bound, for each `eps`.
pub fn harnack_sharpness_probe(spec: &OperatorSpec, a: f64, eps_sequence: &[f64], setup: SharpnessSetup) -> Result<Vec<SharpnessPoint>> {
    ExtensionParams::new(a)?;
    if eps_sequence.windows(2).any(|w| !(w[1] < w[0])) || eps_sequence.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidInput("eps sequence must be positive and decreasing".into()));
    }
    let SharpnessSetup { s, t, z } = setup;
    let origin = vec![0.0; spec.dim];
    let factor = harnack_factor(spec, a, &origin, z, s, &origin, z, t)?;
    let n_hom = homogeneous_exponent(spec);
    eps_sequence
        .iter()
        .map(|&eps| {
            let pole = ExtensionPoint { x: origin.clone(), z: 0.0, t: -eps };
            let early = log_neumann(spec, a, &ExtensionPoint { x: origin.clone(), z, t: s }, &pole)?;
            let late = log_neumann(spec, a, &ExtensionPoint { x: origin.clone(), z, t }, &pole)?;
            let ratio = (early - late).exp() / factor;
            let closed_form = ((t + eps) / (s + eps) * s / t).powf(0.5 * (n_hom + a + 1.0));
            Ok(SharpnessPoint { eps, ratio, closed_form })
        })
        .collect()
}

/// `d log V(t) / d log t` at `t = 1` (the homogeneous dimension for
/// dilation-invariant operators).
fn homogeneous_exponent(spec: &OperatorSpec) -> f64 {
    let h = 1e-4;
    match (gramians(spec, 1.0 + h), gramians(spec, 1.0 - h)) {
        (Ok(up), Ok(down)) => (up.det_tk.ln() - down.det_tk.ln()) / ((1.0 + h).ln() - (1.0 - h).ln()),
        _ => spec.dim as f64,
    }
}
