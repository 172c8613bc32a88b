//! The semigroup `P_t`, the Poisson semigroup, kernel `L^r` norms and the
//! ultracontractivity bounds.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, require_positive_time, Error, Result};
use crate::kernel::Kernel;
use crate::linalg::{self, Matrix, Vector};
use crate::operator::{transition, KernelConstants, OperatorSpec, Transition};
use crate::quadrature::{fitted_exponential_tail, HermiteCubature, LogGrid};
use crate::testfuncs::{Field, TestFunction};

/// Quadrature settings shared by all numerical routines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    /// Gauss-Hermite nodes per axis.
    pub gh_order: usize,
    /// Log-time nodes per twenty decades of `t`.
    pub time_nodes: usize,
    pub mc_samples: usize,
    pub rng_seed: u64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { gh_order: 40, time_nodes: 200, mc_samples: 1 << 16, rng_seed: 0x5eed }
    }
}

/// Highest dimension served by tensor Gauss-Hermite rules.
pub const MAX_TENSOR_DIM: usize = 4;

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.gh_order < 8 {
            return Err(Error::InvalidInput(format!("gh_order must be at least 8, got {}", self.gh_order)));
        }
        if self.mc_samples < 1024 {
            return Err(Error::InvalidInput(format!("mc_samples must be at least 1024, got {}", self.mc_samples)));
        }
        if self.time_nodes < 20 {
            return Err(Error::InvalidInput(format!("time_nodes must be at least 20, got {}", self.time_nodes)));
        }
        Ok(())
    }

    /// Step of the logarithmic time grids.
    pub fn log_step(&self) -> f64 {
        20.0 * std::f64::consts::LN_10 / self.time_nodes as f64
    }

    /// Tensor rule for dimension `dim`; the per-axis order is reduced in
    /// dimension four to keep the node count near `40^3`.
    pub fn cubature(&self, dim: usize) -> Result<HermiteCubature> {
        if dim > MAX_TENSOR_DIM {
            return Err(Error::Unsupported(format!("tensor quadrature supports N <= {MAX_TENSOR_DIM}, got {dim}")));
        }
        let order = if dim == 4 { self.gh_order.min(24) } else { self.gh_order };
        Ok(HermiteCubature::new(dim, order))
    }
}

/// Value with a statistical or quadrature error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, stderr: 0.0 }
    }
}

fn check_x(spec: &OperatorSpec, f: &dyn Field, x: &[f64]) -> Result<()> {
    if f.dim() != spec.dim || x.len() != spec.dim {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: operator {}, field {}, point {}",
            spec.dim,
            f.dim(),
            x.len()
        )));
    }
    Ok(())
}

/// `E[g(m + L u)]` for `u ~ N(0, I/2)` on the tensor rule.
fn whitened_mean(cub: &HermiteCubature, mean: &Vector, root: &Matrix, g: impl Fn(&[f64]) -> f64) -> f64 {
    let n = mean.len();
    let mut y = vec![0.0; n];
    cub.iter()
        .map(|(u, w)| {
            for i in 0..n {
                y[i] = mean[i] + (0..n).map(|j| root[(i, j)] * u[j]).sum::<f64>();
            }
            w * g(&y)
        })
        .sum()
}

/// Evaluator of `P_t` at one time.
pub struct Semigroup<'a> {
    pub spec: &'a OperatorSpec,
    pub law: Transition,
    cub: HermiteCubature,
    quad: QuadratureSpec,
}

impl<'a> Semigroup<'a> {
    pub fn new(spec: &'a OperatorSpec, t: f64, quad: &QuadratureSpec) -> Result<Self> {
        require_positive_time(t)?;
        spec.require_hypoelliptic()?;
        quad.validate()?;
        let cub = quad.cubature(spec.dim)?;
        Ok(Self { spec, law: transition(spec, t)?, cub, quad: quad.clone() })
    }

    /// `P_t f(X)` by Gauss-Hermite in the kernel's own coordinates.
    pub fn apply_kernel_coordinates(&self, f: &dyn Field, x: &[f64]) -> f64 {
        let mean = self.law.mean(&linalg::vector(x));
        whitened_mean(&self.cub, &mean, &self.law.whitening, |y| f.value(y))
    }

    /// `P_t f(X)` for a test function, term by term: each Gaussian factor is
    /// absorbed into the kernel and the remaining monomial is integrated by
    /// Gauss-Hermite in the combined coordinates.
    pub fn apply_test_function(&self, f: &TestFunction, x: &[f64]) -> f64 {
        let mean = self.law.mean(&linalg::vector(x));
        (0..f.num_terms())
            .map(|k| {
                let tilt = f.tilt(k, &mean, &self.law.covariance);
                let (coeff, monomial) = f.term_monomial(k);
                if coeff == 0.0 {
                    return 0.0;
                }
                let moment = if monomial.iter().all(|&m| m == 0) {
                    1.0
                } else {
                    let root = linalg::sym_sqrt(&(&tilt.cov * 2.0));
                    whitened_mean(&self.cub, &tilt.offset, &root, |d| {
                        d.iter().zip(monomial).map(|(v, &m)| v.powi(m as i32)).product()
                    })
                };
                coeff * tilt.log_factor.exp() * moment
            })
            .sum()
    }

    /// Monte Carlo estimate with `quad.mc_samples` draws.
    pub fn apply_monte_carlo(&self, f: &dyn Field, x: &[f64]) -> Estimate {
        let n = self.spec.dim;
        let mean = self.law.mean(&linalg::vector(x));
        let root = &self.law.whitening * std::f64::consts::FRAC_1_SQRT_2;
        let mut rng = ChaCha8Rng::seed_from_u64(self.quad.rng_seed);
        let mut z = vec![0.0; n];
        let mut y = vec![0.0; n];
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..self.quad.mc_samples {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            for i in 0..n {
                y[i] = mean[i] + (0..n).map(|j| root[(i, j)] * z[j]).sum::<f64>();
            }
            let v = f.value(&y);
            sum += v;
            sum2 += v * v;
        }
        let m = self.quad.mc_samples as f64;
        let mean_v = sum / m;
        let var = (sum2 / m - mean_v * mean_v).max(0.0) * m / (m - 1.0);
        Estimate { value: mean_v, stderr: (var / m).sqrt() }
    }

    /// Dispatch: exact-coordinate quadrature for test functions, kernel
    /// quadrature for other smooth fields, Monte Carlo otherwise.
    pub fn apply(&self, f: &dyn Field, x: &[f64]) -> Estimate {
        if let Some(tf) = f.as_test_function() {
            Estimate::exact(self.apply_test_function(tf, x))
        } else if f.is_smooth() {
            Estimate::exact(self.apply_kernel_coordinates(f, x))
        } else {
            self.apply_monte_carlo(f, x)
        }
    }

    /// `P_t(g)(X)` for a pointwise function of the field (`g(f(Y), Y)`).
    pub fn expect(&self, x: &[f64], g: impl Fn(&[f64]) -> f64) -> f64 {
        let mean = self.law.mean(&linalg::vector(x));
        whitened_mean(&self.cub, &mean, &self.law.whitening, g)
    }
}

/// `P_t f(X)`.
pub fn apply_semigroup(spec: &OperatorSpec, f: &dyn Field, t: f64, x: &[f64], quad: &QuadratureSpec) -> Result<Estimate> {
    check_x(spec, f, x)?;
    Ok(Semigroup::new(spec, t, quad)?.apply(f, x))
}

/// `t -> P_t f(X)` as a reusable closure.
pub fn semigroup_profile<'a>(
    spec: &'a OperatorSpec,
    f: &'a dyn Field,
    x: &'a [f64],
    quad: &'a QuadratureSpec,
) -> impl Fn(f64) -> Result<f64> + Sync + 'a {
    move |t| Ok(Semigroup::new(spec, t, quad)?.apply(f, x).value)
}

/// Integral over `t > 0` of a log-substituted integrand `h(t) = t g(t)`
/// on a uniform grid in `ln t`, with tail corrections.
#[derive(Debug, Clone, Copy)]
pub struct LogIntegral {
    pub grid: LogGrid,
    /// Known exponent `kappa` with `h(t) ~ t^kappa` as `t -> 0`.
    pub left_exponent: Option<f64>,
}

/// Result of [`LogIntegral::run`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegralValue {
    pub value: f64,
    pub left_tail: f64,
    pub right_tail: f64,
    /// Discretisation estimate (full vs half resolution).
    pub error: f64,
}

impl LogIntegral {
    pub fn new(t_min: f64, t_max: f64, step: f64, left_exponent: Option<f64>) -> Self {
        Self { grid: LogGrid::new(t_min, t_max, step), left_exponent }
    }

    pub fn times(&self) -> Vec<f64> {
        self.grid.times()
    }

    /// Integrate given precomputed samples `h(t_i)`.
    pub fn from_samples(&self, h: &[f64]) -> Result<IntegralValue> {
        let n = h.len();
        let body = self.grid.trapezoid(h);
        let coarse = self.grid.coarse_trapezoid(h);
        let left_tail = match self.left_exponent {
            Some(k) if k > 0.0 => h[0] / k,
            Some(_) => return Err(Error::Divergent("non-integrable singularity at t = 0".into())),
            None => 0.0,
        };
        let scale = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let right_tail = if h[n - 1].abs() <= 1e-15 * scale {
            0.0
        } else {
            match fitted_exponential_tail(h[n - 2], h[n - 1], self.grid.spacing()) {
                Some(tail) => tail,
                // rounding noise far out in the tail
                None if h[n - 1].abs() <= 1e-9 * scale => 0.0,
                None => {
                    return Err(Error::Divergent(format!(
                        "integrand does not decay at t = {:e} (last samples {:e}, {:e})",
                        self.grid.t_max,
                        h[n - 2],
                        h[n - 1]
                    )))
                }
            }
        };
        Ok(IntegralValue { value: body + left_tail + right_tail, left_tail, right_tail, error: (body - coarse).abs() })
    }

    /// Evaluate `h` on the grid (in parallel) and integrate.
    pub fn run(&self, h: impl Fn(f64) -> Result<f64> + Sync) -> Result<IntegralValue> {
        let samples: Result<Vec<f64>> = self.times().par_iter().map(|&t| h(t)).collect();
        self.from_samples(&samples?)
    }
}

/// Subordination weight of the Poisson semigroup,
/// `z t^{-3/2} e^{-z^2/4t} / sqrt(4 pi)`.
pub fn poisson_weight(z: f64, t: f64) -> f64 {
    z * t.powf(-1.5) * (-z * z / (4.0 * t)).exp() / (4.0 * PI).sqrt()
}

/// `t`-range carrying the Poisson weight for `z`: below it the weight is
/// below `e^{-700}`.
pub fn poisson_time_range(z: f64) -> (f64, f64) {
    (z * z / 2800.0, z * z * 1e12)
}

/// `P_z f(X) = int_0^inf poisson_weight(z, t) P_t f(X) dt`.
pub fn apply_poisson(spec: &OperatorSpec, f: &dyn Field, z: f64, x: &[f64], quad: &QuadratureSpec) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(domain(format!("Poisson parameter must be positive, got {z}")));
    }
    check_x(spec, f, x)?;
    let (lo, hi) = poisson_time_range(z);
    let hi = hi.min(spec.max_time());
    let profile = semigroup_profile(spec, f, x, quad);
    let integral = LogIntegral::new(lo.max(crate::kernel::MIN_TIME), hi, quad.log_step(), None);
    Ok(integral.run(|t| Ok(t * poisson_weight(z, t) * profile(t)?))?.value)
}

/// `(int p(X, Y, t)^r dX)^{1/r}` by Gauss-Hermite in `X`.
pub fn kernel_lr_norm(spec: &OperatorSpec, y: &[f64], t: f64, r: f64, quad: &QuadratureSpec) -> Result<f64> {
    if !(r >= 1.0) {
        return Err(domain(format!("kernel norm exponent must be >= 1, got {r}")));
    }
    let k = Kernel::new(spec, t)?;
    let cub = quad.cubature(spec.dim)?;
    let g = &k.bundle;
    // p(., Y, t) is Gaussian in X around e^{-tB} Y with covariance 2 C(t) / r
    let center = &g.exp_minus_tb * linalg::vector(y);
    let root = linalg::sym_sqrt(&(&g.c_t * (4.0 / r)));
    let jac = root.determinant().abs() * PI.powf(spec.dim as f64 / 2.0);
    let n = spec.dim;
    let integral: f64 = cub
        .iter()
        .map(|(u, w)| {
            let uv = linalg::vector(u);
            let xv = &center + &root * &uv;
            // divide out the Gaussian weight of the rule
            w * jac * (r * k.log_value(xv.as_slice(), y) + uv.norm_squared()).exp()
        })
        .sum();
    debug_assert_eq!(n, y.len());
    Ok(integral.powf(1.0 / r))
}

/// `c_{N,r}` with `||p(., Y, t)||_r = c_{N,r} V(t)^{-(1-1/r)} e^{-t tr B / r}`,
/// measured on the heat operator at `t = 1`.
pub fn calibrate_kernel_norm_constant(n: usize, r: f64, quad: &QuadratureSpec) -> Result<f64> {
    let heat = OperatorSpec::heat(n);
    let norm = kernel_lr_norm(&heat, &vec![0.0; n], 1.0, r, quad)?;
    Ok(norm * KernelConstants::new(n).omega_n.powf(1.0 - 1.0 / r))
}

/// `c_N^{1-1/r} r^{-N/(2r)}`.
pub fn kernel_norm_constant_closed_form(n: usize, r: f64) -> f64 {
    KernelConstants::new(n).c_n.powf(1.0 - 1.0 / r) * r.powf(-(n as f64) / (2.0 * r))
}

/// `||P_t f||_q <= C V(t)^{-(1/p-1/q)} e^{-t tr B / q} ||f||_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UltracontractivityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub constant: f64,
    pub truncation_bound: f64,
    pub pass: bool,
    /// Set when `tr B < 0`, where the decay statements are not claimed.
    pub negative_trace: bool,
}

/// Lebesgue exponent; `f64::INFINITY` for the sup norm.
fn gaussian_norm(a: f64, r: f64, n: usize) -> f64 {
    // || exp(-|X|^2 / a) ||_r
    if r.is_infinite() {
        1.0
    } else {
        (PI * a / r).powf(n as f64 / (2.0 * r))
    }
}

/// `C(N, p, q)`: the largest ratio `||P_1 f||_q V(1)^{1/p-1/q} / ||f||_p`
/// over isotropic Gaussians `f` for the heat operator.
pub fn calibrate_ultracontractivity_constant(n: usize, p: f64, q: f64) -> f64 {
    if p == q {
        return 1.0;
    }
    let v1 = KernelConstants::new(n).omega_n;
    let nf = n as f64;
    let ratio = |lw: f64| {
        let w2 = (2.0 * lw).exp();
        // P_1 exp(-|Y|^2/w^2) = (w^2/(w^2+4))^{N/2} exp(-|X|^2/(w^2+4))
        let amp = (w2 / (w2 + 4.0)).powf(nf / 2.0);
        amp * gaussian_norm(w2 + 4.0, q, n) * v1.powf(1.0 / p - 1.0 / q) / gaussian_norm(w2, p, n)
    };
    // golden-section search for the maximum over log-width
    let (mut a, mut b) = (-12.0f64, 12.0f64);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..200 {
        if ratio(c) > ratio(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    let inner = ratio(0.5 * (a + b));
    // the supremum may sit at an end of the search interval
    inner.max(ratio(-12.0)).max(ratio(12.0))
}

/// Box in the transported variable `Z = e^{tB} X` outside of which a test
/// function smoothed by `P_t` is below `exp(-50)` of its size.
pub(crate) fn smoothed_support(f: &TestFunction, law: &Transition) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = f.dim();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for term in f.terms() {
        let shape = Matrix::from_fn(n, n, |r, c| term.shape[r][c]);
        if shape.amax() == 0.0 {
            return Err(Error::Unsupported("L^p norms need decaying test functions".into()));
        }
        let inv = linalg::spd_inverse(&shape)?;
        for i in 0..n {
            let spread = (50.0 * (inv[(i, i)] + 2.0 * law.covariance[(i, i)])).sqrt();
            lo[i] = lo[i].min(term.center[i] - spread);
            hi[i] = hi[i].max(term.center[i] + spread);
        }
    }
    Ok((lo, hi))
}

/// Nodes per axis for the box integrals of [`lp_norm`].
const NORM_GRID: usize = 160;

/// `||g||_r` on a box by the trapezoid rule; `r = inf` gives the max over
/// the grid.
fn box_norm(lo: &[f64], hi: &[f64], r: f64, g: impl Fn(&[f64]) -> f64 + Sync) -> f64 {
    let n = lo.len();
    let m = if n <= 2 { NORM_GRID } else { 40 };
    let total = m.pow(n as u32);
    let h: Vec<f64> = (0..n).map(|i| (hi[i] - lo[i]) / (m - 1) as f64).collect();
    let cell: f64 = h.iter().product();
    let vals: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let mut rem = idx;
            let mut y = vec![0.0; n];
            let mut weight = 1.0;
            for i in 0..n {
                let k = rem % m;
                rem /= m;
                y[i] = lo[i] + h[i] * k as f64;
                if k == 0 || k == m - 1 {
                    weight *= 0.5;
                }
            }
            let v = g(&y).abs();
            if r.is_infinite() {
                v
            } else {
                weight * v.powf(r)
            }
        })
        .collect();
    if r.is_infinite() {
        vals.into_iter().fold(0.0, f64::max)
    } else {
        (cell * vals.iter().sum::<f64>()).powf(1.0 / r)
    }
}

/// Box outside of which `f` is below `exp(-50)` of its size.
pub(crate) fn support_box(f: &TestFunction) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = f.dim();
    let law = Transition {
        t: 0.0,
        exp_tb: Matrix::identity(n, n),
        covariance: Matrix::zeros(n, n),
        whitening: Matrix::zeros(n, n),
    };
    smoothed_support(f, &law)
}

/// Tensor trapezoid rule with `m` nodes per axis on a box.
pub(crate) fn box_rule(lo: &[f64], hi: &[f64], m: usize) -> Vec<(Vec<f64>, f64)> {
    let n = lo.len();
    let h: Vec<f64> = (0..n).map(|i| (hi[i] - lo[i]) / (m - 1) as f64).collect();
    let cell: f64 = h.iter().product();
    (0..m.pow(n as u32))
        .map(|idx| {
            let mut rem = idx;
            let mut y = vec![0.0; n];
            let mut w = cell;
            for i in 0..n {
                let k = rem % m;
                rem /= m;
                y[i] = lo[i] + h[i] * k as f64;
                if k == 0 || k == m - 1 {
                    w *= 0.5;
                }
            }
            (y, w)
        })
        .collect()
}

/// `||f||_r` for a test function.
pub fn lp_norm(f: &TestFunction, r: f64) -> Result<f64> {
    let (lo, hi) = support_box(f)?;
    Ok(box_norm(&lo, &hi, r, |y| f.value(y)))
}

/// `||P_t f||_r` over `X`, via the transported variable `Z = e^{tB}X`.
pub fn semigroup_lp_norm(spec: &OperatorSpec, f: &TestFunction, t: f64, r: f64, quad: &QuadratureSpec) -> Result<f64> {
    let sg = Semigroup::new(spec, t, quad)?;
    let (lo, hi) = smoothed_support(f, &sg.law)?;
    let inv = sg.law.exp_tb.clone().try_inverse().ok_or_else(|| domain("e^{tB} is singular"))?;
    let norm = box_norm(&lo, &hi, r, |z| {
        let x = &inv * linalg::vector(z);
        sg.apply_test_function(f, x.as_slice())
    });
    // dX = e^{-t tr B} dZ
    Ok(if r.is_infinite() { norm } else { norm * (-t * spec.trace_b / r).exp() })
}

pub fn ultracontractivity_check(
    spec: &OperatorSpec,
    f: &TestFunction,
    p: f64,
    q: f64,
    t: f64,
    quad: &QuadratureSpec,
) -> Result<UltracontractivityCheck> {
    if !(p >= 1.0) || !(q >= p) {
        return Err(domain(format!("need 1 <= p <= q, got p = {p}, q = {q}")));
    }
    let lhs = semigroup_lp_norm(spec, f, t, q, quad)?;
    let fp = lp_norm(f, p)?;
    let constant = calibrate_ultracontractivity_constant(spec.dim, p, q);
    let v = crate::kernel::volume(spec, t)?;
    let decay = if q.is_infinite() { 1.0 } else { (-t * spec.trace_b / q).exp() };
    let rhs = constant * v.powf(-(1.0 / p - if q.is_infinite() { 0.0 } else { 1.0 / q })) * decay * fp;
    let truncation_bound = 1e-20 * (1.0 + rhs);
    Ok(UltracontractivityCheck {
        lhs,
        rhs,
        constant,
        truncation_bound,
        pass: lhs <= rhs * (1.0 + 1e-9) + truncation_bound,
        negative_trace: spec.trace_b < 0.0,
    })
}
