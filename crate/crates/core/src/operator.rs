//! Operator specifications `A u = tr(Q D^2 u) + <BX, Du>` and their matrix
//! calculus: exponentials, covariance Gramians, hypoellipticity tests.

use crate::error::{domain, require_positive_time, Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::special;

/// The pair `(Q, B)` defining one operator.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec {
    pub dim: usize,
    pub q: Matrix,
    pub b: Matrix,
    pub trace_b: f64,
    hypoelliptic: bool,
}

impl OperatorSpec {
    pub fn new(q: Matrix, b: Matrix) -> Result<Self> {
        let dim = q.nrows();
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be at least 1".into()));
        }
        if q.ncols() != dim || b.nrows() != dim || b.ncols() != dim {
            return Err(Error::InvalidInput(format!(
                "Q is {}x{} and B is {}x{}; both must be {dim}x{dim}",
                q.nrows(),
                q.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        if !linalg::is_finite(&q) || !linalg::is_finite(&b) {
            return Err(Error::InvalidInput("Q and B must have finite entries".into()));
        }
        let scale = linalg::norm2(&q).max(f64::MIN_POSITIVE);
        let tol_sym = 1e-12 * scale;
        if linalg::asymmetry(&q) > tol_sym {
            return Err(Error::InvalidInput("Q must be symmetric".into()));
        }
        let q = linalg::symmetrize(&q);
        if linalg::sym_eigenvalues(&q)[0] < -tol_sym {
            return Err(Error::InvalidInput("Q must be positive semidefinite".into()));
        }
        let trace_b = b.trace();
        let mut spec = Self { dim, q, b, trace_b, hypoelliptic: false };
        spec.hypoelliptic = hypoellipticity_check(&spec).hypoelliptic;
        Ok(spec)
    }

    /// `Q = I_N`, `B = 0`: the classical heat operator.
    pub fn heat(n: usize) -> Self {
        Self::new(Matrix::identity(n, n), Matrix::zeros(n, n)).expect("valid preset")
    }

    /// `Delta_v + <v, D_x>` on `R^{2n}` with `X = (v, x)`.
    pub fn kolmogorov(n: usize) -> Self {
        let dim = 2 * n;
        let mut q = Matrix::zeros(dim, dim);
        let mut b = Matrix::zeros(dim, dim);
        for i in 0..n {
            q[(i, i)] = 1.0;
            b[(n + i, i)] = 1.0;
        }
        Self::new(q, b).expect("valid preset")
    }

    /// `Q = I_N`, `B = -I_N`.
    pub fn ornstein_uhlenbeck(n: usize) -> Self {
        Self::new(Matrix::identity(n, n), -Matrix::identity(n, n)).expect("valid preset")
    }

    pub fn is_hypoelliptic(&self) -> bool {
        self.hypoelliptic
    }

    pub(crate) fn require_hypoelliptic(&self) -> Result<()> {
        if self.hypoelliptic {
            Ok(())
        } else {
            Err(Error::NotHypoelliptic("K(t) is singular for this (Q, B)".into()))
        }
    }

    /// `A f(X)` for a field with an exact Hessian.
    pub fn generator(&self, hessian: &Matrix, gradient: &Vector, x: &Vector) -> f64 {
        (&self.q * hessian).trace() + (&self.b * x).dot(gradient)
    }

    /// Largest real part of an eigenvalue of `B`.
    pub fn spectral_abscissa(&self) -> f64 {
        self.b
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Time beyond which `e^{tB}` may overflow.
    pub fn max_time(&self) -> f64 {
        let growth = self.spectral_abscissa().abs().max(linalg::norm2(&self.b) * 1e-3);
        if growth <= 0.0 {
            f64::INFINITY
        } else {
            200.0 / growth
        }
    }
}

/// Normalising constants of the kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConstants {
    pub c_n: f64,
    pub omega_n: f64,
}

impl KernelConstants {
    pub fn new(n: usize) -> Self {
        let h = n as f64 / 2.0;
        Self { c_n: 1.0 / (4f64.powf(h) * special::gamma(h + 1.0)), omega_n: special::unit_ball_volume(n) }
    }
}

/// `e^{tM}`.
pub fn matrix_exponential(m: &Matrix, t: f64) -> Result<Matrix> {
    if !linalg::is_finite(m) || !t.is_finite() {
        return Err(Error::InvalidInput("matrix exponential of non-finite input".into()));
    }
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidInput("matrix exponential needs a square matrix".into()));
    }
    let out = (m * t).exp();
    if !linalg::is_finite(&out) {
        return Err(domain(format!("e^(tM) overflows at t = {t}")));
    }
    Ok(out)
}

/// Pieces of the block exponential at a small time step, doubled up to the
/// requested time.
struct Flow {
    exp_tb: Matrix,
    exp_minus_tb: Matrix,
    /// `t K(t) = int_0^t e^{sB} Q e^{sB^T} ds`
    w: Matrix,
    /// `C(t) = int_0^t e^{-sB} Q e^{-sB^T} ds`
    c: Matrix,
}

fn flow(spec: &OperatorSpec, t: f64) -> Result<Flow> {
    let n = spec.dim;
    let norm = linalg::norm2(&spec.b) * t;
    let doublings = if norm > 1.0 { norm.log2().ceil() as i32 } else { 0 };
    let tau = t / 2f64.powi(doublings);
    let mut aug = Matrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(-&spec.b));
    aug.view_mut((0, n), (n, n)).copy_from(&spec.q);
    aug.view_mut((n, n), (n, n)).copy_from(&spec.b.transpose());
    let e = matrix_exponential(&aug, tau)?;
    let exp_minus = e.view((0, 0), (n, n)).into_owned();
    let f12 = e.view((0, n), (n, n)).into_owned();
    let exp_plus = exp_minus.clone().try_inverse().ok_or_else(|| domain("e^{-tB} is singular"))?;
    let mut flow = Flow {
        w: linalg::symmetrize(&(&exp_plus * &f12)),
        c: linalg::symmetrize(&(&f12 * exp_minus.transpose())),
        exp_tb: exp_plus,
        exp_minus_tb: exp_minus,
    };
    for _ in 0..doublings {
        flow.w = linalg::symmetrize(&(&flow.w + &flow.exp_tb * &flow.w * flow.exp_tb.transpose()));
        flow.c = linalg::symmetrize(&(&flow.c + &flow.exp_minus_tb * &flow.c * flow.exp_minus_tb.transpose()));
        flow.exp_tb = &flow.exp_tb * &flow.exp_tb;
        flow.exp_minus_tb = &flow.exp_minus_tb * &flow.exp_minus_tb;
    }
    Ok(flow)
}

/// Time-`t` record of `e^{tB}`, `K(t)`, `C(t)` and derived quantities.
#[derive(Debug, Clone)]
pub struct GramianBundle {
    pub t: f64,
    pub exp_tb: Matrix,
    pub exp_minus_tb: Matrix,
    pub k_t: Matrix,
    pub c_t: Matrix,
    pub det_tk: f64,
    pub det_c: f64,
    pub inv_k_t: Matrix,
    pub inv_c_t: Matrix,
}

fn det_spd(m: &Matrix) -> f64 {
    match m.clone().cholesky() {
        Some(ch) => ch.l().diagonal().iter().map(|d| d * d).product(),
        None => m.determinant(),
    }
}

pub fn gramians(spec: &OperatorSpec, t: f64) -> Result<GramianBundle> {
    require_positive_time(t)?;
    let f = flow(spec, t)?;
    if !linalg::is_finite(&f.c) || !linalg::is_finite(&f.w) {
        return Err(domain(format!("Gramians overflow at t = {t}")));
    }
    let k_t = &f.w / t;
    let (inv_k_t, inv_c_t) = if spec.hypoelliptic {
        let ik = linalg::spd_inverse(&k_t)
            .map_err(|_| Error::Consistency(format!("K(t) singular at t = {t} for a hypoelliptic spec")))?;
        let ic = linalg::spd_inverse(&f.c)
            .map_err(|_| Error::Consistency(format!("C(t) singular at t = {t} for a hypoelliptic spec")))?;
        (ik, ic)
    } else {
        let nan = Matrix::from_element(spec.dim, spec.dim, f64::NAN);
        (nan.clone(), nan)
    };
    Ok(GramianBundle {
        t,
        det_tk: det_spd(&f.w),
        det_c: det_spd(&f.c),
        exp_tb: f.exp_tb,
        exp_minus_tb: f.exp_minus_tb,
        k_t,
        c_t: f.c,
        inv_k_t,
        inv_c_t,
    })
}

/// Law of `Y` under `p(X, ., t)` up to the mean shift: `e^{tB}` and the
/// whitening factor `sqrt(4t) K(t)^{1/2}`. Unlike [`gramians`] this never
/// forms `C(t)`, so it stays finite for long times on stable drifts.
#[derive(Debug, Clone)]
pub struct Transition {
    pub t: f64,
    pub exp_tb: Matrix,
    /// `2 t K(t)`
    pub covariance: Matrix,
    /// `sqrt(4t) K(t)^{1/2}`
    pub whitening: Matrix,
}

impl Transition {
    pub fn mean(&self, x: &Vector) -> Vector {
        &self.exp_tb * x
    }
}

pub fn transition(spec: &OperatorSpec, t: f64) -> Result<Transition> {
    require_positive_time(t)?;
    let n = spec.dim;
    let norm = linalg::norm2(&spec.b) * t;
    let doublings = if norm > 1.0 { norm.log2().ceil() as i32 } else { 0 };
    let tau = t / 2f64.powi(doublings);
    let mut aug = Matrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&spec.b);
    aug.view_mut((0, n), (n, n)).copy_from(&spec.q);
    aug.view_mut((n, n), (n, n)).copy_from(&(-spec.b.transpose()));
    let e = matrix_exponential(&aug, tau)?;
    let mut exp_tb = e.view((0, 0), (n, n)).into_owned();
    let f12 = e.view((0, n), (n, n)).into_owned();
    // F12 = int e^{(tau-s)B} Q e^{-sB^T} ds, so W = F12 e^{tau B^T}
    let mut w = linalg::symmetrize(&(&f12 * exp_tb.transpose()));
    for _ in 0..doublings {
        w = linalg::symmetrize(&(&w + &exp_tb * &w * exp_tb.transpose()));
        exp_tb = &exp_tb * &exp_tb;
    }
    if !linalg::is_finite(&w) || !linalg::is_finite(&exp_tb) {
        return Err(domain(format!("transition law overflows at t = {t}")));
    }
    let covariance = &w * 2.0;
    let whitening = linalg::sym_sqrt(&(&w * 4.0));
    Ok(Transition { t, exp_tb, covariance, whitening })
}

/// Outcome of the two hypoellipticity tests.
#[derive(Debug, Clone, PartialEq)]
pub struct HypoellipticityReport {
    pub hypoelliptic: bool,
    pub lambda_min_k1: f64,
    pub tol_pd: f64,
    pub kalman_rank: usize,
    pub gramian_test: bool,
    pub kalman_test: bool,
}

impl HypoellipticityReport {
    pub fn tests_agree(&self) -> bool {
        self.gramian_test == self.kalman_test
    }
}

pub fn hypoellipticity_check(spec: &OperatorSpec) -> HypoellipticityReport {
    let n = spec.dim;
    let (lambda_min_k1, tol_pd) = match flow(spec, 1.0) {
        Ok(f) => (linalg::sym_eigenvalues(&f.w)[0], 1e-10 * linalg::norm2(&f.w)),
        Err(_) => (f64::NAN, f64::NAN),
    };
    let gramian_test = lambda_min_k1 > tol_pd && tol_pd > 0.0;
    let root = linalg::sym_sqrt(&spec.q);
    let mut kalman = Matrix::zeros(n, n * n);
    let mut block = root;
    for k in 0..n {
        kalman.view_mut((0, k * n), (n, n)).copy_from(&block);
        block = &spec.b * &block;
    }
    let kalman_rank = linalg::rank(&kalman, 1e-10);
    let kalman_test = kalman_rank == n;
    HypoellipticityReport {
        hypoelliptic: gramian_test && kalman_test,
        lambda_min_k1,
        tol_pd,
        kalman_rank,
        gramian_test,
        kalman_test,
    }
}

/// Residuals of `tr(Q C^{-1}) = d/dt log det C + 2 tr B` and of the Gramian
/// ODE `e^{-tB} Q e^{-tB^T} = Q - B C - C B^T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDetResidual {
    pub trace_residual: f64,
    pub matrix_residual: f64,
}

impl LogDetResidual {
    pub fn max(&self) -> f64 {
        self.trace_residual.max(self.matrix_residual)
    }
}

pub fn logdet_derivative_identity(spec: &OperatorSpec, t: f64) -> Result<LogDetResidual> {
    require_positive_time(t)?;
    spec.require_hypoelliptic()?;
    let g = gramians(spec, t)?;
    let h = 1e-5 * t;
    let plus = gramians(spec, t + h)?;
    let minus = gramians(spec, t - h)?;
    let dlogdet = (plus.det_c.ln() - minus.det_c.ln()) / (2.0 * h);
    let lhs = (&spec.q * &g.inv_c_t).trace();
    let trace_residual = (lhs - dlogdet - 2.0 * spec.trace_b).abs();
    let deriv = &g.exp_minus_tb * &spec.q * g.exp_minus_tb.transpose();
    let rhs = &spec.q - &spec.b * &g.c_t - &g.c_t * spec.b.transpose();
    let matrix_residual = linalg::norm2(&(deriv - rhs));
    Ok(LogDetResidual { trace_residual, matrix_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rel(a: &Matrix, b: &Matrix) -> f64 {
        linalg::norm2(&(a - b)) / linalg::norm2(b).max(1e-300)
    }

    #[test]
    fn exponential_examples() {
        let z = matrix_exponential(&Matrix::zeros(3, 3), 5.0).unwrap();
        assert_eq!(z, Matrix::identity(3, 3));
        let nil = Matrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let e = matrix_exponential(&nil, 1.0).unwrap();
        assert!(rel(&e, &Matrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0])) < 1e-15);
        let e = matrix_exponential(&(-Matrix::identity(2, 2)), 3.0).unwrap();
        assert_relative_eq!(e[(0, 0)], (-3.0f64).exp(), max_relative = 1e-14);
        assert!(matrix_exponential(&Matrix::from_element(1, 1, f64::NAN), 1.0).is_err());
    }

    #[test]
    fn kolmogorov_gramian_closed_form() {
        let spec = OperatorSpec::kolmogorov(1);
        for &t in &[0.01, 0.7, 3.0, 40.0] {
            let g = gramians(&spec, t).unwrap();
            let w = &g.k_t * t;
            let expected = Matrix::from_row_slice(2, 2, &[t, t * t / 2.0, t * t / 2.0, t.powi(3) / 3.0]);
            assert!(rel(&w, &expected) < 1e-12, "t = {t}");
            assert_relative_eq!(g.det_tk, t.powi(4) / 12.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn ou_gramians() {
        let spec = OperatorSpec::ornstein_uhlenbeck(2);
        for &t in &[0.1, 2.0, 10.0] {
            let g = gramians(&spec, t).unwrap();
            assert_relative_eq!(g.k_t[(0, 0)], (1.0 - (-2.0 * t).exp()) / (2.0 * t), max_relative = 1e-12);
            assert_relative_eq!(g.c_t[(1, 1)], ((2.0 * t).exp() - 1.0) / 2.0, max_relative = 1e-12);
            assert!(g.k_t[(0, 1)].abs() < 1e-14);
        }
        let tr = transition(&spec, 500.0).unwrap();
        assert_relative_eq!(tr.covariance[(0, 0)], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn heat_gramians_are_trivial() {
        let g = gramians(&OperatorSpec::heat(3), 2.0).unwrap();
        assert!(rel(&g.k_t, &Matrix::identity(3, 3)) < 1e-15);
        assert!(rel(&g.c_t, &(Matrix::identity(3, 3) * 2.0)) < 1e-15);
    }

    #[test]
    fn hypoellipticity_examples() {
        assert!(OperatorSpec::kolmogorov(1).is_hypoelliptic());
        assert!(OperatorSpec::kolmogorov(2).is_hypoelliptic());
        let degenerate = OperatorSpec::new(Matrix::from_diagonal(&linalg::vector(&[1.0, 0.0])), Matrix::zeros(2, 2)).unwrap();
        let report = hypoellipticity_check(&degenerate);
        assert!(!report.hypoelliptic && report.tests_agree());
        let b = Matrix::from_row_slice(2, 2, &[0.3, -2.0, 1.0, 0.5]);
        assert!(OperatorSpec::new(Matrix::identity(2, 2), b).unwrap().is_hypoelliptic());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let q = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(OperatorSpec::new(q, Matrix::zeros(2, 2)).is_err());
        let q = Matrix::from_diagonal(&linalg::vector(&[1.0, -1.0]));
        assert!(OperatorSpec::new(q, Matrix::zeros(2, 2)).is_err());
        assert!(OperatorSpec::new(Matrix::identity(2, 2), Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn logdet_identity_residuals() {
        assert!(logdet_derivative_identity(&OperatorSpec::heat(2), 1.0).unwrap().max() < 1e-8);
        assert!(logdet_derivative_identity(&OperatorSpec::kolmogorov(1), 0.7).unwrap().max() < 1e-7);
        assert!(logdet_derivative_identity(&OperatorSpec::ornstein_uhlenbeck(2), 2.0).unwrap().max() < 1e-8);
        assert!(logdet_derivative_identity(&OperatorSpec::heat(2), 0.0).is_err());
    }

    #[test]
    fn kernel_constants_match_volume_identity() {
        for n in 1..=4 {
            let kc = KernelConstants::new(n);
            // c_N / omega_N = (4 pi)^{-N/2}
            assert_relative_eq!(kc.c_n / kc.omega_n, (4.0 * std::f64::consts::PI).powf(-(n as f64) / 2.0), max_relative = 1e-14);
        }
    }
}
