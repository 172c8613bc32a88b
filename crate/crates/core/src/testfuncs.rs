//! Gaussian-polynomial test functions with exact derivatives and an exact
//! semigroup oracle, plus compactly supported bumps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::operator::{transition, OperatorSpec};

/// A real function on `R^N` that the semigroup machinery can integrate.
pub trait Field: Sync {
    fn dim(&self) -> usize;
    fn value(&self, y: &[f64]) -> f64;
    fn gradient(&self, y: &[f64]) -> Vec<f64>;
    /// Exact Hessian where available.
    fn hessian(&self, _y: &[f64]) -> Option<Matrix> {
        None
    }
    /// Whether polynomial quadrature converges fast on this field.
    fn is_smooth(&self) -> bool {
        true
    }
    /// The closed-form representation, if the field has one.
    fn as_test_function(&self) -> Option<&TestFunction> {
        None
    }
}

/// `coeff * prod (Y - center)^monomial * exp(-<shape (Y - center), Y - center>)`.
///
/// A zero `shape` gives a plain polynomial term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coeff: f64,
    pub center: Vec<f64>,
    pub shape: Vec<Vec<f64>>,
    pub monomial: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
struct CompiledTerm {
    coeff: f64,
    center: Vec<f64>,
    shape: Matrix,
    monomial: Vec<u32>,
    polynomial: bool,
}

/// Gaussian factor absorbed into a normal law, see [`TestFunction::tilt`].
#[derive(Debug, Clone)]
pub(crate) struct Tilt {
    pub log_factor: f64,
    pub offset: Vector,
    pub cov: Matrix,
}

/// Finite sum of [`Term`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    dim: usize,
    terms: Vec<CompiledTerm>,
}

pub const MAX_DEGREE: u32 = 4;
pub const MAX_ORACLE_DEGREE: u32 = 2;

fn pow_u(x: f64, k: u32) -> f64 {
    x.powi(k as i32)
}

impl TestFunction {
    pub fn new(dim: usize, terms: Vec<Term>) -> Result<Self> {
        let mut compiled = Vec::with_capacity(terms.len());
        for (i, t) in terms.into_iter().enumerate() {
            if t.center.len() != dim || t.monomial.len() != dim || t.shape.len() != dim {
                return Err(Error::InvalidInput(format!("term {i}: dimension mismatch (expected {dim})")));
            }
            if t.shape.iter().any(|row| row.len() != dim) {
                return Err(Error::InvalidInput(format!("term {i}: shape must be {dim}x{dim}")));
            }
            if t.monomial.iter().sum::<u32>() > MAX_DEGREE {
                return Err(Error::InvalidInput(format!("term {i}: monomial degree exceeds {MAX_DEGREE}")));
            }
            let shape = Matrix::from_fn(dim, dim, |r, c| t.shape[r][c]);
            if !linalg::is_finite(&shape) || !t.coeff.is_finite() || t.center.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidInput(format!("term {i}: non-finite data")));
            }
            if linalg::asymmetry(&shape) > 1e-12 * shape.amax().max(1.0) {
                return Err(Error::InvalidInput(format!("term {i}: shape must be symmetric")));
            }
            let shape = linalg::symmetrize(&shape);
            let polynomial = shape.amax() == 0.0;
            if !polynomial && linalg::sym_eigenvalues(&shape)[0] <= 0.0 {
                return Err(Error::InvalidInput(format!("term {i}: shape must be positive definite or zero")));
            }
            compiled.push(CompiledTerm { coeff: t.coeff, center: t.center, shape, monomial: t.monomial, polynomial });
        }
        Ok(Self { dim, terms: compiled })
    }

    /// `coeff * exp(-|Y - center|^2 / width^2)`.
    pub fn gaussian(center: &[f64], width: f64, coeff: f64) -> Self {
        let n = center.len();
        let s = 1.0 / (width * width);
        let shape = (0..n).map(|i| (0..n).map(|j| if i == j { s } else { 0.0 }).collect()).collect();
        Self::new(n, vec![Term { coeff, center: center.to_vec(), shape, monomial: vec![0; n] }]).expect("valid gaussian")
    }

    /// `<a, Y> + b`.
    pub fn affine(a: &[f64], b: f64) -> Self {
        let n = a.len();
        let zero = vec![vec![0.0; n]; n];
        let mut terms = vec![Term { coeff: b, center: vec![0.0; n], shape: zero.clone(), monomial: vec![0; n] }];
        for (i, &ai) in a.iter().enumerate() {
            let mut monomial = vec![0; n];
            monomial[i] = 1;
            terms.push(Term { coeff: ai, center: vec![0.0; n], shape: zero.clone(), monomial });
        }
        Self::new(n, terms).expect("valid affine function")
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: Vec::new() }
    }

    pub fn terms(&self) -> Vec<Term> {
        self.terms
            .iter()
            .map(|t| Term {
                coeff: t.coeff,
                center: t.center.clone(),
                shape: (0..self.dim).map(|r| (0..self.dim).map(|c| t.shape[(r, c)]).collect()).collect(),
                monomial: t.monomial.clone(),
            })
            .collect()
    }

    /// True when every term decays (no polynomial terms).
    pub fn is_schwartz(&self) -> bool {
        self.terms.iter().all(|t| !t.polynomial)
    }

    pub fn max_degree(&self) -> u32 {
        self.terms.iter().map(|t| t.monomial.iter().sum()).max().unwrap_or(0)
    }

    /// `a f + b g`.
    pub fn combine(a: f64, f: &Self, b: f64, g: &Self) -> Result<Self> {
        if f.dim != g.dim {
            return Err(Error::InvalidInput("dimension mismatch".into()));
        }
        let mut terms: Vec<CompiledTerm> = f.terms.iter().cloned().map(|mut t| {
            t.coeff *= a;
            t
        }).collect();
        terms.extend(g.terms.iter().cloned().map(|mut t| {
            t.coeff *= b;
            t
        }));
        Ok(Self { dim: f.dim, terms })
    }

    /// `f(lambda Y)`.
    pub fn dilate(&self, lambda: f64) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let deg: u32 = t.monomial.iter().sum();
                CompiledTerm {
                    coeff: t.coeff * pow_u(lambda, deg),
                    center: t.center.iter().map(|c| c / lambda).collect(),
                    shape: &t.shape * (lambda * lambda),
                    monomial: t.monomial.clone(),
                    polynomial: t.polynomial,
                }
            })
            .collect();
        Self { dim: self.dim, terms }
    }

    /// Upper bound on `sup |f|` (sum of term maxima).
    pub fn sup_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                if t.polynomial {
                    return if t.monomial.iter().all(|&k| k == 0) { t.coeff.abs() } else { f64::INFINITY };
                }
                // max of |d^k| e^{-lambda_min |d|^2} along each axis is bounded by
                // prod (k_i / (2 e lambda_min))^{k_i/2}
                let lmin = linalg::sym_eigenvalues(&t.shape)[0];
                let bound: f64 = t
                    .monomial
                    .iter()
                    .filter(|&&k| k > 0)
                    .map(|&k| (k as f64 / (2.0 * std::f64::consts::E * lmin)).powf(k as f64 / 2.0))
                    .product();
                t.coeff.abs() * bound
            })
            .sum()
    }

    fn term_parts(t: &CompiledTerm, y: &[f64]) -> (Vec<f64>, f64, Vec<f64>) {
        let d: Vec<f64> = y.iter().zip(&t.center).map(|(a, b)| a - b).collect();
        let sd: Vec<f64> = (0..d.len()).map(|i| (0..d.len()).map(|j| t.shape[(i, j)] * d[j]).sum()).collect();
        let q: f64 = d.iter().zip(&sd).map(|(a, b)| a * b).sum();
        (d, (-q).exp(), sd)
    }

    /// Exact `P_t f(X)` for monomial degree at most two.
    pub fn exact_semigroup(&self, spec: &OperatorSpec, t: f64, x: &[f64]) -> Result<f64> {
        spec.require_hypoelliptic()?;
        if spec.dim != self.dim || x.len() != self.dim {
            return Err(Error::InvalidInput("dimension mismatch".into()));
        }
        if self.max_degree() > MAX_ORACLE_DEGREE {
            return Err(Error::Unsupported(format!(
                "exact semigroup oracle handles monomial degree <= {MAX_ORACLE_DEGREE}"
            )));
        }
        let tr = transition(spec, t)?;
        let mu = tr.mean(&linalg::vector(x));
        Ok(self.gaussian_expectation(&mu, &tr.covariance))
    }

    /// `E[f(Y)]` for `Y ~ N(mu, sigma)`; degree at most two.
    pub(crate) fn gaussian_expectation(&self, mu: &Vector, sigma: &Matrix) -> f64 {
        (0..self.terms.len())
            .map(|k| {
                let tilt = self.tilt(k, mu, sigma);
                let t = &self.terms[k];
                let idx: Vec<usize> = t
                    .monomial
                    .iter()
                    .enumerate()
                    .flat_map(|(i, &m)| std::iter::repeat_n(i, m as usize))
                    .collect();
                let e = &tilt.offset;
                let moment = match idx.as_slice() {
                    [] => 1.0,
                    [i] => e[*i],
                    [i, j] => e[*i] * e[*j] + tilt.cov[(*i, *j)],
                    _ => unreachable!("degree checked by caller"),
                };
                t.coeff * tilt.log_factor.exp() * moment
            })
            .sum()
    }

    pub(crate) fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Coefficient and monomial of term `k`.
    pub(crate) fn term_monomial(&self, k: usize) -> (f64, &[u32]) {
        (self.terms[k].coeff, &self.terms[k].monomial)
    }

    /// Absorb the Gaussian factor of term `k` into `N(mu, sigma)`:
    /// `E[g(Y - c) exp(-<S(Y - c), Y - c>)] = e^{log_factor} E[g(offset + Z)]`
    /// with `Z ~ N(0, cov)`.
    pub(crate) fn tilt(&self, k: usize, mu: &Vector, sigma: &Matrix) -> Tilt {
        let t = &self.terms[k];
        let d = mu - linalg::vector(&t.center);
        if t.polynomial {
            return Tilt { log_factor: 0.0, offset: d, cov: sigma.clone() };
        }
        // with A = 2S and G = A^{1/2} sigma A^{1/2} = V diag(l) V^T
        let eig_s = nalgebra::SymmetricEigen::new(t.shape.clone() * 2.0);
        let root = &eig_s.eigenvectors * Matrix::from_diagonal(&eig_s.eigenvalues.map(f64::sqrt)) * eig_s.eigenvectors.transpose();
        let root_inv = &eig_s.eigenvectors * Matrix::from_diagonal(&eig_s.eigenvalues.map(|v| 1.0 / v.sqrt())) * eig_s.eigenvectors.transpose();
        let g = linalg::symmetrize(&(&root * sigma * &root));
        let eig = nalgebra::SymmetricEigen::new(g);
        let lam = eig.eigenvalues.map(|v| v.max(0.0));
        let v = &eig.eigenvectors;
        let proj = v.transpose() * (&root * &d);
        let mut log_factor = 0.0;
        for i in 0..lam.len() {
            log_factor -= 0.5 * lam[i].ln_1p() + 0.5 * proj[i] * proj[i] / (1.0 + lam[i]);
        }
        let shrink = Matrix::from_diagonal(&lam.map(|l| 1.0 / (1.0 + l)));
        let keep = Matrix::from_diagonal(&lam.map(|l| l / (1.0 + l)));
        let offset = &root_inv * v * shrink * &proj;
        let cov = linalg::symmetrize(&(&root_inv * v * keep * v.transpose() * &root_inv));
        Tilt { log_factor, offset, cov }
    }

    /// Draw a random Gaussian mixture of `n_terms` terms with monomial
    /// degree at most `max_degree`, centers in `[-1, 1]^N` and shape
    /// eigenvalues in `[0.3, 2]`.
    pub fn random<R: Rng>(rng: &mut R, dim: usize, n_terms: usize, max_degree: u32) -> Self {
        let mut terms = Vec::with_capacity(n_terms);
        for _ in 0..n_terms {
            let center: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let shape = random_spd(rng, dim, 0.3, 2.0);
            let mut monomial = vec![0u32; dim];
            let degree = rng.random_range(0..=max_degree);
            for _ in 0..degree {
                monomial[rng.random_range(0..dim)] += 1;
            }
            terms.push(Term {
                coeff: rng.random_range(-1.0..1.0),
                center,
                shape: (0..dim).map(|r| (0..dim).map(|c| shape[(r, c)]).collect()).collect(),
                monomial,
            });
        }
        Self::new(dim, terms).expect("random terms are valid")
    }

    /// Like [`Self::random`] with positive coefficients and degree zero.
    pub fn random_positive<R: Rng>(rng: &mut R, dim: usize, n_terms: usize) -> Self {
        let mut f = Self::random(rng, dim, n_terms, 0);
        for t in &mut f.terms {
            t.coeff = t.coeff.abs() + 0.1;
        }
        f
    }
}

/// Random symmetric matrix with eigenvalues in `[lo, hi]`.
pub fn random_spd<R: Rng>(rng: &mut R, dim: usize, lo: f64, hi: f64) -> Matrix {
    let g = Matrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    let q = g.qr().q();
    let d = Vector::from_fn(dim, |_, _| rng.random_range(lo..hi));
    linalg::symmetrize(&(&q * Matrix::from_diagonal(&d) * q.transpose()))
}

impl Field for TestFunction {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, y: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let (d, e, _) = Self::term_parts(t, y);
                let mono: f64 = d.iter().zip(&t.monomial).map(|(&x, &k)| pow_u(x, k)).product();
                t.coeff * mono * e
            })
            .sum()
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut g = vec![0.0; n];
        for t in &self.terms {
            let (d, e, sd) = Self::term_parts(t, y);
            let pows: Vec<f64> = d.iter().zip(&t.monomial).map(|(&x, &k)| pow_u(x, k)).collect();
            let mono: f64 = pows.iter().product();
            for i in 0..n {
                let k = t.monomial[i];
                let dmono = if k == 0 {
                    0.0
                } else {
                    let others: f64 = (0..n).filter(|&j| j != i).map(|j| pows[j]).product();
                    k as f64 * pow_u(d[i], k - 1) * others
                };
                g[i] += t.coeff * e * (dmono - 2.0 * sd[i] * mono);
            }
        }
        g
    }

    fn hessian(&self, y: &[f64]) -> Option<Matrix> {
        let n = self.dim;
        let mut h = Matrix::zeros(n, n);
        for t in &self.terms {
            let (d, e, sd) = Self::term_parts(t, y);
            // derivatives of the monomial
            let deriv = |i: usize, order_i: u32, j: Option<usize>| -> f64 {
                (0..n)
                    .map(|m| {
                        let k = t.monomial[m];
                        let times = if m == i { order_i } else { 0 } + if Some(m) == j { 1 } else { 0 };
                        if times > k {
                            return 0.0;
                        }
                        let falling: u32 = (0..times).map(|r| k - r).product();
                        falling as f64 * pow_u(d[m], k - times)
                    })
                    .product()
            };
            let mono = deriv(0, 0, None);
            let grad_m: Vec<f64> = (0..n).map(|i| deriv(i, 1, None)).collect();
            for i in 0..n {
                for j in 0..n {
                    let hm = if i == j { deriv(i, 2, None) } else { deriv(i, 1, Some(j)) };
                    let gi = -2.0 * sd[i];
                    let gj = -2.0 * sd[j];
                    let he = -2.0 * t.shape[(i, j)] + gi * gj;
                    h[(i, j)] += t.coeff * e * (hm + grad_m[i] * gj + grad_m[j] * gi + mono * he);
                }
            }
        }
        Some(h)
    }

    fn as_test_function(&self) -> Option<&TestFunction> {
        Some(self)
    }
}

/// Smooth cutoff: 1 for `r <= inner`, 0 for `r >= outer`, quintic
/// smoothstep between, where `r^2 = <M (Y - center), Y - center>`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactBump {
    pub center: Vec<f64>,
    pub inner_radius: f64,
    pub outer_radius: f64,
    metric: Matrix,
}

impl CompactBump {
    pub fn new(center: Vec<f64>, inner_radius: f64, outer_radius: f64) -> Result<Self> {
        let n = center.len();
        Self::with_metric(center, inner_radius, outer_radius, Matrix::identity(n, n))
    }

    /// Bump whose level sets are the ellipsoids of `metric`.
    pub fn with_metric(center: Vec<f64>, inner_radius: f64, outer_radius: f64, metric: Matrix) -> Result<Self> {
        if !(inner_radius >= 0.0 && outer_radius > inner_radius) {
            return Err(Error::InvalidInput("bump radii need 0 <= inner < outer".into()));
        }
        if metric.nrows() != center.len() || linalg::sym_eigenvalues(&metric)[0] <= 0.0 {
            return Err(Error::InvalidInput("bump metric must be positive definite".into()));
        }
        Ok(Self { center, inner_radius, outer_radius, metric: linalg::symmetrize(&metric) })
    }

    pub fn metric(&self) -> &Matrix {
        &self.metric
    }

    fn radius(&self, y: &[f64]) -> (f64, Vec<f64>) {
        let n = self.center.len();
        let d: Vec<f64> = y.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let md: Vec<f64> = (0..n).map(|i| (0..n).map(|j| self.metric[(i, j)] * d[j]).sum()).collect();
        let r2: f64 = d.iter().zip(&md).map(|(a, b)| a * b).sum();
        (r2.max(0.0).sqrt(), md)
    }

    fn profile(&self, r: f64) -> (f64, f64) {
        if r <= self.inner_radius {
            return (1.0, 0.0);
        }
        if r >= self.outer_radius {
            return (0.0, 0.0);
        }
        let w = self.outer_radius - self.inner_radius;
        let x = (r - self.inner_radius) / w;
        let s = x * x * x * (10.0 - 15.0 * x + 6.0 * x * x);
        let ds = 30.0 * x * x * (1.0 - x) * (1.0 - x);
        (1.0 - s, -ds / w)
    }
}

impl Field for CompactBump {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, y: &[f64]) -> f64 {
        self.profile(self.radius(y).0).0
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let (r, md) = self.radius(y);
        let (_, dp) = self.profile(r);
        if dp == 0.0 || r == 0.0 {
            return vec![0.0; md.len()];
        }
        md.iter().map(|m| dp * m / r).collect()
    }

    fn is_smooth(&self) -> bool {
        false
    }
}

/// Pointwise product of two fields.
pub struct Product<'a> {
    pub left: &'a dyn Field,
    pub right: &'a dyn Field,
}

impl Field for Product<'_> {
    fn dim(&self) -> usize {
        self.left.dim()
    }

    fn value(&self, y: &[f64]) -> f64 {
        self.left.value(y) * self.right.value(y)
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let (a, b) = (self.left.value(y), self.right.value(y));
        let ga = self.left.gradient(y);
        let gb = self.right.gradient(y);
        ga.iter().zip(&gb).map(|(x, z)| x * b + a * z).collect()
    }

    fn is_smooth(&self) -> bool {
        self.left.is_smooth() && self.right.is_smooth()
    }
}

/// A field given by closures.
pub struct FnField<V, G>
where
    V: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    pub dim: usize,
    pub value: V,
    pub gradient: G,
    pub smooth: bool,
}

impl<V, G> Field for FnField<V, G>
where
    V: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, y: &[f64]) -> f64 {
        (self.value)(y)
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        (self.gradient)(y)
    }

    fn is_smooth(&self) -> bool {
        self.smooth
    }
}
