//! Quadrature rules: Gauss-Hermite (1D and tensor), Gauss-Legendre,
//! tanh-sinh for endpoint singularities, logarithmic trapezoid grids for
//! half-line time integrals, and randomized Halton point sets.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gauss-Hermite rule for the weight `e^{-x^2}` on the real line.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Newton iteration on the orthonormal Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let pim4 = PI.powf(-0.25);
        let m = (n + 1) / 2;
        let nf = n as f64;
        let mut z = 0.0;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = (j + 1) as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        // ascending order
        nodes.reverse();
        weights.reverse();
        Self { nodes, weights }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Tensor Gauss-Hermite rule normalised to an expectation: for
/// `u ~ N(0, I/2)` in `dim` dimensions, `E[g(u)] ~ sum_i w_i g(u_i)`.
#[derive(Debug, Clone)]
pub struct HermiteCubature {
    pub dim: usize,
    points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl HermiteCubature {
    pub fn new(dim: usize, order: usize) -> Self {
        let rule = GaussHermite::new(order);
        let total = order.pow(dim as u32);
        let norm = PI.powf(-(dim as f64) / 2.0);
        let mut points = Vec::with_capacity(total * dim);
        let mut weights = Vec::with_capacity(total);
        let mut index = vec![0usize; dim];
        for _ in 0..total {
            let mut w = norm;
            for &k in &index {
                points.push(rule.nodes[k]);
                w *= rule.weights[k];
            }
            weights.push(w);
            for slot in index.iter_mut().rev() {
                *slot += 1;
                if *slot < order {
                    break;
                }
                *slot = 0;
            }
        }
        Self { dim, points, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points.chunks(self.dim.max(1)).zip(self.weights.iter().copied())
    }
}

/// Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = (n + 1) / 2;
        let nf = n as f64;
        for i in 0..m {
            let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = 1.0;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
                }
                pp = nf * (z * p1 - p2) / (z * z - 1.0);
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-16 {
                    break;
                }
            }
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            weights[i] = 2.0 / ((1.0 - z * z) * pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        Self { nodes, weights }
    }

    /// Integral of `f` over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        half * self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| (mid + half * x, half * w)).collect()
    }
}

/// Tanh-sinh rule on `[a, b]`; never evaluates at the endpoints, so
/// integrable endpoint singularities are handled.
#[derive(Debug, Clone)]
pub struct TanhSinh {
    /// (offset from left end, offset from right end, weight per unit length)
    abscissae: Vec<(f64, f64, f64)>,
}

impl TanhSinh {
    pub fn new(step: f64) -> Self {
        let mut abscissae = Vec::new();
        let kmax = (5.0 / step).ceil() as i64;
        for k in -kmax..=kmax {
            let x = k as f64 * step;
            let u = 0.5 * PI * x.sinh();
            let cu = u.cosh();
            let w = step * 0.5 * PI * x.cosh() / (cu * cu);
            // distances to the endpoints of [0, 1]
            let left = 1.0 / (1.0 + (2.0 * u).exp());
            let right = 1.0 / (1.0 + (-2.0 * u).exp());
            if w < 1e-300 || left <= 0.0 || right <= 0.0 {
                continue;
            }
            abscissae.push((left, right, 0.5 * w));
        }
        Self { abscissae }
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let len = b - a;
        self.abscissae
            .iter()
            .map(|&(l, r, w)| {
                let x = if l < r { a + len * l } else { b - len * r };
                w * f(x)
            })
            .sum::<f64>()
            * len
    }

    /// Like [`Self::integrate`] but hands `f` the distances to both
    /// endpoints as well, so singular factors can be evaluated without
    /// cancellation.
    pub fn integrate_offsets(&self, a: f64, b: f64, f: impl Fn(f64, f64, f64) -> f64) -> f64 {
        let len = b - a;
        self.abscissae
            .iter()
            .map(|&(l, r, w)| {
                let x = if l < r { a + len * l } else { b - len * r };
                w * f(x, len * l, len * r)
            })
            .sum::<f64>()
            * len
    }

    /// Nodes and weights on `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        let len = b - a;
        self.abscissae
            .iter()
            .map(|&(l, r, w)| (if l < r { a + len * l } else { b - len * r }, w * len))
            .collect()
    }
}

impl Default for TanhSinh {
    fn default() -> Self {
        Self::new(1.0 / 32.0)
    }
}

/// Uniform grid in `v = ln t` over `[t_min, t_max]`.
#[derive(Debug, Clone, Copy)]
pub struct LogGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub step: f64,
}

impl LogGrid {
    pub fn new(t_min: f64, t_max: f64, step: f64) -> Self {
        assert!(t_min > 0.0 && t_max > t_min && step > 0.0);
        Self { t_min, t_max, step }
    }

    pub fn len(&self) -> usize {
        ((self.t_max / self.t_min).ln() / self.step).ceil() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Effective spacing after rounding the node count.
    pub fn spacing(&self) -> f64 {
        (self.t_max / self.t_min).ln() / (self.len() - 1) as f64
    }

    pub fn times(&self) -> Vec<f64> {
        let n = self.len();
        let h = self.spacing();
        let v0 = self.t_min.ln();
        (0..n).map(|i| (v0 + h * i as f64).exp()).collect()
    }

    /// Trapezoid sum of `values` (already multiplied by the Jacobian `t`).
    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        let h = self.spacing();
        let n = values.len();
        let inner: f64 = values.iter().sum();
        h * (inner - 0.5 * (values[0] + values[n - 1]))
    }

    /// Same sum on every other node; the difference to [`Self::trapezoid`]
    /// is a (pessimistic) discretisation error estimate.
    pub fn coarse_trapezoid(&self, values: &[f64]) -> f64 {
        let h = 2.0 * self.spacing();
        let picked: Vec<f64> = values.iter().step_by(2).copied().collect();
        let n = picked.len();
        if n < 2 {
            return 0.0;
        }
        let extra = if (values.len() - 1) % 2 == 1 {
            // odd number of intervals: close with a half-width panel
            0.25 * h * (values[values.len() - 2] + values[values.len() - 1])
        } else {
            0.0
        };
        h * (picked.iter().sum::<f64>() - 0.5 * (picked[0] + picked[n - 1])) + extra
    }
}

/// Estimate of `int_{v_end}^{inf} H(v) dv` assuming `H ~ A e^{-kappa v}`,
/// with `kappa` fitted from the last two samples `h_prev`, `h_end` one step
/// apart. Returns `None` when the samples do not decay.
pub fn fitted_exponential_tail(h_prev: f64, h_end: f64, step: f64) -> Option<f64> {
    if h_end == 0.0 {
        return Some(0.0);
    }
    if h_prev == 0.0 || h_prev.signum() != h_end.signum() {
        return None;
    }
    let kappa = (h_prev / h_end).ln() / step;
    if kappa <= 1e-6 {
        return None;
    }
    Some(h_end / kappa)
}

/// Randomised Halton point set: `replicates` independent uniform shifts of
/// the first `samples` Halton points in `dims` dimensions.
#[derive(Debug, Clone)]
pub struct ShiftedHalton {
    pub dims: usize,
    pub samples: usize,
    pub replicates: usize,
    shifts: Vec<Vec<f64>>,
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

impl ShiftedHalton {
    pub fn new(dims: usize, samples: usize, replicates: usize, seed: u64) -> Self {
        assert!(dims <= PRIMES.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shifts = (0..replicates)
            .map(|_| (0..dims).map(|_| rng.random::<f64>()).collect())
            .collect();
        Self { dims, samples, replicates, shifts }
    }

    /// Point `i` of replicate `r`, written into `out` (values in `(0, 1)`).
    pub fn point(&self, r: usize, i: usize, out: &mut [f64]) {
        for (d, o) in out.iter_mut().enumerate().take(self.dims) {
            let x = radical_inverse(i as u64 + 1, PRIMES[d]) + self.shifts[r][d];
            let x = x - x.floor();
            *o = x.clamp(1e-16, 1.0 - 1e-16);
        }
    }
}

/// Mean and standard error of replicate estimates.
pub fn replicate_stats(estimates: &[f64]) -> (f64, f64) {
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    if estimates.len() < 2 {
        return (mean, 0.0);
    }
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hermite_moments() {
        let gh = GaussHermite::new(40);
        assert_relative_eq!(gh.integrate(|_| 1.0), PI.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(gh.integrate(|x| x * x), PI.sqrt() / 2.0, max_relative = 1e-14);
        assert_relative_eq!(gh.integrate(|x| x.cos()), PI.sqrt() * (-0.25f64).exp(), max_relative = 1e-14);
        let cub = HermiteCubature::new(2, 20);
        let second: f64 = cub.iter().map(|(u, w)| w * u[0] * u[0]).sum();
        assert_relative_eq!(second, 0.5, max_relative = 1e-13);
        let total: f64 = cub.weights.iter().sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-13);
    }

    #[test]
    fn legendre_polynomial_exactness() {
        let gl = GaussLegendre::new(10);
        assert_relative_eq!(gl.integrate(0.0, 2.0, |x| x.powi(19)), 2f64.powi(20) / 20.0, max_relative = 1e-13);
    }

    #[test]
    fn tanh_sinh_endpoint_singularity() {
        let ts = TanhSinh::default();
        assert_relative_eq!(ts.integrate(0.0, 1.0, |x| x.powf(-0.5)), 2.0, max_relative = 1e-10);
        assert_relative_eq!(ts.integrate_offsets(0.0, 1.0, |_, _, r| r.powf(-0.75)), 4.0, max_relative = 1e-8);
        assert_relative_eq!(ts.integrate(-1.0, 3.0, |x| x * x), 28.0 / 3.0, max_relative = 1e-13);
    }

    #[test]
    fn log_grid_integrates_gamma_integral() {
        // int_0^inf t^{1/2} e^{-t} dt = Gamma(3/2)
        let grid = LogGrid::new(1e-12, 60.0, 0.1);
        let vals: Vec<f64> = grid.times().iter().map(|&t| t.sqrt() * (-t).exp() * t).collect();
        assert_relative_eq!(grid.trapezoid(&vals), PI.sqrt() / 2.0, max_relative = 1e-10);
    }

    #[test]
    fn fitted_tail_is_exact_for_exponentials() {
        let step = 0.1;
        let h = |v: f64| 3.0 * (-0.7 * v).exp();
        let tail = fitted_exponential_tail(h(5.0 - step), h(5.0), step).unwrap();
        assert_relative_eq!(tail, h(5.0) / 0.7, max_relative = 1e-12);
        assert!(fitted_exponential_tail(1.0, 2.0, step).is_none());
    }

    #[test]
    fn halton_mean_is_accurate() {
        let qmc = ShiftedHalton::new(2, 4096, 8, 7);
        let mut p = [0.0; 2];
        let mut ests = Vec::new();
        for r in 0..qmc.replicates {
            let mut acc = 0.0;
            for i in 0..qmc.samples {
                qmc.point(r, i, &mut p);
                acc += p[0] * p[1];
            }
            ests.push(acc / qmc.samples as f64);
        }
        let (mean, se) = replicate_stats(&ests);
        assert!((mean - 0.25).abs() < 1e-3);
        assert!(se < 1e-3);
    }
}
