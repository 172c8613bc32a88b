//! Scenario configuration, the verification suite and CSV reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::besov::{besov_maps_to_lp_check, gagliardo_box, heat_gagliardo_factor, s_perimeter, BoxSet};
use crate::error::{Error, Result};
use crate::extension::{
    harnack_check, harnack_sharpness_probe, liyau_extension_check, liyau_extension_semigroup_check, ExtensionDatum,
    ExtensionPoint, SharpnessSetup, ZProfile,
};
use crate::fractional::{classical_frac_laplacian_oracle, fractional_power, fractional_via_poisson, inversion_check};
use crate::inequalities::{gaussian_poincare_check, local_poincare_check, psi_monotonicity_probe, BumpProfile, InequalityCheck};
use crate::kernel::{chapman_kolmogorov_residual, heat_kernel, kernel_mass, kolmogorov_explicit, liyau_kernel_identity, volume, Kernel};
use crate::linalg::{self, Matrix};
use crate::operator::{gramians, logdet_derivative_identity, OperatorSpec};
use crate::semigroup::{
    calibrate_kernel_norm_constant, kernel_lr_norm, ultracontractivity_check,
    QuadratureSpec,
};
use crate::testfuncs::TestFunction;

pub const DEFAULT_SEED: u64 = 20_240_917;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Heat,
    Kolmogorov,
    OrnsteinUhlenbeck,
    Custom,
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Heat => "heat",
            Preset::Kolmogorov => "kolmogorov",
            Preset::OrnsteinUhlenbeck => "ornstein_uhlenbeck",
            Preset::Custom => "custom",
        }
    }
}

/// One requested check or group, with an optional case count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "CheckEntry", into = "CheckEntry")]
pub struct CheckRequest {
    pub name: String,
    pub count: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum CheckEntry {
    Name(String),
    Full {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        count: Option<usize>,
    },
}

impl From<CheckEntry> for CheckRequest {
    fn from(e: CheckEntry) -> Self {
        match e {
            CheckEntry::Name(name) => Self { name, count: None },
            CheckEntry::Full { name, count } => Self { name, count },
        }
    }
}

impl From<CheckRequest> for CheckEntry {
    fn from(r: CheckRequest) -> Self {
        match r.count {
            None => CheckEntry::Name(r.name),
            Some(c) => CheckEntry::Full { name: r.name, count: Some(c) },
        }
    }
}

impl CheckRequest {
    pub fn new(name: &str) -> Self {
        Self { name: name.into(), count: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub preset: Preset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Block size of the Kolmogorov preset (`dim = 2n`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub quad: QuadratureSpec,
    #[serde(default)]
    pub checks: Vec<CheckRequest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<String>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn field_error(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("{field}: {msg}"))
}

fn matrix_from_rows(field: &str, rows: &[Vec<f64>]) -> Result<Matrix> {
    let n = rows.len();
    if n == 0 {
        return Err(field_error(field, "matrix is empty"));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != n) {
        return Err(field_error(&format!("{field}[{i}]"), format!("row has {} entries, expected {n}", rows[i].len())));
    }
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl ScenarioConfig {
    pub fn preset(preset: Preset) -> Self {
        Self { preset, dim: None, n: None, q: None, b: None, quad: QuadratureSpec::default(), checks: vec![], output_path: None, seed: DEFAULT_SEED }
    }

    pub fn with_checks(mut self, names: &[&str]) -> Self {
        self.checks = names.iter().map(|n| CheckRequest::new(n)).collect();
        self
    }

    /// Validate and build the operator.
    pub fn operator(&self) -> Result<OperatorSpec> {
        self.quad.validate().map_err(|e| field_error("quad", e))?;
        for (i, c) in self.checks.iter().enumerate() {
            if expand_group(&c.name).is_none() {
                return Err(field_error(&format!("checks[{i}].name"), format!("unknown check `{}`", c.name)));
            }
            if c.count == Some(0) {
                return Err(field_error(&format!("checks[{i}].count"), "must be positive"));
            }
        }
        if self.preset != Preset::Custom && (self.q.is_some() || self.b.is_some()) {
            return Err(field_error("q", "Q and B are only accepted with the custom preset"));
        }
        let positive = |field: &str, v: usize| if v == 0 { Err(field_error(field, "must be positive")) } else { Ok(v) };
        match self.preset {
            Preset::Heat => Ok(OperatorSpec::heat(positive("dim", self.dim.unwrap_or(2))?)),
            Preset::OrnsteinUhlenbeck => Ok(OperatorSpec::ornstein_uhlenbeck(positive("dim", self.dim.unwrap_or(2))?)),
            Preset::Kolmogorov => {
                let n = match (self.n, self.dim) {
                    (Some(n), Some(d)) if d != 2 * n => return Err(field_error("dim", format!("kolmogorov with n = {n} has dim {}", 2 * n))),
                    (Some(n), _) => n,
                    (None, Some(d)) if d % 2 == 1 => return Err(field_error("dim", "kolmogorov needs an even dimension")),
                    (None, Some(d)) => d / 2,
                    (None, None) => 1,
                };
                Ok(OperatorSpec::kolmogorov(positive("n", n)?))
            }
            Preset::Custom => {
                let q = matrix_from_rows("q", self.q.as_deref().ok_or_else(|| field_error("q", "custom preset requires Q"))?)?;
                let b = matrix_from_rows("b", self.b.as_deref().ok_or_else(|| field_error("b", "custom preset requires B"))?)?;
                if q.nrows() != b.nrows() {
                    return Err(field_error("b", format!("B is {0}x{0} but Q is {1}x{1}", b.nrows(), q.nrows())));
                }
                if let Some(d) = self.dim {
                    if d != q.nrows() {
                        return Err(field_error("dim", format!("dim {d} differs from the size of Q ({})", q.nrows())));
                    }
                }
                if linalg::asymmetry(&q) > 1e-12 * linalg::norm2(&q).max(f64::MIN_POSITIVE) {
                    return Err(field_error("q", "Q must be symmetric"));
                }
                let spec = OperatorSpec::new(q, b).map_err(|e| field_error("q", e))?;
                if !spec.is_hypoelliptic() {
                    return Err(field_error("b", "(Q, B) fails the Kalman rank condition"));
                }
                Ok(spec)
            }
        }
    }
}

/// Parse and validate a JSON scenario.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("config parse error: {e}")))?;
    cfg.operator()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

pub const KERNEL_CHECKS: &[&str] =
    &["chapman_kolmogorov", "gramian_identity", "kernel_explicit", "kernel_forms", "kernel_mass", "liyau_kernel_identity", "logdet_identity"];
pub const SEMIGROUP_CHECKS: &[&str] = &["kernel_norm_scaling", "ultracontractivity"];
pub const FRACTIONAL_CHECKS: &[&str] = &["fractional_inversion", "fractional_poisson", "fractional_riesz"];
pub const INEQUALITY_CHECKS: &[&str] = &["gaussian_poincare", "local_poincare", "poincare_linear", "psi_monotonicity"];
pub const EXTENSION_CHECKS: &[&str] = &["harnack", "harnack_sharpness", "liyau_extension"];
pub const BESOV_CHECKS: &[&str] = &["besov_mapping", "besov_perimeter"];

/// Check names behind a check or group name.
pub fn expand_group(name: &str) -> Option<Vec<&'static str>> {
    let groups: [(&str, &[&'static str]); 6] = [
        ("kernel", KERNEL_CHECKS),
        ("semigroup", SEMIGROUP_CHECKS),
        ("fractional", FRACTIONAL_CHECKS),
        ("inequalities", INEQUALITY_CHECKS),
        ("extension", EXTENSION_CHECKS),
        ("besov", BESOV_CHECKS),
    ];
    if name == "full" {
        return Some(groups.iter().flat_map(|(_, c)| c.iter().copied()).collect());
    }
    if let Some((_, c)) = groups.iter().find(|(g, _)| *g == name) {
        return Some(c.to_vec());
    }
    groups.iter().flat_map(|(_, c)| c.iter()).find(|c| **c == name).map(|c| vec![*c])
}

/// One line of the CSV report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub check_name: String,
    pub preset: String,
    pub params_json: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub stderr: f64,
    pub pass: bool,
}

/// One point of a plotted series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub series: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub rows: Vec<ReportRow>,
    pub plot: Vec<PlotPoint>,
    pub summary: Summary,
    pub calibration: BTreeMap<String, f64>,
    pub seed: u64,
    pub quad: QuadratureSpec,
}

impl Summary {
    pub fn of(rows: &[ReportRow]) -> Self {
        let passed = rows.iter().filter(|r| r.pass).count();
        Self { total: rows.len(), passed, failed: rows.len() - passed }
    }
}

impl VerificationReport {
    pub fn all_pass(&self) -> bool {
        self.summary.failed == 0
    }
}

/// Stable 64-bit hash of a check name (FNV-1a).
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

struct Ctx<'a> {
    spec: &'a OperatorSpec,
    preset: &'a str,
    quad: &'a QuadratureSpec,
    rng: ChaCha8Rng,
    count: Option<usize>,
    rows: Vec<ReportRow>,
    plot: Vec<PlotPoint>,
    calibration: BTreeMap<String, f64>,
    name: &'static str,
}

impl Ctx<'_> {
    fn count(&self, default: usize) -> usize {
        self.count.unwrap_or(default)
    }

    fn point(&mut self, scale: f64) -> Vec<f64> {
        let n = self.spec.dim;
        (0..n).map(|_| self.rng.random_range(-scale..scale)).collect()
    }

    fn push(&mut self, params: Value, lhs: f64, rhs: f64, stderr: f64, pass: bool) {
        self.rows.push(ReportRow {
            check_name: self.name.into(),
            preset: self.preset.into(),
            params_json: params.to_string(),
            lhs,
            rhs,
            margin: rhs - lhs,
            stderr,
            pass,
        });
    }

    /// `residual <= tol`.
    fn residual(&mut self, params: Value, residual: f64, tol: f64) {
        self.push(params, residual, tol, 0.0, residual <= tol);
    }

    fn inequality(&mut self, mut params: Value, c: &InequalityCheck) {
        if let (Value::Object(p), Value::Object(extra)) = (&mut params, &c.params) {
            for (k, v) in extra {
                p.entry(k.clone()).or_insert(v.clone());
            }
        }
        self.rows.push(ReportRow {
            check_name: self.name.into(),
            preset: self.preset.into(),
            params_json: params.to_string(),
            lhs: c.lhs,
            rhs: c.rhs,
            margin: c.margin,
            stderr: c.stderr,
            pass: c.pass,
        });
    }

    fn failure(&mut self, mut params: Value, err: &Error) {
        if let Value::Object(p) = &mut params {
            p.insert("error".into(), Value::String(err.to_string()));
        }
        self.push(params, f64::NAN, f64::NAN, 0.0, false);
    }

    /// Run one case; errors become failed rows.
    fn case(&mut self, params: Value, f: impl FnOnce(&mut Self, &Value) -> Result<()>) {
        if let Err(e) = f(self, &params) {
            self.failure(params, &e);
        }
    }
}

fn is_standard_heat(spec: &OperatorSpec) -> bool {
    spec.b.iter().all(|v| *v == 0.0) && spec.q == Matrix::identity(spec.dim, spec.dim)
}

fn with(params: &Value, extra: Value) -> Value {
    let mut p = params.clone();
    if let (Value::Object(a), Value::Object(b)) = (&mut p, extra) {
        a.extend(b);
    }
    p
}

fn run_named(ctx: &mut Ctx) {
    let spec = ctx.spec;
    let quad = ctx.quad;
    let n = spec.dim;
    match ctx.name {
        "kernel_explicit" => {
            if !is_kolmogorov_block(spec) {
                return;
            }
            let blocks = n / 2;
            for i in 0..ctx.count(50) {
                let (x, t): (Vec<f64>, f64) = (ctx.point(2.0), ctx.rng.random_range(0.05..3.0));
                let u = ctx.point(2.0);
                // offsets at the intrinsic scales sqrt(t) and t^{3/2}
                let y: Vec<f64> = (0..n)
                    .map(|i| if i < blocks { x[i] + t.sqrt() * u[i] } else { x[i] + t * x[i - blocks] + t.powf(1.5) * u[i] })
                    .collect();
                ctx.case(json!({ "case": i, "t": t }), |c, p| {
                    let general = Kernel::new(spec, t)?.value(&x, &y);
                    let explicit = kolmogorov_explicit(blocks, &x, &y, t);
                    c.residual(p.clone(), (general - explicit).abs() / explicit, 1e-9);
                    Ok(())
                });
            }
        }
        "kernel_mass" => {
            for i in 0..ctx.count(3) {
                let x = ctx.point(1.0);
                for &t in &[0.1, 1.0, 10.0] {
                    ctx.case(json!({ "case": i, "t": t }), |c, p| {
                        c.residual(p.clone(), (kernel_mass(spec, &x, t, 40)? - 1.0).abs(), 1e-10);
                        Ok(())
                    });
                }
            }
        }
        "chapman_kolmogorov" => {
            for i in 0..ctx.count(3) {
                let (x, y) = (ctx.point(1.0), ctx.point(1.0));
                for &(s, t) in &[(0.3, 0.7), (1.0, 1.0)] {
                    ctx.case(json!({ "case": i, "s": s, "t": t }), |c, p| {
                        c.residual(p.clone(), chapman_kolmogorov_residual(spec, &x, &y, s, t, 40)?, 1e-8);
                        Ok(())
                    });
                }
            }
        }
        "kernel_forms" => {
            for i in 0..ctx.count(20) {
                let (x, y, t) = (ctx.point(2.0), ctx.point(2.0), ctx.rng.random_range(0.05..5.0));
                ctx.case(json!({ "case": i, "t": t }), |c, p| {
                    c.residual(p.clone(), heat_kernel(spec, &x, &y, t)?.form_residual, 1e-11);
                    Ok(())
                });
            }
        }
        "gramian_identity" => {
            for &t in &[0.1, 1.0, 10.0] {
                ctx.case(json!({ "t": t }), |c, p| {
                    let g = gramians(spec, t)?;
                    let tk = &g.k_t * t;
                    let other = &g.exp_tb * &g.c_t * g.exp_tb.transpose();
                    c.residual(p.clone(), linalg::norm2(&(&tk - other)) / linalg::norm2(&tk), 1e-7);
                    Ok(())
                });
            }
        }
        "logdet_identity" => {
            for &t in &[0.1, 1.0, 10.0] {
                ctx.case(json!({ "t": t }), |c, p| {
                    c.residual(p.clone(), logdet_derivative_identity(spec, t)?.max(), 1e-7);
                    Ok(())
                });
            }
        }
        "liyau_kernel_identity" => {
            for i in 0..ctx.count(20) {
                let (x, y, t) = (ctx.point(2.0), ctx.point(2.0), ctx.rng.random_range(0.1..3.0));
                ctx.case(json!({ "case": i, "t": t }), |c, p| {
                    let sides = liyau_kernel_identity(spec, &x, &y, t, 0.0)?;
                    c.residual(with(p, json!({ "rhs": sides.rhs })), sides.gap(), 1e-9 * (1.0 + sides.rhs.abs()));
                    Ok(())
                });
            }
        }
        "fractional_riesz" => {
            if !is_standard_heat(spec) || n > 3 {
                return;
            }
            let f = TestFunction::gaussian(&vec![0.0; n], 1.0, 1.0);
            let x = ctx.point(0.5);
            for &s in &[0.25, 0.5, 0.75] {
                ctx.case(json!({ "s": s, "x": x }), |c, p| {
                    let semigroup = fractional_power(spec, &f, s, &x, quad)?.value;
                    let oracle = classical_frac_laplacian_oracle(&f, s, &x)?;
                    c.residual(with(p, json!({ "value": semigroup })), (semigroup - oracle).abs(), 1e-5);
                    Ok(())
                });
            }
        }
        "fractional_poisson" => {
            let f = TestFunction::gaussian(&vec![0.0; n], 1.0, 1.0);
            let x = ctx.point(0.5);
            for &s in &[0.1, 0.25, 0.4] {
                ctx.case(json!({ "s": s, "x": x }), |c, p| {
                    let direct = fractional_power(spec, &f, s, &x, quad)?.value;
                    let poisson = fractional_via_poisson(spec, &f, s, &x, quad)?;
                    c.residual(p.clone(), (direct - poisson.value).abs(), 1e-4);
                    Ok(())
                });
            }
        }
        "fractional_inversion" => {
            if spec.trace_b < 0.0 {
                return;
            }
            let f = TestFunction::gaussian(&vec![0.0; n], 1.0, 1.0);
            let x = ctx.point(0.5);
            ctx.case(json!({ "alpha": 1.0, "x": x }), |c, p| {
                c.residual(p.clone(), inversion_check(spec, &f, 1.0, &x, quad)?.max_error(), 1e-4);
                Ok(())
            });
        }
        "ultracontractivity" => {
            for i in 0..ctx.count(2) {
                let f = TestFunction::random_positive(&mut ctx.rng, n, 2);
                for &(pe, qe) in &[(1.0, 1.0), (2.0, 2.0), (1.0, 2.0), (2.0, f64::INFINITY), (1.0, f64::INFINITY)] {
                    for &t in &[0.5, 2.0] {
                        let q_label = if qe == f64::INFINITY { json!("inf") } else { json!(qe) };
                        ctx.case(json!({ "case": i, "p": pe, "q": q_label, "t": t }), |c, p| {
                            let u = ultracontractivity_check(spec, &f, pe, qe, t, quad)?;
                            c.calibration.insert(format!("C(N={n},p={pe},q={q_label})"), u.constant);
                            c.push(with(p, json!({ "negative_trace": u.negative_trace })), u.lhs, u.rhs, 0.0, u.pass);
                            Ok(())
                        });
                    }
                }
            }
        }
        "kernel_norm_scaling" => {
            let y = ctx.point(1.0);
            for &r in &[1.5, 2.0, 3.0] {
                ctx.case(json!({ "r": r }), |c, p| {
                    let scaled: Result<Vec<f64>> = [0.1, 1.0, 10.0]
                        .iter()
                        .map(|&t| Ok(kernel_lr_norm(spec, &y, t, r, quad)? * volume(spec, t)?.powf(1.0 - 1.0 / r) * (t * spec.trace_b / r).exp()))
                        .collect();
                    let scaled = scaled?;
                    let hi = scaled.iter().cloned().fold(f64::MIN, f64::max);
                    let lo = scaled.iter().cloned().fold(f64::MAX, f64::min);
                    c.calibration.insert(format!("c(N={n},r={r})"), calibrate_kernel_norm_constant(n, r, quad)?);
                    c.residual(with(p, json!({ "constant": scaled[1] })), (hi - lo) / hi, 1e-8);
                    Ok(())
                });
            }
        }
        "gaussian_poincare" => {
            for i in 0..ctx.count(100) {
                let f = TestFunction::random(&mut ctx.rng, n, 2, 2);
                let (x, t) = (ctx.point(1.0), ctx.rng.random_range(0.1..3.0));
                ctx.case(json!({ "case": i }), |c, p| {
                    let chk = gaussian_poincare_check(spec, &f, t, &x, quad)?;
                    c.inequality(p.clone(), &chk);
                    Ok(())
                });
            }
        }
        "poincare_linear" => {
            let a: Vec<f64> = (0..n).map(|i| 0.5 + 0.25 * i as f64).collect();
            let f = TestFunction::affine(&a, 0.3);
            let x = ctx.point(1.0);
            for &t in &[0.1, 1.0, 3.0] {
                ctx.case(json!({ "t": t }), |c, p| {
                    let chk = gaussian_poincare_check(spec, &f, t, &x, quad)?;
                    let gap = (chk.lhs - chk.rhs).abs();
                    c.residual(with(p, json!({ "variance": chk.lhs })), gap, 1e-9);
                    if is_standard_heat(spec) {
                        // Var = C t |a|^2 with C = 2 for the heat semigroup
                        let grad2: f64 = a.iter().map(|v| v * v).sum();
                        let constant = chk.lhs / (t * grad2);
                        c.residual(with(p, json!({ "compare": "heat_constant", "constant": constant })), (constant - 2.0).abs(), 1e-9);
                    }
                    Ok(())
                });
            }
        }
        "local_poincare" => {
            for i in 0..ctx.count(10) {
                let profile = BumpProfile {
                    inner_fraction: ctx.rng.random_range(0.0..0.4),
                    outer_fraction: ctx.rng.random_range(0.6..0.95),
                    modulation: TestFunction::random(&mut ctx.rng, n, 2, 1),
                };
                let (x, r) = (ctx.point(1.0), ctx.rng.random_range(0.5..1.5));
                ctx.case(json!({ "case": i }), |c, p| {
                    let chk = local_poincare_check(spec, &x, r, &profile, quad)?;
                    c.inequality(p.clone(), &chk);
                    Ok(())
                });
            }
        }
        "psi_monotonicity" => {
            let f = TestFunction::gaussian(&vec![0.2; n], 0.9, 1.0);
            let x = vec![0.0; n];
            ctx.case(json!({ "t": 1.0, "n_s": 7 }), |c, p| {
                let probe = psi_monotonicity_probe(spec, &f, 1.0, &x, 7, quad)?;
                let series = format!("psi/{}", c.preset);
                c.plot.push(PlotPoint { series: series.clone(), x: 0.0, y: probe.at_zero });
                for (s, v) in probe.s.iter().zip(&probe.psi) {
                    c.plot.push(PlotPoint { series: series.clone(), x: *s, y: *v });
                }
                c.plot.push(PlotPoint { series, x: 1.0, y: probe.at_t });
                let tol = 1e-12 * probe.at_t.abs().max(1.0);
                c.residual(p.clone(), probe.max_decrease(), tol);
                Ok(())
            });
        }
        "liyau_extension" => {
            let per_a = ctx.count(10);
            for &a in &[0.0, 0.5, 1.0, -0.5] {
                for i in 0..per_a {
                    let x = ctx.point(2.0);
                    let y = ctx.point(2.0);
                    let z = if a < 0.0 { 0.0 } else { ctx.rng.random_range(0.0..3.0) };
                    let zeta = ctx.rng.random_range(0.05..3.0);
                    let t = ctx.rng.random_range(0.2..3.0);
                    ctx.case(json!({ "kind": "kernel", "case": i, "a": a }), |c, p| {
                        let chk = liyau_extension_check(spec, a, &ExtensionPoint::new(x, z, t)?, &ExtensionPoint { x: y, z: zeta, t: 0.0 })?;
                        c.inequality(p.clone(), &chk);
                        Ok(())
                    });
                }
            }
            let g = ZProfile::Bump { center: 1.0, radius: 0.8, height: 1.0, base: 0.2 };
            for i in 0..ctx.count(10).div_ceil(2) {
                let phi = ExtensionDatum { f: TestFunction::random_positive(&mut ctx.rng, n, 2), g };
                let x = ctx.point(1.5);
                let (z, t) = (ctx.rng.random_range(0.0..2.0), ctx.rng.random_range(0.2..2.0));
                ctx.case(json!({ "kind": "semigroup", "case": i, "a": 1.0 }), |c, p| {
                    let chk = liyau_extension_semigroup_check(spec, 1.0, &phi, &ExtensionPoint::new(x, z, t)?, quad)?;
                    c.inequality(p.clone(), &chk);
                    Ok(())
                });
            }
        }
        "harnack" => harnack_cases(ctx, 0.5),
        "harnack_sharpness" => {
            let eps = [0.5, 0.1, 0.02];
            for &a in &[0.0, 1.0] {
                ctx.case(json!({ "a": a, "eps": eps }), |c, p| {
                    let pts = harnack_sharpness_probe(spec, a, &eps, SharpnessSetup::default())?;
                    let series = format!("sharpness/{}/a={a}", c.preset);
                    for pt in &pts {
                        c.plot.push(PlotPoint { series: series.clone(), x: pt.eps, y: pt.ratio });
                    }
                    let last = pts.last().map(|p| p.ratio).unwrap_or(0.0);
                    let decrease = pts.windows(2).map(|w| w[0].ratio - w[1].ratio).fold(f64::MIN, f64::max);
                    // final ratio >= 0.95, never above one, and increasing along the sequence
                    let ok = last >= 0.95 && last <= 1.0 + 1e-12 && decrease < 0.0;
                    c.push(with(p, json!({ "max_step_decrease": decrease })), 0.95, last, 0.0, ok);
                    Ok(())
                });
            }
        }
        "besov_perimeter" => {
            if n > 2 || spec.trace_b < 0.0 {
                return;
            }
            let e = BoxSet::new(vec![0.0; n], vec![1.0; n]);
            let s = 0.25;
            ctx.case(json!({ "set": "unit_box", "s": s, "compare": "n2_squared_vs_n1" }), |c, p| {
                let per = s_perimeter(spec, &e.clone()?, s, quad, false)?;
                let combined = (per.n1.stderr.powi(2) + per.n2_squared.stderr.powi(2)).sqrt();
                let diff = (per.n1.value - per.n2_squared.value).abs();
                c.push(with(p, json!({ "value": per.value })), diff, 3.0 * combined + 1e-12 * per.value, combined, per.consistent);
                if is_standard_heat(spec) {
                    let oracle = heat_gagliardo_factor(n, 2.0 * s) * gagliardo_box(&e.clone()?, 1.0, 2.0 * s)?;
                    let rel = (per.n1.value - oracle).abs() / oracle;
                    c.rows.push(ReportRow {
                        check_name: c.name.into(),
                        preset: c.preset.into(),
                        params_json: with(p, json!({ "compare": "gagliardo_oracle", "oracle": oracle })).to_string(),
                        lhs: rel,
                        rhs: 0.02,
                        margin: 0.02 - rel,
                        stderr: per.n1.stderr / oracle,
                        pass: rel <= 0.02,
                    });
                }
                Ok(())
            });
        }
        "besov_mapping" => {
            if n > 2 || spec.trace_b < 0.0 {
                return;
            }
            let f = TestFunction::gaussian(&vec![0.0; n], 1.0, 1.0);
            for &(pe, alpha, s) in &[(2.0, 0.75, 0.25), (1.0, 0.5, 0.25)] {
                ctx.case(json!({ "p": pe, "alpha": alpha, "s": s }), |c, p| {
                    let m = besov_maps_to_lp_check(spec, &f, pe, alpha, s, quad)?;
                    c.push(p.clone(), m.lhs_norm, m.bound, 0.0, m.pass);
                    Ok(())
                });
            }
        }
        other => unreachable!("unregistered check {other}"),
    }
}

fn harnack_cases(ctx: &mut Ctx, a: f64) {
    let (spec, n) = (ctx.spec, ctx.spec.dim);
    let quad = QuadratureSpec { gh_order: ctx.quad.gh_order.min(24), ..ctx.quad.clone() };
    for i in 0..ctx.count(50) {
        let phi = ExtensionDatum {
            f: TestFunction::random_positive(&mut ctx.rng, n, 2),
            g: ZProfile::Bump { center: 1.0, radius: 0.7, height: 1.0, base: 0.0 },
        };
        let s = ctx.rng.random_range(0.1..2.5);
        let t = ctx.rng.random_range(s + 0.05..3.0);
        let (y, zeta) = (ctx.point(1.5), ctx.rng.random_range(0.0..2.0));
        let (x, z) = (ctx.point(1.5), ctx.rng.random_range(0.0..2.0));
        // a < 0 is covered on the boundary only
        let (zeta, z) = if a < 0.0 { (0.0, 0.0) } else { (zeta, z) };
        ctx.case(json!({ "case": i, "a": a }), |c, p| {
            let chk = harnack_check(spec, a, &phi, &ExtensionPoint::new(y, zeta, s)?, &ExtensionPoint::new(x, z, t)?, &quad)?;
            c.inequality(p.clone(), &chk);
            Ok(())
        });
    }
}

/// Harnack inequality on `n` random configurations for one `a`.
pub fn harnack_scan(spec: &OperatorSpec, preset: &str, a: f64, n: usize, seed: u64, quad: &QuadratureSpec) -> Vec<ReportRow> {
    let mut ctx = Ctx {
        spec,
        preset,
        quad,
        rng: ChaCha8Rng::seed_from_u64(seed ^ name_hash("harnack")),
        count: Some(n),
        rows: vec![],
        plot: vec![],
        calibration: BTreeMap::new(),
        name: "harnack",
    };
    harnack_cases(&mut ctx, a);
    let mut rows = ctx.rows;
    rows.sort_by(|a, b| (&a.check_name, &a.params_json).cmp(&(&b.check_name, &b.params_json)));
    rows
}

fn is_kolmogorov_block(spec: &OperatorSpec) -> bool {
    spec.dim % 2 == 0 && *spec == OperatorSpec::kolmogorov(spec.dim / 2)
}

/// Run the configured checks; module errors become failed rows.
pub fn run_verification(config: &ScenarioConfig) -> Result<VerificationReport> {
    let spec = config.operator()?;
    let preset = config.preset.name();
    let mut names: Vec<(&'static str, Option<usize>)> = Vec::new();
    for req in &config.checks {
        for name in expand_group(&req.name).unwrap_or_default() {
            match names.iter_mut().find(|(n, _)| *n == name) {
                Some(entry) => entry.1 = req.count.or(entry.1),
                None => names.push((name, req.count)),
            }
        }
    }
    names.sort();
    let mut rows = Vec::new();
    let mut plot = Vec::new();
    let mut calibration = BTreeMap::new();
    for (name, count) in names {
        let mut ctx = Ctx {
            spec: &spec,
            preset,
            quad: &config.quad,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ name_hash(name)),
            count,
            rows: vec![],
            plot: vec![],
            calibration: BTreeMap::new(),
            name,
        };
        run_named(&mut ctx);
        rows.append(&mut ctx.rows);
        plot.append(&mut ctx.plot);
        calibration.append(&mut ctx.calibration);
    }
    rows.sort_by(|a, b| (&a.check_name, &a.params_json).cmp(&(&b.check_name, &b.params_json)));
    let summary = Summary::of(&rows);
    Ok(VerificationReport { rows, plot, summary, calibration, seed: config.seed, quad: config.quad.clone() })
}

pub const CSV_HEADER: [&str; 8] = ["check_name", "preset", "params_json", "lhs", "rhs", "margin", "stderr", "pass"];

fn io_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

/// Report CSV as a string.
pub fn report_csv(report: &VerificationReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(CSV_HEADER).map_err(err)?;
    for r in &report.rows {
        w.write_record([
            r.check_name.clone(),
            r.preset.clone(),
            r.params_json.clone(),
            r.lhs.to_string(),
            r.rhs.to_string(),
            r.margin.to_string(),
            r.stderr.to_string(),
            r.pass.to_string(),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

/// Parse a report CSV written by [`report_csv`].
pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::InvalidInput(e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::InvalidInput(format!("unexpected report header `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    let num = |line: usize, field: &str, v: &str| {
        v.parse::<f64>().map_err(|_| Error::InvalidInput(format!("line {line}: {field} `{v}` is not a number")))
    };
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| Error::InvalidInput(e.to_string()))?;
            let line = i + 2;
            Ok(ReportRow {
                check_name: rec[0].to_string(),
                preset: rec[1].to_string(),
                params_json: rec[2].to_string(),
                lhs: num(line, "lhs", &rec[3])?,
                rhs: num(line, "rhs", &rec[4])?,
                margin: num(line, "margin", &rec[5])?,
                stderr: num(line, "stderr", &rec[6])?,
                pass: rec[7].parse().map_err(|_| Error::InvalidInput(format!("line {line}: pass `{}` is not a boolean", &rec[7])))?,
            })
        })
        .collect()
}

/// Plot-data CSV (`series,x,y`) as a string.
pub fn plot_csv(report: &VerificationReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["series", "x", "y"]).map_err(err)?;
    for p in &report.plot {
        w.write_record([p.series.clone(), p.x.to_string(), p.y.to_string()]).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

/// `report.csv` -> `report_plot.csv`.
pub fn plot_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into());
    path.with_file_name(format!("{stem}_plot.csv"))
}

/// Write the report CSV to `path` and the plot data next to it.
pub fn emit_report(report: &VerificationReport, path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    std::fs::write(path, report_csv(report)?).map_err(|e| io_error(path, e))?;
    let plot = plot_path(path);
    std::fs::write(&plot, plot_csv(report)?).map_err(|e| io_error(&plot, e))?;
    Ok(plot)
}
