//! Acceptance criteria 1-11: one pass/fail line each, with pinned tolerances.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use hypok_core::suite::{report_csv, run_verification, Preset, ReportRow, ScenarioConfig};

const PRESETS: [Preset; 3] = [Preset::Heat, Preset::Kolmogorov, Preset::OrnsteinUhlenbeck];

struct Outcome {
    ok: bool,
    detail: String,
}

fn rows(preset: Preset, checks: &[&str]) -> Vec<ReportRow> {
    let cfg = ScenarioConfig::preset(preset).with_checks(checks);
    run_verification(&cfg).expect("preset configs are valid").rows
}

fn named<'a>(rows: &'a [ReportRow], name: &str) -> Vec<&'a ReportRow> {
    rows.iter().filter(|r| r.check_name == name).collect()
}

fn worst(rows: &[&ReportRow]) -> f64 {
    rows.iter().map(|r| r.lhs).fold(0.0, f64::max)
}

/// All rows pass and every named check has at least `min` rows.
fn tally(all: &[ReportRow], mins: &[(&str, usize)]) -> Outcome {
    let failed = all.iter().filter(|r| !r.pass).count();
    let mut detail = Vec::new();
    let mut ok = failed == 0;
    for &(name, min) in mins {
        let n = named(all, name).len();
        ok &= n >= min;
        detail.push(format!("{name}: {n} rows (min {min})"));
    }
    Outcome { ok, detail: format!("{}, {failed} failed", detail.join(", ")) }
}

fn over_presets(presets: &[Preset], checks: &[&str], mins: &[(&str, usize)]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for &p in presets {
        let o = tally(&rows(p, checks), mins);
        ok &= o.ok;
        parts.push(format!("{}: {}", p.name(), o.detail));
    }
    Outcome { ok, detail: parts.join("; ") }
}

fn c1() -> Outcome {
    let r = rows(Preset::Kolmogorov, &["kernel_explicit"]);
    let rel = worst(&named(&r, "kernel_explicit"));
    let o = tally(&r, &[("kernel_explicit", 50)]);
    Outcome { ok: o.ok && r.len() == 50 && rel <= 1e-9, detail: format!("max relative error {rel:.2e} <= 1e-9, {}", o.detail) }
}

fn c2() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for p in PRESETS {
        let r = rows(p, &["kernel_mass", "chapman_kolmogorov"]);
        let (mass, ck) = (worst(&named(&r, "kernel_mass")), worst(&named(&r, "chapman_kolmogorov")));
        ok &= tally(&r, &[("kernel_mass", 1), ("chapman_kolmogorov", 1)]).ok && mass <= 1e-10 && ck <= 1e-8;
        parts.push(format!("{}: mass {mass:.1e} <= 1e-10, convolution {ck:.1e} <= 1e-8", p.name()));
    }
    Outcome { ok, detail: parts.join("; ") }
}

fn c3() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for p in PRESETS {
        let r = rows(p, &["gramian_identity", "logdet_identity"]);
        let (g, l) = (worst(&named(&r, "gramian_identity")), worst(&named(&r, "logdet_identity")));
        ok &= tally(&r, &[("gramian_identity", 3), ("logdet_identity", 3)]).ok && g <= 1e-7 && l <= 1e-7;
        parts.push(format!("{}: gramian {g:.1e}, log-det {l:.1e} (<= 1e-7, t in 0.1,1,10)", p.name()));
    }
    Outcome { ok, detail: parts.join("; ") }
}

fn c4() -> Outcome {
    let heat = rows(Preset::Heat, &["fractional"]);
    let kol = rows(Preset::Kolmogorov, &["fractional_poisson", "fractional_inversion"]);
    let riesz = worst(&named(&heat, "fractional_riesz"));
    let poisson = worst(&named(&heat, "fractional_poisson")).max(worst(&named(&kol, "fractional_poisson")));
    let inversion = worst(&named(&heat, "fractional_inversion")).max(worst(&named(&kol, "fractional_inversion")));
    let counted = tally(&heat, &[("fractional_riesz", 3), ("fractional_poisson", 3), ("fractional_inversion", 1)]).ok
        && tally(&kol, &[("fractional_poisson", 3), ("fractional_inversion", 1)]).ok;
    Outcome {
        ok: counted && riesz <= 1e-5 && poisson <= 1e-4 && inversion <= 1e-4,
        detail: format!("Riesz {riesz:.1e} <= 1e-5, Poisson {poisson:.1e} <= 1e-4, inversion {inversion:.1e} <= 1e-4 (heat, kolmogorov)"),
    }
}

fn c5() -> Outcome {
    let o = over_presets(&PRESETS, &["ultracontractivity", "kernel_norm_scaling"], &[("ultracontractivity", 20), ("kernel_norm_scaling", 3)]);
    Outcome { ok: o.ok, detail: format!("contraction bound and scaling constant to 1e-8; {}", o.detail) }
}

fn c6() -> Outcome {
    let o = over_presets(&PRESETS, &["gaussian_poincare", "poincare_linear"], &[("gaussian_poincare", 100), ("poincare_linear", 3)]);
    let heat = rows(Preset::Heat, &["poincare_linear"]);
    let constant_rows = heat.iter().filter(|r| r.params_json.contains("heat_constant")).count();
    Outcome {
        ok: o.ok && constant_rows == 3,
        detail: format!("linear family gap <= 1e-9, heat constant 2 on {constant_rows} rows; {}", o.detail),
    }
}

fn c7() -> Outcome {
    let o = over_presets(&PRESETS, &["local_poincare"], &[("local_poincare", 10)]);
    Outcome { ok: o.ok, detail: format!("C = 2e^(1/4), 3 stderr; {}", o.detail) }
}

fn c8() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for p in PRESETS {
        let r = rows(p, &["liyau_kernel_identity", "liyau_extension"]);
        let ext = named(&r, "liyau_extension");
        let covers = ["\"a\":0.0", "\"a\":0.5", "\"a\":1.0", "\"a\":-0.5"].iter().all(|a| ext.iter().any(|row| row.params_json.contains(a)));
        let strict = ext.iter().all(|row| row.lhs < row.rhs);
        let o = tally(&r, &[("liyau_kernel_identity", 1), ("liyau_extension", 40)]);
        ok &= o.ok && covers && strict;
        parts.push(format!("{}: {}, strict {strict}", p.name(), o.detail));
    }
    Outcome { ok, detail: format!("identity to 1e-9, strict lhs < rhs; {}", parts.join("; ")) }
}

fn c9() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for p in PRESETS {
        let r = rows(p, &["harnack", "harnack_sharpness"]);
        let o = tally(&r, &[("harnack", 50), ("harnack_sharpness", 2)]);
        let ratio = named(&r, "harnack_sharpness").iter().map(|row| row.rhs).fold(f64::INFINITY, f64::min);
        ok &= o.ok && ratio >= 0.95;
        parts.push(format!("{}: {}, min ratio at eps=0.02 {ratio:.4}", p.name(), o.detail));
    }
    Outcome { ok, detail: format!("ratio >= 0.95 and increasing; {}", parts.join("; ")) }
}

fn c10() -> Outcome {
    let heat = rows(Preset::Heat, &["besov"]);
    let kol = rows(Preset::Kolmogorov, &["besov"]);
    let oracle = heat.iter().filter(|r| r.params_json.contains("gagliardo_oracle")).map(|r| r.lhs).next().unwrap_or(f64::NAN);
    let regimes = |r: &[ReportRow]| ["\"p\":2.0", "\"p\":1.0"].iter().all(|p| named(r, "besov_mapping").iter().any(|row| row.params_json.contains(p)));
    let h = tally(&heat, &[("besov_perimeter", 2), ("besov_mapping", 2)]);
    let k = tally(&kol, &[("besov_perimeter", 1), ("besov_mapping", 2)]);
    Outcome {
        ok: h.ok && k.ok && regimes(&heat) && regimes(&kol) && oracle <= 0.02,
        detail: format!("Gagliardo oracle relative error {oracle:.2e} <= 2e-2; heat: {}; kolmogorov: {}", h.detail, k.detail),
    }
}

fn c11() -> Outcome {
    let cfg = ScenarioConfig::preset(Preset::Heat).with_checks(&["full"]);
    let a = report_csv(&run_verification(&cfg).unwrap()).unwrap();
    let b = report_csv(&run_verification(&cfg).unwrap()).unwrap();
    Outcome { ok: a == b && a.lines().count() > 1, detail: format!("{} bytes, {} rows, identical: {}", a.len(), a.lines().count() - 1, a == b) }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, Duration); 11] = [
        ("kolmogorov kernel matches explicit form", c1, Duration::from_secs(1)),
        ("normalization and Chapman-Kolmogorov", c2, Duration::from_secs(10)),
        ("Gramian identities", c3, Duration::from_secs(1)),
        ("fractional consistency", c4, Duration::from_secs(60)),
        ("ultracontractivity and kernel norm scaling", c5, Duration::from_secs(30)),
        ("generalised Poincare", c6, Duration::from_secs(60)),
        ("localized Poincare", c7, Duration::from_secs(120)),
        ("Li-Yau", c8, Duration::from_secs(60)),
        ("sharp Harnack", c9, Duration::from_secs(120)),
        ("Besov and perimeter", c10, Duration::from_secs(180)),
        ("determinism", c11, Duration::MAX),
    ];
    let mut failures = 0;
    for (i, (name, run, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let in_time = elapsed < budget;
        let ok = out.ok && in_time;
        failures += usize::from(!ok);
        let budget = if budget == Duration::MAX { String::new() } else { format!(" (budget {}s)", budget.as_secs()) };
        println!("criterion {:>2} {} {name}: {} [{:.2?}{budget}]", i + 1, if ok { "PASS" } else { "FAIL" }, out.detail, elapsed);
    }
    println!("acceptance: {} passed, {failures} failed", 11 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
