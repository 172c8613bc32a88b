use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hypok_core::besov::{s_perimeter, BoxSet};
use hypok_core::fractional::fractional_power;
use hypok_core::kernel::heat_kernel;
use hypok_core::suite::{
    emit_report, harnack_scan, load_config, parse_report_csv, run_verification, CheckRequest, Preset, ScenarioConfig, Summary,
    VerificationReport,
};
use hypok_core::testfuncs::{Term, TestFunction};
use hypok_core::{Error, OperatorSpec};
use serde_json::json;

const SEED_VAR: &str = "HYPOK_SEED";
const DEFAULT_OUTPUT: &str = "hypok_report.csv";

#[derive(Parser)]
#[command(name = "hypok", version, about = "Numerical verification for Kolmogorov-type operators tr(Q D^2 u) + <BX, Du>")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a check or group (kernel, semigroup, fractional, inequalities, extension, besov, full) and write a CSV report.
    Verify {
        /// Check or group name; defaults to the checks listed in the config.
        suite: Option<String>,
        #[command(flatten)]
        op: OperatorArgs,
        /// Number of random cases per check.
        #[arg(long)]
        count: Option<usize>,
        /// Report path; the plot data goes to `<stem>_plot.csv` alongside.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Transition kernel evaluation.
    Kernel {
        #[command(subcommand)]
        cmd: KernelCmd,
    },
    /// Fractional powers of the operator.
    Frac {
        #[command(subcommand)]
        cmd: FracCmd,
    },
    /// Besov seminorms and perimeters.
    Besov {
        #[command(subcommand)]
        cmd: BesovCmd,
    },
    /// Harnack inequality for the extended operator.
    Harnack {
        #[command(subcommand)]
        cmd: HarnackCmd,
    },
    /// Summarise a report CSV; exits 1 if any row failed.
    Report {
        /// Report CSV written by `verify`.
        #[arg(long, default_value = DEFAULT_OUTPUT)]
        input: PathBuf,
    },
}

#[derive(Subcommand)]
enum KernelCmd {
    /// p(X, Y, t) and its diagnostics as JSON.
    Eval {
        #[command(flatten)]
        op: OperatorArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        y: Vec<f64>,
        #[arg(long)]
        t: f64,
    },
}

#[derive(Subcommand)]
enum FracCmd {
    /// (-A)^s f at a point.
    Apply {
        #[command(flatten)]
        op: OperatorArgs,
        #[arg(long)]
        s: f64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        x: Vec<f64>,
        /// JSON file with a list of terms `{coeff, center, shape, monomial}`; defaults to exp(-|Y|^2).
        #[arg(long)]
        function: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BesovCmd {
    /// s-perimeter of a box `lo1,..:hi1,..`.
    Perimeter {
        #[command(flatten)]
        op: OperatorArgs,
        #[arg(long = "box", allow_hyphen_values = true)]
        bounds: String,
        #[arg(long)]
        s: f64,
    },
}

#[derive(Subcommand)]
enum HarnackCmd {
    /// Harnack inequality on random configurations.
    Scan {
        #[command(flatten)]
        op: OperatorArgs,
        #[arg(long, allow_hyphen_values = true)]
        a: f64,
        #[arg(long, default_value_t = 50)]
        n: usize,
        /// Optional report path.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct OperatorArgs {
    /// JSON scenario; overrides the preset flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// heat, kolmogorov, ornstein_uhlenbeck.
    #[arg(long, default_value = "heat")]
    preset: String,
    #[arg(long)]
    dim: Option<usize>,
    /// Kolmogorov block size (`dim = 2 * blocks`).
    #[arg(long)]
    blocks: Option<usize>,
}

enum Failure {
    Checks,
    Input(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e)
    }
}

type Outcome = Result<(), Failure>;

impl OperatorArgs {
    fn config(&self) -> Result<ScenarioConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => {
                let preset: Preset = serde_json::from_value(json!(self.preset))
                    .map_err(|_| Error::InvalidInput(format!("preset: unknown preset `{}`", self.preset)))?;
                let cfg = ScenarioConfig { dim: self.dim, n: self.blocks, ..ScenarioConfig::preset(preset) };
                cfg.operator()?;
                cfg
            }
        };
        if let Ok(seed) = std::env::var(SEED_VAR) {
            cfg.seed = seed.trim().parse().map_err(|_| Error::InvalidInput(format!("{SEED_VAR}: `{seed}` is not an unsigned integer")))?;
        }
        Ok(cfg)
    }

    fn operator(&self) -> Result<OperatorSpec, Error> {
        self.config()?.operator()
    }
}

fn print_summary(summary: &Summary) {
    println!("{} checks, {} passed, {} failed", summary.total, summary.passed, summary.failed);
}

fn print_failures(report: &VerificationReport) {
    for r in report.rows.iter().filter(|r| !r.pass) {
        eprintln!("FAIL {} {} lhs={} rhs={}", r.check_name, r.params_json, r.lhs, r.rhs);
    }
}

fn verify(suite: Option<String>, op: &OperatorArgs, count: Option<usize>, output: Option<PathBuf>) -> Outcome {
    let mut cfg = op.config()?;
    if let Some(name) = suite {
        cfg.checks = vec![CheckRequest { name, count }];
    } else if let Some(c) = count {
        cfg.checks.iter_mut().for_each(|r| r.count = Some(c));
    }
    let path = output.or_else(|| cfg.output_path.clone().map(PathBuf::from)).unwrap_or_else(|| DEFAULT_OUTPUT.into());
    let report = run_verification(&cfg)?;
    let plot = emit_report(&report, &path)?;
    print_summary(&report.summary);
    println!("report: {}", path.display());
    println!("plot data: {}", plot.display());
    print_failures(&report);
    if report.all_pass() {
        Ok(())
    } else {
        Err(Failure::Checks)
    }
}

fn load_function(path: Option<&PathBuf>, dim: usize) -> Result<TestFunction, Error> {
    match path {
        None => Ok(TestFunction::gaussian(&vec![0.0; dim], 1.0, 1.0)),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            let terms: Vec<Term> = serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("function: {e}")))?;
            TestFunction::new(dim, terms)
        }
    }
}

fn parse_box(text: &str) -> Result<BoxSet, Error> {
    let list = |s: &str| -> Result<Vec<f64>, Error> {
        s.split(',').map(|v| v.trim().parse().map_err(|_| Error::InvalidInput(format!("box: `{v}` is not a number")))).collect()
    };
    let (lo, hi) = text.split_once(':').ok_or_else(|| Error::InvalidInput("box: expected `lo1,..:hi1,..`".into()))?;
    BoxSet::new(list(lo)?, list(hi)?)
}

fn print_json(v: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&v).expect("json values serialize"));
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Verify { suite, op, count, output } => verify(suite, &op, count, output),
        Command::Kernel { cmd: KernelCmd::Eval { op, x, y, t } } => {
            let k = heat_kernel(&op.operator()?, &x, &y, t)?;
            print_json(json!({ "value": k.value, "log_value": k.log_value, "m_t": k.m_t, "form_residual": k.form_residual }));
            Ok(())
        }
        Command::Frac { cmd: FracCmd::Apply { op, s, x, function } } => {
            let cfg = op.config()?;
            let spec = cfg.operator()?;
            let f = load_function(function.as_ref(), spec.dim)?;
            let e = fractional_power(&spec, &f, s, &x, &cfg.quad)?;
            print_json(json!({ "s": s, "x": x, "value": e.value, "stderr": e.stderr }));
            Ok(())
        }
        Command::Besov { cmd: BesovCmd::Perimeter { op, bounds, s } } => {
            let cfg = op.config()?;
            let per = s_perimeter(&cfg.operator()?, &parse_box(&bounds)?, s, &cfg.quad, false)?;
            print_json(json!({
                "s": s,
                "perimeter": per.value,
                "n1": per.n1,
                "n2_squared": per.n2_squared,
                "consistent": per.consistent,
            }));
            if per.consistent {
                Ok(())
            } else {
                Err(Failure::Checks)
            }
        }
        Command::Harnack { cmd: HarnackCmd::Scan { op, a, n, output } } => {
            let cfg = op.config()?;
            let spec = cfg.operator()?;
            let rows = harnack_scan(&spec, cfg.preset.name(), a, n, cfg.seed, &cfg.quad);
            let report = VerificationReport {
                summary: Summary::of(&rows),
                rows,
                plot: vec![],
                calibration: Default::default(),
                seed: cfg.seed,
                quad: cfg.quad.clone(),
            };
            if let Some(path) = output {
                emit_report(&report, &path)?;
            }
            print_summary(&report.summary);
            print_failures(&report);
            if report.all_pass() {
                Ok(())
            } else {
                Err(Failure::Checks)
            }
        }
        Command::Report { input } => {
            let text = std::fs::read_to_string(&input).map_err(|e| Error::Io(format!("{}: {e}", input.display())))?;
            let rows = parse_report_csv(&text)?;
            let mut names: Vec<&str> = rows.iter().map(|r| r.check_name.as_str()).collect();
            names.dedup();
            for name in names {
                let group: Vec<_> = rows.iter().filter(|r| r.check_name == name).cloned().collect();
                let s = Summary::of(&group);
                println!("{name:<24} {:>5} passed {:>5} failed", s.passed, s.failed);
            }
            let summary = Summary::of(&rows);
            print_summary(&summary);
            if summary.failed == 0 {
                Ok(())
            } else {
                Err(Failure::Checks)
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Checks) => ExitCode::from(1),
        Err(Failure::Input(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
