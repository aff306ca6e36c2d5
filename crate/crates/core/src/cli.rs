//! Command-line front end.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::harness::{
    emit_figure_data, fit_rate, read_records_csv, run_sweep, write_records_csv, Axis, ExperimentConfig,
    FitOptions, HarnessError, PANELS_BY_D,
};
use crate::kernel::KernelSpec;
use crate::quantities::{
    build_target, check_approximation_conditions, default_pole, key_quantities, probe_spectrum,
    write_quantities_csv, ConditionOptions, Regime, TargetSpec,
};
use crate::rates::{rate, sample_rate_curve, write_curve_csv, Family, Method, RateError, RateQuery};
use crate::spectrum::{build_spectrum, SpectrumError, Truncation, DEFAULT_TAIL_TOLERANCE};
use crate::verify;

/// Exit status for success.
pub const EXIT_OK: i32 = 0;
/// Exit status for bad arguments, configuration or input files.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit status for failures during computation.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ldkrr", version, about = "Kernel ridge regression on high-dimensional spheres")]
struct Cli {
    /// Log progress and warnings (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Eigenvalues and multiplicities of an inner-product kernel as JSON.
    Spectrum(SpectrumArgs),
    /// Key quantities over a grid of regularization exponents as CSV.
    Quantities(QuantitiesArgs),
    /// Rate exponents at one point, along a curve, or as figure data.
    Rates(RatesArgs),
    /// Approximation-condition ratios at one (d, n, lambda).
    Conditions(ConditionsArgs),
    /// Run a simulation sweep from a TOML configuration.
    Simulate(SimulateArgs),
    /// Fit the empirical rate from a results CSV.
    Fit(FitArgs),
    /// Run the acceptance checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct KernelArgs {
    /// `exp`, `ntk-relu2` or `poly:[a0,a1,...]`.
    #[arg(long, default_value = "exp")]
    profile: String,
    /// Sphere dimension (points live in R^{d+1}).
    #[arg(long)]
    d: usize,
}

#[derive(Debug, Args)]
struct SpectrumArgs {
    #[command(flatten)]
    kernel: KernelArgs,
    /// Keep degrees 0..=K instead of truncating by tail mass.
    #[arg(long, conflicts_with = "tail_tol")]
    degree: Option<usize>,
    /// Relative tail mass at which to stop.
    #[arg(long)]
    tail_tol: Option<f64>,
}

#[derive(Debug, Args)]
struct TargetArgs {
    /// Source smoothness.
    #[arg(long)]
    s: f64,
    /// Scaling exponent with n = d^gamma; fixes the saturated degrees.
    #[arg(long)]
    gamma: f64,
}

#[derive(Debug, Args)]
struct QuantitiesArgs {
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    target: TargetArgs,
    /// Smallest exponent l in lambda = d^{-l}.
    #[arg(long, default_value_t = 0.0)]
    l_min: f64,
    #[arg(long, default_value_t = 3.0)]
    l_max: f64,
    #[arg(long, default_value_t = 31)]
    points: usize,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RatesArgs {
    #[arg(long, required_unless_present = "figure")]
    s: Option<f64>,
    /// Single query point; omit to sample a curve.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value = "krr")]
    method: Method,
    #[arg(long, default_value = "generic_inner")]
    family: Family,
    /// Upper end of a sampled curve.
    #[arg(long, default_value_t = 6.0)]
    gamma_max: f64,
    #[arg(long, default_value_t = 0.01)]
    step: f64,
    /// Write figure data for the standard panels to this CSV.
    #[arg(long, conflicts_with_all = ["s", "gamma"])]
    figure: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConditionsArgs {
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    target: TargetArgs,
    #[arg(long)]
    n: usize,
    /// lambda = d^{-l}.
    #[arg(long, conflicts_with = "lambda")]
    l: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0.2)]
    threshold: f64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured output path; `-` writes to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    /// `d` or `n`.
    #[arg(long, default_value = "d")]
    axis: Axis,
    /// Keep cells that fail the approximation conditions.
    #[arg(long)]
    include_unverified: bool,
    #[arg(long, default_value = "generic_inner")]
    family: Family,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Comma-separated criterion ids; all by default.
    #[arg(long, value_delimiter = ',')]
    criteria: Vec<u8>,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<RateError> for Failure {
    fn from(e: RateError) -> Self {
        HarnessError::from(e).into()
    }
}

impl From<SpectrumError> for Failure {
    fn from(e: SpectrumError) -> Self {
        match e {
            SpectrumError::Dimension(_) | SpectrumError::Invalid(_) | SpectrumError::Kernel(_) => {
                Failure::Validation(e.to_string())
            }
            SpectrumError::Truncation { .. } => {
                Failure::Runtime(format!("{e}; pass --degree to fix the truncation"))
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn validation(e: impl std::fmt::Display) -> Failure {
    Failure::Validation(e.to_string())
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    match path {
        Some(p) if p != Path::new("-") => Ok(Box::new(File::create(p).map_err(|e| {
            Failure::Runtime(format!("cannot create {}: {e}", p.display()))
        })?)),
        _ => Ok(Box::new(io::stdout().lock())),
    }
}

/// Writes to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<(), Failure> {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(runtime(e)),
        _ => Ok(()),
    }
}

fn print_json(value: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(runtime)?;
    emit(&format!("{text}\n"))
}

fn kernel(args: &KernelArgs) -> Result<KernelSpec, Failure> {
    args.profile.parse().map_err(validation)
}

fn spectrum(args: SpectrumArgs) -> Result<(), Failure> {
    let spec = kernel(&args.kernel)?;
    let policy = match (args.degree, args.tail_tol) {
        (Some(k), _) => Truncation::Degree(k),
        (None, tol) => Truncation::TailTolerance(tol.unwrap_or(DEFAULT_TAIL_TOLERANCE)),
    };
    let sp = build_spectrum(&spec, args.kernel.d, policy)?;
    print_json(&sp.to_json())
}

fn target_spec(t: &TargetArgs) -> TargetSpec {
    let mut spec = TargetSpec::new(t.s, t.gamma);
    spec.r_cap = f64::INFINITY;
    spec
}

fn quantities(args: QuantitiesArgs) -> Result<(), Failure> {
    let spec = kernel(&args.kernel)?;
    let d = args.kernel.d;
    if args.points < 2 || !(args.l_max > args.l_min) {
        return Err(validation("need --points >= 2 and --l-max > --l-min"));
    }
    let sp = probe_spectrum(&spec, d, args.target.gamma.floor() as usize + 2)?;
    let tg = build_target(&sp, &target_spec(&args.target), default_pole(d)).map_err(validation)?;
    let rows = (0..args.points)
        .map(|i| {
            let l = args.l_min + (args.l_max - args.l_min) * i as f64 / (args.points - 1) as f64;
            key_quantities(&sp, &tg, (d as f64).powf(-l))
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime)?;
    write_quantities_csv(sink(args.output.as_deref())?, d, &rows).map_err(runtime)
}

fn rates(args: RatesArgs) -> Result<(), Failure> {
    if let Some(path) = args.figure {
        let families = [Family::GenericInner, Family::NtkRelu2];
        let count = emit_figure_data(&PANELS_BY_D, (0.0, args.gamma_max), &families, &path)?;
        eprintln!("wrote {count} rows to {}", path.display());
        return Ok(());
    }
    let s = args.s.ok_or_else(|| validation("--s is required"))?;
    match args.gamma {
        Some(gamma) => {
            let a = rate(&RateQuery::new(s, gamma, args.family, args.method))?;
            let lambda = a.lambda_exponent.map_or("none".to_string(), |l| l.to_string());
            emit(&format!(
                "d_exponent {}\nn_exponent {}\nlambda_exponent {lambda}\np {}\nperiod_kind {}\n\
                 log_factor {}\nlambda_log_correction {}\nepsilon_slack {}\n",
                a.d_exponent,
                a.n_exponent,
                a.p,
                a.period_kind,
                a.log_factor,
                a.lambda_log_correction,
                a.epsilon_slack
            ))
        }
        None => {
            let rows = sample_rate_curve(s, (0.0, args.gamma_max), args.step, args.family, args.method)?;
            write_curve_csv(io::stdout().lock(), &rows).map_err(runtime)
        }
    }
}

fn conditions(args: ConditionsArgs) -> Result<(), Failure> {
    let spec = kernel(&args.kernel)?;
    let d = args.kernel.d;
    let lambda = match (args.lambda, args.l) {
        (Some(v), _) => v,
        (None, Some(l)) => (d as f64).powf(-l),
        (None, None) => return Err(validation("pass --lambda or --l")),
    };
    let sp = probe_spectrum(&spec, d, args.target.gamma.floor() as usize + 2)?;
    let tg = build_target(&sp, &target_spec(&args.target), default_pole(d)).map_err(validation)?;
    let regime = if args.target.s < 1.0 { Regime::SubOne } else { Regime::General };
    let options = ConditionOptions { threshold: args.threshold, ..Default::default() };
    let report = check_approximation_conditions(&sp, &tg, lambda, args.n, regime, options).map_err(validation)?;
    print_json(&serde_json::to_value(&report).map_err(runtime)?)
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(t) = args.threads {
        cfg.threads = Some(t);
        cfg.validate()?;
    }
    let result = run_sweep(&cfg)?;
    let out = args.output.or_else(|| cfg.output.clone());
    write_records_csv(sink(out.as_deref())?, &result.records)?;
    for f in &result.failures {
        eprintln!("cell d={} replicate={} failed: {}", f.d, f.replicate, f.message);
    }
    let verified = result.records.iter().filter(|r| r.cond_pass).count();
    eprintln!("{} records, {verified} pass the approximation conditions", result.records.len());
    if result.records.is_empty() && !result.failures.is_empty() {
        return Err(runtime("every cell failed"));
    }
    Ok(())
}

fn fit(args: FitArgs) -> Result<(), Failure> {
    let file = File::open(&args.input)
        .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", args.input.display())))?;
    let records = read_records_csv(file)?;
    let options = FitOptions { axis: args.axis, include_unverified: args.include_unverified, family: args.family };
    let fit = fit_rate(&records, &options)?;
    print_json(&json!(fit))
}

fn verify(args: VerifyArgs) -> Result<(), Failure> {
    let ids = if args.criteria.is_empty() { verify::ALL.to_vec() } else { args.criteria };
    if let Some(bad) = ids.iter().find(|id| !verify::ALL.contains(id)) {
        return Err(validation(format!("unknown criterion {bad}")));
    }
    let mut failed = 0;
    for id in ids {
        if let Some(result) = verify::run_criterion(id) {
            emit(&format!("{result}\n"))?;
            failed += usize::from(!result.pass);
        }
    }
    if failed > 0 {
        return Err(runtime(format!("{failed} criteria failed")));
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let outcome = match cli.command {
        Command::Spectrum(a) => spectrum(a),
        Command::Quantities(a) => quantities(a),
        Command::Rates(a) => rates(a),
        Command::Conditions(a) => conditions(a),
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Verify(a) => verify(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            EXIT_VALIDATION
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            EXIT_RUNTIME
        }
    }
}
