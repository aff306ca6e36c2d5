//! Reproducible sweeps over `d` with `n = round(c_n·d^γ)`.
//!
//! A sweep fixes a profile, a source target and a regularization policy, then
//! runs every `(d, replicate)` cell in a small thread pool. Cells share nothing
//! but the per-`d` spectrum and target; results are sorted before writing, so
//! the CSV never depends on scheduling.

mod figure;
mod fit;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use figure::{emit_figure_data, figure_rows, FigureRow, PANELS_BY_D, PANELS_BY_N};
pub use fit::{fit_rate, fit_rate_per_lambda, read_records_csv, Axis, FitOptions, SlopeFit};

use crate::kernel::{KernelError, KernelSpec};
use crate::quantities::{
    build_target, check_approximation_conditions, default_pole, probe_spectrum, ConditionOptions,
    ConditionReport, QuantityError, Regime, TargetLevels, TargetSpec, ZonalTarget,
};
use crate::rates::{rate, Family, Method, RateError, RateQuery};
use crate::regression::FitError;
use crate::rng::cell_seed;
use crate::sim::{sample_sphere, KrrProblem, SimError};
use crate::spectrum::{Spectrum, SpectrumError};

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "LDKRR_THREADS";
/// Smallest sample size a cell may have.
pub const MIN_N: usize = 10;
/// Largest sample size a cell may have; dense solves beyond this leave desk scale.
pub const MAX_N: usize = 10_000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("i/o failure: {0}")]
    Io(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Quantity(#[from] QuantityError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("rate fit failed: {0}")]
    Fit(#[from] FitError),
}

impl HarnessError {
    /// True for problems with the user's input rather than the computation.
    pub fn is_validation(&self) -> bool {
        matches!(self, HarnessError::Config(_) | HarnessError::Read { .. } | HarnessError::Kernel(_))
            || matches!(self, HarnessError::Rate(RateError::Invalid(_) | RateError::Unproven { .. }))
    }
}

/// How `λ` is chosen in each cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum LambdaPolicy {
    /// The theory's balancing choice for KRR at `(s, γ)`.
    Balance,
    /// `λ = d^{−l}`.
    FixedExponent { l: f64 },
    /// `λ = d^{−l}` for every listed `l`.
    Sweep { exponents: Vec<f64> },
}

fn default_c_n() -> f64 {
    1.0
}
fn default_sigma() -> f64 {
    1.0
}
fn default_replicates() -> usize {
    5
}
fn default_c0() -> f64 {
    1.0
}
fn default_r_cap() -> f64 {
    10.0
}
fn default_lambda() -> LambdaPolicy {
    LambdaPolicy::Balance
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Profile string, e.g. `exp`, `ntk-relu2`, `poly:[0,1,0.5]`.
    pub profile: String,
    pub s: f64,
    pub gamma: f64,
    #[serde(default = "default_c_n")]
    pub c_n: f64,
    pub d_grid: Vec<usize>,
    #[serde(default = "default_lambda")]
    pub lambda: LambdaPolicy,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Source-condition scale: `β_k² = c0·μ_k^s`.
    #[serde(default = "default_c0")]
    pub c0: f64,
    #[serde(default = "default_r_cap")]
    pub r_cap: f64,
    #[serde(default)]
    pub saturate_next_level: bool,
    /// Worker threads; falls back to the environment, then 1.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(profile: &str, s: f64, gamma: f64, d_grid: Vec<usize>) -> Self {
        ExperimentConfig {
            profile: profile.to_string(),
            s,
            gamma,
            c_n: default_c_n(),
            d_grid,
            lambda: LambdaPolicy::Balance,
            sigma: default_sigma(),
            replicates: default_replicates(),
            seed: 0,
            output: None,
            c0: default_c0(),
            r_cap: default_r_cap(),
            saturate_next_level: false,
            threads: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Read { path: path.to_path_buf(), message: e.to_string() })?;
        Self::from_toml_str(&text)
    }

    pub fn kernel(&self) -> Result<KernelSpec, HarnessError> {
        Ok(self.profile.parse()?)
    }

    pub fn family(&self) -> Result<Family, HarnessError> {
        Ok(match self.kernel()? {
            KernelSpec::NtkRelu2 => Family::NtkRelu2,
            KernelSpec::PowerSeries { .. } => Family::GenericInner,
        })
    }

    /// `round(c_n·d^γ)`.
    pub fn sample_size(&self, d: usize) -> usize {
        (self.c_n * (d as f64).powf(self.gamma)).round() as usize
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.kernel()?;
        if !(self.s > 0.0 && self.s.is_finite() && self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("need s > 0 and gamma > 0, got s={}, gamma={}", self.s, self.gamma));
        }
        if !(self.c_n > 0.0 && self.c_n.is_finite()) {
            return bad(format!("c_n must be positive, got {}", self.c_n));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be nonnegative, got {}", self.sigma));
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        if self.d_grid.is_empty() || self.d_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("d_grid must be nonempty and increasing, got {:?}", self.d_grid));
        }
        if self.d_grid[0] < 2 {
            return bad("every d must be at least 2".into());
        }
        for &d in &self.d_grid {
            let n = self.sample_size(d);
            if n < MIN_N {
                return bad(format!("d = {d} gives n = {n} < {MIN_N}"));
            }
            if n > MAX_N {
                return bad(format!("d = {d} gives n = {n} > {MAX_N}"));
            }
        }
        match &self.lambda {
            LambdaPolicy::Balance => {
                self.balance()?;
            }
            LambdaPolicy::FixedExponent { l } if !l.is_finite() => {
                return bad(format!("lambda exponent must be finite, got {l}"));
            }
            LambdaPolicy::Sweep { exponents }
                if exponents.is_empty() || exponents.iter().any(|l| !l.is_finite()) =>
            {
                return bad("sweep needs a nonempty list of finite exponents".into());
            }
            _ => {}
        }
        Ok(())
    }

    /// Balancing exponent `l` and whether `λ` carries a `ln d` factor.
    pub fn balance(&self) -> Result<(f64, bool), HarnessError> {
        let q = RateQuery::new(self.s, self.gamma, self.family()?, Method::Krr);
        let answer = rate(&q)?;
        let l = answer
            .lambda_exponent
            .ok_or_else(|| HarnessError::Config("rate query returned no lambda exponent".into()))?;
        Ok((l, answer.lambda_log_correction))
    }

    /// `(l, λ)` pairs used at dimension `d`.
    pub fn lambdas(&self, d: usize) -> Result<Vec<(f64, f64)>, HarnessError> {
        let df = d as f64;
        Ok(match &self.lambda {
            LambdaPolicy::Balance => {
                let (l, log) = self.balance()?;
                vec![(l, df.powf(-l) * if log { df.ln() } else { 1.0 })]
            }
            LambdaPolicy::FixedExponent { l } => vec![(*l, df.powf(-l))],
            LambdaPolicy::Sweep { exponents } => exponents.iter().map(|l| (*l, df.powf(-l))).collect(),
        })
    }

    fn target_spec(&self) -> TargetSpec {
        TargetSpec {
            s: self.s,
            gamma: self.gamma,
            c0: self.c0,
            r_cap: self.r_cap,
            levels: if self.saturate_next_level { TargetLevels::ThroughNext } else { TargetLevels::ThroughQ },
        }
    }

    fn thread_count(&self) -> usize {
        self.threads
            .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()))
            .filter(|t| *t > 0)
            .unwrap_or(1)
    }
}

/// One row of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub run_id: String,
    pub d: usize,
    pub n: usize,
    pub gamma: f64,
    pub s: f64,
    pub lambda: f64,
    pub lambda_exponent: f64,
    pub seed: u64,
    /// Noise-averaged risk on this design, `bias2 + variance`; NaN if the cell failed.
    pub excess_risk: f64,
    pub bias2: f64,
    pub variance: f64,
    pub trunc_bound: f64,
    pub cond_pass: bool,
}

/// Failure of one cell; the sweep carries on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub d: usize,
    pub replicate: usize,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub records: Vec<ExperimentRecord>,
    /// Condition report per `(d, l)`, in the same order as the records.
    pub conditions: Vec<(usize, f64, ConditionReport)>,
    pub failures: Vec<CellFailure>,
}

struct Level {
    d: usize,
    n: usize,
    sp: Spectrum,
    tg: ZonalTarget,
    lambdas: Vec<(f64, f64)>,
    pass: Vec<bool>,
}

fn prepare_level(cfg: &ExperimentConfig, spec: &KernelSpec, d: usize) -> Result<(Level, Vec<ConditionReport>), HarnessError> {
    let n = cfg.sample_size(d);
    let top = cfg.gamma.floor() as usize + 2;
    let sp = probe_spectrum(spec, d, top)?;
    let tg = build_target(&sp, &cfg.target_spec(), default_pole(d))?;
    let regime = if cfg.s < 1.0 { Regime::SubOne } else { Regime::General };
    let lambdas = cfg.lambdas(d)?;
    let reports = lambdas
        .iter()
        .map(|(_, lambda)| {
            check_approximation_conditions(&sp, &tg, *lambda, n, regime, ConditionOptions::default())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let pass = reports.iter().map(|r| r.all_pass).collect();
    Ok((Level { d, n, sp, tg, lambdas, pass }, reports))
}

fn run_cell(
    cfg: &ExperimentConfig,
    spec: &KernelSpec,
    level: &Level,
    replicate: usize,
) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let seed = cell_seed(cfg.seed, &[level.d as u64, replicate as u64]);
    let design = sample_sphere(level.d, level.n, seed)?;
    let problem = KrrProblem::new(spec, &level.sp, &level.tg, &design)?;
    let lambdas: Vec<f64> = level.lambdas.iter().map(|(_, v)| *v).collect();
    let reports = problem.bias_variance_many(&lambdas, cfg.sigma)?;
    Ok(reports
        .into_iter()
        .zip(&level.lambdas)
        .zip(&level.pass)
        .enumerate()
        .map(|(j, ((r, (l, _)), pass))| ExperimentRecord {
            run_id: format!("d{}-r{}-l{}", level.d, replicate, j),
            d: level.d,
            n: level.n,
            gamma: cfg.gamma,
            s: cfg.s,
            lambda: r.lambda,
            lambda_exponent: *l,
            seed,
            excess_risk: r.excess_risk,
            bias2: r.bias2,
            variance: r.variance,
            trunc_bound: r.trunc_bound,
            cond_pass: *pass,
        })
        .collect())
}

/// Runs every `(d, replicate)` cell and returns records sorted by `(d, replicate, λ)`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult, HarnessError> {
    cfg.validate()?;
    let spec = cfg.kernel()?;
    let mut levels = Vec::with_capacity(cfg.d_grid.len());
    let mut conditions = Vec::new();
    for &d in &cfg.d_grid {
        let (level, reports) = prepare_level(cfg, &spec, d)?;
        for ((l, _), report) in level.lambdas.iter().zip(reports) {
            conditions.push((d, *l, report));
        }
        levels.push(level);
    }
    let cells: Vec<(usize, usize)> =
        (0..levels.len()).flat_map(|i| (0..cfg.replicates).map(move |r| (i, r))).collect();
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    let workers = cfg.thread_count().min(cells.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, cells, levels, spec) = (&next, &cells, &levels, &spec);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(li, rep)) = cells.get(i) else { break };
                let out = run_cell(cfg, spec, &levels[li], rep);
                if tx.send((li, rep, out)).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut collected: BTreeMap<(usize, usize), Result<Vec<ExperimentRecord>, HarnessError>> =
        BTreeMap::new();
    for (li, rep, out) in rx {
        collected.insert((li, rep), out);
    }
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for ((li, rep), out) in collected {
        match out {
            Ok(rows) => records.extend(rows),
            Err(e) => {
                log::warn!("cell d={} replicate={rep} failed: {e}", levels[li].d);
                failures.push(CellFailure { d: levels[li].d, replicate: rep, message: e.to_string() });
            }
        }
    }
    Ok(SweepResult { records, conditions, failures })
}

/// Writes records with the fixed column order of [`ExperimentRecord`].
pub fn write_records_csv<W: Write>(out: W, records: &[ExperimentRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    if records.is_empty() {
        w.write_record([
            "run_id", "d", "n", "gamma", "s", "lambda", "lambda_exponent", "seed", "excess_risk", "bias2",
            "variance", "trunc_bound", "cond_pass",
        ])
        .map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new("exp", 1.0, 1.5, vec![6, 8, 10]);
        cfg.replicates = 2;
        cfg.seed = 3;
        cfg
    }

    #[test]
    fn toml_round_trip_and_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "profile = \"exp\"\ns = 1.0\ngamma = 1.5\nd_grid = [20, 40, 80, 160]\n[lambda]\npolicy = \"balance\"\n",
        )
        .unwrap();
        assert_eq!((cfg.c_n, cfg.sigma, cfg.replicates), (1.0, 1.0, 5));
        assert_eq!(cfg.d_grid.iter().map(|d| cfg.sample_size(*d)).collect::<Vec<_>>(), [89, 253, 716, 2024]);
        // Bias-dominated period with p = 0: l = γ/2 and no log factor.
        assert_eq!(cfg.balance().unwrap(), (0.75, false));
        let sweep = ExperimentConfig::from_toml_str(
            "profile = \"exp\"\ns = 2.0\ngamma = 2.0\nd_grid = [12, 18]\n[lambda]\npolicy = \"sweep\"\nexponents = [0.5, 1.0]\n",
        )
        .unwrap();
        assert_eq!(sweep.lambdas(16).unwrap(), vec![(0.5, 0.25), (1.0, 1.0 / 16.0)]);
        assert!(ExperimentConfig::from_toml_str("profile = \"exp\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn variance_period_at_p_zero_uses_log_factor() {
        let cfg = ExperimentConfig::new("exp", 1.0, 0.8, vec![20, 40, 80]);
        let (l, log) = cfg.balance().unwrap();
        assert!(log && (l - 0.4).abs() < 1e-15);
        let (_, lambda) = cfg.lambdas(20).unwrap()[0];
        assert!((lambda - 20f64.powf(-0.4) * 20f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn validation_errors() {
        let mut cfg = ExperimentConfig::new("exp", 1.0, 1.5, vec![2, 40]);
        assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
        cfg.d_grid = vec![40, 20];
        assert!(cfg.validate().is_err());
        cfg.d_grid = vec![20, 40];
        cfg.replicates = 0;
        assert!(cfg.validate().is_err());
        let unproven = ExperimentConfig::new("exp", 0.5, 0.4, vec![200, 400]);
        assert!(unproven.validate().unwrap_err().is_validation());
        let err = ExperimentConfig::from_file(Path::new("/nonexistent/cfg.toml")).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn sweep_is_deterministic_and_complete() {
        let cfg = small();
        let a = run_sweep(&cfg).unwrap();
        assert_eq!(a.records.len(), 6);
        assert!(a.failures.is_empty());
        assert_eq!(a.conditions.len(), 3);
        for r in &a.records {
            assert!(r.bias2 >= 0.0 && r.variance >= 0.0);
            assert!((r.excess_risk - r.bias2 - r.variance).abs() <= 1e-15 * r.excess_risk);
            assert!((r.lambda - (r.d as f64).powf(-0.75)).abs() < 1e-15);
        }
        let mut threaded = cfg.clone();
        threaded.threads = Some(3);
        let b = run_sweep(&threaded).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_records_csv(&mut x, &a.records).unwrap();
        write_records_csv(&mut y, &b.records).unwrap();
        assert_eq!(x, y);
        let header = String::from_utf8(x).unwrap();
        assert!(header.starts_with(
            "run_id,d,n,gamma,s,lambda,lambda_exponent,seed,excess_risk,bias2,variance,trunc_bound,cond_pass\n"
        ));
    }
}
