//! Mercer eigen-structure of inner-product kernels on `S^d`.
//!
//! The degree-`k` spherical harmonics form one eigenspace of dimension
//! `N(d, k)` with eigenvalue `μ_k = E_t[Φ(t) P_k(t)]`, where `P_k` is the
//! Gegenbauer polynomial normalized by `P_k(1) = 1` and `t = ⟨x, x0⟩` for
//! uniform `x`.
//!
//! Two routes compute `μ_k`. Gauss–Jacobi quadrature works for any profile.
//! For power series each monomial `t^j` projects onto `P_k` in closed form,
//! giving `μ_k` as a sum of positive terms with no cancellation; this is the
//! route [`build_spectrum`] takes for power series.

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::kernel::{KernelError, KernelSpec, DOMAIN_TOLERANCE};
use crate::quadrature::{QuadratureError, SphereRule};
use crate::regression::{fit_loglog, LineFit};

/// Hard cap on the truncation degree.
pub const MAX_DEGREE: usize = 200;
/// Default tail tolerance, relative to `Φ(1)`.
pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-10;

const QUAD_MAX_ORDER: usize = 8192;
const QUAD_REL_TOL: f64 = 1e-10;
/// Absolute agreement floor, relative to `Φ(1)`; covers summation roundoff.
const QUAD_ROUNDOFF: f64 = 1e-14;
const NEGATIVE_TOLERANCE: f64 = 1e-12;
/// Above this, multiplicities are carried as floats only.
const EXACT_LIMIT: u128 = 1 << 62;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error("sphere dimension must be at least 2, got {0}")]
    Dimension(usize),
    #[error("multiplicity N({d}, {k}) exceeds 2^62")]
    Overflow { d: usize, k: usize },
    #[error("quadrature for level {k} did not settle by order {order} (change {change:e})")]
    Accuracy { k: usize, order: usize, change: f64 },
    #[error("tail mass {tail:e} still above tolerance at the degree cap {cap}")]
    Truncation { cap: usize, tail: f64 },
    #[error("degree {k} is beyond the stored truncation {k_max}")]
    DegreeOutOfRange { k: usize, k_max: usize },
    #[error("argument {0} outside [-1, 1]")]
    Domain(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// How far to expand the Mercer series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Truncation {
    /// Keep degrees `0..=K`.
    Degree(usize),
    /// Smallest `K` with `Φ(1) − Σ_{k≤K} μ_k N(d,k) ≤ ε·Φ(1)`.
    TailTolerance(f64),
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation::TailTolerance(DEFAULT_TAIL_TOLERANCE)
    }
}

/// Per-degree eigenvalues and multiplicities for one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub d: usize,
    pub mu: Vec<f64>,
    /// `N(d, k)`, exact while below 2^53.
    pub mult: Vec<f64>,
    /// `max(Φ(1) − Σ μ_k N(d,k), 0)`.
    pub tail_mass: f64,
    pub profile_name: String,
    /// `Φ(1) = κ²`.
    pub phi_one: f64,
}

fn check_dimension(d: usize) -> Result<(), SpectrumError> {
    if d < 2 {
        Err(SpectrumError::Dimension(d))
    } else {
        Ok(())
    }
}

fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r.checked_mul((n - i) as u128)? / (i + 1) as u128;
    }
    Some(r)
}

fn multiplicity_exact(d: usize, k: usize) -> Option<u128> {
    if k == 0 {
        return Some(1);
    }
    let top = binomial((d + k) as u64, k as u64)?;
    let low = if k >= 2 { binomial((d + k - 2) as u64, (k - 2) as u64)? } else { 0 };
    Some(top - low)
}

/// `N(d, k)`, the dimension of degree-`k` harmonics on `S^d`, as an exact integer.
pub fn multiplicity(d: usize, k: usize) -> Result<u64, SpectrumError> {
    check_dimension(d)?;
    match multiplicity_exact(d, k) {
        Some(n) if n <= EXACT_LIMIT => Ok(n as u64),
        _ => Err(SpectrumError::Overflow { d, k }),
    }
}

/// `N(d, k)` as a float, falling back to log-gamma arithmetic past 2^62.
pub fn multiplicity_f64(d: usize, k: usize) -> Result<f64, SpectrumError> {
    check_dimension(d)?;
    if let Some(n) = multiplicity_exact(d, k).filter(|n| *n <= EXACT_LIMIT) {
        return Ok(n as f64);
    }
    let (df, kf) = (d as f64, k as f64);
    let ln = (2.0 * kf + df - 1.0).ln() - kf.ln() + libm::lgamma(kf + df - 1.0)
        - libm::lgamma(df)
        - libm::lgamma(kf);
    Ok(ln.exp())
}

/// Fills `out[k] = P_k(t)` for `k < out.len()` by the three-term recurrence.
/// `t` is not range-checked.
pub fn legendre_table(d: usize, t: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() == 1 {
        return;
    }
    out[1] = t;
    let df = d as f64;
    for k in 1..out.len() - 1 {
        let kf = k as f64;
        out[k + 1] = ((2.0 * kf + df - 1.0) * t * out[k] - kf * out[k - 1]) / (kf + df - 1.0);
    }
}

/// `P_k(t)` on `S^d`, normalized so `P_k(1) = 1`.
pub fn legendre_eval(d: usize, k: usize, t: f64) -> Result<f64, SpectrumError> {
    check_dimension(d)?;
    check_domain(t)?;
    let mut table = vec![0.0; k + 1];
    legendre_table(d, t.clamp(-1.0, 1.0), &mut table);
    Ok(table[k])
}

fn check_domain(t: f64) -> Result<(), SpectrumError> {
    if !t.is_finite() || t.abs() > 1.0 + DOMAIN_TOLERANCE {
        Err(SpectrumError::Domain(t))
    } else {
        Ok(())
    }
}

/// `E_t[t^j P_k(t)]` on `S^d`; zero unless `j ≥ k` and `j − k` is even.
pub fn monomial_projection(d: usize, j: usize, k: usize) -> f64 {
    if j < k || (j - k) % 2 == 1 {
        return 0.0;
    }
    let half_dim = (d as f64 + 1.0) / 2.0;
    let jf = j as f64;
    let ln = libm::lgamma(jf + 1.0) - jf * std::f64::consts::LN_2 + libm::lgamma(half_dim)
        - libm::lgamma(((j - k) / 2) as f64 + 1.0)
        - libm::lgamma((j + k) as f64 / 2.0 + half_dim);
    ln.exp()
}

/// `μ_k` for `Φ(t) = Σ a_j t^j` via the closed-form monomial projections.
pub fn eigenvalue_series(coefficients: &[f64], d: usize, k: usize) -> f64 {
    coefficients
        .iter()
        .enumerate()
        .skip(k)
        .step_by(2)
        .filter(|(_, a)| **a != 0.0)
        .map(|(j, a)| a * monomial_projection(d, j, k))
        .sum()
}

fn project_levels(spec: &KernelSpec, rule: &SphereRule, k_max: usize) -> Vec<f64> {
    let mut sums = vec![0.0; k_max + 1];
    let mut table = vec![0.0; k_max + 1];
    for (t, w) in rule.nodes.iter().zip(&rule.weights) {
        let wf = w * spec.phi(*t);
        legendre_table(rule.d, *t, &mut table);
        for (s, p) in sums.iter_mut().zip(&table) {
            *s += wf * p;
        }
    }
    sums
}

fn clamp_negative(mu: &mut [f64]) {
    for (k, m) in mu.iter_mut().enumerate() {
        if *m < 0.0 {
            if *m < -NEGATIVE_TOLERANCE {
                warn!("eigenvalue mu_{k} = {m:e} below zero beyond roundoff; clamped");
            }
            *m = 0.0;
        }
    }
}

/// `μ_0..=μ_{k_max}` by Gauss–Jacobi quadrature, doubling the order until two
/// consecutive orders agree.
pub fn eigenvalues_quadrature(
    spec: &KernelSpec,
    d: usize,
    k_max: usize,
) -> Result<Vec<f64>, SpectrumError> {
    check_dimension(d)?;
    let floor = QUAD_ROUNDOFF * spec.sup_bound();
    let mut order = 64.max(2 * k_max + 16);
    if let Some(c) = spec.power_coefficients() {
        order = order.max((c.len() + k_max) / 2 + 5);
    }
    let mut prev = project_levels(spec, &SphereRule::new(d, order)?, k_max);
    loop {
        let next = order * 2;
        let cur = project_levels(spec, &SphereRule::new(d, next)?, k_max);
        let worst = cur
            .iter()
            .zip(&prev)
            .enumerate()
            .map(|(k, (a, b))| (k, (a - b).abs(), QUAD_REL_TOL * a.abs() + floor))
            .filter(|(_, change, tol)| change > tol)
            .max_by(|x, y| (x.1 / x.2).total_cmp(&(y.1 / y.2)));
        match worst {
            None => {
                let mut mu = cur;
                clamp_negative(&mut mu);
                return Ok(mu);
            }
            Some((k, change, _)) if next * 2 > QUAD_MAX_ORDER => {
                return Err(SpectrumError::Accuracy { k, order: next, change });
            }
            Some(_) => {
                prev = cur;
                order = next;
            }
        }
    }
}

/// `μ_k` by Gauss–Jacobi quadrature.
pub fn eigenvalue_quadrature(spec: &KernelSpec, d: usize, k: usize) -> Result<f64, SpectrumError> {
    Ok(eigenvalues_quadrature(spec, d, k)?[k])
}

/// `μ_0..=μ_{k_max}` by the route [`build_spectrum`] uses for this profile.
pub fn eigenvalues(spec: &KernelSpec, d: usize, k_max: usize) -> Result<Vec<f64>, SpectrumError> {
    check_dimension(d)?;
    match spec.power_coefficients() {
        Some(c) => Ok((0..=k_max).map(|k| eigenvalue_series(c, d, k)).collect()),
        None => eigenvalues_quadrature(spec, d, k_max),
    }
}

/// Builds the truncated spectrum of `spec` on `S^d`.
pub fn build_spectrum(
    spec: &KernelSpec,
    d: usize,
    policy: Truncation,
) -> Result<Spectrum, SpectrumError> {
    check_dimension(d)?;
    let phi_one = spec.sup_bound();
    let mu = match policy {
        Truncation::Degree(k) => {
            if k > MAX_DEGREE {
                return Err(SpectrumError::Truncation { cap: MAX_DEGREE, tail: f64::NAN });
            }
            eigenvalues(spec, d, k)?
        }
        Truncation::TailTolerance(eps) => {
            if !(eps > 0.0) {
                return Err(SpectrumError::Invalid(format!("tail tolerance {eps} must be positive")));
            }
            truncate_by_tail(spec, d, eps * phi_one)?
        }
    };
    Spectrum::from_eigenvalues(d, mu, spec.name(), phi_one)
}

fn truncate_by_tail(spec: &KernelSpec, d: usize, limit: f64) -> Result<Vec<f64>, SpectrumError> {
    let phi_one = spec.sup_bound();
    let mut block = 16usize;
    loop {
        let k_max = block.min(MAX_DEGREE);
        let mu = eigenvalues(spec, d, k_max)?;
        let mut trace = 0.0;
        for (k, m) in mu.iter().enumerate() {
            trace += m * multiplicity_f64(d, k)?;
            if phi_one - trace <= limit {
                return Ok(mu[..=k].to_vec());
            }
        }
        if k_max == MAX_DEGREE {
            return Err(SpectrumError::Truncation { cap: MAX_DEGREE, tail: phi_one - trace });
        }
        block *= 2;
    }
}

/// Result of comparing the truncated Mercer series with `Φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MercerCheck {
    pub value: f64,
    pub abs_error: f64,
    /// `tail_mass · sup_k |P_k(t)| = tail_mass`, since `|P_k| ≤ 1`.
    pub bound: f64,
}

impl Spectrum {
    /// Assembles a spectrum from eigenvalues already computed elsewhere.
    pub fn from_eigenvalues(
        d: usize,
        mu: Vec<f64>,
        profile_name: String,
        phi_one: f64,
    ) -> Result<Self, SpectrumError> {
        check_dimension(d)?;
        if mu.is_empty() || mu.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(SpectrumError::Invalid("eigenvalues must be finite and non-negative".into()));
        }
        // Drops the sign of -0.0.
        let mu: Vec<f64> = mu.into_iter().map(|m| m + 0.0).collect();
        let mult = (0..mu.len()).map(|k| multiplicity_f64(d, k)).collect::<Result<Vec<_>, _>>()?;
        let trace: f64 = mu.iter().zip(&mult).map(|(m, n)| m * n).sum();
        Ok(Spectrum { d, mu, mult, tail_mass: (phi_one - trace).max(0.0), profile_name, phi_one })
    }

    /// Truncation degree `K`.
    pub fn k_max(&self) -> usize {
        self.mu.len() - 1
    }

    /// `Σ_{k≤K} μ_k N(d,k)`.
    pub fn trace(&self) -> f64 {
        self.mu.iter().zip(&self.mult).map(|(m, n)| m * n).sum()
    }

    /// `P_0(t)..=P_K(t)`.
    pub fn legendre_row(&self, t: f64) -> Vec<f64> {
        let mut row = vec![0.0; self.mu.len()];
        legendre_table(self.d, t, &mut row);
        row
    }

    /// `Z_k(t) = N(d,k) P_k(t)`.
    pub fn zonal_kernel(&self, k: usize, t: f64) -> Result<f64, SpectrumError> {
        if k > self.k_max() {
            return Err(SpectrumError::DegreeOutOfRange { k, k_max: self.k_max() });
        }
        Ok(self.mult[k] * legendre_eval(self.d, k, t)?)
    }

    /// `Σ_{k≤K} μ_k Z_k(t)` against `Φ(t)`.
    pub fn mercer_reconstruct(&self, spec: &KernelSpec, t: f64) -> Result<MercerCheck, SpectrumError> {
        check_domain(t)?;
        let t = t.clamp(-1.0, 1.0);
        let row = self.legendre_row(t);
        let value: f64 = self.mu.iter().zip(&self.mult).zip(&row).map(|((m, n), p)| m * n * p).sum();
        Ok(MercerCheck { value, abs_error: (value - spec.phi(t)).abs(), bound: self.tail_mass })
    }

    /// JSON export: `{d, K, mu, mult, tail_mass, profile_name}`.
    pub fn to_json(&self) -> Value {
        let mult: Vec<Value> = self
            .mult
            .iter()
            .map(|n| if *n < 9.0e15 { json!(*n as u64) } else { json!(n) })
            .collect();
        json!({
            "d": self.d,
            "K": self.k_max(),
            "mu": self.mu,
            "mult": mult,
            "tail_mass": self.tail_mass,
            "profile_name": self.profile_name,
        })
    }
}

/// Log-log decay of one eigenvalue level across dimensions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelDecay {
    pub k: usize,
    pub mu: Vec<f64>,
    pub expected_slope: f64,
    /// `None` when some `μ_k` is zero on the grid.
    pub fit: Option<LineFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub p: usize,
    pub d_grid: Vec<usize>,
    pub levels: Vec<LevelDecay>,
    /// Per `d`: `max_{p<k≤p+6} μ_k / μ_p`.
    pub domination: Vec<f64>,
    /// Log-log slope of `domination`, expected near −1.
    pub domination_slope: Option<f64>,
}

/// Levels beyond `p` inspected for the domination ratio.
const DOMINATION_DEPTH: usize = 6;

/// Empirical decay `μ_k ≍ d^{-k}` for `k ≤ p+1`, from direct quadrature.
pub fn eigen_decay_check(
    spec: &KernelSpec,
    p: usize,
    d_grid: &[usize],
) -> Result<DecayReport, SpectrumError> {
    if d_grid.len() < 3 || d_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SpectrumError::Invalid("d_grid must be increasing with at least 3 entries".into()));
    }
    let k_top = p + DOMINATION_DEPTH;
    let per_d = d_grid
        .iter()
        .map(|d| eigenvalues_quadrature(spec, *d, k_top))
        .collect::<Result<Vec<_>, _>>()?;
    let ds: Vec<f64> = d_grid.iter().map(|d| *d as f64).collect();
    let levels = (0..=p + 1)
        .map(|k| {
            let mu: Vec<f64> = per_d.iter().map(|m| m[k]).collect();
            let fit = fit_loglog(&ds, &mu).ok();
            LevelDecay { k, mu, expected_slope: -(k as f64), fit }
        })
        .collect();
    let domination: Vec<f64> = per_d
        .iter()
        .map(|m| {
            let top = m[p + 1..].iter().copied().fold(0.0, f64::max);
            if m[p] > 0.0 {
                top / m[p]
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let domination_slope = fit_loglog(&ds, &domination).ok().map(|f| f.slope);
    Ok(DecayReport { p, d_grid: d_grid.to_vec(), levels, domination, domination_slope })
}
