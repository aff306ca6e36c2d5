//! Source-condition targets and the key quantities that govern the KRR error.
//!
//! Targets are zonal: one unit-norm zonal harmonic `√N(d,k) P_k(⟨x, x0⟩)` per
//! active degree, scaled by `β_k`. Everything below is a sum over degrees, so
//! no sample points are needed.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::KernelSpec;
use crate::regression::{fit_loglog, LineFit};
use crate::spectrum::{build_spectrum, legendre_table, Spectrum, SpectrumError, Truncation};

/// Number of Chebyshev points used for sup norms over `t ∈ [−1, 1]`.
pub const SUP_GRID_POINTS: usize = 4001;
/// Tolerance on `‖x‖ = 1` for evaluation points and poles.
pub const UNIT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantityError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{levels} saturated levels with c0 = {c0} exceed the norm cap r_cap = {r_cap}")]
    Infeasible { levels: usize, c0: f64, r_cap: f64 },
    #[error("no level with positive eigenvalue above gamma = {gamma} within K = {k_max}")]
    NoActiveLevel { gamma: f64, k_max: usize },
    #[error("vector norm {0} is not 1")]
    NotUnit(f64),
    #[error("expected a vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

/// Which degrees a built target saturates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetLevels {
    /// Degrees `0..=q`.
    #[default]
    ThroughQ,
    /// Degrees `0..=q` and the next degree with positive eigenvalue.
    ThroughNext,
}

/// Parameters of the source condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub s: f64,
    pub gamma: f64,
    pub c0: f64,
    pub r_cap: f64,
    pub levels: TargetLevels,
}

impl TargetSpec {
    /// `c0 = 1`, `r_cap = 10`, levels `0..=q`.
    pub fn new(s: f64, gamma: f64) -> Self {
        TargetSpec { s, gamma, c0: 1.0, r_cap: 10.0, levels: TargetLevels::ThroughQ }
    }
}

/// `f*(x) = Σ_k β_k √N(d,k) P_k(⟨x, x0⟩)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZonalTarget {
    pub s: f64,
    pub pole: Vec<f64>,
    pub beta: Vec<f64>,
    /// Highest degree required by the source condition.
    pub q: usize,
    /// `μ_k^{−s} β_k²`, zero where `μ_k = 0`.
    pub level_mass: Vec<f64>,
    /// `‖f*‖_{[H]^s}`.
    pub hs_norm: f64,
}

/// `e_0 ∈ R^{d+1}`.
pub fn default_pole(d: usize) -> Vec<f64> {
    let mut pole = vec![0.0; d + 1];
    pole[0] = 1.0;
    pole
}

fn check_unit(sp: &Spectrum, x: &[f64]) -> Result<(), QuantityError> {
    if x.len() != sp.d + 1 {
        return Err(QuantityError::DimensionMismatch { expected: sp.d + 1, got: x.len() });
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(QuantityError::NotUnit(norm));
    }
    Ok(())
}

impl ZonalTarget {
    /// Target with explicit level coefficients. `q` is the last nonzero degree.
    pub fn from_coefficients(
        sp: &Spectrum,
        s: f64,
        beta: Vec<f64>,
        pole: Vec<f64>,
    ) -> Result<Self, QuantityError> {
        check_unit(sp, &pole)?;
        if !(s > 0.0) {
            return Err(QuantityError::Invalid(format!("s must be positive, got {s}")));
        }
        if beta.len() > sp.mu.len() {
            return Err(QuantityError::Invalid(format!(
                "{} coefficients but the spectrum stops at degree {}",
                beta.len(),
                sp.k_max()
            )));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(QuantityError::Invalid("coefficients must be finite".into()));
        }
        let level_mass: Vec<f64> = beta
            .iter()
            .zip(&sp.mu)
            .map(|(b, m)| if *m > 0.0 { m.powf(-s) * b * b } else { 0.0 })
            .collect();
        let outside_rkhs = beta.iter().zip(&sp.mu).any(|(b, m)| *b != 0.0 && *m == 0.0);
        let hs_norm =
            if outside_rkhs { f64::INFINITY } else { level_mass.iter().sum::<f64>().sqrt() };
        let q = beta.iter().rposition(|b| *b != 0.0).unwrap_or(0);
        Ok(ZonalTarget { s, pole, beta, q, level_mass, hs_norm })
    }

    /// `f* ≡ 0`.
    pub fn zero(sp: &Spectrum, s: f64) -> Self {
        ZonalTarget {
            s,
            pole: default_pole(sp.d),
            beta: vec![0.0],
            q: 0,
            level_mass: vec![0.0],
            hs_norm: 0.0,
        }
    }

    /// `‖f*‖²_{L²} = Σ β_k²`.
    pub fn l2_norm_sq(&self) -> f64 {
        self.beta.iter().map(|b| b * b).sum()
    }

    /// `f*` as a function of `t = ⟨x, x0⟩`.
    pub fn eval_zonal(&self, sp: &Spectrum, t: f64) -> f64 {
        zonal_series(sp, &self.beta, t)
    }
}

/// `Σ_k c_k √N(d,k) P_k(t)` for level coefficients `c`.
pub fn zonal_series(sp: &Spectrum, coefficients: &[f64], t: f64) -> f64 {
    let mut row = vec![0.0; coefficients.len()];
    legendre_table(sp.d, t.clamp(-1.0, 1.0), &mut row);
    coefficients.iter().zip(&sp.mult).zip(&row).map(|((c, n), p)| c * n.sqrt() * p).sum()
}

/// Saturated source-condition target: `β_k = √c0 · μ_k^{s/2}` for the active degrees.
pub fn build_target(
    sp: &Spectrum,
    spec: &TargetSpec,
    pole: Vec<f64>,
) -> Result<ZonalTarget, QuantityError> {
    let TargetSpec { s, gamma, c0, r_cap, levels } = *spec;
    if !(s > 0.0 && gamma > 0.0 && r_cap > 0.0 && c0 >= 0.0) || !c0.is_finite() {
        return Err(QuantityError::Invalid(format!(
            "need s > 0, gamma > 0, r_cap > 0, c0 >= 0; got s={s}, gamma={gamma}, c0={c0}, r_cap={r_cap}"
        )));
    }
    let positive_from = |start: usize| (start..=sp.k_max()).find(|k| sp.mu[*k] > 0.0);
    let q = positive_from(gamma.floor() as usize + 1)
        .ok_or(QuantityError::NoActiveLevel { gamma, k_max: sp.k_max() })?;
    let top = match levels {
        TargetLevels::ThroughQ => q,
        TargetLevels::ThroughNext => positive_from(q + 1).unwrap_or_else(|| {
            log::warn!("spectrum stops at K = {}; level after q = {q} not saturated", sp.k_max());
            q
        }),
    };
    let active = sp.mu[..=top].iter().filter(|m| **m > 0.0).count();
    if active as f64 * c0 > r_cap * r_cap {
        return Err(QuantityError::Infeasible { levels: active, c0, r_cap });
    }
    let beta: Vec<f64> = sp.mu[..=top].iter().map(|m| c0.sqrt() * m.powf(s / 2.0)).collect();
    let mut target = ZonalTarget::from_coefficients(sp, s, beta, pole)?;
    target.q = q;
    Ok(target)
}

/// `f*(x)` for a point `x` on `S^d`.
pub fn eval_target(tg: &ZonalTarget, sp: &Spectrum, x: &[f64]) -> Result<f64, QuantityError> {
    check_unit(sp, x)?;
    let t: f64 = x.iter().zip(&tg.pole).map(|(a, b)| a * b).sum();
    Ok(tg.eval_zonal(sp, t))
}

/// Key quantities at one regularization level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KeyQuantities {
    pub lambda: f64,
    /// `Σ N μ/(μ+λ)`.
    pub n1: f64,
    /// `Σ N (μ/(μ+λ))²`.
    pub n2: f64,
    /// `Σ (λ/(μ+λ))² β²`.
    pub m2: f64,
    /// `Σ λ² μ^{-1}/(μ+λ) β²` over `μ > 0`.
    pub q1: f64,
    /// `κ⁴ Σ μ/(μ+λ)² β²`.
    pub q2: f64,
    /// Grid sup of `|f_λ − f*|`, the zonal surrogate for `M1`.
    pub m1_zonal: f64,
    /// Grid sup of `|f_λ|`.
    pub f_lambda_sup: f64,
}

/// Chebyshev points `cos(jπ/(m−1))`, endpoints included.
pub fn chebyshev_grid(points: usize) -> Vec<f64> {
    let m = points.max(2) - 1;
    (0..=m).map(|j| (std::f64::consts::PI * j as f64 / m as f64).cos()).collect()
}

/// Max over the Chebyshev grid of `|Σ_k c_k √N(d,k) P_k(t)|`.
pub fn zonal_sup(sp: &Spectrum, coefficients: &[f64]) -> f64 {
    if coefficients.iter().all(|c| *c == 0.0) {
        return 0.0;
    }
    let scaled: Vec<f64> = coefficients.iter().zip(&sp.mult).map(|(c, n)| c * n.sqrt()).collect();
    let mut row = vec![0.0; scaled.len()];
    chebyshev_grid(SUP_GRID_POINTS)
        .into_iter()
        .map(|t| {
            legendre_table(sp.d, t, &mut row);
            scaled.iter().zip(&row).map(|(c, p)| c * p).sum::<f64>().abs()
        })
        .fold(0.0, f64::max)
}

fn check_lambda(lambda: f64) -> Result<(), QuantityError> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(QuantityError::Invalid(format!("lambda must be positive, got {lambda}")))
    }
}

/// `N1, N2, M2, Q1, Q2` and the grid sups at `λ`.
pub fn key_quantities(
    sp: &Spectrum,
    tg: &ZonalTarget,
    lambda: f64,
) -> Result<KeyQuantities, QuantityError> {
    check_lambda(lambda)?;
    if tg.beta.len() > sp.mu.len() {
        return Err(QuantityError::Invalid("target has more levels than the spectrum".into()));
    }
    let (mut n1, mut n2) = (0.0, 0.0);
    for (m, n) in sp.mu.iter().zip(&sp.mult) {
        let r = m / (m + lambda);
        n1 += n * r;
        n2 += n * r * r;
    }
    let kappa4 = sp.phi_one * sp.phi_one;
    let (mut m2, mut q1, mut q2) = (0.0, 0.0, 0.0);
    let mut residual = Vec::with_capacity(tg.beta.len());
    let mut smoothed = Vec::with_capacity(tg.beta.len());
    for (b, m) in tg.beta.iter().zip(&sp.mu) {
        let b2 = b * b;
        let shrink = lambda / (m + lambda);
        m2 += shrink * shrink * b2;
        if *m > 0.0 {
            q1 += lambda * lambda / m / (m + lambda) * b2;
        }
        q2 += kappa4 * m / ((m + lambda) * (m + lambda)) * b2;
        residual.push(shrink * b);
        smoothed.push(m / (m + lambda) * b);
    }
    Ok(KeyQuantities {
        lambda,
        n1,
        n2,
        m2,
        q1,
        q2,
        m1_zonal: zonal_sup(sp, &residual),
        f_lambda_sup: zonal_sup(sp, &smoothed),
    })
}

/// `Σ_k (μ_k/(μ_k+λ))² N(d,k) P_k(t)`, the diagonal of the squared smoothing
/// kernel, which never exceeds `N2(λ)`.
pub fn smoothing_profile(sp: &Spectrum, lambda: f64, t: f64) -> f64 {
    let row = sp.legendre_row(t.clamp(-1.0, 1.0));
    sp.mu
        .iter()
        .zip(&sp.mult)
        .zip(&row)
        .map(|((m, n), p)| (m / (m + lambda)).powi(2) * n * p)
        .sum()
}

/// Writes `d,lambda,n1,n2,m2,q1,q2,m1_zonal` rows.
pub fn write_quantities_csv<W: Write>(
    out: W,
    d: usize,
    rows: &[KeyQuantities],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["d", "lambda", "n1", "n2", "m2", "q1", "q2", "m1_zonal"])?;
    for r in rows {
        w.write_record(
            [d as f64, r.lambda, r.n1, r.n2, r.m2, r.q1, r.q2, r.m1_zonal].map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    #[default]
    General,
    /// `0 < s < 1`: `M1` is replaced by `‖f_λ‖_∞` and an extra ratio is added.
    SubOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionOptions {
    pub threshold: f64,
    /// Exponent slack in the extra sub-one ratio.
    pub epsilon: f64,
}

impl Default for ConditionOptions {
    fn default() -> Self {
        ConditionOptions { threshold: 0.2, epsilon: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionRatio {
    pub name: String,
    pub value: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub regime: Regime,
    pub n: usize,
    pub lambda: f64,
    pub threshold: f64,
    pub ratios: Vec<ConditionRatio>,
    pub all_pass: bool,
    pub quantities: KeyQuantities,
}

/// `a / b`, with `0/0 = 0`.
fn ratio(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// Smallness ratios of the approximation conditions at sample size `n`.
pub fn check_approximation_conditions(
    sp: &Spectrum,
    tg: &ZonalTarget,
    lambda: f64,
    n: usize,
    regime: Regime,
    options: ConditionOptions,
) -> Result<ConditionReport, QuantityError> {
    if n < 2 {
        return Err(QuantityError::Invalid(format!("n must be at least 2, got {n}")));
    }
    let kq = key_quantities(sp, tg, lambda)?;
    let nf = n as f64;
    let ln_n = nf.ln();
    let mut values = vec![
        ("n1_ln_n_over_n", kq.n1 * ln_n / nf),
        ("n1_sq_ln_n_over_n_n2", ratio(kq.n1 * kq.n1 * ln_n, nf * kq.n2)),
    ];
    let sqrt_n1 = kq.n1.sqrt();
    let sqrt_m2 = kq.m2.sqrt();
    match regime {
        Regime::General => {
            values.push(("sqrt_n1_m1_over_n_sqrt_m2", ratio(sqrt_n1 * kq.m1_zonal, nf * sqrt_m2)));
        }
        Regime::SubOne => {
            values.push((
                "sqrt_n1_f_lambda_over_n_sqrt_m2",
                ratio(sqrt_n1 * kq.f_lambda_sup, nf * sqrt_m2),
            ));
            let power = nf.powf((1.0 - tg.s) / 2.0 + options.epsilon);
            values.push(("sqrt_n1_n_power_over_n_sqrt_m2", ratio(sqrt_n1 * power, nf * sqrt_m2)));
        }
    }
    let ratios: Vec<ConditionRatio> = values
        .into_iter()
        .map(|(name, value)| ConditionRatio {
            name: name.to_string(),
            value,
            pass: value.is_finite() && value < options.threshold,
        })
        .collect();
    let all_pass = ratios.iter().all(|r| r.pass);
    Ok(ConditionReport { regime, n, lambda, threshold: options.threshold, ratios, all_pass, quantities: kq })
}

/// One quantity's empirical and predicted `log d` slope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantitySlope {
    pub name: String,
    pub values: Vec<f64>,
    pub fit: Option<LineFit>,
    /// `None` where the lemmas make no claim for this `s`.
    pub theoretical: Option<f64>,
}

impl QuantitySlope {
    /// `|empirical − theoretical|`, when both exist.
    pub fn deviation(&self) -> Option<f64> {
        Some((self.fit?.slope - self.theoretical?).abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub s: f64,
    pub l: f64,
    pub p: usize,
    pub d_grid: Vec<usize>,
    pub slopes: Vec<QuantitySlope>,
}

impl ProbeReport {
    pub fn slope(&self, name: &str) -> Option<&QuantitySlope> {
        self.slopes.iter().find(|q| q.name == name)
    }
}

/// Predicted `log d` exponents at `λ = d^{−l}` with `p ≤ l ≤ p + 1`.
pub fn theoretical_exponents(s: f64, l: f64, p: usize) -> [(&'static str, Option<f64>); 5] {
    let p = p as f64;
    let st = s.min(2.0);
    let n1 = l;
    let n2 = p.max(2.0 * l - (p + 1.0));
    let m2 = (-2.0 * l + (2.0 - st) * p).max(-(p + 1.0) * st);
    let q1 = (s >= 1.0).then(|| (-2.0 * l + (2.0 - st) * p).max(-l - (st - 1.0) * (p + 1.0)));
    let q2 = (s < 1.0).then(|| ((1.0 - s) * p).max(2.0 * l - (p + 1.0) * (1.0 + s)));
    [("n1", Some(n1)), ("n2", Some(n2)), ("m2", Some(m2)), ("q1", q1), ("q2", q2)]
}

/// Spectrum used by the probe: default tail tolerance, or a fixed degree for
/// profiles whose tail decays too slowly.
pub fn probe_spectrum(spec: &KernelSpec, d: usize, min_degree: usize) -> Result<Spectrum, SpectrumError> {
    match build_spectrum(spec, d, Truncation::default()) {
        Ok(sp) if sp.k_max() >= min_degree => Ok(sp),
        Ok(_) => build_spectrum(spec, d, Truncation::Degree(min_degree)),
        Err(SpectrumError::Truncation { .. }) => build_spectrum(spec, d, Truncation::Degree(min_degree.max(40))),
        Err(e) => Err(e),
    }
}

/// Empirical `log d` slopes of the key quantities at `λ = d^{−l}`, for a target
/// saturating degrees `0..=p+1`.
pub fn quantity_rate_probe(
    spec: &KernelSpec,
    s: f64,
    l: f64,
    p: usize,
    d_grid: &[usize],
) -> Result<ProbeReport, QuantityError> {
    let pf = p as f64;
    if !(l >= pf && l <= pf + 1.0) {
        return Err(QuantityError::Invalid(format!("need p <= l <= p + 1, got l = {l}, p = {p}")));
    }
    if d_grid.len() < 3 || d_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(QuantityError::Invalid("d_grid must be increasing with at least 3 entries".into()));
    }
    let mut rows = Vec::with_capacity(d_grid.len());
    for &d in d_grid {
        let sp = probe_spectrum(spec, d, p + 2)?;
        let mut target_spec = TargetSpec::new(s, pf + 0.5);
        target_spec.r_cap = f64::INFINITY;
        let tg = build_target(&sp, &target_spec, default_pole(d))?;
        rows.push(key_quantities(&sp, &tg, (d as f64).powf(-l))?);
    }
    let ds: Vec<f64> = d_grid.iter().map(|d| *d as f64).collect();
    let slopes = theoretical_exponents(s, l, p)
        .into_iter()
        .map(|(name, theoretical)| {
            let values: Vec<f64> = rows
                .iter()
                .map(|r| match name {
                    "n1" => r.n1,
                    "n2" => r.n2,
                    "m2" => r.m2,
                    "q1" => r.q1,
                    _ => r.q2,
                })
                .collect();
            let fit = fit_loglog(&ds, &values).ok();
            QuantitySlope { name: name.to_string(), values, fit, theoretical }
        })
        .collect();
    Ok(ProbeReport { s, l, p, d_grid: d_grid.to_vec(), slopes })
}
