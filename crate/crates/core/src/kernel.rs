//! Inner-product kernel profiles.
//!
//! A kernel on the sphere of the form `k(x, y) = Φ(⟨x, y⟩)` is fully described
//! by its profile `Φ` on `[-1, 1]`. Two families are supported: power series
//! `Φ(t) = Σ a_j t^j` with non-negative coefficients, and the neural tangent
//! kernel of a two-layer ReLU network.
//!
//! Profiles are named in configuration files as `poly:[a0,a1,...]`, `exp`
//! (`a_j = 1/j!`) or `ntk-relu2`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use thiserror::Error;

/// Slack allowed on `|t| ≤ 1` before an argument is rejected.
pub const DOMAIN_TOLERANCE: f64 = 1e-12;

/// Generated series stop once `a_j < SERIES_CUTOFF * Φ(1)`.
pub const SERIES_CUTOFF: f64 = 1e-16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("argument {0} outside [-1, 1]")]
    Domain(f64),
    #[error("cannot parse kernel profile `{0}`; expected poly:[a0,a1,...], exp or ntk-relu2")]
    Parse(String),
    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),
    #[error("coefficient {index} did not stabilize: {first} vs {second}")]
    Convergence { index: usize, first: f64, second: f64 },
}

/// A kernel profile `Φ`. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// `Φ(t) = Σ a_j t^j` with the coefficients stored explicitly.
    PowerSeries {
        coefficients: Vec<f64>,
        /// Set for generated profiles such as `exp`.
        label: Option<String>,
    },
    /// Two-layer ReLU NTK, normalized so that `Φ(1) = 1`.
    NtkRelu2,
}

impl KernelSpec {
    pub fn power_series(coefficients: Vec<f64>) -> Result<Self, KernelError> {
        if coefficients.is_empty() {
            return Err(KernelError::InvalidCoefficients("no coefficients".into()));
        }
        if let Some(bad) = coefficients.iter().find(|a| !a.is_finite() || **a < 0.0) {
            return Err(KernelError::InvalidCoefficients(format!(
                "coefficient {bad} is negative or not finite"
            )));
        }
        if coefficients.iter().all(|a| *a == 0.0) {
            return Err(KernelError::InvalidCoefficients("all coefficients are zero".into()));
        }
        Ok(KernelSpec::PowerSeries { coefficients, label: None })
    }

    /// `Φ(t) = e^t`, truncated where the coefficients drop below double precision.
    pub fn exponential() -> Self {
        let limit = SERIES_CUTOFF * std::f64::consts::E;
        let mut coefficients = Vec::new();
        let mut a = 1.0;
        let mut j = 0usize;
        while a >= limit {
            coefficients.push(a);
            j += 1;
            a /= j as f64;
        }
        KernelSpec::PowerSeries { coefficients, label: Some("exp".into()) }
    }

    pub fn ntk_relu2() -> Self {
        KernelSpec::NtkRelu2
    }

    /// Stored coefficients for power-series profiles.
    pub fn power_coefficients(&self) -> Option<&[f64]> {
        match self {
            KernelSpec::PowerSeries { coefficients, .. } => Some(coefficients),
            KernelSpec::NtkRelu2 => None,
        }
    }

    /// `κ² = Φ(1) = sup_x k(x, x)`.
    pub fn sup_bound(&self) -> f64 {
        self.phi(1.0)
    }

    /// True when every stored coefficient is strictly positive, or for the NTK
    /// when the parity pattern holds. Profiles such as `poly:[0,1]` are valid
    /// kernels but fall outside the positive-coefficient setting of the rate theory.
    pub fn has_positive_coefficients(&self) -> bool {
        match self {
            KernelSpec::PowerSeries { coefficients, .. } => coefficients.iter().all(|a| *a > 0.0),
            KernelSpec::NtkRelu2 => true,
        }
    }

    /// Evaluates `Φ(t)`, rejecting arguments outside `[-1, 1]`.
    pub fn eval(&self, t: f64) -> Result<f64, KernelError> {
        if !t.is_finite() || t.abs() > 1.0 + DOMAIN_TOLERANCE {
            return Err(KernelError::Domain(t));
        }
        Ok(self.phi(t))
    }

    /// Evaluates `Φ` at `t` clamped into `[-1, 1]`. Used on Gram matrices where
    /// roundoff can push inner products of unit vectors just past ±1.
    pub fn phi(&self, t: f64) -> f64 {
        let t = t.clamp(-1.0, 1.0);
        match self {
            KernelSpec::PowerSeries { coefficients, .. } => {
                coefficients.iter().rev().fold(0.0, |acc, a| acc * t + a)
            }
            KernelSpec::NtkRelu2 => ntk_phi(t),
        }
    }

    /// Taylor coefficients of `Φ` at 0 for degrees `0..=j_max`.
    pub fn series_coefficients(&self, j_max: usize) -> Result<Vec<f64>, KernelError> {
        match self {
            KernelSpec::PowerSeries { coefficients, .. } => Ok((0..=j_max)
                .map(|j| coefficients.get(j).copied().unwrap_or(0.0))
                .collect()),
            KernelSpec::NtkRelu2 => contour_coefficients(ntk_phi_complex, j_max),
        }
    }

    /// Canonical name, parseable by [`FromStr`].
    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::PowerSeries { label: Some(label), .. } => f.write_str(label),
            KernelSpec::PowerSeries { coefficients, label: None } => {
                let parts: Vec<String> = coefficients.iter().map(|a| format!("{a}")).collect();
                write!(f, "poly:[{}]", parts.join(","))
            }
            KernelSpec::NtkRelu2 => f.write_str("ntk-relu2"),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "exp" => return Ok(KernelSpec::exponential()),
            "ntk-relu2" => return Ok(KernelSpec::NtkRelu2),
            _ => {}
        }
        let body = s
            .strip_prefix("poly:")
            .and_then(|rest| rest.trim().strip_prefix('['))
            .and_then(|rest| rest.strip_suffix(']'))
            .ok_or_else(|| KernelError::Parse(s.to_string()))?;
        let coefficients = body
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| KernelError::Parse(s.to_string()))?;
        KernelSpec::power_series(coefficients)
    }
}

/// `Φ_NT(t) = ½ [ t κ0(t) + κ1(t) ]` with the arc-cosine kernels
/// `κ0(t) = (π − arccos t)/π` and `κ1(t) = (t(π − arccos t) + √(1−t²))/π`,
/// written with `arcsin` so that it extends to the complex unit disk.
fn ntk_phi(t: f64) -> f64 {
    0.5 * (t + (2.0 * t * t.asin() + (1.0 - t * t).max(0.0).sqrt()) / PI)
}

fn ntk_phi_complex(z: Complex64) -> Complex64 {
    let one = Complex64::new(1.0, 0.0);
    0.5 * (z + (2.0 * z * z.asin() + (one - z * z).sqrt()) / PI)
}

const CONTOUR_RADIUS: f64 = 0.9;
const CONTOUR_POINTS: [usize; 2] = [256, 512];
const CONTOUR_TOLERANCE: f64 = 1e-10;

/// Taylor coefficients of a function analytic in the open unit disk, from the
/// trapezoidal rule for the Cauchy integral on `|z| = CONTOUR_RADIUS`. Two
/// resolutions must agree to `CONTOUR_TOLERANCE`; coefficients below that
/// resolution are reported as exact zeros.
fn contour_coefficients<F>(f: F, j_max: usize) -> Result<Vec<f64>, KernelError>
where
    F: Fn(Complex64) -> Complex64,
{
    let estimate = |m: usize| -> Vec<f64> {
        let samples: Vec<Complex64> = (0..m)
            .map(|i| f(Complex64::from_polar(CONTOUR_RADIUS, 2.0 * PI * i as f64 / m as f64)))
            .collect();
        (0..=j_max)
            .map(|j| {
                let sum: Complex64 = samples
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * Complex64::from_polar(1.0, -2.0 * PI * (i * j % m) as f64 / m as f64))
                    .sum();
                sum.re / m as f64 / CONTOUR_RADIUS.powi(j as i32)
            })
            .collect()
    };
    let coarse = estimate(CONTOUR_POINTS[0]);
    let fine = estimate(CONTOUR_POINTS[1]);
    let mut out = Vec::with_capacity(j_max + 1);
    for (j, (a, b)) in coarse.iter().zip(&fine).enumerate() {
        if (a - b).abs() > CONTOUR_TOLERANCE * b.abs().max(1.0) {
            return Err(KernelError::Convergence { index: j, first: *a, second: *b });
        }
        out.push(if b.abs() < CONTOUR_TOLERANCE { 0.0 } else { *b });
    }
    Ok(out)
}
