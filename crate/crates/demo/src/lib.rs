//! Browser bindings: rate curves, sphere spectra and key quantities as JSON.

use ldkrr::kernel::KernelSpec;
use ldkrr::quantities::{build_target, default_pole, key_quantities, probe_spectrum, TargetSpec};
use ldkrr::rates::{sample_rate_curve, saturation_gap, Family, Method};
use ldkrr::spectrum::{build_spectrum, Truncation};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_DIMENSION: usize = 2000;
const MAX_POINTS: usize = 400;

#[derive(Serialize)]
struct CurvePoint {
    gamma: f64,
    d_exponent: f64,
    n_exponent: f64,
    lambda_exponent: Option<f64>,
    p: usize,
    period_kind: String,
}

#[derive(Serialize)]
struct Curves {
    s: f64,
    family: Family,
    krr: Vec<CurvePoint>,
    minimax: Vec<CurvePoint>,
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

fn curve(s: f64, gamma_max: f64, step: f64, family: Family, method: Method) -> Result<Vec<CurvePoint>, String> {
    let rows = sample_rate_curve(s, (0.0, gamma_max), step, family, method).map_err(|e| e.to_string())?;
    Ok(rows
        .into_iter()
        .map(|a| CurvePoint {
            gamma: a.gamma,
            d_exponent: a.d_exponent,
            n_exponent: a.n_exponent,
            lambda_exponent: a.lambda_exponent,
            p: a.p,
            period_kind: a.period_kind.to_string(),
        })
        .collect())
}

/// KRR and minimax exponent curves on `(0, gamma_max]`.
pub fn rate_curves_json(s: f64, gamma_max: f64, family: &str) -> Result<String, String> {
    let family: Family = family.parse().map_err(|e: ldkrr::rates::RateError| e.to_string())?;
    if !(gamma_max > 0.0 && gamma_max <= 20.0) {
        return Err(format!("gamma_max must lie in (0, 20], got {gamma_max}"));
    }
    let step = gamma_max / MAX_POINTS as f64;
    let curves = Curves {
        s,
        family,
        krr: curve(s, gamma_max, step, family, Method::Krr)?,
        minimax: curve(s, gamma_max, step, family, Method::Minimax)?,
    };
    to_json(&curves)
}

/// Difference between the KRR and minimax exponents at one point.
pub fn saturation_gap_json(s: f64, gamma: f64, family: &str) -> Result<String, String> {
    let family: Family = family.parse().map_err(|e: ldkrr::rates::RateError| e.to_string())?;
    to_json(&saturation_gap(s, gamma, family).map_err(|e| e.to_string())?)
}

fn check_dimension(d: usize) -> Result<(), String> {
    if (2..=MAX_DIMENSION).contains(&d) {
        Ok(())
    } else {
        Err(format!("d must lie in [2, {MAX_DIMENSION}], got {d}"))
    }
}

/// Eigenvalues and multiplicities up to `degree`.
pub fn spectrum_json(profile: &str, d: usize, degree: usize) -> Result<String, String> {
    check_dimension(d)?;
    let spec: KernelSpec = profile.parse().map_err(|e: ldkrr::KernelError| e.to_string())?;
    let sp = build_spectrum(&spec, d, Truncation::Degree(degree.min(200))).map_err(|e| e.to_string())?;
    to_json(&sp.to_json())
}

/// Key quantities along `λ = d^{−l}` for `l` evenly spaced in `[l_min, l_max]`.
pub fn key_quantities_json(
    profile: &str,
    d: usize,
    s: f64,
    gamma: f64,
    l_min: f64,
    l_max: f64,
    points: usize,
) -> Result<String, String> {
    check_dimension(d)?;
    if !(2..=MAX_POINTS).contains(&points) || !(l_max > l_min) {
        return Err("need 2..=400 points and l_max > l_min".into());
    }
    let spec: KernelSpec = profile.parse().map_err(|e: ldkrr::KernelError| e.to_string())?;
    let sp = probe_spectrum(&spec, d, gamma.max(0.0).floor() as usize + 2).map_err(|e| e.to_string())?;
    let mut target = TargetSpec::new(s, gamma);
    target.r_cap = f64::INFINITY;
    let tg = build_target(&sp, &target, default_pole(d)).map_err(|e| e.to_string())?;
    let rows = (0..points)
        .map(|i| {
            let l = l_min + (l_max - l_min) * i as f64 / (points - 1) as f64;
            key_quantities(&sp, &tg, (d as f64).powf(-l)).map(|q| (l, q))
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let rows: Vec<_> = rows
        .into_iter()
        .map(|(l, q)| serde_json::json!({ "l": l, "quantities": q }))
        .collect();
    to_json(&rows)
}

#[wasm_bindgen]
pub fn rate_curves(s: f64, gamma_max: f64, family: &str) -> Result<String, JsError> {
    rate_curves_json(s, gamma_max, family).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn gap(s: f64, gamma: f64, family: &str) -> Result<String, JsError> {
    saturation_gap_json(s, gamma, family).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn spectrum(profile: &str, d: usize, degree: usize) -> Result<String, JsError> {
    spectrum_json(profile, d, degree).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn quantities(
    profile: &str,
    d: usize,
    s: f64,
    gamma: f64,
    l_min: f64,
    l_max: f64,
    points: usize,
) -> Result<String, JsError> {
    key_quantities_json(profile, d, s, gamma, l_min, l_max, points).map_err(|e| JsError::new(&e))
}
