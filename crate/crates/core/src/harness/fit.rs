//! Log-log slopes of median risk against `d` or `n`.

use std::collections::BTreeMap;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ExperimentRecord, HarnessError};
use crate::rates::{rate, Family, Method, RateError, RateQuery};
use crate::regression::{fit_loglog, median, FitError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    #[default]
    LogD,
    LogN,
}

impl FromStr for Axis {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "d" | "log_d" => Ok(Axis::LogD),
            "n" | "log_n" => Ok(Axis::LogN),
            other => Err(HarnessError::Config(format!("unknown axis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitOptions {
    pub axis: Axis,
    /// Keep cells whose approximation conditions failed.
    pub include_unverified: bool,
    /// Family used for the theoretical exponent.
    pub family: Family,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
    pub axis: Axis,
    /// KRR exponent on the same axis, when the records share one `(s, γ)`.
    pub theoretical: Option<f64>,
    /// `slope − theoretical`.
    pub deviation: Option<f64>,
    /// Per point, the `λ` exponent whose median risk was smallest.
    pub lambda_exponents: Vec<f64>,
    /// Records dropped for failing the conditions or having no finite risk.
    pub excluded: usize,
}

fn theoretical(records: &[&ExperimentRecord], options: &FitOptions) -> Option<f64> {
    let first = records.first()?;
    if records.iter().any(|r| r.s != first.s || r.gamma != first.gamma) {
        return None;
    }
    match rate(&RateQuery::new(first.s, first.gamma, options.family, Method::Krr)) {
        Ok(a) => Some(match options.axis {
            Axis::LogD => a.d_exponent,
            Axis::LogN => a.n_exponent,
        }),
        Err(RateError::Unproven { .. } | RateError::Invalid(_)) | Err(RateError::Io(_)) => None,
    }
}

/// Fits `log(risk)` against `log d` (or `log n`) using the replicate median in
/// each `(d, λ)` cell. When several `λ` were run at one `d`, the smallest
/// median is used, which traces the best rate over the swept `λ` family.
pub fn fit_rate(records: &[ExperimentRecord], options: &FitOptions) -> Result<SlopeFit, HarnessError> {
    let kept: Vec<&ExperimentRecord> = records
        .iter()
        .filter(|r| r.excess_risk.is_finite() && r.excess_risk > 0.0)
        .filter(|r| options.include_unverified || r.cond_pass)
        .collect();
    let excluded = records.len() - kept.len();
    let mut cells: BTreeMap<(usize, u64), (usize, Vec<f64>)> = BTreeMap::new();
    for r in &kept {
        cells.entry((r.d, r.lambda_exponent.to_bits())).or_insert((r.n, Vec::new())).1.push(r.excess_risk);
    }
    let mut best: BTreeMap<usize, (usize, f64, f64)> = BTreeMap::new();
    for ((d, l_bits), (n, risks)) in cells {
        let m = median(&risks).unwrap_or(f64::NAN);
        let entry = best.entry(d).or_insert((n, f64::INFINITY, f64::from_bits(l_bits)));
        if m < entry.1 {
            *entry = (n, m, f64::from_bits(l_bits));
        }
    }
    if best.len() < 3 {
        return Err(FitError::TooFewPoints { needed: 3, got: best.len() }.into());
    }
    let xs: Vec<f64> = best
        .iter()
        .map(|(d, (n, _, _))| match options.axis {
            Axis::LogD => *d as f64,
            Axis::LogN => *n as f64,
        })
        .collect();
    let ys: Vec<f64> = best.values().map(|(_, m, _)| *m).collect();
    if ys.iter().all(|y| *y == ys[0]) {
        return Err(FitError::DegenerateY.into());
    }
    let line = fit_loglog(&xs, &ys)?;
    let theoretical = theoretical(&kept, options);
    Ok(SlopeFit {
        slope: line.slope,
        intercept: line.intercept,
        r_squared: line.r_squared,
        n_points: line.n_points,
        axis: options.axis,
        theoretical,
        deviation: theoretical.map(|t| line.slope - t),
        lambda_exponents: best.values().map(|(_, _, l)| *l).collect(),
        excluded,
    })
}

/// One fit per distinct `λ` exponent, ascending in the exponent.
pub fn fit_rate_per_lambda(
    records: &[ExperimentRecord],
    options: &FitOptions,
) -> Vec<(f64, Result<SlopeFit, HarnessError>)> {
    let mut groups: BTreeMap<u64, Vec<ExperimentRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.lambda_exponent.to_bits()).or_default().push(r.clone());
    }
    let mut out: Vec<(f64, Result<SlopeFit, HarnessError>)> =
        groups.into_iter().map(|(bits, rows)| (f64::from_bits(bits), fit_rate(&rows, options))).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Parses a results CSV written by [`super::write_records_csv`].
pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<ExperimentRecord>, HarnessError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<Vec<ExperimentRecord>, _>>()
        .map_err(|e| HarnessError::Config(format!("bad results csv: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(d: usize, risk: f64, l: f64, pass: bool) -> ExperimentRecord {
        ExperimentRecord {
            run_id: format!("d{d}"),
            d,
            n: d * d,
            gamma: 2.0,
            s: 2.0,
            lambda: (d as f64).powf(-l),
            lambda_exponent: l,
            seed: 0,
            excess_risk: risk,
            bias2: risk,
            variance: 0.0,
            trunc_bound: 0.0,
            cond_pass: pass,
        }
    }

    #[test]
    fn planted_slope() {
        let rows: Vec<_> = [10, 20, 40, 80].iter().map(|d| record(*d, 1.0 / *d as f64, 1.0, true)).collect();
        let fit = fit_rate(&rows, &FitOptions::default()).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12 && (fit.r_squared - 1.0).abs() < 1e-12);
        // s = 2, γ = 2 sits in the transition segment: d^{-3/2}, i.e. n^{-3/4}.
        assert_eq!(fit.theoretical, Some(-1.5));
        let by_n = fit_rate(&rows, &FitOptions { axis: Axis::LogN, ..Default::default() }).unwrap();
        assert!((by_n.slope + 0.5).abs() < 1e-12);
        assert_eq!(by_n.theoretical, Some(-0.75));
    }

    #[test]
    fn medians_best_lambda_and_filtering() {
        let mut rows = Vec::new();
        for d in [10usize, 20, 40] {
            let base = 1.0 / (d as f64).powi(2);
            for scale in [1.0, 2.0, 100.0] {
                rows.push(record(d, base * scale, 1.0, true));
            }
            rows.push(record(d, 5.0 * base, 0.5, true));
        }
        rows.push(record(80, 1.0, 1.0, false));
        let fit = fit_rate(&rows, &FitOptions::default()).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
        assert_eq!(fit.lambda_exponents, vec![1.0; 3]);
        assert_eq!(fit.excluded, 1);
        let per = fit_rate_per_lambda(&rows, &FitOptions::default());
        assert_eq!(per.len(), 2);
        assert!((per[0].1.as_ref().unwrap().slope + 2.0).abs() < 1e-12);
        let all = FitOptions { include_unverified: true, ..Default::default() };
        assert_eq!(fit_rate(&rows, &all).unwrap().n_points, 4);
    }

    #[test]
    fn degenerate_inputs() {
        let flat: Vec<_> = [10, 20, 40].iter().map(|d| record(*d, 0.5, 1.0, true)).collect();
        assert!(matches!(fit_rate(&flat, &FitOptions::default()), Err(HarnessError::Fit(FitError::DegenerateY))));
        assert!(fit_rate(&flat[..2], &FitOptions::default()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let rows: Vec<_> = [10, 20].iter().map(|d| record(*d, 0.1, 0.75, true)).collect();
        let mut buf = Vec::new();
        super::super::write_records_csv(&mut buf, &rows).unwrap();
        assert_eq!(read_records_csv(buf.as_slice()).unwrap(), rows);
    }
}
