//! Rate curves over `γ` for plotting.

use std::path::Path;

use serde::Serialize;

use super::HarnessError;
use crate::rates::{breakpoints, sample_rate_curve, Family, Method, PeriodKind, BREAKPOINT_TOLERANCE};

/// Smoothness values drawn against `d`.
pub const PANELS_BY_D: [f64; 6] = [0.01, 0.5, 1.0, 1.5, 2.0, 2.5];
/// Smoothness values drawn against `n`.
pub const PANELS_BY_N: [f64; 3] = [0.5, 1.5, 2.5];
/// Grid spacing in `γ` between knots.
pub const FIGURE_STEP: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureRow {
    pub family: Family,
    pub s: f64,
    pub method: Method,
    pub gamma: f64,
    pub d_exponent: f64,
    pub n_exponent: f64,
    pub p: usize,
    pub period_kind: PeriodKind,
    /// `γ` is a segment endpoint.
    pub knot: bool,
}

/// KRR and minimax curves for every `(family, s)` on `(lo, hi]`.
pub fn figure_rows(
    s_list: &[f64],
    gamma_range: (f64, f64),
    step: f64,
    families: &[Family],
) -> Result<Vec<FigureRow>, HarnessError> {
    let mut rows = Vec::new();
    for &family in families {
        for &s in s_list {
            for method in [Method::Krr, Method::Minimax] {
                let knots = breakpoints(s, family, method, gamma_range.1);
                for a in sample_rate_curve(s, gamma_range, step, family, method)? {
                    rows.push(FigureRow {
                        family,
                        s,
                        method,
                        gamma: a.gamma,
                        d_exponent: a.d_exponent,
                        n_exponent: a.n_exponent,
                        p: a.p,
                        period_kind: a.period_kind,
                        knot: knots.iter().any(|k| (k - a.gamma).abs() <= BREAKPOINT_TOLERANCE),
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Writes [`figure_rows`] at the default spacing as CSV.
pub fn emit_figure_data(
    s_list: &[f64],
    gamma_range: (f64, f64),
    families: &[Family],
    out_path: &Path,
) -> Result<usize, HarnessError> {
    let rows = figure_rows(s_list, gamma_range, FIGURE_STEP, families)?;
    let io = |e: csv::Error| HarnessError::Io(e.to_string());
    let mut w = csv::Writer::from_path(out_path).map_err(io)?;
    for r in &rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(rows: &[FigureRow], s: f64, method: Method) -> Vec<(f64, f64)> {
        rows.iter().filter(|r| r.s == s && r.method == method).map(|r| (r.gamma, r.d_exponent)).collect()
    }

    #[test]
    fn panels_have_expected_shapes() {
        let rows = figure_rows(&PANELS_BY_D, (0.0, 6.0), 0.05, &[Family::GenericInner]).unwrap();
        assert_eq!(curve(&rows, 2.0, Method::Krr), curve(&rows, 2.5, Method::Krr));
        let krr = curve(&rows, 0.5, Method::Krr);
        let minimax = curve(&rows, 0.5, Method::Minimax);
        assert!(!krr.is_empty());
        for (g, e) in &krr {
            let m = minimax.iter().find(|(h, _)| (h - g).abs() <= BREAKPOINT_TOLERANCE).unwrap();
            assert!((m.1 - e).abs() < 1e-12);
        }
        // One full period p = 1 for s = 1.5 spans (2.5, 5].
        let kinds: Vec<PeriodKind> = rows
            .iter()
            .filter(|r| r.s == 1.5 && r.method == Method::Krr && r.gamma > 2.5 && r.gamma <= 5.0)
            .map(|r| r.period_kind)
            .collect();
        for k in [PeriodKind::VarianceDominated, PeriodKind::Transition, PeriodKind::BiasDominated] {
            assert!(kinds.contains(&k));
        }
        assert!(rows.iter().any(|r| r.knot && r.s == 1.5 && (r.gamma - 2.5).abs() < 1e-12));
    }

    #[test]
    fn writes_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fig.csv");
        let count = emit_figure_data(&PANELS_BY_N, (0.0, 3.0), &[Family::GenericInner, Family::NtkRelu2], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), count + 1);
        assert!(text.starts_with("family,s,method,gamma,d_exponent,n_exponent,p,period_kind,knot\n"));
        assert!(emit_figure_data(&[1.0], (0.0, 1.0), &[Family::GenericInner], &dir.path().join("no/such.csv")).is_err());
    }
}
