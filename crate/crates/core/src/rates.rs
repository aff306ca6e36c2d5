//! Piecewise rate exponents for KRR and the minimax lower bound when
//! `n ≍ d^γ`.
//!
//! The `γ` axis splits into periods indexed by `p`, each running from
//! `p + p·s̃` to `p′ + p′·s̃`. For generic inner-product kernels `p′ = p + 1`.
//! For the two-layer ReLU NTK the odd levels above 1 vanish, so `p` ranges
//! over `{0, 1, 2, 4, 6, …}` and `p′` is the next element of that set.
//! Every period is cut into [`Segment`]s with a closed-form exponent; segment
//! intervals are open on the left and closed on the right.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A `γ` within this distance of a breakpoint is treated as the breakpoint.
pub const BREAKPOINT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("invalid rate query: {0}")]
    Invalid(String),
    #[error("KRR rates for s = {s} are only established for gamma > {bound}; got gamma = {gamma}")]
    Unproven { s: f64, gamma: f64, bound: f64 },
    #[error("csv output failed: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[default]
    GenericInner,
    NtkRelu2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Krr,
    Minimax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodKind {
    VarianceDominated,
    Transition,
    BiasDominated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogFactor {
    None,
    Ln2,
}

macro_rules! string_enum {
    ($ty:ty { $($variant:path => $name:literal $(| $alias:literal)*),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }
        impl FromStr for $ty {
            type Err = RateError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim() {
                    $($name $(| $alias)* => Ok($variant),)+
                    other => Err(RateError::Invalid(format!("unknown value `{other}`"))),
                }
            }
        }
    };
}

string_enum!(Family { Family::GenericInner => "generic_inner" | "generic", Family::NtkRelu2 => "ntk_relu2" | "ntk" | "ntk-relu2" });
string_enum!(Method { Method::Krr => "krr", Method::Minimax => "minimax" });
string_enum!(PeriodKind {
    PeriodKind::VarianceDominated => "variance_dominated",
    PeriodKind::Transition => "transition",
    PeriodKind::BiasDominated => "bias_dominated",
});
string_enum!(LogFactor { LogFactor::None => "none", LogFactor::Ln2 => "ln2" });

impl Family {
    /// The period following `p`.
    pub fn next_period(self, p: usize) -> usize {
        match self {
            Family::GenericInner => p + 1,
            Family::NtkRelu2 if p <= 1 => p + 1,
            Family::NtkRelu2 => p + 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateQuery {
    pub s: f64,
    pub gamma: f64,
    pub family: Family,
    pub method: Method,
}

impl RateQuery {
    pub fn new(s: f64, gamma: f64, family: Family, method: Method) -> Self {
        RateQuery { s, gamma, family, method }
    }
}

/// Closed-form exponent on one segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Formula {
    /// `−γ + p`.
    Variance,
    /// `−(γ + p′ − 2p + p s̃)/2`.
    Transition,
    /// Constant plateau.
    Plateau(f64),
}

/// Regularization exponent `l` in `λ = d^{−l}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LambdaRule {
    /// `(γ + p − p s̃)/2`.
    Variance,
    /// `(γ + p′ + 2p − p s̃)/4`.
    Transition,
    /// `(γ + p′(1 − s̃))/2`.
    Bias,
    /// Constant `p + (p′ − p)s/2`.
    Fixed(f64),
    /// No regularization parameter (minimax bound).
    None,
}

/// One piece of a rate curve, valid on `(lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Segment {
    pub lo: f64,
    pub hi: f64,
    pub p: usize,
    pub p_next: usize,
    /// `s̃ = min(s, 2)` for KRR with `s ≥ 1`, otherwise `s`.
    pub s_eff: f64,
    pub kind: PeriodKind,
    pub formula: Formula,
    pub lambda: LambdaRule,
}

impl Segment {
    pub fn contains(&self, gamma: f64) -> bool {
        gamma > self.lo + BREAKPOINT_TOLERANCE && gamma <= self.hi + BREAKPOINT_TOLERANCE
    }

    pub fn d_exponent(&self, gamma: f64) -> f64 {
        let (p, pn, s) = (self.p as f64, self.p_next as f64, self.s_eff);
        match self.formula {
            Formula::Variance => -gamma + p,
            Formula::Transition => -(gamma + pn - 2.0 * p + p * s) / 2.0,
            Formula::Plateau(v) => v,
        }
    }

    pub fn lambda_exponent(&self, gamma: f64) -> Option<f64> {
        let (p, pn, s) = (self.p as f64, self.p_next as f64, self.s_eff);
        match self.lambda {
            LambdaRule::Variance => Some((gamma + p - p * s) / 2.0),
            LambdaRule::Transition => Some((gamma + pn + 2.0 * p - p * s) / 4.0),
            LambdaRule::Bias => Some((gamma + pn * (1.0 - s)) / 2.0),
            LambdaRule::Fixed(l) => Some(l),
            LambdaRule::None => None,
        }
    }
}

/// Full answer for one `(s, γ)` query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateAnswer {
    pub s: f64,
    pub gamma: f64,
    pub family: Family,
    pub method: Method,
    pub p: usize,
    pub period_kind: PeriodKind,
    /// Error `≍ d^{d_exponent}`, log factors and `ε` excluded.
    pub d_exponent: f64,
    /// `d_exponent / γ`.
    pub n_exponent: f64,
    /// `l` with `λ = d^{−l}`; KRR only.
    pub lambda_exponent: Option<f64>,
    /// The recommended `λ` carries an extra `ln d` factor.
    pub lambda_log_correction: bool,
    pub log_factor: LogFactor,
    /// The minimax exponent holds up to an arbitrarily small `ε`.
    pub epsilon_slack: bool,
}

/// Segments of period `p` for `(s, method)`, skipping empty intervals.
fn period_segments(p: usize, p_next: usize, s: f64, method: Method) -> Vec<Segment> {
    let (pf, pn) = (p as f64, p_next as f64);
    let mut out = Vec::with_capacity(3);
    let mut push = |lo: f64, hi: f64, s_eff: f64, kind, formula, lambda| {
        if hi > lo {
            out.push(Segment { lo, hi, p, p_next, s_eff, kind, formula, lambda });
        }
    };
    match method {
        Method::Krr if s >= 1.0 => {
            let st = s.min(2.0);
            let a = pf + pf * st;
            let b = pn + pf * st;
            let c = 2.0 * pn * st - pn + 2.0 * pf - pf * st;
            let e = pn + pn * st;
            push(a, b, st, PeriodKind::VarianceDominated, Formula::Variance, LambdaRule::Variance);
            push(b, c, st, PeriodKind::Transition, Formula::Transition, LambdaRule::Transition);
            push(c, e, st, PeriodKind::BiasDominated, Formula::Plateau(-pn * st), LambdaRule::Bias);
        }
        Method::Krr => {
            let a = pf + pf * s;
            let b = pf + pn * s;
            let e = pn + pn * s;
            let l = pf + (pn - pf) * s / 2.0;
            push(a, b, s, PeriodKind::VarianceDominated, Formula::Variance, LambdaRule::Variance);
            push(b, e, s, PeriodKind::BiasDominated, Formula::Plateau(-pn * s), LambdaRule::Fixed(l));
        }
        Method::Minimax => {
            let a = pf + pf * s;
            let b = pf + pn * s;
            let e = pn + pn * s;
            push(a, b, s, PeriodKind::VarianceDominated, Formula::Variance, LambdaRule::None);
            push(b, e, s, PeriodKind::BiasDominated, Formula::Plateau(-pn * s), LambdaRule::None);
        }
    }
    out
}

fn validate(s: f64, gamma: f64) -> Result<(), RateError> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(RateError::Invalid(format!("s must be positive, got {s}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(RateError::Invalid(format!("gamma must be positive, got {gamma}")));
    }
    Ok(())
}

/// Lower end of the proven KRR region for small `s`, if any.
pub fn unproven_bound(s: f64) -> Option<f64> {
    (s <= 0.5).then(|| 3.0 * s / (2.0 * (s + 1.0)))
}

/// All segments whose interval starts below `gamma_max`, in increasing order.
pub fn segments(s: f64, family: Family, method: Method, gamma_max: f64) -> Vec<Segment> {
    segments_with(s, method, gamma_max, |p| family.next_period(p))
}

fn segments_with(
    s: f64,
    method: Method,
    gamma_max: f64,
    next: impl Fn(usize) -> usize,
) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut p = 0usize;
    loop {
        let p_next = next(p);
        let segs = period_segments(p, p_next, s, method);
        if segs.first().is_none_or(|seg| seg.lo >= gamma_max) {
            break;
        }
        out.extend(segs);
        p = p_next;
    }
    out
}

/// Segment containing `gamma` (breakpoints go to the left segment).
pub fn locate(s: f64, gamma: f64, family: Family, method: Method) -> Result<Segment, RateError> {
    validate(s, gamma)?;
    segments(s, family, method, gamma + 1.0)
        .into_iter()
        .find(|seg| seg.contains(gamma))
        .ok_or_else(|| RateError::Invalid(format!("no segment contains gamma = {gamma}")))
}

fn answer(q: &RateQuery, seg: &Segment) -> RateAnswer {
    let d_exponent = seg.d_exponent(q.gamma);
    let krr = q.method == Method::Krr;
    let variance = seg.kind == PeriodKind::VarianceDominated;
    RateAnswer {
        s: q.s,
        gamma: q.gamma,
        family: q.family,
        method: q.method,
        p: seg.p,
        period_kind: seg.kind,
        d_exponent,
        n_exponent: d_exponent / q.gamma,
        lambda_exponent: seg.lambda_exponent(q.gamma),
        lambda_log_correction: krr && variance && seg.p == 0,
        log_factor: if krr && variance && seg.p == 0 { LogFactor::Ln2 } else { LogFactor::None },
        epsilon_slack: !krr && variance,
    }
}

/// KRR rate at the balanced regularization.
pub fn krr_rate(q: &RateQuery) -> Result<RateAnswer, RateError> {
    if q.method != Method::Krr {
        return Err(RateError::Invalid("krr_rate needs method = krr".into()));
    }
    validate(q.s, q.gamma)?;
    if let Some(bound) = unproven_bound(q.s) {
        if q.gamma <= bound {
            return Err(RateError::Unproven { s: q.s, gamma: q.gamma, bound });
        }
    }
    Ok(answer(q, &locate(q.s, q.gamma, q.family, q.method)?))
}

/// Minimax lower-bound exponent (with `ε = 0`).
pub fn minimax_rate(q: &RateQuery) -> Result<RateAnswer, RateError> {
    if q.method != Method::Minimax {
        return Err(RateError::Invalid("minimax_rate needs method = minimax".into()));
    }
    Ok(answer(q, &locate(q.s, q.gamma, q.family, q.method)?))
}

/// Dispatches on `q.method`.
pub fn rate(q: &RateQuery) -> Result<RateAnswer, RateError> {
    match q.method {
        Method::Krr => krr_rate(q),
        Method::Minimax => minimax_rate(q),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapReport {
    pub krr: RateAnswer,
    pub minimax: RateAnswer,
    /// `krr.d_exponent − minimax.d_exponent`, with `ε = 0`.
    pub gap: f64,
}

/// How far KRR falls short of the minimax exponent.
pub fn saturation_gap(s: f64, gamma: f64, family: Family) -> Result<GapReport, RateError> {
    let krr = krr_rate(&RateQuery::new(s, gamma, family, Method::Krr))?;
    let minimax = minimax_rate(&RateQuery::new(s, gamma, family, Method::Minimax))?;
    Ok(GapReport { krr, minimax, gap: krr.d_exponent - minimax.d_exponent })
}

/// Segment endpoints in `(0, gamma_max]`.
pub fn breakpoints(s: f64, family: Family, method: Method, gamma_max: f64) -> Vec<f64> {
    segments(s, family, method, gamma_max)
        .iter()
        .map(|seg| seg.hi)
        .filter(|g| *g <= gamma_max + BREAKPOINT_TOLERANCE)
        .collect()
}

/// Left and right limits of the exponent at one breakpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Junction {
    pub gamma: f64,
    pub left: f64,
    pub right: f64,
}

/// Exponent limits at every interior breakpoint below `gamma_max`.
pub fn junctions(s: f64, family: Family, method: Method, gamma_max: f64) -> Vec<Junction> {
    segments(s, family, method, gamma_max)
        .windows(2)
        .map(|w| Junction { gamma: w[0].hi, left: w[0].d_exponent(w[0].hi), right: w[1].d_exponent(w[1].lo) })
        .collect()
}

/// Samples `(lo, hi]` every `step`, plus every breakpoint as an explicit knot.
/// Points inside the unproven KRR region are omitted.
pub fn sample_rate_curve(
    s: f64,
    gamma_range: (f64, f64),
    step: f64,
    family: Family,
    method: Method,
) -> Result<Vec<RateAnswer>, RateError> {
    let (lo, hi) = gamma_range;
    if !(step > 0.0) || !(hi > lo) || lo < 0.0 {
        return Err(RateError::Invalid(format!("bad range ({lo}, {hi}] with step {step}")));
    }
    validate(s, hi)?;
    let mut gammas: Vec<f64> = Vec::new();
    let count = ((hi - lo) / step).floor() as usize;
    gammas.extend((1..=count).map(|i| lo + step * i as f64));
    gammas.extend(breakpoints(s, family, method, hi).into_iter().filter(|g| *g > lo));
    gammas.sort_by(|a, b| a.total_cmp(b));
    gammas.dedup_by(|a, b| (*a - *b).abs() <= BREAKPOINT_TOLERANCE);
    let mut out = Vec::with_capacity(gammas.len());
    for gamma in gammas {
        match rate(&RateQuery::new(s, gamma, family, method)) {
            Ok(a) => out.push(a),
            Err(RateError::Unproven { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Writes curve rows with header
/// `s,gamma,method,family,p,period_kind,d_exponent,n_exponent,lambda_exponent,log_factor,epsilon_slack`.
pub fn write_curve_csv<W: Write>(out: W, rows: &[RateAnswer]) -> Result<(), RateError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| RateError::Io(e.to_string());
    w.write_record([
        "s", "gamma", "method", "family", "p", "period_kind", "d_exponent", "n_exponent",
        "lambda_exponent", "log_factor", "epsilon_slack",
    ])
    .map_err(io)?;
    for r in rows {
        w.write_record([
            r.s.to_string(),
            r.gamma.to_string(),
            r.method.to_string(),
            r.family.to_string(),
            r.p.to_string(),
            r.period_kind.to_string(),
            r.d_exponent.to_string(),
            r.n_exponent.to_string(),
            r.lambda_exponent.map(|l| l.to_string()).unwrap_or_default(),
            r.log_factor.to_string(),
            r.epsilon_slack.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| RateError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const G: Family = Family::GenericInner;

    fn krr(s: f64, gamma: f64) -> RateAnswer {
        krr_rate(&RateQuery::new(s, gamma, G, Method::Krr)).unwrap()
    }

    fn minimax(s: f64, gamma: f64) -> RateAnswer {
        minimax_rate(&RateQuery::new(s, gamma, G, Method::Minimax)).unwrap()
    }

    #[test]
    fn transition_case_anchor() {
        let a = krr(1.5, 2.0);
        assert_eq!((a.p, a.period_kind), (0, PeriodKind::Transition));
        assert!((a.d_exponent + 1.5).abs() < 1e-15);
        assert!((a.n_exponent + 0.75).abs() < 1e-15);
        assert!((a.lambda_exponent.unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn variance_case_carries_log_factor() {
        let a = krr(2.0, 1.0);
        assert_eq!(a.period_kind, PeriodKind::VarianceDominated);
        assert_eq!(a.log_factor, LogFactor::Ln2);
        assert!(a.lambda_log_correction);
        assert!((a.n_exponent + 1.0).abs() < 1e-15);
        assert_eq!(krr(2.0, 6.5).log_factor, LogFactor::None);
    }

    #[test]
    fn sub_one_membership() {
        // (p + ps, p + ps + s] with p = 1, s = 0.75 is (1.75, 2.5].
        let a = krr(0.75, 2.0);
        assert_eq!((a.p, a.period_kind), (1, PeriodKind::VarianceDominated));
        assert!((a.d_exponent + 1.0).abs() < 1e-15);
        assert!((a.lambda_exponent.unwrap() - (2.0 + 1.0 - 0.75) / 2.0).abs() < 1e-15);
        let b = krr(0.75, 1.2);
        assert_eq!((b.p, b.period_kind), (0, PeriodKind::BiasDominated));
        assert!((b.d_exponent + 0.75).abs() < 1e-15);
        assert!((b.lambda_exponent.unwrap() - 0.375).abs() < 1e-15);
    }

    #[test]
    fn plateau_when_s_is_one() {
        let a = krr(1.0, 1.5);
        assert_eq!((a.p, a.period_kind), (0, PeriodKind::BiasDominated));
        assert!((a.d_exponent + 1.0).abs() < 1e-15);
        assert!((a.n_exponent + 2.0 / 3.0).abs() < 1e-15);
        assert!((a.lambda_exponent.unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn minimax_anchors() {
        assert!((minimax(1.0, 1.5).d_exponent + 1.0).abs() < 1e-15);
        let a = minimax(0.5, 0.4);
        assert!((a.d_exponent + 0.4).abs() < 1e-15 && a.epsilon_slack);
        assert!(a.lambda_exponent.is_none());
        let b = minimax(3.0, 3.5);
        assert_eq!(b.period_kind, PeriodKind::BiasDominated);
        assert!((b.d_exponent + 3.0).abs() < 1e-15);
    }

    #[test]
    fn gaps() {
        assert_eq!(saturation_gap(1.0, 1.5, G).unwrap().gap, 0.0);
        assert!((saturation_gap(2.0, 2.0, G).unwrap().gap - 0.5).abs() < 1e-15);
        // γ = 0.4 is inside the unproven KRR region for s = 0.5.
        assert!(matches!(saturation_gap(0.5, 0.4, G), Err(RateError::Unproven { .. })));
        assert!(saturation_gap(0.5, 0.6, G).unwrap().gap.abs() < 1e-15);
    }

    #[test]
    fn breakpoint_goes_left() {
        // γ = 1 closes the variance segment for s = 1.
        let a = krr(1.0, 1.0);
        assert_eq!(a.period_kind, PeriodKind::VarianceDominated);
        assert_eq!(krr(1.0, 1.0 + 1e-9).period_kind, PeriodKind::BiasDominated);
    }

    #[test]
    fn unproven_region() {
        let err = krr_rate(&RateQuery::new(0.5, 0.4, G, Method::Krr)).unwrap_err();
        assert!(matches!(err, RateError::Unproven { .. }));
        assert!(krr_rate(&RateQuery::new(0.5, 0.6, G, Method::Krr)).is_ok());
        assert!(krr_rate(&RateQuery::new(-1.0, 0.6, G, Method::Krr)).is_err());
        assert!(krr_rate(&RateQuery::new(1.0, 0.6, G, Method::Minimax)).is_err());
    }

    #[test]
    fn period_lengths_between_one_and_two() {
        for s in [1.2, 1.5, 1.8] {
            let segs = segments(s, G, Method::Krr, 20.0);
            for w in segs.chunks(3).take(4) {
                assert!((w[0].hi - w[0].lo - 1.0).abs() < 1e-12);
                assert!((w[1].hi - w[1].lo - (2.0 * s - 2.0)).abs() < 1e-12);
                assert!((w[2].hi - w[2].lo - (2.0 - s)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ntk_periods() {
        let segs = segments(1.5, Family::NtkRelu2, Method::Krr, 30.0);
        let ps: Vec<usize> = segs.iter().map(|s| s.p).collect();
        assert!(ps.starts_with(&[0, 0, 0, 1, 1, 1, 2, 2, 2, 4]));
        // At s = 1, period p = 2 with p' = 4 spans (4, 8]: variance on (4, 6], plateau −4 on (6, 8].
        let a = krr_rate(&RateQuery::new(1.0, 4.5, Family::NtkRelu2, Method::Krr)).unwrap();
        assert_eq!((a.p, a.period_kind), (2, PeriodKind::VarianceDominated));
        assert!((a.d_exponent + 2.5).abs() < 1e-15);
        let b = krr_rate(&RateQuery::new(1.0, 7.0, Family::NtkRelu2, Method::Krr)).unwrap();
        assert_eq!((b.p, b.period_kind), (2, PeriodKind::BiasDominated));
        assert!((b.d_exponent + 4.0).abs() < 1e-15);
    }

    #[test]
    fn generic_map_reproduces_generic_family() {
        for s in [0.4, 0.9, 1.5, 2.5] {
            for method in [Method::Krr, Method::Minimax] {
                let ntk_with_generic_map = segments_with(s, method, 15.0, |p| p + 1);
                assert_eq!(ntk_with_generic_map, segments(s, G, method, 15.0));
            }
        }
    }

    #[test]
    fn curve_contains_breakpoints() {
        let curve = sample_rate_curve(1.0, (0.0, 6.0), 0.25, G, Method::Krr).unwrap();
        for g in 1..=6 {
            assert!(curve.iter().any(|a| a.gamma == g as f64));
        }
        // Plateau −(p+1) on (2p+1, 2p+2].
        for a in &curve {
            if a.period_kind == PeriodKind::BiasDominated {
                assert_eq!(a.d_exponent, -(a.p as f64 + 1.0));
            }
        }
    }

    #[test]
    fn curve_csv_header() {
        let rows = sample_rate_curve(1.5, (0.0, 2.0), 1.0, G, Method::Minimax).unwrap();
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "s,gamma,method,family,p,period_kind,d_exponent,n_exponent,lambda_exponent,log_factor,epsilon_slack\n"
        ));
        assert!(text.contains("1.5,2,minimax,generic_inner,0,"));
    }
}
