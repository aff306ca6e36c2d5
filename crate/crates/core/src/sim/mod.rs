//! KRR on a fixed design with exact excess risk.
//!
//! For `f̂ = Σ α_i k(x_i, ·)` and a zonal target the addition formula gives
//!
//! * `‖f̂‖² = αᵀMα` with `M_ij = Σ_k μ_k² N(d,k) P_k(⟨x_i, x_j⟩)`,
//! * `⟨f̂, f*⟩ = αᵀg` with `g_i = Σ_k μ_k β_k √N(d,k) P_k(⟨x_i, x0⟩)`,
//!
//! so `‖f̂ − f*‖² = αᵀMα − 2αᵀg + Σ β_k²` up to the Mercer tail beyond `K`.

mod design;

use std::sync::OnceLock;

use faer::Mat;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

pub use design::{kernel_matrix, random_unit_vector, sample_points, sample_sphere, Design};

use crate::kernel::KernelSpec;
use crate::linalg::{congruence, dot, mat_t_vec, quad_form, sym_eigen, LinalgError, ShiftedCholesky};
use crate::quantities::{QuantityError, ZonalTarget};
use crate::rng::{stream_rng, Stream};
use crate::spectrum::{legendre_table, Spectrum};

/// Diagonal jitter, relative to `Φ(1)`, tried once if factorization fails.
pub const JITTER: f64 = 1e-12;
/// Truncation bounds above this fraction of the risk are logged.
const TRUNCATION_WARN_FRACTION: f64 = 0.01;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Quantity(#[from] QuantityError),
}

/// Dual solution of one ridge fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KrrFit {
    pub alpha: Vec<f64>,
    pub lambda: f64,
    pub sigma: f64,
    pub seed: u64,
    pub y: Vec<f64>,
    /// Diagonal jitter used by the solver, 0 if none.
    pub jitter: f64,
    /// `‖y − (K + nλI)α‖ / ‖y‖`.
    pub rel_residual: f64,
}

/// Exact excess risk with the Mercer-tail bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticRisk {
    pub value: f64,
    pub trunc_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub m_test: usize,
}

/// Conditional-on-design risk at one `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskReport {
    pub lambda: f64,
    /// `bias2 + variance`.
    pub excess_risk: f64,
    /// `‖f̃_λ − f*‖²` for the noise-free fit `f̃_λ`.
    pub bias2: f64,
    /// `σ² tr((K+nλ)^{-1} M (K+nλ)^{-1})`.
    pub variance: f64,
    /// 0: computed in closed form, not from noise draws.
    pub n_noise_draws: usize,
    pub trunc_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub lambdas: Vec<f64>,
    pub variances: Vec<f64>,
    /// Indices `i` with `Var(λ_{i+1}) > Var(λ_i)` beyond the slack.
    pub violations: Vec<usize>,
    pub monotone: bool,
}

struct EigenCache {
    values: Vec<f64>,
    vectors: Mat<f64>,
    /// `UᵀMU`.
    m_rot: Mat<f64>,
    /// `Uᵀ f*(X)`.
    f_rot: Vec<f64>,
    /// `Uᵀ g`.
    g_rot: Vec<f64>,
}

/// Everything needed to fit and score KRR on one design.
pub struct KrrProblem<'a> {
    pub spec: &'a KernelSpec,
    pub sp: &'a Spectrum,
    pub tg: &'a ZonalTarget,
    pub design: &'a Design,
    kmat: Mat<f64>,
    mmat: Mat<f64>,
    fstar: Vec<f64>,
    pole_t: Vec<f64>,
    cross: Vec<f64>,
    eigen: OnceLock<EigenCache>,
}

fn check_lambda(lambda: f64) -> Result<(), SimError> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(SimError::Invalid(format!("lambda must be positive, got {lambda}")))
    }
}

/// `M_ij = Σ_k μ_k² N(d,k) P_k(⟨x_i, x_j⟩)`.
pub fn mercer_gram(sp: &Spectrum, dz: &Design) -> Mat<f64> {
    let n = dz.n();
    let weights: Vec<f64> = sp.mu.iter().zip(&sp.mult).map(|(m, n)| m * m * n).collect();
    let mut row = vec![0.0; weights.len()];
    let mut m = Mat::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            legendre_table(sp.d, dz.gram[(i, j)].clamp(-1.0, 1.0), &mut row);
            let v = dot(&weights, &row);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

impl<'a> KrrProblem<'a> {
    pub fn new(
        spec: &'a KernelSpec,
        sp: &'a Spectrum,
        tg: &'a ZonalTarget,
        design: &'a Design,
    ) -> Result<Self, SimError> {
        if sp.d != design.d || tg.pole.len() != design.d + 1 {
            return Err(SimError::Invalid(format!(
                "dimension mismatch: spectrum d={}, design d={}, pole length {}",
                sp.d,
                design.d,
                tg.pole.len()
            )));
        }
        if tg.beta.len() > sp.mu.len() {
            return Err(SimError::Invalid("target has more levels than the spectrum".into()));
        }
        let pole_t = design.products_with(&tg.pole);
        let fstar = pole_t.iter().map(|t| tg.eval_zonal(sp, *t)).collect();
        let mut problem = KrrProblem {
            spec,
            sp,
            tg,
            design,
            kmat: kernel_matrix(spec, design),
            mmat: mercer_gram(sp, design),
            fstar,
            pole_t,
            cross: Vec::new(),
            eigen: OnceLock::new(),
        };
        problem.cross = problem.cross_vector(&tg.beta);
        Ok(problem)
    }

    pub fn n(&self) -> usize {
        self.design.n()
    }

    pub fn kernel(&self) -> &Mat<f64> {
        &self.kmat
    }

    pub fn mercer_gram(&self) -> &Mat<f64> {
        &self.mmat
    }

    pub fn fstar_at_design(&self) -> &[f64] {
        &self.fstar
    }

    /// `⟨k(x_i, ·), h⟩` for the zonal `h = Σ_k c_k √N(d,k) P_k(⟨·, x0⟩)`.
    pub fn cross_vector(&self, coefficients: &[f64]) -> Vec<f64> {
        let w: Vec<f64> = coefficients
            .iter()
            .zip(&self.sp.mu)
            .zip(&self.sp.mult)
            .map(|((c, m), n)| c * m * n.sqrt())
            .collect();
        let mut row = vec![0.0; w.len()];
        self.pole_t
            .iter()
            .map(|t| {
                legendre_table(self.sp.d, t.clamp(-1.0, 1.0), &mut row);
                dot(&w, &row)
            })
            .collect()
    }

    /// Cholesky factor of `K + nλI`.
    pub fn factor(&self, lambda: f64) -> Result<ShiftedCholesky, SimError> {
        check_lambda(lambda)?;
        Ok(ShiftedCholesky::new(&self.kmat, self.n() as f64 * lambda, JITTER * self.sp.phi_one)?)
    }

    /// Labels `y_i = f*(x_i) + σ ε_i` with Gaussian `ε`.
    pub fn labels(&self, sigma: f64, seed: u64) -> Vec<f64> {
        if sigma == 0.0 {
            return self.fstar.clone();
        }
        let mut rng = stream_rng(seed, Stream::Noise);
        self.fstar
            .iter()
            .map(|f| {
                let e: f64 = StandardNormal.sample(&mut rng);
                f + sigma * e
            })
            .collect()
    }

    /// Solves `(K + nλI)α = y`.
    pub fn fit(&self, lambda: f64, sigma: f64, seed: u64) -> Result<KrrFit, SimError> {
        let chol = self.factor(lambda)?;
        Ok(self.fit_with(&chol, lambda, sigma, seed))
    }

    /// Like [`fit`](Self::fit) with a factorization computed beforehand.
    pub fn fit_with(&self, chol: &ShiftedCholesky, lambda: f64, sigma: f64, seed: u64) -> KrrFit {
        let y = self.labels(sigma, seed);
        let (alpha, rel_residual) = chol.solve(&y);
        KrrFit { alpha, lambda, sigma, seed, y, jitter: chol.jitter, rel_residual }
    }

    /// Bound on the Mercer tail of `‖f̂‖²`: every omitted `μ_k` is at most the tail mass.
    fn truncation_bound(&self, alpha: &[f64]) -> f64 {
        let tail = self.sp.tail_mass;
        let l1: f64 = alpha.iter().map(|a| a.abs()).sum();
        tail * tail.min(self.sp.phi_one) * l1 * l1
    }

    fn risk_of(&self, alpha: &[f64]) -> AnalyticRisk {
        let value = quad_form(&self.mmat, alpha) - 2.0 * dot(alpha, &self.cross) + self.tg.l2_norm_sq();
        let trunc_bound = self.truncation_bound(alpha);
        if trunc_bound > TRUNCATION_WARN_FRACTION * value.abs() {
            log::warn!("Mercer truncation bound {trunc_bound:e} is large next to the risk {value:e}");
        }
        AnalyticRisk { value, trunc_bound }
    }

    /// `‖f̂_λ − f*‖²_{L²}`.
    pub fn excess_risk_analytic(&self, fit: &KrrFit) -> AnalyticRisk {
        self.risk_of(&fit.alpha)
    }

    /// `f̂(z)` at a unit vector `z`.
    pub fn predict(&self, fit: &KrrFit, z: &[f64]) -> f64 {
        self.design
            .products_with(z)
            .iter()
            .zip(&fit.alpha)
            .map(|(t, a)| a * self.spec.phi(*t))
            .sum()
    }

    /// Mean of `(f̂(z) − f*(z))²` over `m_test` fresh uniform points.
    pub fn excess_risk_montecarlo(
        &self,
        fit: &KrrFit,
        m_test: usize,
        seed: u64,
    ) -> Result<McEstimate, SimError> {
        if m_test < 100 {
            return Err(SimError::Invalid(format!("m_test must be at least 100, got {m_test}")));
        }
        let mut rng = stream_rng(seed, Stream::Test);
        let mut z = vec![0.0; self.design.d + 1];
        let (mut mean, mut m2) = (0.0, 0.0);
        for j in 0..m_test {
            random_unit_vector(&mut rng, &mut z);
            let t: f64 = dot(&z, &self.tg.pole);
            let err = self.predict(fit, &z) - self.tg.eval_zonal(self.sp, t);
            let sq = err * err;
            let delta = sq - mean;
            mean += delta / (j + 1) as f64;
            m2 += delta * (sq - mean);
        }
        let var = m2 / (m_test - 1) as f64;
        Ok(McEstimate { estimate: mean, stderr: (var / m_test as f64).sqrt(), m_test })
    }

    fn eigen(&self) -> Result<&EigenCache, SimError> {
        if let Some(cache) = self.eigen.get() {
            return Ok(cache);
        }
        let e = sym_eigen(&self.kmat)?;
        let m_rot = congruence(&e.vectors, &self.mmat);
        let f_rot = mat_t_vec(&e.vectors, &self.fstar);
        let g_rot = mat_t_vec(&e.vectors, &self.cross);
        let cache = EigenCache { values: e.values, vectors: e.vectors, m_rot, f_rot, g_rot };
        Ok(self.eigen.get_or_init(|| cache))
    }

    /// Bias and variance from one eigendecomposition of `K`, reused for every `λ`.
    pub fn bias_variance_many(&self, lambdas: &[f64], sigma: f64) -> Result<Vec<RiskReport>, SimError> {
        for l in lambdas {
            check_lambda(*l)?;
        }
        let cache = self.eigen()?;
        let n = self.n();
        let l2 = self.tg.l2_norm_sq();
        let mut out = Vec::with_capacity(lambdas.len());
        for &lambda in lambdas {
            let shift = n as f64 * lambda;
            let coef: Vec<f64> =
                cache.f_rot.iter().zip(&cache.values).map(|(c, v)| c / (v + shift)).collect();
            let bias2 = quad_form(&cache.m_rot, &coef) - 2.0 * dot(&coef, &cache.g_rot) + l2;
            let variance = sigma * sigma
                * (0..n).map(|i| cache.m_rot[(i, i)] / (cache.values[i] + shift).powi(2)).sum::<f64>();
            let alpha = crate::linalg::mat_vec(&cache.vectors, &coef);
            let trunc_bound = self.truncation_bound(&alpha);
            out.push(RiskReport {
                lambda,
                excess_risk: bias2 + variance,
                bias2,
                variance,
                n_noise_draws: 0,
                trunc_bound,
            });
        }
        Ok(out)
    }

    pub fn bias_variance(&self, lambda: f64, sigma: f64) -> Result<RiskReport, SimError> {
        Ok(self.bias_variance_many(&[lambda], sigma)?[0])
    }

    /// Checks `Var(λ)` is nonincreasing along an ascending `λ` list.
    pub fn variance_monotonicity_check(
        &self,
        lambdas: &[f64],
        sigma: f64,
    ) -> Result<MonotonicityReport, SimError> {
        if lambdas.len() < 2 || lambdas.windows(2).any(|w| w[0] > w[1]) {
            return Err(SimError::Invalid("lambda list must be ascending with at least 2 entries".into()));
        }
        let variances: Vec<f64> =
            self.bias_variance_many(lambdas, sigma)?.iter().map(|r| r.variance).collect();
        let violations: Vec<usize> = variances
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1] > w[0] * (1.0 + 1e-12))
            .map(|(i, _)| i)
            .collect();
        let monotone = violations.is_empty();
        Ok(MonotonicityReport { lambdas: lambdas.to_vec(), variances, violations, monotone })
    }

    /// `‖f̃_λ − f_λ‖²` between the noise-free fit and its population limit
    /// `f_λ`, whose level coefficients are `μ_k/(μ_k+λ) β_k`.
    pub fn population_gap(&self, lambda: f64) -> Result<f64, SimError> {
        let fit = self.fit(lambda, 0.0, 0)?;
        let limit: Vec<f64> =
            self.tg.beta.iter().zip(&self.sp.mu).map(|(b, m)| m / (m + lambda) * b).collect();
        let cross = self.cross_vector(&limit);
        let norm: f64 = limit.iter().map(|c| c * c).sum();
        Ok(quad_form(&self.mmat, &fit.alpha) - 2.0 * dot(&fit.alpha, &cross) + norm)
    }

    /// `‖Kα − y‖`.
    pub fn training_residual(&self, fit: &KrrFit) -> f64 {
        let ka = crate::linalg::mat_vec(&self.kmat, &fit.alpha);
        ka.iter().zip(&fit.y).map(|(a, y)| (a - y).powi(2)).sum::<f64>().sqrt()
    }
}

/// One-shot fit; see [`KrrProblem::fit`].
pub fn fit_krr(
    spec: &KernelSpec,
    sp: &Spectrum,
    tg: &ZonalTarget,
    dz: &Design,
    lambda: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<KrrFit, SimError> {
    KrrProblem::new(spec, sp, tg, dz)?.fit(lambda, noise_sigma, seed)
}

/// One-shot bias–variance report; see [`KrrProblem::bias_variance`].
pub fn bias_variance(
    spec: &KernelSpec,
    sp: &Spectrum,
    tg: &ZonalTarget,
    dz: &Design,
    lambda: f64,
    noise_sigma: f64,
) -> Result<RiskReport, SimError> {
    KrrProblem::new(spec, sp, tg, dz)?.bias_variance(lambda, noise_sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantities::{build_target, default_pole, TargetSpec};
    use crate::spectrum::{build_spectrum, Truncation};

    fn linear() -> (KernelSpec, Spectrum) {
        let spec = KernelSpec::power_series(vec![0.0, 1.0]).unwrap();
        let sp = build_spectrum(&spec, 3, Truncation::default()).unwrap();
        (spec, sp)
    }

    #[test]
    fn single_point_closed_form() {
        let (spec, sp) = linear();
        let tg = ZonalTarget::from_coefficients(&sp, 1.0, vec![0.0, 1.0], default_pole(3)).unwrap();
        let x1 = [0.6, 0.8, 0.0, 0.0];
        let dz = Design::from_points(3, x1.to_vec(), 0).unwrap();
        let problem = KrrProblem::new(&spec, &sp, &tg, &dz).unwrap();
        let lambda = 0.3;
        let fit = problem.fit(lambda, 0.0, 0).unwrap();
        // f*(x1) = 2t with t = ⟨x1, x0⟩ = 0.6; f̂(x) = Φ(⟨x, x1⟩) f*(x1)/(Φ(1)+λ).
        let t = 0.6;
        let alpha = 2.0 * t / (1.0 + lambda);
        assert!((fit.alpha[0] - alpha).abs() < 1e-15);
        let z = [0.0, 0.0, 1.0, 0.0];
        assert!((problem.predict(&fit, &z) - 0.0).abs() < 1e-15);
        let z = [0.0, 1.0, 0.0, 0.0];
        assert!((problem.predict(&fit, &z) - 0.8 * alpha).abs() < 1e-15);
        // ‖f̂‖² = α² μ1² N = α²/4, ⟨f̂, f*⟩ = α μ1 β1 √N P1(t) = α t / 2, ‖f*‖² = 1.
        let want = alpha * alpha / 4.0 - alpha * t + 1.0;
        assert!((problem.excess_risk_analytic(&fit).value - want).abs() < 1e-14);
    }

    #[test]
    fn trivial_risks() {
        let spec = KernelSpec::exponential();
        let sp = build_spectrum(&spec, 4, Truncation::default()).unwrap();
        let zero = ZonalTarget::zero(&sp, 1.0);
        let dz = sample_sphere(4, 30, 1).unwrap();
        let problem = KrrProblem::new(&spec, &sp, &zero, &dz).unwrap();
        let fit = problem.fit(0.01, 0.0, 0).unwrap();
        assert!(fit.alpha.iter().all(|a| *a == 0.0));
        assert_eq!(problem.excess_risk_analytic(&fit).value, 0.0);
        let mc = problem.excess_risk_montecarlo(&fit, 100, 3).unwrap();
        assert_eq!((mc.estimate, mc.stderr), (0.0, 0.0));
        assert_eq!(problem.bias_variance(0.01, 1.0).unwrap().bias2.abs(), 0.0);

        let tg = build_target(&sp, &TargetSpec::new(1.0, 1.5), default_pole(4)).unwrap();
        let problem = KrrProblem::new(&spec, &sp, &tg, &dz).unwrap();
        let silent = KrrFit { alpha: vec![0.0; 30], ..problem.fit(0.01, 0.0, 0).unwrap() };
        assert!((problem.excess_risk_analytic(&silent).value - tg.l2_norm_sq()).abs() < 1e-15);
        let heavy = problem.fit(1e9, 0.0, 0).unwrap();
        assert!(heavy.alpha.iter().all(|a| a.abs() < 1e-9));
        let noiseless = problem.bias_variance(0.01, 0.0).unwrap();
        assert_eq!(noiseless.variance, 0.0);
        assert_eq!(noiseless.excess_risk, noiseless.bias2);
    }

    #[test]
    fn constant_kernel_constant_target_agree_exactly() {
        let spec = KernelSpec::power_series(vec![1.5]).unwrap();
        let sp = build_spectrum(&spec, 3, Truncation::default()).unwrap();
        let tg = ZonalTarget::from_coefficients(&sp, 1.0, vec![2.0], default_pole(3)).unwrap();
        let dz = sample_sphere(3, 8, 4).unwrap();
        let problem = KrrProblem::new(&spec, &sp, &tg, &dz).unwrap();
        let fit = problem.fit(0.1, 0.0, 0).unwrap();
        let analytic = problem.excess_risk_analytic(&fit).value;
        let mc = problem.excess_risk_montecarlo(&fit, 200, 5).unwrap();
        assert!((analytic - mc.estimate).abs() < 1e-12, "{analytic} vs {mc:?}");
    }

    #[test]
    fn eigen_and_cholesky_routes_agree() {
        let spec = KernelSpec::exponential();
        let sp = build_spectrum(&spec, 6, Truncation::default()).unwrap();
        let tg = build_target(&sp, &TargetSpec::new(1.5, 1.2), default_pole(6)).unwrap();
        let dz = sample_sphere(6, 60, 12).unwrap();
        let problem = KrrProblem::new(&spec, &sp, &tg, &dz).unwrap();
        let lambda = 0.02;
        let fit = problem.fit(lambda, 0.0, 0).unwrap();
        let bias_chol = problem.excess_risk_analytic(&fit).value;
        let report = problem.bias_variance(lambda, 0.5).unwrap();
        assert!((bias_chol - report.bias2).abs() < 1e-10 * bias_chol.max(1e-6));
        // Variance as σ² tr(A M A) with A = (K + nλ)^{-1} from the factorization.
        let a = problem.factor(lambda).unwrap().inverse();
        let ama = &a * problem.mercer_gram() * &a;
        let trace: f64 = (0..60).map(|i| ama[(i, i)]).sum();
        assert!((0.25 * trace - report.variance).abs() < 1e-10 * report.variance);
    }

    #[test]
    fn monotone_variance_and_interpolation() {
        let spec = KernelSpec::exponential();
        let sp = build_spectrum(&spec, 5, Truncation::default()).unwrap();
        let tg = build_target(&sp, &TargetSpec::new(1.0, 1.5), default_pole(5)).unwrap();
        let dz = sample_sphere(5, 40, 2).unwrap();
        let problem = KrrProblem::new(&spec, &sp, &tg, &dz).unwrap();
        let report = problem.variance_monotonicity_check(&[1e-4, 1e-3, 1e-2], 1.0).unwrap();
        assert!(report.monotone && report.variances[0] > report.variances[2]);
        let silent = problem.variance_monotonicity_check(&[1e-4, 1e-3], 0.0).unwrap();
        assert!(silent.monotone && silent.variances.iter().all(|v| *v == 0.0));
        assert!(problem.variance_monotonicity_check(&[1e-2, 1e-3], 1.0).is_err());

        let r1 = problem.training_residual(&problem.fit(1e-3, 0.0, 0).unwrap());
        let r2 = problem.training_residual(&problem.fit(1e-7, 0.0, 0).unwrap());
        assert!(r2 < r1 && r2 < 1e-3, "{r1} {r2}");
    }

    #[test]
    fn single_point_variance_formula() {
        let spec = KernelSpec::exponential();
        let sp = build_spectrum(&spec, 3, Truncation::default()).unwrap();
        let tg = ZonalTarget::zero(&sp, 1.0);
        let dz = sample_sphere(3, 1, 0).unwrap();
        let problem = KrrProblem::new(&spec, &sp, &tg, &dz).unwrap();
        let moment: f64 = sp.mu.iter().zip(&sp.mult).map(|(m, n)| m * m * n).sum();
        let lambdas = [0.1, 0.5, 2.0];
        let report = problem.variance_monotonicity_check(&lambdas, 1.3).unwrap();
        for (l, v) in lambdas.iter().zip(&report.variances) {
            let want = 1.69 * moment / (sp.phi_one + l).powi(2);
            assert!((v - want).abs() < 1e-13 * want);
        }
    }
}
