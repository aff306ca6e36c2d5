//! Gauss–Jacobi rules for the projected sphere measure.
//!
//! If `x` is uniform on `S^d` and `x0` is a fixed pole, `t = ⟨x, x0⟩` has density
//! proportional to `(1 - t²)^{(d-2)/2}` on `[-1, 1]`. The rule here integrates
//! against that density, normalized to a probability measure.
//!
//! Nodes and weights come from the Golub–Welsch eigenproblem of the symmetric
//! Jacobi matrix, solved with implicit QL. Only the first component of each
//! eigenvector is needed, so rotations are applied to a single row.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("sphere dimension must be at least 2, got {0}")]
    Dimension(usize),
    #[error("quadrature order must be positive")]
    EmptyRule,
    #[error("QL iteration did not converge at row {0}")]
    NoConvergence(usize),
}

/// Nodes in ascending order with weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereRule {
    pub d: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SphereRule {
    /// `order`-point rule, exact for polynomials of degree `≤ 2·order − 1`.
    pub fn new(d: usize, order: usize) -> Result<Self, QuadratureError> {
        if d < 2 {
            return Err(QuadratureError::Dimension(d));
        }
        if order == 0 {
            return Err(QuadratureError::EmptyRule);
        }
        let a = (d as f64 - 2.0) / 2.0;
        let mut diag = vec![0.0; order];
        let mut off = vec![0.0; order];
        for j in 1..order {
            let jf = j as f64;
            let denom = (2.0 * jf + 2.0 * a).powi(2) - 1.0;
            off[j - 1] = (jf * (jf + 2.0 * a) / denom).sqrt();
        }
        let mut first = vec![0.0; order];
        first[0] = 1.0;
        implicit_ql(&mut diag, &mut off, &mut first)?;

        // Raw Gauss weights are μ₀·z², with μ₀ = ∫(1-t²)^a dt. Scaling by the
        // surface-area ratio ω_{d-1}/ω_d turns them into probabilities.
        let scale = (ln_surface_ratio(d) + ln_weight_mass(d)).exp();
        let mut pairs: Vec<(f64, f64)> =
            diag.into_iter().zip(first).map(|(t, z)| (t, scale * z * z)).collect();
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        let (nodes, weights) = pairs.into_iter().unzip();
        Ok(SphereRule { d, nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// `E_t[f(t)]` under the projected sphere measure.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(t, w)| w * f(*t)).sum()
    }
}

/// `ln(ω_{d-1} / ω_d)` where `ω_m = 2π^{(m+1)/2} / Γ((m+1)/2)` is the area of `S^m`.
pub fn ln_surface_ratio(d: usize) -> f64 {
    let d = d as f64;
    libm::lgamma((d + 1.0) / 2.0) - libm::lgamma(d / 2.0) - 0.5 * std::f64::consts::PI.ln()
}

/// `ln ∫_{-1}^{1} (1 - t²)^{(d-2)/2} dt = ln(√π Γ(d/2) / Γ((d+1)/2))`.
pub fn ln_weight_mass(d: usize) -> f64 {
    let d = d as f64;
    0.5 * std::f64::consts::PI.ln() + libm::lgamma(d / 2.0) - libm::lgamma((d + 1.0) / 2.0)
}

/// Symmetric tridiagonal QL with implicit shifts. `off[i]` couples rows `i` and
/// `i + 1`; `off[n-1]` is ignored. On return `diag` holds the eigenvalues and
/// `row` the first row of the eigenvector matrix, transformed from its input.
fn implicit_ql(diag: &mut [f64], off: &mut [f64], row: &mut [f64]) -> Result<(), QuadratureError> {
    let n = diag.len();
    if n == 0 {
        return Ok(());
    }
    off[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(QuadratureError::NoConvergence(l));
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
                let zf = row[i + 1];
                row[i + 1] = s * row[i] + c * zf;
                row[i] = c * row[i] - s * zf;
            }
            if deflated {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `E[t^{2m}]` for `t = ⟨x, x0⟩`, `x` uniform on `S^d`: `Π_{i<m} (2i+1)/(d+1+2i)`.
    fn even_moment(d: usize, m: usize) -> f64 {
        (0..m).map(|i| (2 * i + 1) as f64 / (d as f64 + 1.0 + 2.0 * i as f64)).product()
    }

    #[test]
    fn normalization_constants_cancel() {
        for d in [2, 3, 4, 7, 50, 1000] {
            let prod = ln_surface_ratio(d) + ln_weight_mass(d);
            assert!(prod.abs() < 1e-12, "d={d}: {prod}");
        }
    }

    #[test]
    fn weights_are_probabilities() {
        for (d, m) in [(2, 5), (3, 40), (20, 64), (200, 128)] {
            let rule = SphereRule::new(d, m).unwrap();
            let total: f64 = rule.weights.iter().sum();
            assert!((total - 1.0).abs() < 1e-13);
            assert!(rule.weights.iter().all(|w| *w > 0.0));
            assert!(rule.nodes.windows(2).all(|w| w[0] < w[1]));
            assert!(rule.nodes.iter().all(|t| t.abs() < 1.0));
        }
    }

    #[test]
    fn legendre_nodes_for_flat_weight() {
        // d = 2 gives the Legendre weight; the 2-point nodes are ±1/√3.
        let rule = SphereRule::new(2, 2).unwrap();
        let x = 1.0 / 3f64.sqrt();
        assert!((rule.nodes[0] + x).abs() < 1e-14);
        assert!((rule.nodes[1] - x).abs() < 1e-14);
        assert!((rule.weights[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn moments_exact_up_to_degree() {
        for d in [2, 3, 5, 11, 64] {
            let order = 6;
            let rule = SphereRule::new(d, order).unwrap();
            for m in 0..order {
                let got = rule.integrate(|t| t.powi(2 * m as i32));
                let want = even_moment(d, m);
                assert!((got - want).abs() < 1e-13 * want.max(1e-3), "d={d} m={m}: {got} vs {want}");
                let odd = rule.integrate(|t| t.powi(2 * m as i32 + 1));
                assert!(odd.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(SphereRule::new(1, 4), Err(QuadratureError::Dimension(1)));
        assert_eq!(SphereRule::new(3, 0), Err(QuadratureError::EmptyRule));
    }
}
