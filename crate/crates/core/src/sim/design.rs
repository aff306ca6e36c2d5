//! Uniform designs on the sphere and their kernel matrices.

use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;

use super::SimError;
use crate::kernel::KernelSpec;
use crate::quantities::UNIT_TOLERANCE;
use crate::rng::{stream_rng, Stream};

/// `n` points on `S^d` with their pairwise inner products.
#[derive(Debug, Clone)]
pub struct Design {
    pub d: usize,
    /// Row-major `n × (d+1)`.
    pub points: Vec<f64>,
    /// `⟨x_i, x_j⟩`, symmetric with unit diagonal.
    pub gram: Mat<f64>,
    pub seed: u64,
}

/// Fills `out` with a uniform point on the unit sphere of `R^{out.len()}`.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    loop {
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-150 {
            out.iter_mut().for_each(|v| *v /= norm);
            return;
        }
    }
}

impl Design {
    /// Wraps explicit points, checking that each row has unit norm.
    pub fn from_points(d: usize, points: Vec<f64>, seed: u64) -> Result<Self, SimError> {
        let dim = d + 1;
        if d < 2 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(SimError::Invalid(format!(
                "{} coordinates do not form points in R^{dim}",
                points.len()
            )));
        }
        for row in points.chunks(dim) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(SimError::Invalid(format!("design point has norm {norm}")));
            }
        }
        let n = points.len() / dim;
        let x = Mat::from_fn(n, dim, |i, j| points[i * dim + j]);
        let mut gram = &x * x.transpose();
        for i in 0..n {
            gram[(i, i)] = 1.0;
            for j in 0..i {
                let v = 0.5 * (gram[(i, j)] + gram[(j, i)]);
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        Ok(Design { d, points, gram, seed })
    }

    pub fn n(&self) -> usize {
        self.points.len() / (self.d + 1)
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let dim = self.d + 1;
        &self.points[i * dim..(i + 1) * dim]
    }

    /// `⟨x_i, v⟩` for every design point.
    pub fn products_with(&self, v: &[f64]) -> Vec<f64> {
        self.points.chunks(self.d + 1).map(|x| x.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }
}

/// Row-major coordinates of `n` i.i.d. uniform points on `S^d`.
pub fn sample_points(d: usize, n: usize, seed: u64) -> Result<Vec<f64>, SimError> {
    if d < 2 || n == 0 {
        return Err(SimError::Invalid(format!("need d >= 2 and n >= 1, got d={d}, n={n}")));
    }
    let dim = d + 1;
    let mut rng = stream_rng(seed, Stream::Design);
    let mut points = vec![0.0; n * dim];
    for row in points.chunks_mut(dim) {
        random_unit_vector(&mut rng, row);
    }
    Ok(points)
}

/// `n` i.i.d. uniform points on `S^d`, deterministic in `seed`.
pub fn sample_sphere(d: usize, n: usize, seed: u64) -> Result<Design, SimError> {
    Design::from_points(d, sample_points(d, n, seed)?, seed)
}

/// `K_ij = Φ(⟨x_i, x_j⟩)` from the exact profile.
pub fn kernel_matrix(spec: &KernelSpec, dz: &Design) -> Mat<f64> {
    let n = dz.n();
    let mut k = Mat::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = spec.phi(dz.gram[(i, j)]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigen;

    #[test]
    fn points_are_unit_and_deterministic() {
        let a = sample_sphere(3, 5, 7).unwrap();
        assert_eq!((a.n(), a.point(0).len()), (5, 4));
        for i in 0..5 {
            let norm: f64 = a.point(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            assert_eq!(a.gram[(i, i)], 1.0);
        }
        let b = sample_sphere(3, 5, 7).unwrap();
        assert_eq!(a.points, b.points);
        assert_ne!(a.points, sample_sphere(3, 5, 8).unwrap().points);
    }

    #[test]
    fn empirical_mean_near_zero() {
        let n = 100_000;
        let pts = sample_points(2, n, 11).unwrap();
        for c in 0..3 {
            let mean = (0..n).map(|i| pts[3 * i + c]).sum::<f64>() / n as f64;
            assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "coordinate {c}: {mean}");
        }
    }

    #[test]
    fn kernel_matrix_special_profiles() {
        let dz = sample_sphere(4, 20, 3).unwrap();
        let c = kernel_matrix(&KernelSpec::power_series(vec![0.7]).unwrap(), &dz);
        assert!((0..20).all(|i| (0..20).all(|j| c[(i, j)] == 0.7)));
        let lin = kernel_matrix(&KernelSpec::power_series(vec![0.0, 1.0]).unwrap(), &dz);
        assert!((0..20).all(|i| (0..20).all(|j| lin[(i, j)] == dz.gram[(i, j)])));
    }

    #[test]
    fn exp_kernel_matrix_is_psd() {
        let dz = sample_sphere(5, 50, 9).unwrap();
        let k = kernel_matrix(&KernelSpec::exponential(), &dz);
        let e = sym_eigen(&k).unwrap();
        assert!(e.values[0] >= -1e-10);
        assert!((k[(3, 3)] - std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_points() {
        assert!(Design::from_points(3, vec![1.0, 0.0, 0.0], 0).is_err());
        assert!(Design::from_points(3, vec![0.5, 0.0, 0.0, 0.0], 0).is_err());
        assert!(sample_sphere(1, 3, 0).is_err());
    }
}
