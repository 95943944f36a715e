//! Cyclic Jacobi eigendecomposition for small symmetric matrices.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    /// Eigenvalues, largest first.
    pub values: Vec<f64>,
    /// `n×n` matrix whose column `k` is the unit eigenvector for `values[k]`.
    pub vectors: Tensor,
}

impl SymEigen {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Column `k` of the eigenvector matrix.
    pub fn vector(&self, k: usize) -> Vec<f64> {
        (0..self.dim()).map(|i| self.vectors.at2(i, k)).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    pub max_dim: usize,
    pub max_sweeps: usize,
    pub symmetry_tol: f64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            max_dim: 512,
            max_sweeps: 100,
            symmetry_tol: 1e-10,
        }
    }
}

pub fn sym_eigendecomp(a: &Tensor) -> Result<SymEigen> {
    sym_eigendecomp_with(a, &EigenOptions::default())
}

pub fn sym_eigendecomp_with(a: &Tensor, opts: &EigenOptions) -> Result<SymEigen> {
    let n = match a.shape() {
        &[r, c] if r == c => r,
        s => return Err(Error::InvalidShape(s.to_vec(), "expected a square matrix")),
    };
    if n > opts.max_dim {
        return Err(Error::DimensionCap {
            dim: n,
            cap: opts.max_dim,
        });
    }
    let scale = a.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            asym = asym.max((a.at2(i, j) - a.at2(j, i)).abs());
        }
    }
    if asym > opts.symmetry_tol * scale {
        return Err(Error::NotSymmetric(asym));
    }

    let mut m: Vec<f64> = a.data().to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i * n + j] * m[i * n + j];
                }
            }
        }
        s.sqrt()
    };

    let target = f64::EPSILON * frob.max(f64::MIN_POSITIVE);
    let mut converged = n < 2;
    for _ in 0..opts.max_sweeps {
        if converged {
            break;
        }
        if off(&m) <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- J^T A J, applied to rows and columns p, q.
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        let residual = off(&m);
        if residual > target * 1e3 {
            return Err(Error::NoConvergence {
                sweeps: opts.max_sweeps,
                residual,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = Tensor::zeros(&[n, n]);
    for (col, &src) in order.iter().enumerate() {
        // Sign convention: first non-negligible component positive.
        let first = (0..n).map(|r| v[r * n + src]).find(|x| x.abs() > 1e-12).unwrap_or(1.0);
        let sign = if first < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors.set2(r, col, sign * v[r * n + src]);
        }
    }
    Ok(SymEigen { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat(n: usize, data: &[f64]) -> Tensor {
        Tensor::new(vec![n, n], data.to_vec()).unwrap()
    }

    fn reconstruction_error(a: &Tensor, e: &SymEigen) -> f64 {
        let n = e.dim();
        let mut err = 0.0;
        for i in 0..n {
            for j in 0..n {
                let r: f64 = (0..n)
                    .map(|k| e.vectors.at2(i, k) * e.values[k] * e.vectors.at2(j, k))
                    .sum();
                err += (a.at2(i, j) - r).powi(2);
            }
        }
        err.sqrt() / a.norm()
    }

    #[test]
    fn identity() {
        let e = sym_eigendecomp(&mat(3, &[1., 0., 0., 0., 1., 0., 0., 0., 1.])).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal() {
        let e = sym_eigendecomp(&mat(2, &[3., 0., 0., 1.])).unwrap();
        assert_eq!(e.values, vec![3.0, 1.0]);
        assert_eq!(e.vector(0), vec![1.0, 0.0]);
        assert_eq!(e.vector(1), vec![0.0, 1.0]);
    }

    #[test]
    fn analytic_two_by_two() {
        let e = sym_eigendecomp(&mat(2, &[2., 1., 1., 2.])).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = e.vector(0);
        assert!((v0[0] - h).abs() < 1e-14 && (v0[1] - h).abs() < 1e-14);
    }

    #[test]
    fn rejects_asymmetric_and_oversized() {
        assert!(matches!(
            sym_eigendecomp(&mat(2, &[1., 2., 0., 1.])),
            Err(Error::NotSymmetric(_))
        ));
        let opts = EigenOptions {
            max_dim: 2,
            ..Default::default()
        };
        assert!(matches!(
            sym_eigendecomp_with(&Tensor::zeros(&[3, 3]), &opts),
            Err(Error::DimensionCap { .. })
        ));
    }

    #[test]
    fn random_symmetric_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [1usize, 2, 5, 8, 20] {
            let mut a = Tensor::zeros(&[n, n]);
            for i in 0..n {
                for j in 0..=i {
                    let x = rng.random_range(-3.0..3.0);
                    a.set2(i, j, x);
                    a.set2(j, i, x);
                }
            }
            let e = sym_eigendecomp(&a).unwrap();
            assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
            if a.norm() > 0.0 {
                assert!(reconstruction_error(&a, &e) < 1e-6);
            }
            for k in 0..n {
                for l in 0..n {
                    let d: f64 = (0..n).map(|i| e.vectors.at2(i, k) * e.vectors.at2(i, l)).sum();
                    let want = if k == l { 1.0 } else { 0.0 };
                    assert!((d - want).abs() < 1e-8);
                }
                // A v = lambda v, relative to the spectral scale.
                let scale = e.values.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
                for i in 0..n {
                    let av: f64 = (0..n).map(|j| a.at2(i, j) * e.vectors.at2(j, k)).sum();
                    assert!((av - e.values[k] * e.vectors.at2(i, k)).abs() <= 1e-6 * scale);
                }
                let first = (0..n).map(|i| e.vectors.at2(i, k)).find(|x| x.abs() > 1e-12).unwrap();
                assert!(first > 0.0);
            }
        }
    }
}
