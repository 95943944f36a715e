//! Metric-sensitive subspace and per-sample perturbation directions.
//!
//! Jacobians `[C,H,W]` are summed over space to `ℝ^C`, a PCA over the
//! training summaries gives `V_L`, and each sample's direction is its own
//! summary projected onto `span(V_L)` and spread uniformly over space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sym_eigendecomp, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SensitiveSubspace {
    /// `[C, L]`, orthonormal columns.
    pub basis: Tensor,
    /// Subtracted before projecting; zeros for an uncentered fit.
    pub center: Vec<f64>,
    pub centered: bool,
    /// All `C` eigenvalues of the (co)variance, descending.
    pub eigenvalues: Vec<f64>,
}

impl SensitiveSubspace {
    pub fn channels(&self) -> usize {
        self.basis.shape()[0]
    }

    pub fn rank(&self) -> usize {
        self.basis.shape()[1]
    }

    /// Share of total variance captured by each retained component.
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        let total: f64 = self.eigenvalues.iter().map(|v| v.max(0.0)).sum();
        self.eigenvalues[..self.rank()]
            .iter()
            .map(|v| if total > 0.0 { v.max(0.0) / total } else { 0.0 })
            .collect()
    }

    /// `V_L V_Lᵀ v`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let (c, l) = (self.channels(), self.rank());
        let mut coeff = vec![0.0; l];
        for (k, ck) in coeff.iter_mut().enumerate() {
            *ck = (0..c).map(|i| self.basis.at2(i, k) * v[i]).sum();
        }
        (0..c)
            .map(|i| (0..l).map(|k| self.basis.at2(i, k) * coeff[k]).sum())
            .collect()
    }

    /// Rebuilds a subspace from stored parts, checking orthonormality.
    pub fn from_parts(basis: Tensor, center: Vec<f64>, centered: bool, eigenvalues: Vec<f64>) -> Result<Self> {
        let (c, l) = match basis.shape() {
            &[c, l] if l >= 1 && l <= c => (c, l),
            s => return Err(Error::InvalidShape(s.to_vec(), "basis must be C x L with 1 <= L <= C")),
        };
        if center.len() != c {
            return Err(Error::ShapeMismatch {
                expected: vec![c],
                actual: vec![center.len()],
            });
        }
        for a in 0..l {
            for b in 0..l {
                let d: f64 = (0..c).map(|i| basis.at2(i, a) * basis.at2(i, b)).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-8 {
                    return Err(Error::InvalidArgument("basis columns are not orthonormal".into()));
                }
            }
        }
        Ok(Self {
            basis,
            center,
            centered,
            eigenvalues,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Unit,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub values: Tensor,
    pub norm_kind: NormKind,
    /// The projection vanished and the normalized ones direction was used.
    pub fallback: bool,
}

/// Entry `c` is `Σ_{h,w} J[c,h,w]`.
pub fn channel_summarize(j: &Tensor) -> Result<Vec<f64>> {
    let (c, h, w) = j.dims3()?;
    let hw = h * w;
    Ok((0..c).map(|k| j.data()[k * hw..(k + 1) * hw].iter().sum()).collect())
}

/// PCA on mean-centered summaries.
pub fn fit_subspace(summaries: &[Vec<f64>], l: usize) -> Result<SensitiveSubspace> {
    fit_subspace_with(summaries, l, true)
}

/// PCA on the summaries; `centered = false` uses the raw second moment.
pub fn fit_subspace_with(summaries: &[Vec<f64>], l: usize, centered: bool) -> Result<SensitiveSubspace> {
    if summaries.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 summaries, got {}",
            summaries.len()
        )));
    }
    let c = summaries[0].len();
    if summaries.iter().any(|s| s.len() != c) {
        return Err(Error::InvalidArgument("summaries differ in length".into()));
    }
    if l == 0 || l > c {
        return Err(Error::InvalidArgument(format!("component count {l} outside 1..={c}")));
    }
    let n = summaries.len() as f64;
    let mut center = vec![0.0; c];
    if centered {
        for s in summaries {
            center.iter_mut().zip(s).for_each(|(m, v)| *m += v / n);
        }
    }
    let mut cov = Tensor::zeros(&[c, c]);
    let divisor = if centered { n - 1.0 } else { n };
    for s in summaries {
        let d: Vec<f64> = s.iter().zip(&center).map(|(v, m)| v - m).collect();
        for i in 0..c {
            for j in 0..=i {
                let v = cov.at2(i, j) + d[i] * d[j] / divisor;
                cov.set2(i, j, v);
            }
        }
    }
    for i in 0..c {
        for j in 0..i {
            let v = cov.at2(i, j);
            cov.set2(j, i, v);
        }
    }
    let eig = sym_eigendecomp(&cov)?;
    let mut basis = Tensor::zeros(&[c, l]);
    for k in 0..l {
        for i in 0..c {
            basis.set2(i, k, eig.vectors.at2(i, k));
        }
    }
    Ok(SensitiveSubspace {
        basis,
        center,
        centered,
        eigenvalues: eig.values,
    })
}

fn ones_unit(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::filled(shape, 1.0 / (n as f64).sqrt())
}

/// Unit direction from a channel summary, broadcast over `[C,H,W]`.
pub fn direction_from_summary(subspace: &SensitiveSubspace, summary: &[f64], h: usize, w: usize) -> Result<Direction> {
    let c = subspace.channels();
    if summary.len() != c {
        return Err(Error::ShapeMismatch {
            expected: vec![c],
            actual: vec![summary.len()],
        });
    }
    let centered: Vec<f64> = summary.iter().zip(&subspace.center).map(|(s, m)| s - m).collect();
    let d = subspace.project(&centered);
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        log::debug!("projected sensitivity vanished; using the ones direction");
        return Ok(Direction {
            values: ones_unit(&[c, h, w]),
            norm_kind: NormKind::Unit,
            fallback: true,
        });
    }
    let scale = norm * ((h * w) as f64).sqrt();
    let values = Tensor::from_fn(&[c, h, w], |i| d[i / (h * w)] / scale);
    Ok(Direction {
        values,
        norm_kind: NormKind::Unit,
        fallback: false,
    })
}

/// `Δ` for one sample from its own latent-tap Jacobian.
pub fn direction_for(subspace: &SensitiveSubspace, jacobian: &Tensor) -> Result<Direction> {
    let (c, h, w) = jacobian.dims3()?;
    if c != subspace.channels() {
        return Err(Error::ShapeMismatch {
            expected: vec![subspace.channels(), h, w],
            actual: jacobian.shape().to_vec(),
        });
    }
    direction_from_summary(subspace, &channel_summarize(jacobian)?, h, w)
}

/// All-ones direction at the logits tap; a scalar logit shift per unit of `β`.
pub fn logits_direction(shape: &[usize]) -> Direction {
    Direction {
        values: Tensor::ones(shape),
        norm_kind: NormKind::Ones,
        fallback: false,
    }
}
