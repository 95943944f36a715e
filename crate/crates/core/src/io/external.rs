//! Calibration inputs produced by an outside segmentation model.
//!
//! The model supplies per-sample logits (one `[1,H,W]` record each, in a
//! container) and a `[n]` tensor of ground-truth metric values. Only the
//! logit-shift method and the residual baseline can run on such data, since
//! no decoder internals are available.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::exchange::{read_container, read_tensor};
use crate::numerics::Tensor;
use crate::pipeline::{forward, LogitLine, MetricSpec, PipelineParams};
use crate::synthtask::Sample;

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalCalibration {
    pub logits: Vec<Tensor>,
    pub y: Vec<f64>,
}

impl ExternalCalibration {
    pub fn new(logits: Vec<Tensor>, y: Vec<f64>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::Empty("logits container"));
        }
        if logits.len() != y.len() {
            return Err(Error::CountMismatch(logits.len(), y.len()));
        }
        Ok(Self { logits, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// `β ↦ h(logits + β·1)` per sample.
    pub fn lines(&self, metric: MetricSpec) -> Vec<LogitLine> {
        self.logits.iter().map(|l| LogitLine::new(l, metric)).collect()
    }

    pub fn predictions(&self, metric: MetricSpec) -> Vec<f64> {
        self.logits.iter().map(|l| metric.from_logits(l.data())).collect()
    }

    /// `|y − ŷ|` per sample.
    pub fn residuals(&self, metric: MetricSpec) -> Vec<f64> {
        self.predictions(metric)
            .iter()
            .zip(&self.y)
            .map(|(p, y)| (y - p).abs())
            .collect()
    }
}

pub fn import_external_logits(
    logits_path: impl AsRef<Path>,
    metrics_path: impl AsRef<Path>,
) -> Result<ExternalCalibration> {
    let logits = read_container(logits_path)?;
    let y = read_tensor(metrics_path)?.into_data();
    ExternalCalibration::new(logits, y)
}

/// Logits and true areas of `samples` under the toy pipeline, ready to be
/// written as a container plus a metric tensor.
pub fn export_logits(params: &PipelineParams, samples: &[&Sample]) -> Result<(Vec<Tensor>, Tensor)> {
    let logits = samples
        .iter()
        .map(|s| forward(params, &s.image).map(|o| o.logits))
        .collect::<Result<Vec<_>>>()?;
    let y: Vec<f64> = samples.iter().map(|s| s.area).collect();
    if y.is_empty() {
        return Err(Error::Empty("samples"));
    }
    Ok((logits, Tensor::new(vec![y.len()], y)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::exchange::{write_container, write_tensor};

    #[test]
    fn empty_and_mismatched() {
        assert_eq!(
            ExternalCalibration::new(vec![], vec![]).unwrap_err(),
            Error::Empty("logits container")
        );
        let l = vec![Tensor::zeros(&[1, 2, 2])];
        assert_eq!(
            ExternalCalibration::new(l, vec![1.0, 2.0]).unwrap_err(),
            Error::CountMismatch(1, 2)
        );
    }

    #[test]
    fn import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let logits = vec![Tensor::filled(&[1, 2, 2], 3.0), Tensor::filled(&[1, 2, 2], -3.0)];
        write_container(dir.path().join("l.ctx"), &logits).unwrap();
        write_tensor(dir.path().join("y.ctx"), &Tensor::new(vec![2], vec![4.0, 1.0]).unwrap()).unwrap();
        let ext = import_external_logits(dir.path().join("l.ctx"), dir.path().join("y.ctx")).unwrap();
        assert_eq!(ext.predictions(MetricSpec::hard()), vec![4.0, 0.0]);
        assert_eq!(ext.residuals(MetricSpec::hard()), vec![0.0, 1.0]);
        write_container(dir.path().join("e.ctx"), &[]).unwrap();
        assert!(import_external_logits(dir.path().join("e.ctx"), dir.path().join("y.ctx")).is_err());
    }
}
