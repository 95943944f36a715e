//! Datasets, trained parameters and fitted subspaces as exchange containers.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::exchange::{read_container, write_container};
use crate::numerics::Tensor;
use crate::pipeline::PipelineParams;
use crate::subspace::SensitiveSubspace;
use crate::synthtask::{ClassLabel, Sample};

/// Records: images `[n,H,W]`, masks `[n,H,W]`, and `[n,2]` rows of
/// `(area, class index)`.
pub fn dataset_tensors(samples: &[Sample]) -> Result<Vec<Tensor>> {
    let first = samples.first().ok_or(Error::Empty("dataset"))?;
    let (_, h, w) = first.image.dims3()?;
    let n = samples.len();
    let mut images = Vec::with_capacity(n * h * w);
    let mut masks = Vec::with_capacity(n * h * w);
    let mut meta = Vec::with_capacity(2 * n);
    for s in samples {
        s.image.ensure_shape(&[1, h, w])?;
        s.mask.ensure_shape(&[1, h, w])?;
        images.extend_from_slice(s.image.data());
        masks.extend_from_slice(s.mask.data());
        meta.extend([s.area, s.class_label.index() as f64]);
    }
    Ok(vec![
        Tensor::new(vec![n, h, w], images)?,
        Tensor::new(vec![n, h, w], masks)?,
        Tensor::new(vec![n, 2], meta)?,
    ])
}

pub fn dataset_from_tensors(ts: &[Tensor]) -> Result<Vec<Sample>> {
    let [images, masks, meta] = ts else {
        return Err(Error::InvalidArgument(format!(
            "dataset needs 3 records, found {}",
            ts.len()
        )));
    };
    let (n, h, w) = images.dims3()?;
    masks.ensure_shape(&[n, h, w])?;
    meta.ensure_shape(&[n, 2])?;
    let hw = h * w;
    (0..n)
        .map(|i| {
            let k = meta.at2(i, 1);
            let class_label = ClassLabel::from_index(k as usize)
                .filter(|_| k.fract() == 0.0 && k >= 0.0)
                .ok_or_else(|| Error::InvalidArgument(format!("sample {i} has class index {k}")))?;
            Ok(Sample {
                image: Tensor::new(vec![1, h, w], images.data()[i * hw..(i + 1) * hw].to_vec())?,
                mask: Tensor::new(vec![1, h, w], masks.data()[i * hw..(i + 1) * hw].to_vec())?,
                area: meta.at2(i, 0),
                class_label,
            })
        })
        .collect()
}

pub fn write_dataset(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    write_container(path, &dataset_tensors(samples)?)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    dataset_from_tensors(&read_container(path)?)
}

pub fn write_params(path: impl AsRef<Path>, params: &PipelineParams) -> Result<()> {
    write_container(path, &params.tensors())
}

pub fn read_params(path: impl AsRef<Path>) -> Result<PipelineParams> {
    PipelineParams::from_tensors(&read_container(path)?)
}

/// Records: basis `[C,L]`, center `[C]`, eigenvalues `[C]`, centered flag `[1]`.
pub fn subspace_tensors(sub: &SensitiveSubspace) -> Result<Vec<Tensor>> {
    Ok(vec![
        sub.basis.clone(),
        Tensor::new(vec![sub.center.len()], sub.center.clone())?,
        Tensor::new(vec![sub.eigenvalues.len()], sub.eigenvalues.clone())?,
        Tensor::new(vec![1], vec![if sub.centered { 1.0 } else { 0.0 }])?,
    ])
}

pub fn subspace_from_tensors(ts: &[Tensor]) -> Result<SensitiveSubspace> {
    let [basis, center, eig, flag] = ts else {
        return Err(Error::InvalidArgument(format!(
            "subspace needs 4 records, found {}",
            ts.len()
        )));
    };
    SensitiveSubspace::from_parts(
        basis.clone(),
        center.data().to_vec(),
        flag.data().first() == Some(&1.0),
        eig.data().to_vec(),
    )
}

pub fn write_subspace(path: impl AsRef<Path>, sub: &SensitiveSubspace) -> Result<()> {
    write_container(path, &subspace_tensors(sub)?)
}

pub fn read_subspace(path: impl AsRef<Path>) -> Result<SensitiveSubspace> {
    subspace_from_tensors(&read_container(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::fit_subspace;
    use crate::synthtask::{generate_dataset, TaskSpec};

    #[test]
    fn dataset_round_trip() {
        let data = generate_dataset(5, &TaskSpec::default(), 3).unwrap();
        let back = dataset_from_tensors(&dataset_tensors(&data).unwrap()).unwrap();
        assert_eq!(back.len(), 5);
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(a.image, b.image);
            assert_eq!(a.mask, b.mask);
            assert_eq!(a.area, b.area);
            assert_eq!(a.class_label, b.class_label);
        }
    }

    #[test]
    fn bad_class_index_rejected() {
        let data = generate_dataset(2, &TaskSpec::default(), 1).unwrap();
        let mut ts = dataset_tensors(&data).unwrap();
        ts[2].set2(1, 1, 0.5);
        assert!(dataset_from_tensors(&ts).is_err());
        assert!(dataset_from_tensors(&ts[..2]).is_err());
    }

    #[test]
    fn params_and_subspace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = PipelineParams::init(3, 9);
        write_params(dir.path().join("p.ctx"), &p).unwrap();
        assert_eq!(read_params(dir.path().join("p.ctx")).unwrap(), p);

        let summaries = vec![vec![1.0, 0.0, 2.0], vec![0.5, 1.0, -1.0], vec![2.0, 2.0, 0.0]];
        let sub = fit_subspace(&summaries, 2).unwrap();
        write_subspace(dir.path().join("s.ctx"), &sub).unwrap();
        assert_eq!(read_subspace(dir.path().join("s.ctx")).unwrap(), sub);
    }
}
