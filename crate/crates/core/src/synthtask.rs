//! Synthetic segmentation benchmark.
//!
//! Each sample is a single bright blob on a darker background. Two classes
//! differ in difficulty:
//!
//! * `easy`: high-contrast disks with little noise;
//! * `hard`: rotated ellipses at half the contrast and twice the noise.
//!
//! The ground-truth metric is the exact pixel count of the rasterised mask.
//! Every sample draws from its own ChaCha stream keyed by `(seed, index)`, so
//! generation order (serial or parallel) never changes the output.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Easy,
    Hard,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::Easy, ClassLabel::Hard];

    pub fn index(self) -> usize {
        match self {
            ClassLabel::Easy => 0,
            ClassLabel::Hard => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Easy => "easy",
            ClassLabel::Hard => "hard",
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    /// `[1, H, W]`, intensities in `[0, 1]`.
    pub image: Tensor,
    /// `[1, H, W]`, entries in `{0, 1}`.
    pub mask: Tensor,
    /// Pixel count of `mask`.
    pub area: f64,
    pub class_label: ClassLabel,
}

/// Appearance of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    /// Uniform range for each semi-axis (radius for disks), in pixels.
    pub semi_axis: (f64, f64),
    /// Disks use one radius for both axes; otherwise axes and rotation are drawn independently.
    pub circular: bool,
    pub contrast: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpec {
    pub height: usize,
    pub width: usize,
    /// Probability that a sample belongs to the hard class.
    pub hard_fraction: f64,
    pub background: f64,
    /// Per-sample background jitter half-width.
    pub background_jitter: f64,
    /// Gaussian blur sigma in pixels applied before noise; 0 disables.
    pub blur: f64,
    pub easy: ClassSpec,
    pub hard: ClassSpec,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            hard_fraction: 0.5,
            background: 0.2,
            background_jitter: 0.05,
            blur: 0.8,
            easy: ClassSpec {
                semi_axis: (5.0, 10.0),
                circular: true,
                contrast: 0.6,
                noise: 0.08,
            },
            hard: ClassSpec {
                semi_axis: (4.0, 12.0),
                circular: false,
                contrast: 0.3,
                noise: 0.16,
            },
        }
    }
}

impl TaskSpec {
    pub fn class(&self, label: ClassLabel) -> &ClassSpec {
        match label {
            ClassLabel::Easy => &self.easy,
            ClassLabel::Hard => &self.hard,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.hard_fraction) {
            return Err(Error::InvalidArgument(format!(
                "hard_fraction {} outside [0, 1]",
                self.hard_fraction
            )));
        }
        for label in ClassLabel::ALL {
            let c = self.class(label);
            let (lo, hi) = c.semi_axis;
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::InvalidArgument(format!(
                    "{} semi-axis range ({lo}, {hi}) is invalid",
                    label.name()
                )));
            }
            let need = 2.0 * hi + 2.0;
            if need > self.height.min(self.width) as f64 {
                return Err(Error::InvalidArgument(format!(
                    "image {}x{} too small for {} semi-axis up to {hi}",
                    self.height,
                    self.width,
                    label.name()
                )));
            }
            if c.noise < 0.0 || c.contrast < 0.0 {
                return Err(Error::InvalidArgument("noise and contrast must be non-negative".into()));
            }
        }
        if self.blur < 0.0 {
            return Err(Error::InvalidArgument("blur must be non-negative".into()));
        }
        Ok(())
    }
}

/// The per-sample random stream used by [`generate_dataset`].
pub fn sample_stream(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Geometry of one blob.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
}

impl Ellipse {
    /// Whether the centre of pixel `(x, y)` lies inside the ellipse.
    pub fn contains_pixel(&self, x: usize, y: usize) -> bool {
        let dx = x as f64 + 0.5 - self.cx;
        let dy = y as f64 + 0.5 - self.cy;
        let (s, c) = self.theta.sin_cos();
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v <= 1.0
    }

    pub fn rasterize(&self, h: usize, w: usize) -> Tensor {
        let mut m = Tensor::zeros(&[1, h, w]);
        for y in 0..h {
            for x in 0..w {
                if self.contains_pixel(x, y) {
                    m.data_mut()[y * w + x] = 1.0;
                }
            }
        }
        m
    }
}

/// Draws class and blob geometry; the first draws of every sample stream.
pub fn draw_geometry(spec: &TaskSpec, rng: &mut ChaCha8Rng) -> (ClassLabel, Ellipse) {
    let label = if rng.random::<f64>() < spec.hard_fraction {
        ClassLabel::Hard
    } else {
        ClassLabel::Easy
    };
    let cs = spec.class(label);
    let (lo, hi) = cs.semi_axis;
    let axis = |rng: &mut ChaCha8Rng| if hi > lo { rng.random_range(lo..hi) } else { lo };
    let a = axis(rng);
    let (b, theta) = if cs.circular {
        (a, 0.0)
    } else {
        (axis(rng), rng.random_range(0.0..std::f64::consts::PI))
    };
    let ext = a.max(b);
    let centre = |len: usize, rng: &mut ChaCha8Rng| {
        let (l, r) = (ext, len as f64 - ext);
        if r > l {
            rng.random_range(l..r)
        } else {
            len as f64 / 2.0
        }
    };
    let cx = centre(spec.width, rng);
    let cy = centre(spec.height, rng);
    (label, Ellipse { cx, cy, a, b, theta })
}

fn gaussian_blur(plane: &mut [f64], h: usize, w: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let pass = |src: &[f64], dst: &mut [f64], horizontal: bool| {
        for y in 0..h {
            for x in 0..w {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (ki, d) in (-radius..=radius).enumerate() {
                    let (sx, sy) = if horizontal {
                        (x as isize + d, y as isize)
                    } else {
                        (x as isize, y as isize + d)
                    };
                    if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                        continue;
                    }
                    acc += kernel[ki] * src[sy as usize * w + sx as usize];
                    norm += kernel[ki];
                }
                dst[y * w + x] = acc / norm;
            }
        }
    };
    let mut tmp = vec![0.0; h * w];
    pass(plane, &mut tmp, true);
    pass(&tmp, plane, false);
}

fn generate_one(spec: &TaskSpec, seed: u64, index: usize) -> Sample {
    let (h, w) = (spec.height, spec.width);
    let mut rng = sample_stream(seed, index);
    let (label, ellipse) = draw_geometry(spec, &mut rng);
    let cs = spec.class(label);
    let mask = ellipse.rasterize(h, w);
    let bg = spec.background
        + if spec.background_jitter > 0.0 {
            rng.random_range(-spec.background_jitter..spec.background_jitter)
        } else {
            0.0
        };
    let mut plane: Vec<f64> = mask.data().iter().map(|&m| bg + cs.contrast * m).collect();
    gaussian_blur(&mut plane, h, w, spec.blur);
    if cs.noise > 0.0 {
        let normal = Normal::new(0.0, cs.noise).expect("noise is non-negative");
        for v in plane.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    plane.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    let area = mask.sum();
    Sample {
        image: Tensor::new(vec![1, h, w], plane).expect("shape matches"),
        mask,
        area,
        class_label: label,
    }
}

/// `n` samples, deterministic in `seed`.
pub fn generate_dataset(n: usize, spec: &TaskSpec, seed: u64) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::Empty("dataset size must be at least 1"));
    }
    spec.validate()?;
    Ok((0..n).into_par_iter().map(|i| generate_one(spec, seed, i)).collect())
}

/// Train / calibration / test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub cal: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.5,
            cal: 0.25,
            test: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub ratios: SplitRatios,
    pub seed: u64,
    /// Per-class `(cal_fraction, test_fraction)` of that class's held-out
    /// samples. Classes without an entry fill the remaining calibration
    /// capacity implied by `ratios`.
    pub shift: BTreeMap<ClassLabel, (f64, f64)>,
}

impl SplitSpec {
    pub fn new(ratios: SplitRatios, seed: u64) -> Self {
        Self {
            ratios,
            seed,
            shift: BTreeMap::new(),
        }
    }

    pub fn with_shift(mut self, label: ClassLabel, cal: f64, test: f64) -> Self {
        self.shift.insert(label, (cal, test));
        self
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.ratios;
        if [r.train, r.cal, r.test].iter().any(|&v| !(0.0..=1.0).contains(&v))
            || (r.train + r.cal + r.test - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidArgument(format!(
                "split ratios ({}, {}, {}) must be in [0, 1] and sum to 1",
                r.train, r.cal, r.test
            )));
        }
        if r.cal + r.test <= 0.0 {
            return Err(Error::EmptyPartition("calibration and test ratios are both zero"));
        }
        for (label, &(c, t)) in &self.shift {
            if !(0.0..=1.0).contains(&c) || !(0.0..=1.0).contains(&t) || (c + t - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "shift fractions for {} must lie in [0, 1] and sum to 1, got ({c}, {t})",
                    label.name()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub cal: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedSplits {
    pub splits: Splits,
    /// Class prevalences, indexed by [`ClassLabel::index`].
    pub cal_prevalence: [f64; 2],
    pub test_prevalence: [f64; 2],
}

pub fn prevalence(dataset: &[Sample], idx: &[usize]) -> [f64; 2] {
    let mut counts = [0usize; 2];
    for &i in idx {
        counts[dataset[i].class_label.index()] += 1;
    }
    let n = idx.len().max(1) as f64;
    [counts[0] as f64 / n, counts[1] as f64 / n]
}

/// Assigns an already shuffled holdout to calibration and test.
fn assign_holdout(dataset: &[Sample], holdout: &[usize], spec: &SplitSpec) -> (Vec<usize>, Vec<usize>) {
    let r = &spec.ratios;
    let target_cal = (holdout.len() as f64 * r.cal / (r.cal + r.test)).round() as usize;
    let (mut cal, mut test) = (Vec::new(), Vec::new());
    if spec.shift.is_empty() {
        cal.extend_from_slice(&holdout[..target_cal]);
        test.extend_from_slice(&holdout[target_cal..]);
    } else {
        let mut rest = Vec::new();
        for label in ClassLabel::ALL {
            let members: Vec<usize> = holdout
                .iter()
                .copied()
                .filter(|&i| dataset[i].class_label == label)
                .collect();
            match spec.shift.get(&label) {
                Some(&(fc, _)) => {
                    let k = (members.len() as f64 * fc).round() as usize;
                    cal.extend_from_slice(&members[..k]);
                    test.extend_from_slice(&members[k..]);
                }
                None => rest.extend(members),
            }
        }
        // Unlisted classes keep their shuffled order and top up calibration.
        let mut in_rest = vec![false; dataset.len()];
        rest.iter().for_each(|&i| in_rest[i] = true);
        let mut rest_order: Vec<usize> = holdout.iter().copied().filter(|&i| in_rest[i]).collect();
        let fill = target_cal.saturating_sub(cal.len()).min(rest_order.len());
        test.extend(rest_order.drain(fill..));
        cal.extend(rest_order);
    }
    cal.sort_unstable();
    test.sort_unstable();
    (cal, test)
}

fn finish(train: Vec<usize>, cal: Vec<usize>, test: Vec<usize>) -> Result<Splits> {
    if cal.is_empty() {
        return Err(Error::EmptyPartition("calibration set is empty"));
    }
    if test.is_empty() {
        return Err(Error::EmptyPartition("test set is empty"));
    }
    Ok(Splits { train, cal, test })
}

/// Uniformly shuffled train / cal / test partition (class-shifted when
/// `spec.shift` is non-empty).
pub fn make_splits(dataset: &[Sample], spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let n = dataset.len();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_train = ((n as f64 * spec.ratios.train).round() as usize).min(n);
    let mut train = perm[..n_train].to_vec();
    train.sort_unstable();
    let (cal, test) = assign_holdout(dataset, &perm[n_train..], spec);
    finish(train, cal, test)
}

/// Keeps `train` fixed and redraws calibration / test from the rest.
pub fn resplit_holdout(dataset: &[Sample], train: &[usize], spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let mut in_train = vec![false; dataset.len()];
    for &i in train {
        in_train[i] = true;
    }
    let mut holdout: Vec<usize> = (0..dataset.len()).filter(|&i| !in_train[i]).collect();
    holdout.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let (cal, test) = assign_holdout(dataset, &holdout, spec);
    let mut train = train.to_vec();
    train.sort_unstable();
    finish(train, cal, test)
}

fn with_prevalences(dataset: &[Sample], splits: Splits) -> Result<ShiftedSplits> {
    let cal_prevalence = prevalence(dataset, &splits.cal);
    let test_prevalence = prevalence(dataset, &splits.test);
    for label in ClassLabel::ALL {
        if cal_prevalence[label.index()] == 0.0 {
            return Err(Error::ClassAbsent(label.name(), "calibration set"));
        }
        if test_prevalence[label.index()] == 0.0 {
            return Err(Error::ClassAbsent(label.name(), "test set"));
        }
    }
    Ok(ShiftedSplits {
        splits,
        cal_prevalence,
        test_prevalence,
    })
}

fn both_classes(dataset: &[Sample]) -> Result<()> {
    for label in ClassLabel::ALL {
        if !dataset.iter().any(|s| s.class_label == label) {
            return Err(Error::ClassAbsent(label.name(), "dataset"));
        }
    }
    Ok(())
}

/// [`make_splits`] plus the exact class prevalences of the resulting
/// calibration and test sets.
pub fn make_shifted_splits(dataset: &[Sample], spec: &SplitSpec) -> Result<ShiftedSplits> {
    both_classes(dataset)?;
    with_prevalences(dataset, make_splits(dataset, spec)?)
}

/// [`resplit_holdout`] plus class prevalences.
pub fn resplit_shifted(dataset: &[Sample], train: &[usize], spec: &SplitSpec) -> Result<ShiftedSplits> {
    both_classes(dataset)?;
    with_prevalences(dataset, resplit_holdout(dataset, train, spec)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled(labels: &[ClassLabel]) -> Vec<Sample> {
        labels
            .iter()
            .map(|&l| Sample {
                image: Tensor::zeros(&[1, 1, 1]),
                mask: Tensor::zeros(&[1, 1, 1]),
                area: 0.0,
                class_label: l,
            })
            .collect()
    }

    #[test]
    fn fixed_disk_is_deterministic() {
        let mut spec = TaskSpec {
            hard_fraction: 0.0,
            blur: 0.0,
            background_jitter: 0.0,
            ..TaskSpec::default()
        };
        spec.easy.semi_axis = (7.0, 7.0);
        spec.easy.noise = 0.0;
        let a = generate_dataset(5, &spec, 42).unwrap();
        let b = generate_dataset(5, &spec, 42).unwrap();
        for (s, t) in a.iter().zip(&b) {
            assert_eq!(s.image, t.image);
            assert_eq!(s.area, t.area);
            assert_eq!(s.area, s.mask.sum());
            // Lattice points of a radius-7 disk land within a few pixels of pi*r^2.
            assert!((s.area - std::f64::consts::PI * 49.0).abs() < 12.0);
        }
    }

    #[test]
    fn empty_request_fails() {
        assert!(matches!(
            generate_dataset(0, &TaskSpec::default(), 1),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn too_small_image_fails() {
        let spec = TaskSpec {
            height: 16,
            width: 16,
            ..TaskSpec::default()
        };
        assert!(generate_dataset(3, &spec, 1).is_err());
    }

    #[test]
    fn samples_satisfy_invariants() {
        let data = generate_dataset(40, &TaskSpec::default(), 3).unwrap();
        for s in &data {
            assert_eq!(s.image.shape(), &[1, 32, 32]);
            assert!(s.mask.data().iter().all(|&m| m == 0.0 || m == 1.0));
            assert!(s.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!(s.area, s.mask.sum());
        }
        assert!(data.iter().any(|s| s.class_label == ClassLabel::Hard));
        assert!(data.iter().any(|s| s.class_label == ClassLabel::Easy));
    }

    #[test]
    fn parallel_equals_serial() {
        let spec = TaskSpec::default();
        let par = generate_dataset(16, &spec, 9).unwrap();
        for (i, s) in par.iter().enumerate() {
            let one = generate_one(&spec, 9, i);
            assert_eq!(one.image, s.image);
        }
    }

    #[test]
    fn split_sizes() {
        let data = labelled(&[ClassLabel::Easy; 100]);
        let s = make_splits(&data, &SplitSpec::new(SplitRatios::default(), 1)).unwrap();
        assert_eq!((s.train.len(), s.cal.len(), s.test.len()), (50, 25, 25));
        let mut all: Vec<usize> = s.train.iter().chain(&s.cal).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn seeds_change_permutation_not_sizes() {
        let data = labelled(&[ClassLabel::Easy; 100]);
        let a = make_splits(&data, &SplitSpec::new(SplitRatios::default(), 1)).unwrap();
        let b = make_splits(&data, &SplitSpec::new(SplitRatios::default(), 2)).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.cal.len(), b.cal.len());
        assert_eq!(a.test.len(), b.test.len());
    }

    #[test]
    fn easy_shift_fractions() {
        let labels: Vec<ClassLabel> = (0..200)
            .map(|i| if i % 2 == 0 { ClassLabel::Easy } else { ClassLabel::Hard })
            .collect();
        let data = labelled(&labels);
        let spec = SplitSpec::new(SplitRatios::default(), 5).with_shift(ClassLabel::Easy, 0.6, 0.4);
        let s = make_splits(&data, &spec).unwrap();
        let easy_out = s
            .cal
            .iter()
            .chain(&s.test)
            .filter(|&&i| data[i].class_label == ClassLabel::Easy)
            .count();
        let easy_cal = s
            .cal
            .iter()
            .filter(|&&i| data[i].class_label == ClassLabel::Easy)
            .count();
        let want = 0.6 * easy_out as f64;
        assert!((easy_cal as f64 - want).abs() <= 1.0, "{easy_cal} vs {want}");
    }

    #[test]
    fn shifted_prevalences_by_counting() {
        // 40 easy / 60 hard outside train; hard split 70/30, easy split evenly.
        let mut labels = vec![ClassLabel::Easy; 40];
        labels.extend(vec![ClassLabel::Hard; 60]);
        let data = labelled(&labels);
        let ratios = SplitRatios {
            train: 0.0,
            cal: 0.5,
            test: 0.5,
        };
        let spec = SplitSpec::new(ratios, 3)
            .with_shift(ClassLabel::Hard, 0.7, 0.3)
            .with_shift(ClassLabel::Easy, 0.5, 0.5);
        let s = make_shifted_splits(&data, &spec).unwrap();
        // Counting oracle: hard 42 cal / 18 test, easy 20 / 20.
        assert_eq!(s.splits.cal.len(), 62);
        assert_eq!(s.splits.test.len(), 38);
        assert!((s.cal_prevalence[1] - 42.0 / 62.0).abs() < 1e-15);
        assert!((s.test_prevalence[1] - 18.0 / 38.0).abs() < 1e-15);
        assert!((s.cal_prevalence[0] - 20.0 / 62.0).abs() < 1e-15);
        assert!((s.test_prevalence[0] - 20.0 / 38.0).abs() < 1e-15);
    }

    #[test]
    fn undersampling_hard_in_cal() {
        let labels: Vec<ClassLabel> = (0..400)
            .map(|i| if i % 2 == 0 { ClassLabel::Easy } else { ClassLabel::Hard })
            .collect();
        let data = labelled(&labels);
        let spec = SplitSpec::new(SplitRatios::default(), 8).with_shift(ClassLabel::Hard, 0.3, 0.7);
        let s = make_shifted_splits(&data, &spec).unwrap();
        assert!(s.cal_prevalence[1] < s.test_prevalence[1]);
    }

    #[test]
    fn no_shift_matches_make_splits() {
        let labels: Vec<ClassLabel> = (0..60)
            .map(|i| if i % 3 == 0 { ClassLabel::Hard } else { ClassLabel::Easy })
            .collect();
        let data = labelled(&labels);
        let spec = SplitSpec::new(SplitRatios::default(), 4);
        assert_eq!(
            make_shifted_splits(&data, &spec).unwrap().splits,
            make_splits(&data, &spec).unwrap()
        );
    }

    #[test]
    fn absent_class_errors() {
        let labels: Vec<ClassLabel> = (0..60)
            .map(|i| if i % 2 == 0 { ClassLabel::Hard } else { ClassLabel::Easy })
            .collect();
        let data = labelled(&labels);
        let spec = SplitSpec::new(SplitRatios::default(), 4).with_shift(ClassLabel::Hard, 1.0, 0.0);
        assert!(matches!(
            make_shifted_splits(&data, &spec),
            Err(Error::ClassAbsent("hard", _))
        ));
        let only_easy = labelled(&[ClassLabel::Easy; 10]);
        assert!(make_shifted_splits(&only_easy, &SplitSpec::new(SplitRatios::default(), 1)).is_err());
    }

    #[test]
    fn empty_partitions_error() {
        let data = labelled(&[ClassLabel::Easy; 3]);
        let ratios = SplitRatios {
            train: 0.9,
            cal: 0.05,
            test: 0.05,
        };
        assert!(matches!(
            make_splits(&data, &SplitSpec::new(ratios, 1)),
            Err(Error::EmptyPartition(_))
        ));
    }

    #[test]
    fn resplit_keeps_train() {
        let data = labelled(&[ClassLabel::Easy; 80]);
        let base = make_splits(&data, &SplitSpec::new(SplitRatios::default(), 1)).unwrap();
        let again = resplit_holdout(&data, &base.train, &SplitSpec::new(SplitRatios::default(), 99)).unwrap();
        assert_eq!(again.train, base.train);
        assert_eq!(again.cal.len(), 20);
        assert_ne!(again.cal, base.cal);
    }
}
