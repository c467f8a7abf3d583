//! Datasets: MNIST ingestion, class filtering, splitting, pixel statistics
//! and synthetic samples labelled by analytic oracles.

mod idx;
mod synth;

use std::io::Write;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use idx::{
    encode_idx_images, encode_idx_labels, load_idx_images, load_idx_labels, parse_idx_images,
    parse_idx_labels, IdxImages, IMAGE_MAGIC, LABEL_MAGIC,
};
pub use synth::{synth_dataset, Sampling};

use crate::diffcore::rows;
use crate::{Error, Result};

/// `m` samples of `n` features with `k`-dimensional targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    targets: Array2<f64>,
    class_labels: Option<Vec<usize>>,
}

/// How class labels are turned into target rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetEncoding {
    /// One column per listed class.
    OneHot,
    /// A single column: 1 for the second listed class, 0 for the first.
    Binary,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        targets: Array2<f64>,
        class_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if features.nrows() != targets.nrows() {
            return Err(Error::shape(format!(
                "{} feature rows but {} target rows",
                features.nrows(),
                targets.nrows()
            )));
        }
        if let Some(labels) = &class_labels {
            if labels.len() != features.nrows() {
                return Err(Error::shape(format!(
                    "{} class labels for {} samples",
                    labels.len(),
                    features.nrows()
                )));
            }
        }
        Ok(Dataset {
            features,
            targets,
            class_labels,
        })
    }

    /// Builds a labelled image dataset from an IDX pair: features are pixels
    /// scaled to `[0, 1]`, targets are one-hot over the ten digit classes.
    pub fn from_idx(images: &IdxImages, labels: &[u8]) -> Result<Self> {
        if images.count != labels.len() {
            return Err(Error::shape(format!(
                "{} images but {} labels",
                images.count,
                labels.len()
            )));
        }
        let features = normalize_and_flatten(images);
        let class_labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        let targets = one_hot(&class_labels, &(0..10).collect::<Vec<_>>());
        Dataset::new(features, targets, Some(class_labels))
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn targets(&self) -> &Array2<f64> {
        &self.targets
    }

    pub fn class_labels(&self) -> Option<&[usize]> {
        self.class_labels.as_deref()
    }

    pub fn sample_count(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_width(&self) -> usize {
        self.features.ncols()
    }

    pub fn target_width(&self) -> usize {
        self.targets.ncols()
    }

    /// Samples at the given indices, in that order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: rows(self.features.view(), idx),
            targets: rows(self.targets.view(), idx),
            class_labels: self
                .class_labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Random subset of `count` samples (all of them when `count` is larger).
    pub fn subsample(&self, count: usize, seed: u64) -> Dataset {
        let mut idx: Vec<usize> = (0..self.sample_count()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(count);
        idx.sort_unstable();
        self.select(&idx)
    }

    /// Replaces the targets with an encoding of the class labels over
    /// `classes`.
    pub fn with_class_targets(&self, classes: &[usize], encoding: TargetEncoding) -> Result<Dataset> {
        let labels = self
            .class_labels
            .as_ref()
            .ok_or_else(|| Error::config("dataset has no class labels"))?;
        if let Some(bad) = labels.iter().find(|l| !classes.contains(l)) {
            return Err(Error::config(format!("class {bad} is not in {classes:?}")));
        }
        let targets = match encoding {
            TargetEncoding::OneHot => one_hot(labels, classes),
            TargetEncoding::Binary => {
                if classes.len() != 2 {
                    return Err(Error::config(format!(
                        "binary targets need exactly two classes, got {classes:?}"
                    )));
                }
                Array2::from_shape_fn((labels.len(), 1), |(i, _)| {
                    if labels[i] == classes[1] {
                        1.0
                    } else {
                        0.0
                    }
                })
            }
        };
        Dataset::new(self.features.clone(), targets, self.class_labels.clone())
    }

    /// Sorted distinct class labels.
    pub fn classes(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.class_labels.clone().unwrap_or_default();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// CSV with header `x1,...,xn,y1,...,yk`, one row per sample.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.feature_width())
            .map(|i| format!("x{i}"))
            .chain((1..=self.target_width()).map(|i| format!("y{i}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (x, y) in self.features.rows().into_iter().zip(self.targets.rows()) {
            let line: Vec<String> = x.iter().chain(y.iter()).map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

fn one_hot(labels: &[usize], classes: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((labels.len(), classes.len()), |(i, j)| {
        if labels[i] == classes[j] {
            1.0
        } else {
            0.0
        }
    })
}

/// Pixels divided by 255, each image flattened row-major into one row.
pub fn normalize_and_flatten(images: &IdxImages) -> Array2<f64> {
    let width = images.rows * images.cols;
    Array2::from_shape_fn((images.count, width), |(i, j)| {
        images.pixels[i * width + j] as f64 / 255.0
    })
}

/// Keeps the samples whose class label is in `keep`, preserving order.
pub fn filter_classes(dataset: &Dataset, keep: &[usize]) -> Result<Dataset> {
    if keep.is_empty() {
        return Err(Error::Empty("no classes to keep".into()));
    }
    let labels = dataset
        .class_labels()
        .ok_or_else(|| Error::config("dataset has no class labels"))?;
    let idx: Vec<usize> = (0..labels.len()).filter(|&i| keep.contains(&labels[i])).collect();
    if idx.is_empty() {
        return Err(Error::Empty(format!("no samples of classes {keep:?}")));
    }
    Ok(dataset.select(&idx))
}

/// Random split in the ratio `train:test`; the training side gets
/// `⌈train·m/(train+test)⌉` samples.
pub fn split(dataset: &Dataset, ratio: (usize, usize), seed: u64) -> Result<(Dataset, Dataset)> {
    let (a, b) = ratio;
    if a == 0 || b == 0 {
        return Err(Error::config(format!("split ratio {a}:{b} must have positive parts")));
    }
    let m = dataset.sample_count();
    let train = (a * m).div_ceil(a + b);
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (tr, te) = idx.split_at(train);
    Ok((dataset.select(tr), dataset.select(te)))
}

/// Per-feature maximum and mean over all samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelStats {
    pub max_map: Array1<f64>,
    pub mean_map: Array1<f64>,
}

pub fn pixel_stats(dataset: &Dataset) -> Result<PixelStats> {
    if dataset.sample_count() == 0 {
        return Err(Error::Empty("pixel statistics of an empty dataset".into()));
    }
    let f = dataset.features();
    let max_map = f.fold_axis(Axis(0), f64::NEG_INFINITY, |m, &v| m.max(v));
    let mean_map = f.mean_axis(Axis(0)).expect("non-empty");
    Ok(PixelStats { max_map, mean_map })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn labelled(n: usize) -> Dataset {
        let features = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let targets = one_hot(&labels, &[0, 1, 2]);
        Dataset::new(features, targets, Some(labels)).unwrap()
    }

    #[test]
    fn normalization_scales_and_flattens() {
        let images = IdxImages {
            count: 2,
            rows: 2,
            cols: 2,
            pixels: vec![0, 255, 51, 0, 0, 0, 0, 0],
        };
        let f = normalize_and_flatten(&images);
        assert_eq!(f.dim(), (2, 4));
        assert_eq!(f.row(0), array![0.0, 1.0, 0.2, 0.0]);
        assert!(f.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn filter_preserves_order_and_rejects_empty() {
        let d = labelled(9);
        let f = filter_classes(&d, &[0, 2]).unwrap();
        assert_eq!(f.class_labels().unwrap(), &[0, 2, 0, 2, 0, 2]);
        assert_eq!(f.features().row(1), d.features().row(2));
        assert_eq!(filter_classes(&d, &[0, 1, 2]).unwrap(), d);
        assert!(matches!(filter_classes(&d, &[]), Err(Error::Empty(_))));
        assert!(filter_classes(&d, &[7]).is_err());
    }

    #[test]
    fn split_sizes_are_disjoint_and_deterministic() {
        let d = labelled(8);
        let (tr, te) = split(&d, (3, 1), 4).unwrap();
        assert_eq!((tr.sample_count(), te.sample_count()), (6, 2));
        let mut seen: Vec<f64> = tr
            .features()
            .column(0)
            .iter()
            .chain(te.features().column(0).iter())
            .copied()
            .collect();
        seen.sort_by(f64::total_cmp);
        let all: Vec<f64> = (0..8).map(|i| (2 * i) as f64).collect();
        assert_eq!(seen, all);
        assert_eq!(split(&d, (3, 1), 4).unwrap(), (tr, te));
        assert!(split(&d, (0, 1), 4).is_err());
    }

    #[test]
    fn split_counts_for_the_zero_one_subset() {
        // ⌈3·12665/4⌉ = 9499
        let d = Dataset::new(Array2::zeros((12665, 1)), Array2::zeros((12665, 1)), None).unwrap();
        let (tr, te) = split(&d, (3, 1), 0).unwrap();
        assert_eq!((tr.sample_count(), te.sample_count()), (9499, 3166));
    }

    #[test]
    fn pixel_stats_small_cases() {
        let one = Dataset::new(array![[0.2, 0.7]], array![[0.0]], None).unwrap();
        let s = pixel_stats(&one).unwrap();
        assert_eq!(s.max_map, array![0.2, 0.7]);
        assert_eq!(s.mean_map, array![0.2, 0.7]);

        let two = Dataset::new(array![[0.0, 0.0], [1.0, 1.0]], array![[0.0], [0.0]], None).unwrap();
        let s = pixel_stats(&two).unwrap();
        assert_eq!(s.max_map, array![1.0, 1.0]);
        assert_eq!(s.mean_map, array![0.5, 0.5]);
    }

    #[test]
    fn class_targets() {
        let d = labelled(4);
        let oh = d.with_class_targets(&[0, 1, 2], TargetEncoding::OneHot).unwrap();
        assert_eq!(oh.targets().row(3), array![1.0, 0.0, 0.0]);
        let two = filter_classes(&d, &[0, 1]).unwrap();
        let bin = two.with_class_targets(&[0, 1], TargetEncoding::Binary).unwrap();
        assert_eq!(bin.targets().column(0).to_vec(), vec![0.0, 1.0, 0.0]);
        assert!(d.with_class_targets(&[0, 1], TargetEncoding::Binary).is_err());
    }

    #[test]
    fn csv_header() {
        let d = Dataset::new(array![[1.0, 2.5]], array![[7.25]], None).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x1,x2,y1\n1,2.5,7.25\n");
    }
}
