//! Datasets: seeded Gaussian blobs, IDX image files, and a plain CSV format.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{Seed, DATA};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[N, D]`
    pub features: Tensor,
    pub labels: Vec<u32>,
    pub split: Split,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<u32>, split: Split, num_classes: usize) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(Error::shape(format!(
                "features {:?} do not match {} labels",
                features.shape(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::domain(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(Dataset {
            features,
            labels,
            split,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Sample indices whose label is `class`, in dataset order.
    pub fn indices_of(&self, class: u32) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// Sample indices whose label is in `classes`, in dataset order.
    pub fn indices_in(&self, classes: &[u32]) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| classes.contains(l))
            .map(|(i, _)| i)
            .collect()
    }

    /// Gathers rows into a `[idx.len(), D]` batch plus labels.
    pub fn gather(&self, idx: &[usize]) -> (Tensor, Vec<u32>) {
        (
            self.features.select_rows(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Checks that every class has samples in both splits.
pub fn validate_pair(train: &Dataset, test: &Dataset) -> Result<()> {
    if train.num_classes != test.num_classes {
        return Err(Error::invalid("train and test disagree on the number of classes"));
    }
    if train.dim() != test.dim() {
        return Err(Error::invalid("train and test feature widths differ"));
    }
    for c in 0..train.num_classes as u32 {
        if !train.labels.contains(&c) || !test.labels.contains(&c) {
            return Err(Error::invalid(format!("class {c} is missing from a split")));
        }
    }
    Ok(())
}

/// Class-balanced Gaussian blobs. Class means lie on a seeded random sphere
/// of radius `separation`; samples add unit-variance isotropic noise.
pub fn gen_blobs(
    num_classes: usize,
    dim: usize,
    n_train_per_class: usize,
    n_test_per_class: usize,
    separation: f64,
    seed: Seed,
) -> Result<(Dataset, Dataset)> {
    if !(separation > 0.0) {
        return Err(Error::invalid("separation must be > 0"));
    }
    if dim < 2 {
        return Err(Error::invalid("blob dimension must be >= 2"));
    }
    if num_classes == 0 || n_train_per_class == 0 || n_test_per_class == 0 {
        return Err(Error::invalid("blob counts must be positive"));
    }
    let mut rng = seed.stream_at(DATA, &[0]);
    let mut means = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let v: Vec<f64> = loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| separation * x / norm).collect();
            }
        };
        means.push(v);
    }
    let make = |split: Split, per_class: usize, stream: u64| -> Result<Dataset> {
        let mut rng = seed.stream_at(DATA, &[stream]);
        let mut data = Vec::with_capacity(num_classes * per_class * dim);
        let mut labels = Vec::with_capacity(num_classes * per_class);
        for (c, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                for m in mean {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    data.push(m + z);
                }
                labels.push(c as u32);
            }
        }
        Dataset::new(Tensor::new(vec![labels.len(), dim], data)?, labels, split, num_classes)
    };
    Ok((make(Split::Train, n_train_per_class, 1)?, make(Split::Test, n_test_per_class, 2)?))
}

/// Seeded Fisher-Yates permutation of `0..num_classes`.
pub fn class_order(num_classes: usize, seed: Seed) -> Vec<u32> {
    let mut order: Vec<u32> = (0..num_classes as u32).collect();
    order.shuffle(&mut seed.stream("class_order"));
    order
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(offset as u64, format!("truncated {what}")))
}

/// Reads an IDX image/label pair. Pixels are scaled to `[0, 1]` and each
/// image is flattened row-major.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let img = fs::read(images_path)?;
    let lab = fs::read(labels_path)?;
    decode_idx(&img, &lab, split)
}

pub fn decode_idx(img: &[u8], lab: &[u8], split: Split) -> Result<Dataset> {
    let magic = be_u32(img, 0, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(0, format!("image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let count = be_u32(img, 4, "image count")? as usize;
    let rows = be_u32(img, 8, "row count")? as usize;
    let cols = be_u32(img, 12, "column count")? as usize;
    let pixels = rows * cols;
    let expected = 16 + count * pixels;
    if img.len() != expected {
        return Err(Error::format(
            img.len().min(expected) as u64,
            format!("image file holds {} bytes, header implies {expected}", img.len()),
        ));
    }
    let lmagic = be_u32(lab, 0, "label magic")?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::format(0, format!("label magic {lmagic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let lcount = be_u32(lab, 4, "label count")? as usize;
    if lcount != count {
        return Err(Error::format(4, format!("{count} images but {lcount} labels")));
    }
    if lab.len() != 8 + lcount {
        return Err(Error::format(lab.len().min(8 + lcount) as u64, "label file length mismatch"));
    }
    let data = img[16..].iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<u32> = lab[8..].iter().map(|&l| u32::from(l)).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
    Dataset::new(Tensor::new(vec![count, pixels], data)?, labels, split, num_classes)
}

/// Encodes `u8` images (`[count][rows*cols]`) and labels as an IDX pair.
pub fn encode_idx(images: &[Vec<u8>], rows: usize, cols: usize, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + images.len() * rows * cols);
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    for im in images {
        img.extend_from_slice(im);
    }
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}

/// Reads `label,f0,f1,...` CSV. `num_classes` is one past the largest label.
pub fn load_csv(path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, split)
}

pub fn parse_csv(text: &str, split: Split) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format(0, "empty CSV"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"label") || cols.len() < 2 {
        return Err(Error::format(0, "CSV header must be `label,f0,f1,...`"));
    }
    let dim = cols.len() - 1;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dim + 1 {
            return Err(Error::format(lineno as u64, format!("line {} has {} fields, expected {}", lineno + 1, fields.len(), dim + 1)));
        }
        let label = fields[0]
            .parse::<u32>()
            .map_err(|e| Error::format(lineno as u64, format!("line {}: bad label: {e}", lineno + 1)))?;
        labels.push(label);
        for f in &fields[1..] {
            data.push(
                f.parse::<f64>()
                    .map_err(|e| Error::format(lineno as u64, format!("line {}: bad value: {e}", lineno + 1)))?,
            );
        }
    }
    let num_classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
    let n = labels.len();
    Dataset::new(Tensor::new(vec![n, dim], data)?, labels, split, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nearest_mean_accuracy(train: &Dataset, test: &Dataset) -> f64 {
        let d = train.dim();
        let means: Vec<Vec<f64>> = (0..train.num_classes as u32)
            .map(|c| {
                let idx = train.indices_of(c);
                let mut m = vec![0.0; d];
                for &i in &idx {
                    for (mj, x) in m.iter_mut().zip(train.features.row(i)) {
                        *mj += x / idx.len() as f64;
                    }
                }
                m
            })
            .collect();
        let correct = (0..test.len())
            .filter(|&i| {
                let x = test.features.row(i);
                let best = (0..means.len())
                    .min_by(|&a, &b| {
                        let da: f64 = means[a].iter().zip(x).map(|(m, v)| (m - v).powi(2)).sum();
                        let db: f64 = means[b].iter().zip(x).map(|(m, v)| (m - v).powi(2)).sum();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                best as u32 == test.labels[i]
            })
            .count();
        correct as f64 / test.len() as f64
    }

    #[test]
    fn wide_blobs_are_separable() {
        let (tr, te) = gen_blobs(2, 8, 50, 50, 100.0, Seed(1)).unwrap();
        validate_pair(&tr, &te).unwrap();
        assert_eq!(nearest_mean_accuracy(&tr, &te), 1.0);
    }

    #[test]
    fn blobs_are_deterministic() {
        let a = gen_blobs(4, 5, 10, 3, 2.0, Seed(7)).unwrap();
        let b = gen_blobs(4, 5, 10, 3, 2.0, Seed(7)).unwrap();
        assert_eq!(a, b);
        let c = gen_blobs(4, 5, 10, 3, 2.0, Seed(8)).unwrap();
        assert_ne!(a.0.features, c.0.features);
    }

    #[test]
    fn blobs_are_balanced() {
        let (tr, te) = gen_blobs(5, 3, 12, 4, 1.0, Seed(2)).unwrap();
        for c in 0..5 {
            assert_eq!(tr.indices_of(c).len(), 12);
            assert_eq!(te.indices_of(c).len(), 4);
        }
    }

    #[test]
    fn blob_preconditions() {
        assert!(gen_blobs(2, 1, 5, 5, 1.0, Seed(0)).is_err());
        assert!(gen_blobs(2, 3, 5, 5, 0.0, Seed(0)).is_err());
    }

    #[test]
    fn idx_pixel_scaling() {
        let (img, lab) = encode_idx(&[vec![0, 255, 0, 255]], 2, 2, &[3]);
        let ds = decode_idx(&img, &lab, Split::Train).unwrap();
        assert_eq!(ds.features.data(), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(ds.labels, vec![3]);
        assert_eq!(ds.num_classes, 4);
    }

    #[test]
    fn idx_count_mismatch() {
        let (img, _) = encode_idx(&[vec![1, 2], vec![3, 4]], 1, 2, &[0, 1]);
        let (_, lab) = encode_idx(&[vec![1, 2]], 1, 2, &[0]);
        assert!(matches!(decode_idx(&img, &lab, Split::Train), Err(Error::Format { .. })));
    }

    #[test]
    fn idx_bad_magic() {
        let (mut img, lab) = encode_idx(&[vec![1, 2]], 1, 2, &[0]);
        img[3] = 0x01;
        assert!(decode_idx(&img, &lab, Split::Train).is_err());
        let (img, mut lab) = encode_idx(&[vec![1, 2]], 1, 2, &[0]);
        lab[3] = 0x03;
        assert!(decode_idx(&img, &lab, Split::Train).is_err());
    }

    #[test]
    fn idx_truncated_images() {
        let (img, lab) = encode_idx(&[vec![1, 2, 3, 4]], 2, 2, &[0]);
        assert!(decode_idx(&img[..img.len() - 1], &lab, Split::Train).is_err());
    }

    #[test]
    fn csv_parses() {
        let ds = parse_csv("label,f0,f1\n1,0.5,-2\n0,1e-3,3\n", Split::Test).unwrap();
        assert_eq!(ds.labels, vec![1, 0]);
        assert_eq!(ds.features.data(), &[0.5, -2.0, 1e-3, 3.0]);
        assert_eq!(ds.num_classes, 2);
        assert!(parse_csv("y,f0\n1,2\n", Split::Test).is_err());
        assert!(parse_csv("label,f0\n1,2,3\n", Split::Test).is_err());
    }

    #[test]
    fn class_order_is_permutation() {
        let a = class_order(100, Seed(5));
        assert_eq!(a, class_order(100, Seed(5)));
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<u32>>());
        assert_ne!(a, class_order(100, Seed(6)));
    }
}
