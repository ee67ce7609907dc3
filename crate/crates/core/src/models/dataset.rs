//! Synthetic image classification data.
//!
//! Every class owns two smooth (low-frequency DCT) signatures on top of a
//! shared base image:
//!
//! * a dense, low-amplitude pattern that is highly predictive in aggregate
//!   but small per pixel, so an 8/255 ℓ∞ perturbation can overturn it;
//! * a larger-amplitude pattern that survives such perturbations but is shown
//!   with the wrong class signature with probability `robust_corruption`.
//!
//! Samples are `clamp(base + a·dense[y] + b·robust[r] + N(0, σ²))` where `r`
//! equals the label except for corrupted draws.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dct::DctPlan;
use crate::error::{config, contract, Error, Result};
use crate::rng::{RngStream, StreamRng};
use crate::tensor::{ImageTensor, Shape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub shape: Shape,
    /// Samples per class before the 80/20 split.
    pub n_per_class: usize,
    pub noise_sigma: f64,
    /// Peak amplitude of the dense class pattern.
    pub signal_amplitude: f64,
    /// Peak amplitude of the robust class pattern.
    pub robust_amplitude: f64,
    /// Probability that a sample carries another class's robust pattern.
    pub robust_corruption: f64,
    /// DCT coefficients with both indices below this cutoff are populated.
    pub frequency_cutoff: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            shape: Shape {
                channels: 1,
                height: 16,
                width: 16,
            },
            n_per_class: 125,
            noise_sigma: 0.04,
            signal_amplitude: 0.04,
            robust_amplitude: 0.25,
            robust_corruption: 0.2,
            frequency_cutoff: 4,
            seed: 7,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        Shape::new(self.shape.channels, self.shape.height, self.shape.width)?;
        if self.num_classes < 2 {
            return Err(config("num_classes must be at least 2"));
        }
        if self.n_per_class < 2 {
            return Err(config("n_per_class must be at least 2"));
        }
        if !(self.noise_sigma > 0.0) {
            return Err(config("noise_sigma must be positive"));
        }
        if self.signal_amplitude < 0.0 || self.robust_amplitude < 0.0 {
            return Err(config("pattern amplitudes must be non-negative"));
        }
        if self.signal_amplitude + self.robust_amplitude >= 0.3 {
            return Err(config("signal_amplitude + robust_amplitude must stay below 0.3"));
        }
        if !(0.0..1.0).contains(&self.robust_corruption) {
            return Err(config("robust_corruption must lie in [0, 1)"));
        }
        if self.frequency_cutoff < 2 {
            return Err(config("frequency_cutoff must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub image: ImageTensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub num_classes: usize,
    pub shape: Shape,
    /// Noise-free class images (`base + a·dense + b·robust`, same class).
    pub class_means: Vec<ImageTensor>,
    pub noise_sigma: f64,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Smooth random pattern: random low-frequency DCT coefficients, inverted.
fn smooth_pattern(plan: &DctPlan, cutoff: usize, include_dc: bool, rng: &mut StreamRng) -> ImageTensor {
    let shape = plan.shape();
    let mut coeffs = ImageTensor::zeros(shape);
    let data = coeffs.as_mut_slice();
    for c in 0..shape.channels {
        for u in 0..cutoff.min(shape.height) {
            for v in 0..cutoff.min(shape.width) {
                if u == 0 && v == 0 && !include_dc {
                    continue;
                }
                data[(c * shape.height + u) * shape.width + v] = rng.normal();
            }
        }
    }
    plan.inverse(&coeffs)
}

fn normalize_range(x: &ImageTensor, lo: f64, hi: f64) -> ImageTensor {
    let (min, max) = x
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if max - min <= f64::EPSILON {
        return ImageTensor::filled(x.shape(), 0.5 * (lo + hi));
    }
    x.map(|v| lo + (hi - lo) * (v - min) / (max - min))
}

fn normalize_peak(x: &ImageTensor) -> ImageTensor {
    let peak = x.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        x.clone()
    } else {
        x.scale(1.0 / peak)
    }
}

pub fn gen_dataset(cfg: &DatasetConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let shape = cfg.shape;
    let plan = DctPlan::new(shape);
    let root = RngStream::root(cfg.seed);
    let mut pattern_rng = root.child(0).rng();

    let spread = cfg.signal_amplitude + cfg.robust_amplitude;
    let base = normalize_range(
        &smooth_pattern(&plan, cfg.frequency_cutoff, true, &mut pattern_rng),
        0.2 + spread,
        0.8 - spread,
    );
    let dense: Vec<ImageTensor> = (0..cfg.num_classes)
        .map(|_| normalize_peak(&smooth_pattern(&plan, cfg.frequency_cutoff, false, &mut pattern_rng)))
        .collect();
    let robust: Vec<ImageTensor> = (0..cfg.num_classes)
        .map(|_| normalize_peak(&smooth_pattern(&plan, cfg.frequency_cutoff, false, &mut pattern_rng)))
        .collect();

    let compose = |class: usize, robust_class: usize| -> ImageTensor {
        base.axpy(cfg.signal_amplitude, &dense[class])
            .and_then(|t| t.axpy(cfg.robust_amplitude, &robust[robust_class]))
            .expect("patterns share the dataset shape")
    };
    let class_means: Vec<ImageTensor> = (0..cfg.num_classes).map(|k| compose(k, k)).collect();

    let n_train = (cfg.n_per_class * 4) / 5;
    let mut train = Vec::with_capacity(n_train * cfg.num_classes);
    let mut test = Vec::with_capacity((cfg.n_per_class - n_train) * cfg.num_classes);
    for class in 0..cfg.num_classes {
        let mut rng = root.path(&[1, class as u64]).rng();
        for i in 0..cfg.n_per_class {
            let robust_class = if rng.uniform() < cfg.robust_corruption {
                let other = rng.below(cfg.num_classes - 1);
                if other >= class {
                    other + 1
                } else {
                    other
                }
            } else {
                class
            };
            let clean = compose(class, robust_class);
            let mut image = clean;
            for v in image.as_mut_slice() {
                *v = (*v + cfg.noise_sigma * rng.normal()).clamp(0.0, 1.0);
            }
            let sample = Sample { image, label: class };
            if i < n_train {
                train.push(sample);
            } else {
                test.push(sample);
            }
        }
    }
    Ok(SyntheticDataset {
        num_classes: cfg.num_classes,
        shape,
        class_means,
        noise_sigma: cfg.noise_sigma,
        train,
        test,
    })
}

impl SyntheticDataset {
    /// SHA-256 over shape, labels and pixel bytes (little-endian f64).
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_classes as u64).to_le_bytes());
        for d in [self.shape.channels, self.shape.height, self.shape.width] {
            h.update((d as u64).to_le_bytes());
        }
        for s in self.train.iter().chain(&self.test) {
            h.update((s.label as u64).to_le_bytes());
            for v in s.image.as_slice() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn input_len(&self) -> usize {
        self.shape.len()
    }

    /// Loads `label,p0,...,pN` rows; the first 80% of each class (file order)
    /// become training samples.
    pub fn from_csv(path: &Path, num_classes: usize, shape: Shape) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Truncated("empty dataset csv".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"label") || cols.len() != shape.len() + 1 {
            return Err(config(format!(
                "dataset csv header must be label,p0..p{} for shape {shape}",
                shape.len().saturating_sub(1)
            )));
        }
        for (i, c) in cols[1..].iter().enumerate() {
            if *c != format!("p{i}") {
                return Err(config(format!("unexpected column {c}, expected p{i}")));
            }
        }
        let mut by_class: Vec<Vec<ImageTensor>> = vec![Vec::new(); num_classes];
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(Error::Truncated(format!(
                    "row {} has {} fields",
                    lineno + 2,
                    fields.len()
                )));
            }
            let label: usize = fields[0]
                .parse()
                .map_err(|_| config(format!("row {}: bad label", lineno + 2)))?;
            if label >= num_classes {
                return Err(config(format!("row {}: label {label} out of range", lineno + 2)));
            }
            let pixels = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| config(format!("row {}: bad pixel value", lineno + 2)))?;
            if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(config(format!("row {}: pixel outside [0,1]", lineno + 2)));
            }
            by_class[label].push(ImageTensor::from_vec(shape, pixels)?);
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        let mut class_means = Vec::with_capacity(num_classes);
        for (label, images) in by_class.into_iter().enumerate() {
            if images.len() < 2 {
                return Err(contract(format!("class {label} has fewer than 2 samples")));
            }
            let mut mean = ImageTensor::zeros(shape);
            for img in &images {
                mean.axpy_in_place(1.0 / images.len() as f64, img);
            }
            class_means.push(mean);
            let n_train = (images.len() * 4) / 5;
            for (i, image) in images.into_iter().enumerate() {
                let s = Sample { image, label };
                if i < n_train {
                    train.push(s);
                } else {
                    test.push(s);
                }
            }
        }
        Ok(Self {
            num_classes,
            shape,
            class_means,
            noise_sigma: 0.0,
            train,
            test,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> DatasetConfig {
        DatasetConfig {
            n_per_class: 100,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn counts_and_balance() {
        let ds = gen_dataset(&small_cfg()).unwrap();
        assert_eq!(ds.train.len(), 320);
        assert_eq!(ds.test.len(), 80);
        for k in 0..4 {
            assert_eq!(ds.train.iter().filter(|s| s.label == k).count(), 80);
            assert_eq!(ds.test.iter().filter(|s| s.label == k).count(), 20);
        }
        assert!(ds
            .train
            .iter()
            .chain(&ds.test)
            .all(|s| s.label < 4 && s.image.in_unit_range()));
    }

    #[test]
    fn deterministic() {
        let a = gen_dataset(&small_cfg()).unwrap();
        let b = gen_dataset(&small_cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = gen_dataset(&DatasetConfig { seed: 8, ..small_cfg() }).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn class_means_within_range() {
        let ds = gen_dataset(&DatasetConfig::default()).unwrap();
        for m in &ds.class_means {
            assert!(m.as_slice().iter().all(|v| (0.2 - 1e-12..=0.8 + 1e-12).contains(v)));
        }
    }

    #[test]
    fn rejects_degenerate_shape() {
        let cfg = DatasetConfig {
            shape: Shape {
                channels: 1,
                height: 0,
                width: 16,
            },
            ..DatasetConfig::default()
        };
        assert!(gen_dataset(&cfg).is_err());
        let cfg = DatasetConfig {
            num_classes: 1,
            ..DatasetConfig::default()
        };
        assert!(gen_dataset(&cfg).is_err());
    }

    #[test]
    fn csv_import() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut text = String::from("label,p0,p1,p2,p3\n");
        for i in 0..10 {
            let l = i % 2;
            text.push_str(&format!("{l},0.{i},0.5,0.5,{}\n", if l == 0 { "0.1" } else { "0.9" }));
        }
        std::fs::write(&path, text).unwrap();
        let ds = SyntheticDataset::from_csv(&path, 2, Shape::new(1, 2, 2).unwrap()).unwrap();
        assert_eq!(ds.train.len(), 8);
        assert_eq!(ds.test.len(), 2);
        std::fs::write(&path, "label,p0\n0,0.5\n").unwrap();
        assert!(SyntheticDataset::from_csv(&path, 2, Shape::new(1, 2, 2).unwrap()).is_err());
    }
}
