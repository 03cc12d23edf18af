//! Datasets, augmentation pipelines and batching.
//!
//! Images are kept as the original bytes and only converted to scalars
//! (divided by 255) when a batch is assembled.

pub mod batch;
pub mod cifar;
pub mod raw;
pub mod stats;
pub mod synthetic;
pub mod transforms;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use batch::{batches, Batches};
pub use cifar::{load_cifar10, load_cifar100};
pub use raw::{load_raw_dir, read_raw, write_raw};
pub use stats::ChannelStats;
pub use transforms::{Pipeline, Transform};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetName {
    Cifar10,
    Cifar100,
    Raw,
}

impl DatasetName {
    pub fn name(self) -> &'static str {
        match self {
            DatasetName::Cifar10 => "cifar10",
            DatasetName::Cifar100 => "cifar100",
            DatasetName::Raw => "raw",
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cifar10" | "cifar-10" => Ok(DatasetName::Cifar10),
            "cifar100" | "cifar-100" => Ok(DatasetName::Cifar100),
            "raw" => Ok(DatasetName::Raw),
            other => Err(Error::InvalidConfig(format!(
                "unknown dataset `{other}` (expected cifar10, cifar100 or raw)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Channel-planar RGB images stored as bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: DatasetName,
    pub split: Split,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pixels: Vec<u8>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        name: DatasetName,
        split: Split,
        height: usize,
        width: usize,
        num_classes: usize,
        pixels: Vec<u8>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let per = 3 * height * width;
        if per == 0 || pixels.len() != per * labels.len() {
            return Err(Error::InvalidConfig(format!(
                "{} pixel bytes do not match {} images of 3x{height}x{width}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidLabel {
                label: bad,
                classes: num_classes,
            });
        }
        Ok(Dataset {
            name,
            split,
            height,
            width,
            num_classes,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image_len(&self) -> usize {
        3 * self.height * self.width
    }

    pub fn image_bytes(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Image `i` as `[3, H, W]` with values in [0, 1].
    pub fn image<T: Scalar>(&self, i: usize) -> Tensor<T> {
        let data = self
            .image_bytes(i)
            .iter()
            .map(|&b| T::from_f64(b as f64 / 255.0))
            .collect();
        Tensor::from_vec(&[3, self.height, self.width], data).expect("image shape")
    }

    /// The first `n` samples (all of them when `n >= len`).
    pub fn subset(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            pixels: self.pixels[..n * self.image_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Dataset {
        Dataset {
            name: self.name,
            split: self.split,
            height: self.height,
            width: self.width,
            num_classes: self.num_classes,
            pixels: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}
