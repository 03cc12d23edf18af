//! Per-channel mean and standard deviation of a training split, with a small
//! text cache:
//!
//! ```text
//! dataset cifar10
//! mean 0.4914 0.4822 0.4465
//! std 0.2470 0.2435 0.2616
//! ```

use std::fs;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ChannelStats {
    /// Population statistics of the pixel values scaled to [0, 1].
    pub fn compute(ds: &Dataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::InvalidConfig("cannot compute statistics of an empty dataset".into()));
        }
        let plane = ds.height * ds.width;
        // Byte histograms keep the sums exact and order independent.
        let mut hist = [[0u64; 256]; 3];
        for img in ds.pixels().chunks_exact(3 * plane) {
            for (c, chan) in img.chunks_exact(plane).enumerate() {
                for &b in chan {
                    hist[c][b as usize] += 1;
                }
            }
        }
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for c in 0..3 {
            let (mut n, mut s, mut s2) = (0u128, 0u128, 0u128);
            for (v, &k) in hist[c].iter().enumerate() {
                let (v, k) = (v as u128, k as u128);
                n += k;
                s += k * v;
                s2 += k * v * v;
            }
            let n = n as f64;
            let m = s as f64 / n;
            let var = (s2 as f64 / n - m * m).max(0.0);
            mean[c] = m / 255.0;
            std[c] = var.sqrt() / 255.0;
        }
        if std.iter().any(|&s| s == 0.0) {
            // A constant channel would divide by zero; leave it unscaled.
            std.iter_mut().filter(|s| **s == 0.0).for_each(|s| *s = 1.0);
        }
        Ok(ChannelStats { mean, std })
    }

    pub fn to_text(&self, dataset: &str) -> String {
        let row = |v: &[f64; 3]| format!("{} {} {}", v[0], v[1], v[2]);
        format!("dataset {dataset}\nmean {}\nstd {}\n", row(&self.mean), row(&self.std))
    }

    /// Parse cache text, returning the dataset name it was computed for.
    pub fn from_text(text: &str) -> Option<(String, Self)> {
        let mut name = None;
        let mut mean = None;
        let mut std = None;
        let triple = |rest: &str| -> Option<[f64; 3]> {
            let v: Vec<f64> = rest.split_whitespace().map(|s| s.parse().ok()).collect::<Option<_>>()?;
            <[f64; 3]>::try_from(v).ok()
        };
        for line in text.lines() {
            let (key, rest) = line.trim().split_once(' ')?;
            match key {
                "dataset" => name = Some(rest.trim().to_string()),
                "mean" => mean = triple(rest),
                "std" => std = triple(rest),
                _ => return None,
            }
        }
        let stats = ChannelStats {
            mean: mean?,
            std: std?,
        };
        stats.std.iter().all(|&s| s > 0.0).then_some((name?, stats))
    }

    /// Read the cache if it holds stats for `dataset`; otherwise compute
    /// them from `train` and try to write the cache.
    pub fn load_or_compute(cache: &Path, dataset: &str, train: &Dataset) -> Result<Self> {
        if let Ok(text) = fs::read_to_string(cache) {
            match Self::from_text(&text) {
                Some((name, stats)) if name == dataset => return Ok(stats),
                _ => log::warn!("ignoring stale or unreadable stats cache {}", cache.display()),
            }
        }
        let stats = Self::compute(train)?;
        if let Err(e) = fs::write(cache, stats.to_text(dataset)) {
            log::warn!("could not write stats cache {}: {e}", cache.display());
        }
        Ok(stats)
    }
}
