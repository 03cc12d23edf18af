//! Image transforms on `[3, H, W]` tensors and the pipelines built from them.
//!
//! Resizing is bilinear with half-pixel centers (no corner alignment, no
//! antialiasing): output pixel `d` samples source coordinate
//! `(d + 0.5) * in / out - 0.5`, clamped at the borders. Upsampling the 2x2
//! image `[[0, 1], [2, 3]]` to 4x4 gives
//!
//! ```text
//! 0.00 0.25 0.75 1.00
//! 0.50 0.75 1.25 1.50
//! 1.50 1.75 2.25 2.50
//! 2.00 2.25 2.75 3.00
//! ```

use crate::data::stats::ChannelStats;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Transform {
    /// `(x - mean[c]) / std[c]` per channel.
    Normalize { mean: [f64; 3], std: [f64; 3] },
    RandomHFlip { p: f64 },
    /// Zero-pad every side by `pad`, then take a random `size` x `size` crop.
    PadCrop { pad: usize, size: usize },
    /// Random area fraction in [0.08, 1] and aspect ratio in [3/4, 4/3],
    /// resized to `size` x `size`.
    RandomResizedCrop { size: usize },
    /// Scale so the shorter edge becomes `size`, keeping the aspect ratio.
    Resize { size: usize },
    CenterCrop { size: usize },
}

pub const RRC_SCALE: (f64, f64) = (0.08, 1.0);
pub const RRC_RATIO: (f64, f64) = (3.0 / 4.0, 4.0 / 3.0);

fn dims<T: Scalar>(img: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match img.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(Error::InvalidTransform(format!("expected a [C, H, W] image, got {s:?}"))),
    }
}

pub fn hflip<T: Scalar>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = dims(img)?;
    let mut out = img.data().to_vec();
    for row in out.chunks_exact_mut(w) {
        row.reverse();
    }
    Tensor::from_vec(&[c, h, w], out)
}

/// Crop a window whose top-left corner is `(top, left)`. Positions outside
/// the image read as zero, which lets padding and cropping share one pass.
pub fn crop<T: Scalar>(img: &Tensor<T>, top: isize, left: isize, height: usize, width: usize) -> Result<Tensor<T>> {
    let (c, h, w) = dims(img)?;
    if height == 0 || width == 0 {
        return Err(Error::InvalidTransform("crop size must be positive".into()));
    }
    let src = img.data();
    let mut out = vec![T::zero(); c * height * width];
    for ch in 0..c {
        for y in 0..height {
            let sy = top + y as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..width {
                let sx = left + x as isize;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                out[(ch * height + y) * width + x] = src[(ch * h + sy as usize) * w + sx as usize];
            }
        }
    }
    Tensor::from_vec(&[c, height, width], out)
}

pub fn center_crop<T: Scalar>(img: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    let (_, h, w) = dims(img)?;
    if size > h || size > w {
        return Err(Error::InvalidTransform(format!("center crop {size} exceeds {h}x{w} image")));
    }
    let top = ((h - size) as f64 / 2.0).round() as isize;
    let left = ((w - size) as f64 / 2.0).round() as isize;
    crop(img, top, left, size, size)
}

/// Source index pair and blend weight for each output coordinate.
fn taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

pub fn resize_bilinear<T: Scalar>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = dims(img)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidTransform("resize target must be positive".into()));
    }
    let ys = taps(h, out_h);
    let xs = taps(w, out_w);
    let src = img.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            let (fy, gy) = (T::from_f64(fy), T::from_f64(1.0 - fy));
            for &(x0, x1, fx) in &xs {
                let (fx, gx) = (T::from_f64(fx), T::from_f64(1.0 - fx));
                let top = plane[y0 * w + x0] * gx + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * gx + plane[y1 * w + x1] * fx;
                out.push(top * gy + bottom * fy);
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out)
}

/// Shorter edge to `size`; the longer edge is scaled and truncated.
pub fn resize_shorter<T: Scalar>(img: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    let (_, h, w) = dims(img)?;
    let (oh, ow) = if h <= w {
        (size, (size as f64 * w as f64 / h as f64) as usize)
    } else {
        ((size as f64 * h as f64 / w as f64) as usize, size)
    };
    resize_bilinear(img, oh, ow)
}

/// Crop box `(top, left, height, width)` for a random resized crop.
pub fn random_resized_crop_box(h: usize, w: usize, rng: &mut Rng) -> (usize, usize, usize, usize) {
    let area = (h * w) as f64;
    let (lr0, lr1) = (RRC_RATIO.0.ln(), RRC_RATIO.1.ln());
    for _ in 0..10 {
        let target = area * rng.uniform(RRC_SCALE.0, RRC_SCALE.1);
        let aspect = rng.uniform(lr0, lr1).exp();
        let cw = (target * aspect).sqrt().round_ties_even() as usize;
        let ch = (target / aspect).sqrt().round_ties_even() as usize;
        if cw > 0 && cw <= w && ch > 0 && ch <= h {
            let top = rng.below(0, h - ch + 1);
            let left = rng.below(0, w - cw + 1);
            return (top, left, ch, cw);
        }
    }
    let ratio = w as f64 / h as f64;
    let (ch, cw) = if ratio < RRC_RATIO.0 {
        ((w as f64 / RRC_RATIO.0).round_ties_even() as usize, w)
    } else if ratio > RRC_RATIO.1 {
        (h, (h as f64 * RRC_RATIO.1).round_ties_even() as usize)
    } else {
        (h, w)
    };
    ((h - ch) / 2, (w - cw) / 2, ch, cw)
}

pub fn normalize<T: Scalar>(img: &Tensor<T>, mean: &[f64; 3], std: &[f64; 3]) -> Result<Tensor<T>> {
    let (c, h, w) = dims(img)?;
    if c != 3 {
        return Err(Error::InvalidTransform(format!("normalize expects 3 channels, got {c}")));
    }
    let mut out = img.data().to_vec();
    for (ch, plane) in out.chunks_exact_mut(h * w).enumerate() {
        let m = T::from_f64(mean[ch]);
        let inv = T::one() / T::from_f64(std[ch]);
        plane.iter_mut().for_each(|v| *v = (*v - m) * inv);
    }
    Tensor::from_vec(&[c, h, w], out)
}

impl Transform {
    pub fn apply<T: Scalar>(&self, img: &Tensor<T>, rng: &mut Rng) -> Result<Tensor<T>> {
        match *self {
            Transform::Normalize { ref mean, ref std } => normalize(img, mean, std),
            Transform::RandomHFlip { p } => {
                if rng.bernoulli(p) {
                    hflip(img)
                } else {
                    Ok(img.clone())
                }
            }
            Transform::PadCrop { pad, size } => {
                let (_, h, w) = dims(img)?;
                if size > h + 2 * pad || size > w + 2 * pad {
                    return Err(Error::InvalidTransform(format!(
                        "crop {size} exceeds {h}x{w} image padded by {pad}"
                    )));
                }
                let top = rng.below(0, h + 2 * pad - size + 1) as isize - pad as isize;
                let left = rng.below(0, w + 2 * pad - size + 1) as isize - pad as isize;
                crop(img, top, left, size, size)
            }
            Transform::RandomResizedCrop { size } => {
                let (_, h, w) = dims(img)?;
                let (top, left, ch, cw) = random_resized_crop_box(h, w, rng);
                let c = crop(img, top as isize, left as isize, ch, cw)?;
                resize_bilinear(&c, size, size)
            }
            Transform::Resize { size } => resize_shorter(img, size),
            Transform::CenterCrop { size } => center_crop(img, size),
        }
    }
}

/// Ordered transforms; a normalize step, if present, comes last.
#[derive(Clone, Debug, PartialEq)]
pub struct Pipeline {
    transforms: Vec<Transform>,
}

impl Pipeline {
    pub fn new(transforms: Vec<Transform>) -> Result<Self> {
        let last = transforms.len().saturating_sub(1);
        for (i, t) in transforms.iter().enumerate() {
            if matches!(t, Transform::Normalize { .. }) && i != last {
                return Err(Error::InvalidTransform("normalize must be the last transform".into()));
            }
            if let Transform::Normalize { std, .. } = t {
                if std.iter().any(|&s| !(s > 0.0)) {
                    return Err(Error::InvalidTransform("normalize std must be positive".into()));
                }
            }
            if let Transform::RandomHFlip { p } = t {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::InvalidTransform(format!("flip probability {p} outside [0, 1]")));
                }
            }
        }
        Ok(Pipeline { transforms })
    }

    pub fn identity() -> Self {
        Pipeline { transforms: vec![] }
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    pub fn apply<T: Scalar>(&self, img: &Tensor<T>, rng: &mut Rng) -> Result<Tensor<T>> {
        let mut out = img.clone();
        for t in &self.transforms {
            out = t.apply(&out, rng)?;
        }
        Ok(out)
    }

    fn norm(stats: &ChannelStats) -> Transform {
        Transform::Normalize {
            mean: stats.mean,
            std: stats.std,
        }
    }

    /// Pad 4, random 32 crop, flip, normalize.
    pub fn cifar_train(stats: &ChannelStats) -> Self {
        Pipeline {
            transforms: vec![
                Transform::PadCrop { pad: 4, size: 32 },
                Transform::RandomHFlip { p: 0.5 },
                Self::norm(stats),
            ],
        }
    }

    pub fn cifar_test(stats: &ChannelStats) -> Self {
        Pipeline {
            transforms: vec![Self::norm(stats)],
        }
    }

    /// Random resized crop to `size`, flip, normalize.
    pub fn large_train(stats: &ChannelStats, size: usize) -> Self {
        Pipeline {
            transforms: vec![
                Transform::RandomResizedCrop { size },
                Transform::RandomHFlip { p: 0.5 },
                Self::norm(stats),
            ],
        }
    }

    /// Resize the shorter edge to `size * 8 / 7` (256 for 224), center crop, normalize.
    pub fn large_test(stats: &ChannelStats, size: usize) -> Self {
        Pipeline {
            transforms: vec![
                Transform::Resize { size: size * 8 / 7 },
                Transform::CenterCrop { size },
                Self::norm(stats),
            ],
        }
    }
}
