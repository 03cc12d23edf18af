//! Forward and backward kernels on plain tensors.
//!
//! These have no knowledge of the tape; `autograd` records which kernel
//! produced a value and calls the matching backward here. All reductions run
//! in a fixed sequential order, so results are bitwise reproducible.

use crate::error::{Error, Result};
use crate::scalar::{Scalar, Strides};
use crate::tensor::Tensor;

/// Static geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        ConvGeometry {
            stride: 1,
            padding: 0,
        }
    }
}

/// Output extent along one axis, or `None` when the window does not fit.
pub fn conv_out_size(input: usize, kernel: usize, geom: ConvGeometry) -> Option<usize> {
    let padded = input + 2 * geom.padding;
    if geom.stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / geom.stride + 1)
}

struct ConvShape {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl ConvShape {
    fn new<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, geom: ConvGeometry) -> Result<Self> {
        let (n, cin, h, w) = x.dims4()?;
        let (cout, wcin, kh, kw) = weight.dims4()?;
        if wcin != cin {
            return Err(Error::mismatch(
                "conv2d",
                format!("input has {cin} channels, weight expects {wcin}"),
            ));
        }
        let (oh, ow) = match (conv_out_size(h, kh, geom), conv_out_size(w, kw, geom)) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => {
                return Err(Error::invalid_shape(
                    x.shape(),
                    format!(
                        "{kh}x{kw} kernel with stride {} and padding {} leaves no output",
                        geom.stride, geom.padding
                    ),
                ))
            }
        };
        Ok(ConvShape {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            oh,
            ow,
        })
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfold one `[C, H, W]` sample into `[C*Kh*Kw, OH*OW]` columns.
fn im2col<T: Scalar>(src: &[T], s: &ConvShape, geom: ConvGeometry, cols: &mut [T]) {
    let p = s.positions();
    let pad = geom.padding as isize;
    for c in 0..s.cin {
        let plane = &src[c * s.h * s.w..(c + 1) * s.h * s.w];
        for ki in 0..s.kh {
            for kj in 0..s.kw {
                let row = (c * s.kh + ki) * s.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..s.oh {
                    let iy = (oy * geom.stride) as isize + ki as isize - pad;
                    let out_row = &mut dst[oy * s.ow..(oy + 1) * s.ow];
                    if iy < 0 || iy >= s.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * geom.stride) as isize + kj as isize - pad;
                        *v = if ix < 0 || ix >= s.w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add columns back onto a `[C, H, W]` sample; inverse layout of `im2col`.
fn col2im<T: Scalar>(cols: &[T], s: &ConvShape, geom: ConvGeometry, dst: &mut [T]) {
    let p = s.positions();
    let pad = geom.padding as isize;
    for c in 0..s.cin {
        let plane = &mut dst[c * s.h * s.w..(c + 1) * s.h * s.w];
        for ki in 0..s.kh {
            for kj in 0..s.kw {
                let row = (c * s.kh + ki) * s.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..s.oh {
                    let iy = (oy * geom.stride) as isize + ki as isize - pad;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                    for ox in 0..s.ow {
                        let ix = (ox * geom.stride) as isize + kj as isize - pad;
                        if ix >= 0 && ix < s.w as isize {
                            dst_row[ix as usize] += src[oy * s.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation (no kernel flip) with optional per-output-channel bias.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let s = ConvShape::new(x, weight, geom)?;
    if let Some(b) = bias {
        if b.shape() != [s.cout] {
            return Err(Error::mismatch(
                "conv2d",
                format!("bias {:?} for {} output channels", b.shape(), s.cout),
            ));
        }
    }
    let (k, p) = (s.patch_len(), s.positions());
    let in_len = s.cin * s.h * s.w;
    let out_len = s.cout * p;
    let mut out = vec![T::zero(); s.n * out_len];
    let mut cols = vec![T::zero(); k * p];
    for i in 0..s.n {
        im2col(&x.data()[i * in_len..(i + 1) * in_len], &s, geom, &mut cols);
        let dst = &mut out[i * out_len..(i + 1) * out_len];
        T::gemm(
            s.cout,
            k,
            p,
            T::one(),
            weight.data(),
            Strides::row_major(k),
            &cols,
            Strides::row_major(p),
            T::zero(),
            dst,
            Strides::row_major(p),
        );
        if let Some(b) = bias {
            for (plane, &bv) in dst.chunks_exact_mut(p).zip(b.data()) {
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Tensor::from_vec(&[s.n, s.cout, s.oh, s.ow], out)
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    geom: ConvGeometry,
) -> Result<ConvGrads<T>> {
    let s = ConvShape::new(x, weight, geom)?;
    if grad_out.shape() != [s.n, s.cout, s.oh, s.ow] {
        return Err(Error::mismatch(
            "conv2d_backward",
            format!("gradient {:?} does not match output", grad_out.shape()),
        ));
    }
    let (k, p) = (s.patch_len(), s.positions());
    let in_len = s.cin * s.h * s.w;
    let out_len = s.cout * p;
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); weight.len()];
    let mut db = vec![T::zero(); s.cout];
    let mut cols = vec![T::zero(); k * p];
    let mut dcols = vec![T::zero(); k * p];
    for i in 0..s.n {
        let dy = &grad_out.data()[i * out_len..(i + 1) * out_len];
        im2col(&x.data()[i * in_len..(i + 1) * in_len], &s, geom, &mut cols);
        // dW += dY [cout, p] * cols^T [p, k]
        T::gemm(
            s.cout,
            p,
            k,
            T::one(),
            dy,
            Strides::row_major(p),
            &cols,
            Strides::transposed(p),
            T::one(),
            &mut dw,
            Strides::row_major(k),
        );
        // dcols = W^T [k, cout] * dY [cout, p]
        T::gemm(
            k,
            s.cout,
            p,
            T::one(),
            weight.data(),
            Strides::transposed(k),
            dy,
            Strides::row_major(p),
            T::zero(),
            &mut dcols,
            Strides::row_major(p),
        );
        col2im(&dcols, &s, geom, &mut dx[i * in_len..(i + 1) * in_len]);
        for (acc, plane) in db.iter_mut().zip(dy.chunks_exact(p)) {
            *acc += plane.iter().copied().fold(T::zero(), |a, v| a + v);
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_vec(x.shape(), dx)?,
        weight: Tensor::from_vec(weight.shape(), dw)?,
        bias: Tensor::from_vec(&[s.cout], db)?,
    })
}

fn dense_dims<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, fin) = x.dims2()?;
    let (fout, win) = weight.dims2()?;
    if win != fin {
        return Err(Error::mismatch(
            "dense",
            format!("input width {fin}, weight expects {win}"),
        ));
    }
    Ok((n, fin, fout))
}

/// `y = x W^T + b` with `x: [N, in]`, `W: [out, in]`.
pub fn dense<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (n, fin, fout) = dense_dims(x, weight)?;
    let mut out = vec![T::zero(); n * fout];
    T::gemm(
        n,
        fin,
        fout,
        T::one(),
        x.data(),
        Strides::row_major(fin),
        weight.data(),
        Strides::transposed(fin),
        T::zero(),
        &mut out,
        Strides::row_major(fout),
    );
    if let Some(b) = bias {
        if b.shape() != [fout] {
            return Err(Error::mismatch(
                "dense",
                format!("bias {:?} for {fout} outputs", b.shape()),
            ));
        }
        for row in out.chunks_exact_mut(fout) {
            for (v, &bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
    }
    Tensor::from_vec(&[n, fout], out)
}

pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let (n, fin, fout) = dense_dims(x, weight)?;
    if grad_out.shape() != [n, fout] {
        return Err(Error::mismatch(
            "dense_backward",
            format!("gradient {:?} for output [{n}, {fout}]", grad_out.shape()),
        ));
    }
    let mut dx = vec![T::zero(); n * fin];
    T::gemm(
        n,
        fout,
        fin,
        T::one(),
        grad_out.data(),
        Strides::row_major(fout),
        weight.data(),
        Strides::row_major(fin),
        T::zero(),
        &mut dx,
        Strides::row_major(fin),
    );
    let mut dw = vec![T::zero(); fout * fin];
    T::gemm(
        fout,
        n,
        fin,
        T::one(),
        grad_out.data(),
        Strides::transposed(fout),
        x.data(),
        Strides::row_major(fin),
        T::zero(),
        &mut dw,
        Strides::row_major(fin),
    );
    let mut db = vec![T::zero(); fout];
    for row in grad_out.data().chunks_exact(fout) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok(DenseGrads {
        input: Tensor::from_vec(x.shape(), dx)?,
        weight: Tensor::from_vec(weight.shape(), dw)?,
        bias: Tensor::from_vec(&[fout], db)?,
    })
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of relu; the subgradient at 0 is taken as 0.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(grad_out, "relu_backward", |v, g| if v > T::zero() { g } else { T::zero() })
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Uses the forward output `y = sigmoid(x)`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    y.zip_map(grad_out, "sigmoid_backward", |s, g| g * s * (T::one() - s))
}

/// 2x2 non-overlapping max pool. Returns the output and, for each output
/// element, the flat index of the input element it came from (first max in
/// row-major order on ties).
pub fn maxpool2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (_, _, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid_shape(
            x.shape(),
            "2x2 max pooling needs even height and width",
        ));
    }
    maxpool2d(x, 2, ConvGeometry { stride: 2, padding: 0 })
}

/// General max pooling; padded positions never win.
pub fn maxpool2d<T: Scalar>(x: &Tensor<T>, kernel: usize, geom: ConvGeometry) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = x.dims4()?;
    if geom.padding >= kernel {
        return Err(Error::invalid_shape(x.shape(), "pool padding must be smaller than the window"));
    }
    let (oh, ow) = match (conv_out_size(h, kernel, geom), conv_out_size(w, kernel, geom)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => return Err(Error::invalid_shape(x.shape(), "pool window larger than input")),
    };
    let pad = geom.padding as isize;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let data = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best: Option<usize> = None;
                for ki in 0..kernel {
                    let iy = (oy * geom.stride + ki) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kj in 0..kernel {
                        let ix = (ox * geom.stride + kj) as isize - pad;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        if best.map_or(true, |b| data[idx] > data[b]) {
                            best = Some(idx);
                        }
                    }
                }
                // padding < kernel guarantees at least one in-bounds element
                let best = best.expect("window overlaps the input");
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, oh, ow], out)?, argmax))
}

pub fn maxpool2_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut dx = Tensor::zeros(input_shape)?;
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx] += g;
    }
    Ok(dx)
}

/// Saved state from a train-mode batch norm forward.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    /// Unbiased batch variance, the value folded into running statistics.
    pub batch_var_unbiased: Vec<T>,
}

fn check_affine<T: Scalar>(c: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::mismatch(
            "batchnorm2d",
            format!(
                "{c} channels but gamma {:?} / beta {:?}",
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    Ok(())
}

/// Per-channel normalization with batch statistics (biased variance).
pub fn batchnorm2d_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (n, c, h, w) = x.dims4()?;
    check_affine(c, gamma, beta)?;
    let count = n * h * w;
    if count < 2 {
        return Err(Error::DegenerateBatch(count));
    }
    let plane = h * w;
    let data = x.data();
    let inv_count = T::one() / T::from_f64(count as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut acc = T::zero();
        for i in 0..n {
            let off = (i * c + ch) * plane;
            acc += data[off..off + plane].iter().copied().fold(T::zero(), |a, v| a + v);
        }
        let mu = acc * inv_count;
        let mut sq = T::zero();
        for i in 0..n {
            let off = (i * c + ch) * plane;
            sq += data[off..off + plane]
                .iter()
                .fold(T::zero(), |a, &v| a + (v - mu) * (v - mu));
        }
        mean[ch] = mu;
        var[ch] = sq * inv_count;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut normalized = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for i in 0..n {
        for ch in 0..c {
            let off = (i * c + ch) * plane;
            let (g, b, mu, is) = (gamma.data()[ch], beta.data()[ch], mean[ch], inv_std[ch]);
            for j in off..off + plane {
                let xh = (data[j] - mu) * is;
                normalized[j] = xh;
                out[j] = g * xh + b;
            }
        }
    }
    let bessel = T::from_f64(count as f64 / (count - 1) as f64);
    let cache = BatchNormCache {
        normalized: Tensor::from_vec(x.shape(), normalized)?,
        inv_std,
        batch_mean: mean,
        batch_var_unbiased: var.iter().map(|&v| v * bessel).collect(),
    };
    Ok((Tensor::from_vec(x.shape(), out)?, cache))
}

pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn batchnorm2d_train_backward<T: Scalar>(
    gamma: &Tensor<T>,
    cache: &BatchNormCache<T>,
    grad_out: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    let (n, c, h, w) = grad_out.dims4()?;
    cache.normalized.expect_same_shape(grad_out, "batchnorm2d_backward")?;
    let plane = h * w;
    let count = T::from_f64((n * plane) as f64);
    let dy = grad_out.data();
    let xh = cache.normalized.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        for i in 0..n {
            let off = (i * c + ch) * plane;
            for j in off..off + plane {
                dbeta[ch] += dy[j];
                dgamma[ch] += dy[j] * xh[j];
            }
        }
    }
    let mut dx = vec![T::zero(); grad_out.len()];
    for ch in 0..c {
        let g = gamma.data()[ch];
        let scale = g * cache.inv_std[ch] / count;
        for i in 0..n {
            let off = (i * c + ch) * plane;
            for j in off..off + plane {
                dx[j] = scale * (count * dy[j] - dbeta[ch] - xh[j] * dgamma[ch]);
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::from_vec(grad_out.shape(), dx)?,
        gamma: Tensor::from_vec(&[c], dgamma)?,
        beta: Tensor::from_vec(&[c], dbeta)?,
    })
}

/// Per-channel `(scale, shift)` so that eval-mode batch norm is `x * scale + shift`.
pub fn batchnorm_eval_affine<T: Scalar>(
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: T,
) -> (Vec<T>, Vec<T>) {
    let mut scale = Vec::with_capacity(gamma.len());
    let mut shift = Vec::with_capacity(gamma.len());
    for ch in 0..gamma.len() {
        let is = T::one() / (running_var.data()[ch] + eps).sqrt();
        let s = gamma.data()[ch] * is;
        scale.push(s);
        shift.push(beta.data()[ch] - running_mean.data()[ch] * s);
    }
    (scale, shift)
}

/// `y[n,c,h,w] = x[n,c,h,w] * scale[c] + shift[c]`.
pub fn channel_affine<T: Scalar>(x: &Tensor<T>, scale: &[T], shift: &[T]) -> Result<Tensor<T>> {
    let (_, c, h, w) = x.dims4()?;
    if scale.len() != c || shift.len() != c {
        return Err(Error::mismatch(
            "channel_affine",
            format!("{c} channels, {} scales", scale.len()),
        ));
    }
    let plane = h * w;
    let mut out = x.data().to_vec();
    for (k, chunk) in out.chunks_exact_mut(plane).enumerate() {
        let ch = k % c;
        chunk.iter_mut().for_each(|v| *v = *v * scale[ch] + shift[ch]);
    }
    Tensor::from_vec(x.shape(), out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = logits.dims2()?;
    let mut out = logits.data().to_vec();
    for row in out.chunks_exact_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Tensor::from_vec(logits.shape(), out)
}

/// Per-sample `-log softmax(logits)[label]`, via log-sum-exp.
pub fn cross_entropy_per_sample<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Vec<T>> {
    let (n, k) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::mismatch(
            "softmax_cross_entropy",
            format!("{n} logit rows, {} labels", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidLabel {
            label: bad,
            classes: k,
        });
    }
    Ok(logits
        .data()
        .chunks_exact(k)
        .zip(labels)
        .map(|(row, &label)| {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().fold(T::zero(), |a, &v| a + (v - max).exp()).ln() + max;
            lse - row[label]
        })
        .collect())
}

/// Gradient of the batch-mean cross entropy: `(softmax - onehot) / N`.
pub fn cross_entropy_backward<T: Scalar>(
    probs: &Tensor<T>,
    labels: &[usize],
    grad_loss: T,
) -> Result<Tensor<T>> {
    let (n, k) = probs.dims2()?;
    let scale = grad_loss / T::from_f64(n as f64);
    let mut out = probs.data().to_vec();
    for (row, &label) in out.chunks_exact_mut(k).zip(labels) {
        row[label] -= T::one();
        row.iter_mut().for_each(|v| *v *= scale);
    }
    Tensor::from_vec(probs.shape(), out)
}

/// Broadcast `dz[n,c] / (H*W)` back over each plane.
pub fn spatial_mean_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let plane: usize = input_shape[2..].iter().product();
    let inv = T::one() / T::from_f64(plane as f64);
    let mut dx = Vec::with_capacity(grad_out.len() * plane);
    for &g in grad_out.data() {
        dx.extend(std::iter::repeat(g * inv).take(plane));
    }
    Tensor::from_vec(input_shape, dx)
}

/// Gradients of `channel_scale(u, s)` with respect to `u` and `s`.
pub fn channel_scale_backward<T: Scalar>(
    u: &Tensor<T>,
    s: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let du = grad_out.channel_scale(s)?;
    let (_, _, h, w) = u.dims4()?;
    let plane = h * w;
    let ds = grad_out
        .data()
        .chunks_exact(plane)
        .zip(u.data().chunks_exact(plane))
        .map(|(g, x)| g.iter().zip(x).fold(T::zero(), |a, (&gv, &xv)| a + gv * xv))
        .collect();
    Ok((du, Tensor::from_vec(s.shape(), ds)?))
}
