//! Float reference kernels. Accumulation is in `f64` with a fixed
//! row-major summation order, so results are reproducible bit for bit.

use crate::error::{Error, Result};

use super::pad::pad_with;
use super::{PadSpec, Tensor};

pub(crate) fn out_extent(padded: usize, kernel: usize, stride: usize) -> Result<usize> {
    if stride == 0 || !(1..=2).contains(&stride) {
        return Err(Error::ShapeMismatch(format!("unsupported stride {stride}")));
    }
    if padded < kernel {
        return Err(Error::ShapeMismatch(format!(
            "kernel {kernel} larger than padded extent {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Standard convolution, weights `(kh, kw, cin, cout)`.
pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: PadSpec) -> Result<Tensor> {
    conv2d_bias(x, w, None, stride, pad)
}

pub fn conv2d_bias(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&[f32]>,
    stride: usize,
    pad: PadSpec,
) -> Result<Tensor> {
    let [kh, kw, cin, cout] = w.shape();
    if x.channels() != cin {
        return Err(Error::ShapeMismatch(format!(
            "conv expects {cin} input channels, got {}",
            x.channels()
        )));
    }
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(Error::ShapeMismatch(format!(
                "bias has {} entries for {cout} outputs",
                b.len()
            )));
        }
    }
    let xp = pad_with(x, pad.resolve(x.height(), x.width()));
    let [batch, ph, pw, _] = xp.shape();
    let oh = out_extent(ph, kh, stride)?;
    let ow = out_extent(pw, kw, stride)?;

    let wd = w.data();
    let xd = xp.data();
    let mut out = Tensor::zeros([batch, oh, ow, cout]);
    let mut acc = vec![0f64; cout];
    for b in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                match bias {
                    Some(bv) => acc.iter_mut().zip(bv).for_each(|(a, &v)| *a = v as f64),
                    None => acc.fill(0.0),
                }
                for ky in 0..kh {
                    for kx in 0..kw {
                        let xi = xp.offset(b, oy * stride + ky, ox * stride + kx, 0);
                        let wbase = (ky * kw + kx) * cin * cout;
                        for ci in 0..cin {
                            let xv = xd[xi + ci] as f64;
                            if xv == 0.0 {
                                continue;
                            }
                            let wrow = &wd[wbase + ci * cout..wbase + (ci + 1) * cout];
                            for (a, &wv) in acc.iter_mut().zip(wrow) {
                                *a += xv * wv as f64;
                            }
                        }
                    }
                }
                let o = out.offset(b, oy, ox, 0);
                for (dst, &a) in out.data_mut()[o..o + cout].iter_mut().zip(&acc) {
                    *dst = a as f32;
                }
            }
        }
    }
    Ok(out)
}

/// Per-channel spatial convolution, weights `(kh, kw, c, 1)`.
pub fn depthwise_conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: PadSpec) -> Result<Tensor> {
    let [kh, kw, c, mult] = w.shape();
    if mult != 1 || x.channels() != c {
        return Err(Error::ShapeMismatch(format!(
            "depthwise kernel {:?} does not fit {} channels",
            w.shape(),
            x.channels()
        )));
    }
    let xp = pad_with(x, pad.resolve(x.height(), x.width()));
    let [batch, ph, pw, _] = xp.shape();
    let oh = out_extent(ph, kh, stride)?;
    let ow = out_extent(pw, kw, stride)?;

    let wd = w.data();
    let xd = xp.data();
    let mut out = Tensor::zeros([batch, oh, ow, c]);
    let mut acc = vec![0f64; c];
    for b in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                acc.fill(0.0);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let xi = xp.offset(b, oy * stride + ky, ox * stride + kx, 0);
                        let wrow = &wd[(ky * kw + kx) * c..(ky * kw + kx + 1) * c];
                        for ((a, &xv), &wv) in acc.iter_mut().zip(&xd[xi..xi + c]).zip(wrow) {
                            *a += xv as f64 * wv as f64;
                        }
                    }
                }
                let o = out.offset(b, oy, ox, 0);
                for (dst, &a) in out.data_mut()[o..o + c].iter_mut().zip(&acc) {
                    *dst = a as f32;
                }
            }
        }
    }
    Ok(out)
}

/// Multiply-accumulate count of a standard convolution.
pub fn conv2d_macs(out_h: usize, out_w: usize, kh: usize, kw: usize, cin: usize, cout: usize) -> u64 {
    (out_h * out_w * kh * kw) as u64 * cin as u64 * cout as u64
}

/// Multiply-accumulate count of a depthwise convolution.
pub fn depthwise_macs(out_h: usize, out_w: usize, kh: usize, kw: usize, c: usize) -> u64 {
    (out_h * out_w * kh * kw) as u64 * c as u64
}

pub fn relu6(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = v.clamp(0.0, 6.0);
    }
    out
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "add {:?} + {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = a.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
        *o = (*o as f64 + v as f64) as f32;
    }
    Ok(out)
}

/// Per-channel `y = x * scale + shift`.
pub fn channel_affine(x: &Tensor, scale: &[f32], shift: &[f32]) -> Result<Tensor> {
    let c = x.channels();
    if scale.len() != c || shift.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "affine parameters of length {}/{} for {c} channels",
            scale.len(),
            shift.len()
        )));
    }
    let mut out = x.clone();
    if c == 0 {
        return Ok(out);
    }
    for px in out.data_mut().chunks_mut(c) {
        for ((v, &s), &t) in px.iter_mut().zip(scale).zip(shift) {
            *v = (*v as f64 * s as f64 + t as f64) as f32;
        }
    }
    Ok(out)
}

/// Batch normalization in inference form.
pub fn batch_norm(
    x: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    mean: &[f32],
    var: &[f32],
    eps: f32,
) -> Result<Tensor> {
    let (scale, shift) = fold_batch_norm(gamma, beta, mean, var, eps)?;
    channel_affine(x, &scale, &shift)
}

/// Folds batch-norm statistics into a per-channel scale and shift.
pub fn fold_batch_norm(
    gamma: &[f32],
    beta: &[f32],
    mean: &[f32],
    var: &[f32],
    eps: f32,
) -> Result<(Vec<f32>, Vec<f32>)> {
    let c = gamma.len();
    if beta.len() != c || mean.len() != c || var.len() != c {
        return Err(Error::ShapeMismatch("batch-norm parameter lengths differ".into()));
    }
    let mut scale = Vec::with_capacity(c);
    let mut shift = Vec::with_capacity(c);
    for i in 0..c {
        let denom = (var[i] as f64 + eps as f64).max(0.0).sqrt();
        if denom == 0.0 {
            return Err(Error::NonFinite(f64::INFINITY));
        }
        let s = gamma[i] as f64 / denom;
        scale.push(s as f32);
        shift.push((beta[i] as f64 - mean[i] as f64 * s) as f32);
    }
    Ok((scale, shift))
}

/// Source coordinate and interpolation weight for one output index under
/// half-pixel centers without corner alignment.
#[inline]
pub(crate) fn half_pixel_source(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let lo = (src.floor() as usize).min(in_len - 1);
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, src - lo as f64)
}

/// Bilinear resize to an explicit output extent (half-pixel centers).
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [batch, h, w, c] = x.shape();
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::ShapeMismatch(format!(
            "cannot resize {h}x{w} to {out_h}x{out_w}"
        )));
    }
    let ys: Vec<_> = (0..out_h).map(|d| half_pixel_source(d, h, out_h)).collect();
    let xs: Vec<_> = (0..out_w).map(|d| half_pixel_source(d, w, out_w)).collect();
    let mut out = Tensor::zeros([batch, out_h, out_w, c]);
    let xd = x.data();
    for b in 0..batch {
        for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                let o = out.offset(b, oy, ox, 0);
                let i00 = x.offset(b, y0, x0, 0);
                let i01 = x.offset(b, y0, x1, 0);
                let i10 = x.offset(b, y1, x0, 0);
                let i11 = x.offset(b, y1, x1, 0);
                for ch in 0..c {
                    let v00 = xd[i00 + ch] as f64;
                    let v01 = xd[i01 + ch] as f64;
                    let v10 = xd[i10 + ch] as f64;
                    let v11 = xd[i11 + ch] as f64;
                    let top = v00 + (v01 - v00) * lx;
                    let bottom = v10 + (v11 - v10) * lx;
                    out.data_mut()[o + ch] = (top + (bottom - top) * ly) as f32;
                }
            }
        }
    }
    Ok(out)
}

/// Extent after scaling by `factor`, rounded to nearest and at least 1.
pub fn scaled_extent(len: usize, factor: f64) -> usize {
    ((len as f64 * factor).round() as usize).max(1)
}

/// Bilinear resize by a positive factor.
pub fn resize_by(x: &Tensor, factor: f64) -> Result<Tensor> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::InvalidConfig(format!("resize factor must be positive, got {factor}")));
    }
    resize_bilinear(x, scaled_extent(x.height(), factor), scaled_extent(x.width(), factor))
}

pub fn upsample2x_bilinear(x: &Tensor) -> Result<Tensor> {
    resize_bilinear(x, x.height() * 2, x.width() * 2)
}

/// Channel concatenation, `a`'s channels first.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [ba, ha, wa, ca] = a.shape();
    let [bb, hb, wb, cb] = b.shape();
    if (ba, ha, wa) != (bb, hb, wb) {
        return Err(Error::ShapeMismatch(format!(
            "concat {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let c = ca + cb;
    let mut data = Vec::with_capacity(ba * ha * wa * c);
    for px in 0..ba * ha * wa {
        data.extend_from_slice(&a.data()[px * ca..(px + 1) * ca]);
        data.extend_from_slice(&b.data()[px * cb..(px + 1) * cb]);
    }
    Tensor::new([ba, ha, wa, c], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn identity_pointwise_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random([1, 4, 5, 3], &mut rng);
        let w = Tensor::from_fn([1, 1, 3, 3], |[_, _, i, o]| if i == o { 1.0 } else { 0.0 });
        assert_eq!(conv2d(&x, &w, 1, PadSpec::VALID).unwrap(), x);
    }

    #[test]
    fn all_ones_kernel_sums_neighbourhood() {
        let c = 0.75;
        let x = Tensor::filled([1, 5, 5, 1], c);
        let w = Tensor::filled([3, 3, 1, 1], 1.0);
        let y = conv2d(&x, &w, 1, PadSpec::FullSymmetric { kernel: 3 }).unwrap();
        assert_eq!(y.shape(), [1, 5, 5, 1]);
        assert_eq!(y.get(0, 2, 2, 0), 9.0 * c);
        assert_eq!(y.get(0, 0, 0, 0), 4.0 * c);
    }

    #[test]
    fn stride_two_same_shape() {
        let x = Tensor::filled([1, 5, 5, 1], 1.0);
        let w = Tensor::filled([3, 3, 1, 1], 1.0);
        let y = conv2d(&x, &w, 2, PadSpec::SameAsymmetric { kernel: 3, stride: 2 }).unwrap();
        assert_eq!(y.shape(), [1, 3, 3, 1]);
        let x = Tensor::filled([1, 4, 4, 1], 1.0);
        let y = conv2d(&x, &w, 2, PadSpec::SameAsymmetric { kernel: 3, stride: 2 }).unwrap();
        assert_eq!(y.shape(), [1, 2, 2, 1]);
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::zeros([1, 4, 4, 2]);
        let w = Tensor::zeros([3, 3, 3, 1]);
        assert!(conv2d(&x, &w, 1, PadSpec::VALID).is_err());
        let w = Tensor::zeros([3, 3, 2, 1]);
        assert!(conv2d(&x, &w, 3, PadSpec::VALID).is_err());
        let w = Tensor::zeros([5, 5, 2, 1]);
        assert!(conv2d(&Tensor::zeros([1, 2, 2, 2]), &w, 1, PadSpec::VALID).is_err());
    }

    #[test]
    fn depthwise_identity_and_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random([1, 4, 4, 2], &mut rng);
        let ident = Tensor::from_fn([3, 3, 2, 1], |[y, x, _, _]| if y == 1 && x == 1 { 1.0 } else { 0.0 });
        let y = depthwise_conv2d(&x, &ident, 1, PadSpec::FullSymmetric { kernel: 3 }).unwrap();
        assert_eq!(y, x);

        let x = Tensor::from_fn([1, 4, 4, 2], |[_, _, _, c]| if c == 0 { 1.0 } else { 10.0 });
        let ones = Tensor::filled([3, 3, 2, 1], 1.0);
        let y = depthwise_conv2d(&x, &ones, 1, PadSpec::VALID).unwrap();
        for v in y.data().chunks(2) {
            assert_eq!(v, &[9.0, 90.0]);
        }
    }

    #[test]
    fn mac_reduction() {
        let (oh, ow, c) = (7, 9, 16);
        assert_eq!(depthwise_macs(oh, ow, 3, 3, c), 9 * 16 * 63);
        assert_eq!(conv2d_macs(oh, ow, 3, 3, c, c), 9 * 16 * 16 * 63);
        assert_eq!(conv2d_macs(oh, ow, 3, 3, c, c) / depthwise_macs(oh, ow, 3, 3, c), c as u64);
    }

    #[test]
    fn relu6_clamps() {
        let x = Tensor::new([1, 1, 1, 3], vec![-1.0, 3.0, 10.0]).unwrap();
        assert_eq!(relu6(&x).data(), &[0.0, 3.0, 6.0]);
    }

    #[test]
    fn upsample_examples() {
        let x = Tensor::filled([1, 3, 2, 2], 0.4);
        let y = upsample2x_bilinear(&x).unwrap();
        assert_eq!(y.shape(), [1, 6, 4, 2]);
        assert!(y.data().iter().all(|&v| v == 0.4));

        let one = Tensor::filled([1, 1, 1, 1], 2.5);
        assert_eq!(upsample2x_bilinear(&one).unwrap().data(), &[2.5; 4]);

        let col = Tensor::new([1, 2, 1, 1], vec![0.0, 1.0]).unwrap();
        let y = upsample2x_bilinear(&col).unwrap();
        assert_eq!(y.shape(), [1, 4, 2, 1]);
        let column: Vec<f32> = (0..4).map(|r| y.get(0, r, 0, 0)).collect();
        assert_eq!(column, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn concat_examples() {
        let a = Tensor::filled([1, 2, 2, 3], 1.0);
        let b = Tensor::filled([1, 2, 2, 2], 2.0);
        let y = concat_channels(&a, &b).unwrap();
        assert_eq!(y.channels(), 5);
        for px in y.data().chunks(5) {
            assert_eq!(px, &[1.0, 1.0, 1.0, 2.0, 2.0]);
        }
        let empty = Tensor::zeros([1, 2, 2, 0]);
        assert_eq!(concat_channels(&a, &empty).unwrap(), a);
        assert!(concat_channels(&a, &Tensor::zeros([1, 3, 2, 1])).is_err());
    }

    #[test]
    fn concat_breakpoint_shapes() {
        let a = Tensor::zeros([1, 32, 32, 576]);
        let b = Tensor::zeros([1, 16, 16, 1280]);
        let y = concat_channels(&a, &upsample2x_bilinear(&b).unwrap()).unwrap();
        assert_eq!(y.shape(), [1, 32, 32, 1856]);
    }

    #[test]
    fn batch_norm_identity_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random([1, 2, 2, 3], &mut rng);
        let y = batch_norm(&x, &[1.0; 3], &[0.0; 3], &[0.0; 3], &[1.0; 3], 0.0).unwrap();
        assert_eq!(y, x);
        let y = batch_norm(&x, &[2.0; 3], &[1.0; 3], &[0.5; 3], &[4.0; 3], 0.0).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - ((b - 0.5) + 1.0)).abs() < 1e-6);
        }
    }
}
