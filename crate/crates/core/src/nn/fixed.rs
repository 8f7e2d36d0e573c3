//! Integer kernels over [`QTensor`]s.
//!
//! Products accumulate exactly in `i64` at `n_x + n_w` fractional bits and
//! are brought to the output format once, with round-half-to-even and
//! saturation. Before a kernel runs, the worst-case accumulator magnitude
//! is bounded from the actual operand codes; if the bound does not fit,
//! every addition is checked and overflow is reported as
//! [`Error::AccumulatorOverflow`].

use crate::error::{Error, Result};
use crate::fixedpoint::{quantize_raw, requantize_raw, shift_round_even, QFormat, Rounding};

use super::float::out_extent;
use super::pad::pad_raw;
use super::{PadSpec, QTensor};

/// Bias or shift codes aligned to the accumulator scale.
fn aligned_bias(bias: Option<&QTensor>, cout: usize, acc_frac: u32) -> Result<Vec<i64>> {
    let Some(b) = bias else {
        return Ok(vec![0; cout]);
    };
    if b.len() != cout {
        return Err(Error::ShapeMismatch(format!(
            "bias has {} entries for {cout} outputs",
            b.len()
        )));
    }
    let shift = b.format().n() as i32 - acc_frac as i32;
    b.raw()
        .iter()
        .map(|&r| {
            let v = shift_round_even(r as i128, shift);
            i64::try_from(v).map_err(|_| Error::AccumulatorOverflow)
        })
        .collect()
}

/// Whether `terms` products of the given magnitudes plus `offset` can
/// exceed `i64`.
fn needs_checking(terms: usize, max_x: i64, max_w: i64, offset: i64) -> bool {
    let bound = terms as i128 * max_x as i128 * max_w as i128 + offset as i128;
    bound > i64::MAX as i128
}

#[inline]
fn mac_checked(acc: i64, x: i64, w: i64) -> Result<i64> {
    acc.checked_add(x * w).ok_or(Error::AccumulatorOverflow)
}

pub fn conv2d_fixed(
    x: &QTensor,
    w: &QTensor,
    stride: usize,
    pad: PadSpec,
    out_fmt: QFormat,
) -> Result<QTensor> {
    conv2d_fixed_bias(x, w, None, stride, pad, out_fmt)
}

pub fn conv2d_fixed_bias(
    x: &QTensor,
    w: &QTensor,
    bias: Option<&QTensor>,
    stride: usize,
    pad: PadSpec,
    out_fmt: QFormat,
) -> Result<QTensor> {
    let [kh, kw, cin, cout] = w.shape();
    if x.channels() != cin {
        return Err(Error::ShapeMismatch(format!(
            "conv expects {cin} input channels, got {}",
            x.channels()
        )));
    }
    let [_, h, wd_, _] = x.shape();
    let (xp, pshape) = pad_raw(x.raw(), x.shape(), pad.resolve(h, wd_));
    let [batch, ph, pw, _] = pshape;
    let oh = out_extent(ph, kh, stride)?;
    let ow = out_extent(pw, kw, stride)?;

    let acc_frac = x.format().n() + w.format().n();
    let bias = aligned_bias(bias, cout, acc_frac)?;
    let max_bias = bias.iter().map(|b| b.abs()).max().unwrap_or(0);
    let checked = needs_checking(kh * kw * cin, x.max_abs_raw(), w.max_abs_raw(), max_bias);

    let wr = w.raw();
    let mut out = vec![0i32; batch * oh * ow * cout];
    let mut acc = vec![0i64; cout];
    for b in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                acc.copy_from_slice(&bias);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let xi = ((b * ph + oy * stride + ky) * pw + ox * stride + kx) * cin;
                        let wbase = (ky * kw + kx) * cin * cout;
                        for ci in 0..cin {
                            let xv = xp[xi + ci] as i64;
                            if xv == 0 {
                                continue;
                            }
                            let wrow = &wr[wbase + ci * cout..wbase + (ci + 1) * cout];
                            if checked {
                                for (a, &wv) in acc.iter_mut().zip(wrow) {
                                    *a = mac_checked(*a, xv, wv as i64)?;
                                }
                            } else {
                                for (a, &wv) in acc.iter_mut().zip(wrow) {
                                    *a += xv * wv as i64;
                                }
                            }
                        }
                    }
                }
                let o = ((b * oh + oy) * ow + ox) * cout;
                for (dst, &a) in out[o..o + cout].iter_mut().zip(&acc) {
                    *dst = requantize_raw(a, acc_frac, out_fmt) as i32;
                }
            }
        }
    }
    Ok(QTensor::from_raw_unchecked([batch, oh, ow, cout], out, out_fmt))
}

pub fn depthwise_conv2d_fixed(
    x: &QTensor,
    w: &QTensor,
    stride: usize,
    pad: PadSpec,
    out_fmt: QFormat,
) -> Result<QTensor> {
    let [kh, kw, c, mult] = w.shape();
    if mult != 1 || x.channels() != c {
        return Err(Error::ShapeMismatch(format!(
            "depthwise kernel {:?} does not fit {} channels",
            w.shape(),
            x.channels()
        )));
    }
    let [_, h, wd_, _] = x.shape();
    let (xp, pshape) = pad_raw(x.raw(), x.shape(), pad.resolve(h, wd_));
    let [batch, ph, pw, _] = pshape;
    let oh = out_extent(ph, kh, stride)?;
    let ow = out_extent(pw, kw, stride)?;

    let acc_frac = x.format().n() + w.format().n();
    let checked = needs_checking(kh * kw, x.max_abs_raw(), w.max_abs_raw(), 0);
    let wr = w.raw();
    let mut out = vec![0i32; batch * oh * ow * c];
    let mut acc = vec![0i64; c];
    for b in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                acc.fill(0);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let xi = ((b * ph + oy * stride + ky) * pw + ox * stride + kx) * c;
                        let wrow = &wr[(ky * kw + kx) * c..(ky * kw + kx + 1) * c];
                        let xrow = &xp[xi..xi + c];
                        if checked {
                            for ((a, &xv), &wv) in acc.iter_mut().zip(xrow).zip(wrow) {
                                *a = mac_checked(*a, xv as i64, wv as i64)?;
                            }
                        } else {
                            for ((a, &xv), &wv) in acc.iter_mut().zip(xrow).zip(wrow) {
                                *a += xv as i64 * wv as i64;
                            }
                        }
                    }
                }
                let o = ((b * oh + oy) * ow + ox) * c;
                for (dst, &a) in out[o..o + c].iter_mut().zip(&acc) {
                    *dst = requantize_raw(a, acc_frac, out_fmt) as i32;
                }
            }
        }
    }
    Ok(QTensor::from_raw_unchecked([batch, oh, ow, c], out, out_fmt))
}

/// Clamp to `[0, 6]`; the upper bound itself saturates if 6 is not
/// representable.
pub fn relu6_fixed(x: &QTensor) -> QTensor {
    let fmt = x.format();
    let six = quantize_raw(6.0, fmt, Rounding::HalfEven) as i32;
    let raw = x.raw().iter().map(|&r| r.clamp(0, six)).collect();
    QTensor::from_raw_unchecked(x.shape(), raw, fmt)
}

pub fn add_fixed(a: &QTensor, b: &QTensor, out_fmt: QFormat) -> Result<QTensor> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "add {:?} + {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let frac = a.format().n().max(b.format().n());
    let sa = frac - a.format().n();
    let sb = frac - b.format().n();
    let raw = a
        .raw()
        .iter()
        .zip(b.raw())
        .map(|(&x, &y)| {
            let s = ((x as i64) << sa) + ((y as i64) << sb);
            requantize_raw(s, frac, out_fmt) as i32
        })
        .collect();
    Ok(QTensor::from_raw_unchecked(a.shape(), raw, out_fmt))
}

/// Per-channel `y = x * scale + shift` with both parameter vectors stored
/// as fixed-point codes.
pub fn channel_affine_fixed(
    x: &QTensor,
    scale: &QTensor,
    shift: &QTensor,
    out_fmt: QFormat,
) -> Result<QTensor> {
    let c = x.channels();
    if scale.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "scale of length {} for {c} channels",
            scale.len()
        )));
    }
    let acc_frac = x.format().n() + scale.format().n();
    let shift = aligned_bias(Some(shift), c, acc_frac)?;
    let max_shift = shift.iter().map(|v| v.abs()).max().unwrap_or(0);
    let checked = needs_checking(1, x.max_abs_raw(), scale.max_abs_raw(), max_shift);
    let mut raw = Vec::with_capacity(x.len());
    if c > 0 {
        for px in x.raw().chunks(c) {
            for ((&v, &s), &t) in px.iter().zip(scale.raw()).zip(&shift) {
                let acc = if checked {
                    (v as i64)
                        .checked_mul(s as i64)
                        .and_then(|p| p.checked_add(t))
                        .ok_or(Error::AccumulatorOverflow)?
                } else {
                    v as i64 * s as i64 + t
                };
                raw.push(requantize_raw(acc, acc_frac, out_fmt) as i32);
            }
        }
    }
    Ok(QTensor::from_raw_unchecked(x.shape(), raw, out_fmt))
}

/// Source indices and weights in quarters for the 2x half-pixel grid.
fn quarter_taps(dst: usize, in_len: usize) -> (usize, usize, i64, i64) {
    let k = dst / 2;
    if dst.is_multiple_of(2) {
        // src = k - 0.25
        if k == 0 {
            (0, 0, 4, 0)
        } else {
            (k - 1, k, 1, 3)
        }
    } else {
        // src = k + 0.25
        let hi = (k + 1).min(in_len - 1);
        (k, hi, 3, 1)
    }
}

/// Exact 2x bilinear upsampling on codes: every output is a convex
/// combination with weights in sixteenths, rounded once.
pub fn upsample2x_fixed(x: &QTensor) -> Result<QTensor> {
    let [batch, h, w, c] = x.shape();
    if h == 0 || w == 0 {
        return Err(Error::ShapeMismatch(format!("cannot upsample {h}x{w}")));
    }
    let (oh, ow) = (2 * h, 2 * w);
    let xr = x.raw();
    let idx = |b: usize, y: usize, xx: usize| ((b * h + y) * w + xx) * c;
    let mut out = vec![0i32; batch * oh * ow * c];
    for b in 0..batch {
        for oy in 0..oh {
            let (y0, y1, wy0, wy1) = quarter_taps(oy, h);
            for ox in 0..ow {
                let (x0, x1, wx0, wx1) = quarter_taps(ox, w);
                let (i00, i01, i10, i11) = (idx(b, y0, x0), idx(b, y0, x1), idx(b, y1, x0), idx(b, y1, x1));
                let o = ((b * oh + oy) * ow + ox) * c;
                for ch in 0..c {
                    let s = wy0 * (wx0 * xr[i00 + ch] as i64 + wx1 * xr[i01 + ch] as i64)
                        + wy1 * (wx0 * xr[i10 + ch] as i64 + wx1 * xr[i11 + ch] as i64);
                    out[o + ch] = shift_round_even(s as i128, 4) as i32;
                }
            }
        }
    }
    Ok(QTensor::from_raw_unchecked([batch, oh, ow, c], out, x.format()))
}

pub fn concat_channels_fixed(a: &QTensor, b: &QTensor) -> Result<QTensor> {
    let [ba, ha, wa, ca] = a.shape();
    let [bb, hb, wb, cb] = b.shape();
    if (ba, ha, wa) != (bb, hb, wb) {
        return Err(Error::ShapeMismatch(format!(
            "concat {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.format() != b.format() {
        return Err(Error::InvalidFormat(format!(
            "concat of {} and {}",
            a.format(),
            b.format()
        )));
    }
    let c = ca + cb;
    let mut raw = Vec::with_capacity(ba * ha * wa * c);
    for px in 0..ba * ha * wa {
        raw.extend_from_slice(&a.raw()[px * ca..(px + 1) * ca]);
        raw.extend_from_slice(&b.raw()[px * cb..(px + 1) * cb]);
    }
    Ok(QTensor::from_raw_unchecked([ba, ha, wa, c], raw, a.format()))
}

/// Moves every code to another format (round-half-to-even, saturating).
pub fn requantize_tensor(x: &QTensor, fmt: QFormat) -> QTensor {
    if x.format() == fmt {
        return x.clone();
    }
    let frac = x.format().n();
    let raw = x
        .raw()
        .iter()
        .map(|&r| requantize_raw(r as i64, frac, fmt) as i32)
        .collect();
    QTensor::from_raw_unchecked(x.shape(), raw, fmt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::float;
    use crate::nn::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn q69() -> QFormat {
        QFormat::new(6, 9).unwrap()
    }

    fn random_q(shape: [usize; 4], lim: f32, fmt: QFormat, rng: &mut ChaCha8Rng) -> QTensor {
        let t = Tensor::from_fn(shape, |_| rng.gen_range(-lim..lim));
        QTensor::quantize(&t, fmt).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_q([1, 5, 5, 3], 4.0, q69(), &mut rng);
        let w = QTensor::zeros([3, 3, 3, 2], q69());
        let y = conv2d_fixed(&x, &w, 1, PadSpec::FullSymmetric { kernel: 3 }, q69()).unwrap();
        assert!(y.raw().iter().all(|&r| r == 0));
    }

    #[test]
    fn identity_pointwise_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_q([1, 4, 4, 3], 30.0, q69(), &mut rng);
        let eye = Tensor::from_fn([1, 1, 3, 3], |[_, _, i, o]| if i == o { 1.0 } else { 0.0 });
        let w = QTensor::quantize(&eye, q69()).unwrap();
        let y = conv2d_fixed(&x, &w, 1, PadSpec::VALID, q69()).unwrap();
        assert_eq!(y.raw(), x.raw());
    }

    #[test]
    fn random_conv_within_error_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let fmt = q69();
        for _ in 0..5 {
            let x = random_q([1, 6, 6, 4], 2.0, fmt, &mut rng);
            let w = random_q([3, 3, 4, 5], 0.5, fmt, &mut rng);
            let y = conv2d_fixed(&x, &w, 1, PadSpec::FullSymmetric { kernel: 3 }, fmt).unwrap();
            let r = float::conv2d(&x.dequantize(), &w.dequantize(), 1, PadSpec::FullSymmetric { kernel: 3 })
                .unwrap();
            let fan_in = 3 * 3 * 4;
            let bound = (fan_in + 1) as f64 * (-10f64).exp2() + (-10f64).exp2();
            for (i, &rv) in r.data().iter().enumerate() {
                assert!((y.value(i) - rv as f64).abs() <= bound);
            }
        }
    }

    #[test]
    fn bias_is_added_at_accumulator_scale() {
        let fmt = q69();
        let x = QTensor::quantize(&Tensor::filled([1, 1, 1, 1], 1.5), fmt).unwrap();
        let w = QTensor::quantize(&Tensor::filled([1, 1, 1, 2], 2.0), fmt).unwrap();
        let b = QTensor::quantize(&Tensor::new([1, 1, 1, 2], vec![0.25, -4.0]).unwrap(), fmt).unwrap();
        let y = conv2d_fixed_bias(&x, &w, Some(&b), 1, PadSpec::VALID, fmt).unwrap();
        assert_eq!(y.value(0), 3.25);
        assert_eq!(y.value(1), -1.0);
    }

    #[test]
    fn overflow_is_detected_not_wrapped() {
        let fmt = QFormat::new(31, 0).unwrap();
        let x = QTensor::from_raw([1, 1, 1, 4], vec![i32::MIN; 4], fmt).unwrap();
        let w = QTensor::from_raw([1, 1, 4, 1], vec![i32::MIN; 4], fmt).unwrap();
        let r = conv2d_fixed(&x, &w, 1, PadSpec::VALID, fmt);
        assert!(matches!(r, Err(Error::AccumulatorOverflow)));
    }

    #[test]
    fn output_saturates() {
        let fmt = q69();
        let x = QTensor::quantize(&Tensor::filled([1, 1, 1, 4], 60.0), fmt).unwrap();
        let w = QTensor::quantize(&Tensor::filled([1, 1, 4, 1], 1.0), fmt).unwrap();
        let y = conv2d_fixed(&x, &w, 1, PadSpec::VALID, fmt).unwrap();
        assert_eq!(y.raw(), &[32767]);
    }

    #[test]
    fn depthwise_matches_float_within_half_ulp() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fmt = q69();
        let x = random_q([1, 7, 6, 3], 3.0, fmt, &mut rng);
        let w = random_q([3, 3, 3, 1], 1.0, fmt, &mut rng);
        let pad = PadSpec::SameAsymmetric { kernel: 3, stride: 2 };
        let y = depthwise_conv2d_fixed(&x, &w, 2, pad, fmt).unwrap();
        let r = float::depthwise_conv2d(&x.dequantize(), &w.dequantize(), 2, pad).unwrap();
        assert_eq!(y.shape(), r.shape());
        for (i, &rv) in r.data().iter().enumerate() {
            assert!((y.value(i) - rv as f64).abs() <= fmt.max_rounding_error() + 1e-6);
        }
    }

    #[test]
    fn upsample_fixed_matches_float() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let fmt = q69();
        let x = random_q([1, 3, 4, 2], 10.0, fmt, &mut rng);
        let y = upsample2x_fixed(&x).unwrap();
        let r = float::upsample2x_bilinear(&x.dequantize()).unwrap();
        assert_eq!(y.shape(), r.shape());
        for (i, &rv) in r.data().iter().enumerate() {
            assert!((y.value(i) - rv as f64).abs() <= fmt.max_rounding_error() + 1e-6);
        }
    }

    #[test]
    fn relu6_add_affine() {
        let fmt = QFormat::new(2, 5).unwrap(); // max 3.97: six saturates
        let x = QTensor::quantize(&Tensor::new([1, 1, 1, 3], vec![-1.0, 1.5, 3.9]).unwrap(), fmt).unwrap();
        let y = relu6_fixed(&x);
        assert_eq!(y.value(0), 0.0);
        assert_eq!(y.value(1), 1.5);
        assert_eq!(y.value(2), x.value(2));

        let s = add_fixed(&x, &x, fmt).unwrap();
        assert_eq!(s.value(0), -2.0);
        assert_eq!(s.value(1), 3.0);
        assert_eq!(s.raw()[2] as i64, fmt.raw_max());

        let scale = QTensor::quantize(&Tensor::new([1, 1, 1, 3], vec![2.0, 0.5, 0.0]).unwrap(), fmt).unwrap();
        let shift = QTensor::quantize(&Tensor::new([1, 1, 1, 3], vec![0.5, 0.0, 1.0]).unwrap(), fmt).unwrap();
        let a = channel_affine_fixed(&x, &scale, &shift, fmt).unwrap();
        assert_eq!(a.value(0), -1.5);
        assert_eq!(a.value(1), 0.75);
        assert_eq!(a.value(2), 1.0);
    }

    #[test]
    fn concat_requires_shared_format() {
        let a = QTensor::zeros([1, 2, 2, 1], q69());
        let b = QTensor::zeros([1, 2, 2, 1], QFormat::new(8, 7).unwrap());
        assert!(concat_channels_fixed(&a, &b).is_err());
        let c = concat_channels_fixed(&a, &requantize_tensor(&b, q69())).unwrap();
        assert_eq!(c.shape(), [1, 2, 2, 2]);
    }
}
