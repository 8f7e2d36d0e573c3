use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::Tensor;

/// How a convolution input is zero-padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadSpec {
    /// TensorFlow `SAME`: output is `ceil(in / stride)`, the odd pixel of
    /// padding goes to the bottom/right. For kernel 3, stride 2 and an
    /// even extent this is `(top, left, bottom, right) = (0, 0, 1, 1)`.
    SameAsymmetric { kernel: usize, stride: usize },
    /// `kernel / 2` on every side.
    FullSymmetric { kernel: usize },
    Explicit {
        top: usize,
        bottom: usize,
        left: usize,
        right: usize,
    },
}

/// Concrete pixel counts once the input extent is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl PadSpec {
    pub const VALID: PadSpec = PadSpec::Explicit {
        top: 0,
        bottom: 0,
        left: 0,
        right: 0,
    };

    pub fn explicit(top: usize, bottom: usize, left: usize, right: usize) -> Self {
        PadSpec::Explicit {
            top,
            bottom,
            left,
            right,
        }
    }

    pub fn resolve(&self, height: usize, width: usize) -> Padding {
        match *self {
            PadSpec::SameAsymmetric { kernel, stride } => {
                let (top, bottom) = same_split(height, kernel, stride);
                let (left, right) = same_split(width, kernel, stride);
                Padding {
                    top,
                    bottom,
                    left,
                    right,
                }
            }
            PadSpec::FullSymmetric { kernel } => {
                let p = kernel / 2;
                Padding {
                    top: p,
                    bottom: p,
                    left: p,
                    right: p,
                }
            }
            PadSpec::Explicit {
                top,
                bottom,
                left,
                right,
            } => Padding {
                top,
                bottom,
                left,
                right,
            },
        }
    }
}

fn same_split(extent: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let stride = stride.max(1);
    let out = extent.div_ceil(stride);
    let total = ((out.saturating_sub(1)) * stride + kernel).saturating_sub(extent);
    (total / 2, total - total / 2)
}

impl fmt::Display for PadSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PadSpec::SameAsymmetric { kernel, stride } => write!(f, "same:{kernel}:{stride}"),
            PadSpec::FullSymmetric { kernel } => write!(f, "full:{kernel}"),
            PadSpec::Explicit {
                top,
                bottom,
                left,
                right,
            } => write!(f, "explicit:{top}:{bottom}:{left}:{right}"),
        }
    }
}

impl FromStr for PadSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| {
            p.parse::<usize>()
                .map_err(|_| Error::InvalidFormat(format!("bad padding spec {s:?}")))
        };
        match parts.as_slice() {
            ["same", k, st] => Ok(PadSpec::SameAsymmetric {
                kernel: num(k)?,
                stride: num(st)?,
            }),
            ["full", k] => Ok(PadSpec::FullSymmetric { kernel: num(k)? }),
            ["explicit", t, b, l, r] => Ok(PadSpec::explicit(num(t)?, num(b)?, num(l)?, num(r)?)),
            _ => Err(Error::InvalidFormat(format!("bad padding spec {s:?}"))),
        }
    }
}

/// Zero-pads height and width.
pub fn pad2d(x: &Tensor, spec: PadSpec) -> Tensor {
    let p = spec.resolve(x.height(), x.width());
    pad_with(x, p)
}

/// Zero-pads the bottom and right so both extents are multiples of `multiple`.
pub fn pad_to_multiple(x: &Tensor, multiple: usize) -> Tensor {
    let m = multiple.max(1);
    let bottom = x.height().next_multiple_of(m) - x.height();
    let right = x.width().next_multiple_of(m) - x.width();
    pad2d(x, PadSpec::explicit(0, bottom, 0, right))
}

pub(crate) fn pad_with(x: &Tensor, p: Padding) -> Tensor {
    if p == Padding::default() {
        return x.clone();
    }
    let [b, h, w, c] = x.shape();
    let (oh, ow) = (h + p.top + p.bottom, w + p.left + p.right);
    let mut out = Tensor::zeros([b, oh, ow, c]);
    for bi in 0..b {
        for y in 0..h {
            let src = x.offset(bi, y, 0, 0);
            let dst = out.offset(bi, y + p.top, p.left, 0);
            out.data_mut()[dst..dst + w * c].copy_from_slice(&x.data()[src..src + w * c]);
        }
    }
    out
}

pub(crate) fn pad_raw(raw: &[i32], shape: [usize; 4], p: Padding) -> (Vec<i32>, [usize; 4]) {
    let [b, h, w, c] = shape;
    let (oh, ow) = (h + p.top + p.bottom, w + p.left + p.right);
    let mut out = vec![0i32; b * oh * ow * c];
    for bi in 0..b {
        for y in 0..h {
            let src = ((bi * h + y) * w) * c;
            let dst = ((bi * oh + y + p.top) * ow + p.left) * c;
            out[dst..dst + w * c].copy_from_slice(&raw[src..src + w * c]);
        }
    }
    (out, [b, oh, ow, c])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_asymmetric_stride_two_pads_bottom_right() {
        let spec = PadSpec::SameAsymmetric {
            kernel: 3,
            stride: 2,
        };
        assert_eq!(
            spec.resolve(4, 4),
            Padding {
                top: 0,
                bottom: 1,
                left: 0,
                right: 1
            }
        );
        let x = Tensor::filled([1, 4, 4, 1], 1.0);
        let y = pad2d(&x, spec);
        assert_eq!(y.shape(), [1, 5, 5, 1]);
        for i in 0..5 {
            assert_eq!(y.get(0, 4, i, 0), 0.0);
            assert_eq!(y.get(0, i, 4, 0), 0.0);
        }
        for yy in 0..4 {
            for xx in 0..4 {
                assert_eq!(y.get(0, yy, xx, 0), 1.0);
            }
        }
    }

    #[test]
    fn same_stride_one_and_odd_extents() {
        let s1 = PadSpec::SameAsymmetric {
            kernel: 3,
            stride: 1,
        };
        assert_eq!(s1.resolve(7, 8), Padding { top: 1, bottom: 1, left: 1, right: 1 });
        let s2 = PadSpec::SameAsymmetric {
            kernel: 3,
            stride: 2,
        };
        assert_eq!(s2.resolve(5, 5), Padding { top: 1, bottom: 1, left: 1, right: 1 });
        let p1 = PadSpec::SameAsymmetric {
            kernel: 1,
            stride: 1,
        };
        assert_eq!(p1.resolve(5, 5), Padding::default());
    }

    #[test]
    fn explicit_zero_is_identity() {
        let x = Tensor::from_fn([1, 3, 2, 2], |[_, y, x, c]| (y * 4 + x * 2 + c) as f32);
        assert_eq!(pad2d(&x, PadSpec::VALID), x);
    }

    #[test]
    fn full_symmetric_borders() {
        let x = Tensor::filled([1, 2, 2, 1], 1.0);
        let y = pad2d(&x, PadSpec::FullSymmetric { kernel: 3 });
        assert_eq!(y.shape(), [1, 4, 4, 1]);
        let expected = [
            0., 0., 0., 0., //
            0., 1., 1., 0., //
            0., 1., 1., 0., //
            0., 0., 0., 0.,
        ];
        assert_eq!(y.data(), &expected);
    }

    #[test]
    fn spec_text_round_trip() {
        for s in [
            PadSpec::SameAsymmetric { kernel: 3, stride: 2 },
            PadSpec::FullSymmetric { kernel: 3 },
            PadSpec::explicit(0, 1, 0, 1),
        ] {
            assert_eq!(s.to_string().parse::<PadSpec>().unwrap(), s);
        }
        assert!("same:3".parse::<PadSpec>().is_err());
    }
}
