use crate::error::{Error, Result};
use crate::fixedpoint::{dequantize, quantize_raw, QFormat, QScalar, Rounding};

/// Dense 4-D tensor in batch x height x width x channels layout, row-major.
///
/// Convolution kernels reuse the same type with shape `(kh, kw, cin, cout)`
/// (or `(kh, kw, c, 1)` for depthwise filters).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: [usize; 4], value: f32) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> f32) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for b in 0..shape[0] {
            for y in 0..shape[1] {
                for x in 0..shape[2] {
                    for c in 0..shape[3] {
                        data.push(f([b, y, x, c]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn height(&self) -> usize {
        self.shape[1]
    }

    pub fn width(&self) -> usize {
        self.shape[2]
    }

    pub fn channels(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn offset(&self, b: usize, y: usize, x: usize, c: usize) -> usize {
        ((b * self.shape[1] + y) * self.shape[2] + x) * self.shape[3] + c
    }

    #[inline]
    pub fn get(&self, b: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.offset(b, y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, y: usize, x: usize, c: usize, v: f32) {
        let i = self.offset(b, y, x, c);
        self.data[i] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min_max(&self) -> Option<(f32, f32)> {
        self.data.iter().fold(None, |acc, &v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }

    pub fn mean_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        if self.data.is_empty() {
            return Ok(0.0);
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .sum();
        Ok(sum / self.data.len() as f64)
    }
}

/// Tensor of raw fixed-point codes sharing one [`QFormat`].
#[derive(Debug, Clone, PartialEq)]
pub struct QTensor {
    shape: [usize; 4],
    raw: Vec<i32>,
    fmt: QFormat,
}

impl QTensor {
    pub fn from_raw(shape: [usize; 4], raw: Vec<i32>, fmt: QFormat) -> Result<Self> {
        let len: usize = shape.iter().product();
        if raw.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {len} codes, got {}",
                raw.len()
            )));
        }
        if let Some(bad) = raw
            .iter()
            .find(|&&r| (r as i64) < fmt.raw_min() || (r as i64) > fmt.raw_max())
        {
            return Err(Error::InvalidFormat(format!(
                "raw code {bad} outside the {}-bit word of {fmt}",
                fmt.word_bits()
            )));
        }
        Ok(Self { shape, raw, fmt })
    }

    pub(crate) fn from_raw_unchecked(shape: [usize; 4], raw: Vec<i32>, fmt: QFormat) -> Self {
        debug_assert_eq!(raw.len(), shape.iter().product::<usize>());
        Self { shape, raw, fmt }
    }

    pub fn zeros(shape: [usize; 4], fmt: QFormat) -> Self {
        Self {
            shape,
            raw: vec![0; shape.iter().product()],
            fmt,
        }
    }

    /// Saturating, round-half-to-even quantization of every element.
    pub fn quantize(t: &Tensor, fmt: QFormat) -> Result<Self> {
        Self::quantize_with(t, fmt, Rounding::HalfEven)
    }

    pub fn quantize_with(t: &Tensor, fmt: QFormat, rounding: Rounding) -> Result<Self> {
        let mut raw = Vec::with_capacity(t.len());
        for &v in t.data() {
            if !v.is_finite() {
                return Err(Error::NonFinite(v as f64));
            }
            raw.push(quantize_raw(v as f64, fmt, rounding) as i32);
        }
        Ok(Self {
            shape: t.shape(),
            raw,
            fmt,
        })
    }

    pub fn dequantize(&self) -> Tensor {
        let ulp = self.fmt.ulp();
        Tensor {
            shape: self.shape,
            data: self.raw.iter().map(|&r| (r as f64 * ulp) as f32).collect(),
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape[3]
    }

    pub fn format(&self) -> QFormat {
        self.fmt
    }

    pub fn raw(&self) -> &[i32] {
        &self.raw
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn scalar(&self, i: usize) -> QScalar {
        QScalar::from_raw(self.raw[i] as i64, self.fmt).expect("codes are range-checked on construction")
    }

    pub fn value(&self, i: usize) -> f64 {
        dequantize(self.scalar(i))
    }

    pub fn max_abs_raw(&self) -> i64 {
        self.raw.iter().map(|&r| (r as i64).abs()).max().unwrap_or(0)
    }
}
