//! Signed Qm.n fixed-point numbers.
//!
//! A value in Qm.n carries one sign bit, `m` integer bits and `n` fractional
//! bits, stored as a two's complement integer `raw` with `value = raw / 2^n`.
//! Conversions saturate at the word boundaries instead of wrapping, and
//! accumulation happens in a 64-bit integer at the product scale with
//! explicit overflow detection.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Largest supported storage word, sign bit included.
pub const MAX_WORD_BITS: u32 = 32;

/// Word size used when none is given.
pub const DEFAULT_WORD_BITS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QFormat {
    m: u32,
    n: u32,
}

impl QFormat {
    pub fn new(m: u32, n: u32) -> Result<Self> {
        let word = m as u64 + n as u64 + 1;
        if word < 2 || word > MAX_WORD_BITS as u64 {
            return Err(Error::InvalidFormat(format!(
                "Q{m}.{n} needs {word} bits; supported words are 2..={MAX_WORD_BITS}"
            )));
        }
        Ok(Self { m, n })
    }

    /// Format with `n` fractional bits filling a `word_bits` word.
    pub fn with_word(word_bits: u32, n: u32) -> Result<Self> {
        if n + 1 > word_bits {
            return Err(Error::InvalidFormat(format!(
                "{n} fractional bits do not fit a {word_bits}-bit word"
            )));
        }
        Self::new(word_bits - 1 - n, n)
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn word_bits(&self) -> u32 {
        self.m + self.n + 1
    }

    pub fn raw_min(&self) -> i64 {
        -(1i64 << (self.word_bits() - 1))
    }

    pub fn raw_max(&self) -> i64 {
        (1i64 << (self.word_bits() - 1)) - 1
    }

    /// Weight of one raw step, `2^-n`.
    pub fn ulp(&self) -> f64 {
        (-(self.n as f64)).exp2()
    }

    pub fn min_value(&self) -> f64 {
        -(self.m as f64).exp2()
    }

    pub fn max_value(&self) -> f64 {
        (self.m as f64).exp2() - self.ulp()
    }

    /// Worst-case round-to-nearest error inside the representable range.
    pub fn max_rounding_error(&self) -> f64 {
        self.ulp() / 2.0
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min_value() && x <= self.max_value()
    }

    fn scale(&self) -> f64 {
        (self.n as f64).exp2()
    }
}

impl Default for QFormat {
    /// Q6.9 in a 16-bit word.
    fn default() -> Self {
        Self { m: 6, n: 9 }
    }
}

impl fmt::Display for QFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}.{}", self.m, self.n)
    }
}

impl FromStr for QFormat {
    type Err = Error;

    /// Parses `Qm.n` (the leading `Q` is optional).
    fn from_str(s: &str) -> Result<Self> {
        let body = s.strip_prefix('Q').or_else(|| s.strip_prefix('q')).unwrap_or(s);
        let (m, n) = body
            .split_once('.')
            .ok_or_else(|| Error::InvalidFormat(format!("expected Qm.n, got {s:?}")))?;
        let m = m
            .parse()
            .map_err(|_| Error::InvalidFormat(format!("bad integer bits in {s:?}")))?;
        let n = n
            .parse()
            .map_err(|_| Error::InvalidFormat(format!("bad fractional bits in {s:?}")))?;
        Self::new(m, n)
    }
}

/// Rounding applied when a real is mapped onto the raw grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rounding {
    /// Round to nearest, ties to even.
    #[default]
    HalfEven,
    /// Round toward negative infinity. Loses up to a full ulp.
    Floor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QScalar {
    raw: i32,
    fmt: QFormat,
}

impl QScalar {
    pub fn from_raw(raw: i64, fmt: QFormat) -> Result<Self> {
        if raw < fmt.raw_min() || raw > fmt.raw_max() {
            return Err(Error::InvalidFormat(format!(
                "raw code {raw} outside the {}-bit word of {fmt}",
                fmt.word_bits()
            )));
        }
        Ok(Self {
            raw: raw as i32,
            fmt,
        })
    }

    pub fn raw(&self) -> i32 {
        self.raw
    }

    pub fn format(&self) -> QFormat {
        self.fmt
    }

    pub fn to_f64(&self) -> f64 {
        dequantize(*self)
    }
}

/// Quantizes with round-half-to-even, saturating at the word boundaries.
pub fn quantize(x: f64, fmt: QFormat) -> Result<QScalar> {
    quantize_with(x, fmt, Rounding::HalfEven)
}

pub fn quantize_with(x: f64, fmt: QFormat, rounding: Rounding) -> Result<QScalar> {
    if !x.is_finite() {
        return Err(Error::NonFinite(x));
    }
    Ok(QScalar {
        raw: quantize_raw(x, fmt, rounding) as i32,
        fmt,
    })
}

/// Raw code for a finite `x`; callers have already rejected non-finite input.
pub(crate) fn quantize_raw(x: f64, fmt: QFormat, rounding: Rounding) -> i64 {
    let scaled = x * fmt.scale();
    let r = match rounding {
        Rounding::HalfEven => scaled.round_ties_even(),
        Rounding::Floor => scaled.floor(),
    };
    r.clamp(fmt.raw_min() as f64, fmt.raw_max() as f64) as i64
}

/// Exact: `raw * 2^-n`.
pub fn dequantize(q: QScalar) -> f64 {
    q.raw as f64 * q.fmt.ulp()
}

/// Smallest `m >= 0` with `-2^m <= lo` and `hi < 2^m`.
pub fn bits_for_range(lo: f64, hi: f64) -> Result<u32> {
    if !lo.is_finite() {
        return Err(Error::NonFinite(lo));
    }
    if !hi.is_finite() {
        return Err(Error::NonFinite(hi));
    }
    if lo > hi {
        return Err(Error::InvalidRange { lo, hi });
    }
    let mut m = 0u32;
    loop {
        let bound = (m as f64).exp2();
        if -bound <= lo && hi < bound {
            return Ok(m);
        }
        m += 1;
    }
}

/// Multiply-accumulate at the product scale (`a.n + b.n` fractional bits).
/// The sum is never saturated; overflow of the accumulator is an error.
pub fn qmac(acc: i64, a: QScalar, b: QScalar) -> Result<i64> {
    if a.fmt.word_bits() != b.fmt.word_bits() {
        return Err(Error::InvalidFormat(format!(
            "qmac operands differ in word size: {} vs {}",
            a.fmt, b.fmt
        )));
    }
    let product = a.raw as i64 * b.raw as i64;
    acc.checked_add(product).ok_or(Error::AccumulatorOverflow)
}

/// Right shift with round-half-to-even; negative `shift` shifts left.
pub(crate) fn shift_round_even(v: i128, shift: i32) -> i128 {
    if shift <= 0 {
        let s = (-shift) as u32;
        return v.checked_shl(s).filter(|r| r >> s == v).unwrap_or(if v < 0 {
            i128::MIN
        } else {
            i128::MAX
        });
    }
    let s = shift as u32;
    if s >= 127 {
        return 0;
    }
    let floor = v >> s;
    let rem = v - (floor << s);
    let half = 1i128 << (s - 1);
    if rem > half || (rem == half && floor & 1 == 1) {
        floor + 1
    } else {
        floor
    }
}

/// Brings a wide value with `frac_bits` fractional bits into `fmt`,
/// rounding half-to-even and saturating.
pub fn requantize(acc: i64, frac_bits: u32, fmt: QFormat) -> QScalar {
    QScalar {
        raw: requantize_raw(acc, frac_bits, fmt) as i32,
        fmt,
    }
}

pub(crate) fn requantize_raw(acc: i64, frac_bits: u32, fmt: QFormat) -> i64 {
    let shifted = shift_round_even(acc as i128, frac_bits as i32 - fmt.n as i32);
    shifted.clamp(fmt.raw_min() as i128, fmt.raw_max() as i128) as i64
}
