use half::f16;

use crate::error::{Error, Result};
use crate::fixedpoint::{quantize_raw, QFormat, Rounding};

use super::graph::{ModelGraph, Op, StorageFormat, WeightBlob, WeightData};

/// Bytes in one binary megabyte.
pub const MB: f64 = 1024.0 * 1024.0;

impl ModelGraph {
    /// Trainable parameters: kernels, head bias, batch-norm scale and
    /// offset. Moving statistics are not trainable.
    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        for node in &self.nodes {
            let names: Vec<&str> = match &node.op {
                Op::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
                op => op.weight_names(),
            };
            n += names
                .iter()
                .filter_map(|w| self.weights.get(*w))
                .map(WeightBlob::len)
                .sum::<usize>();
        }
        n
    }

    /// Every stored value, moving statistics included.
    pub fn stored_value_count(&self) -> usize {
        self.weights.values().map(WeightBlob::len).sum()
    }

    /// Size of the trainable parameters in `fmt`, in binary MB.
    pub fn storage_size(&self, fmt: StorageFormat) -> f64 {
        storage_size(self.parameter_count(), fmt)
    }
}

pub fn storage_bytes(params: usize, fmt: StorageFormat) -> u64 {
    params as u64 * fmt.bytes_per_weight() as u64
}

/// `params * bytes_per_weight / 2^20`.
pub fn storage_size(params: usize, fmt: StorageFormat) -> f64 {
    storage_bytes(params, fmt) as f64 / MB
}

fn cast_values(values: &[f32], fmt: StorageFormat, saturate: bool, name: &str) -> Result<WeightData> {
    Ok(match fmt {
        StorageFormat::Fp32 => WeightData::F32(values.to_vec()),
        StorageFormat::Fp16 => WeightData::F16(values.iter().map(|&v| f16::from_f32(v)).collect()),
        StorageFormat::Q(q) => WeightData::Q {
            fmt: q,
            raw: quantize_values(values, q, saturate, name)?,
        },
    })
}

fn quantize_values(values: &[f32], fmt: QFormat, saturate: bool, name: &str) -> Result<Vec<i32>> {
    values
        .iter()
        .map(|&v| {
            if !v.is_finite() {
                return Err(Error::NonFinite(v as f64));
            }
            if !saturate && !fmt.contains(v as f64) {
                return Err(Error::RangeUnrepresentable {
                    what: format!("weight {v} in {name}"),
                    needed: crate::fixedpoint::bits_for_range(v as f64, v as f64)?,
                    available: fmt.m(),
                });
            }
            Ok(quantize_raw(v as f64, fmt, Rounding::HalfEven) as i32)
        })
        .collect()
}

fn cast(g: &ModelGraph, fmt: StorageFormat, saturate: bool) -> Result<ModelGraph> {
    if g.storage != StorageFormat::Fp32 {
        return Err(Error::InvalidConfig(format!(
            "storage casts start from fp32, model is {}",
            g.storage
        )));
    }
    let mut out = g.clone();
    for (name, blob) in out.weights.iter_mut() {
        let WeightData::F32(values) = &blob.data else {
            unreachable!("validated graph has a single storage format")
        };
        blob.data = cast_values(values, fmt, saturate, name)?;
    }
    out.storage = fmt;
    Ok(out)
}

/// Re-stores every weight of an fp32 model in `fmt`. Fp16 rounds to
/// nearest even; Q formats saturate out-of-range weights.
pub fn cast_storage(g: &ModelGraph, fmt: StorageFormat) -> Result<ModelGraph> {
    cast(g, fmt, true)
}

/// Like [`cast_storage`] but a weight outside a Q format's range is an
/// error instead of being saturated.
pub fn cast_storage_strict(g: &ModelGraph, fmt: StorageFormat) -> Result<ModelGraph> {
    cast(g, fmt, false)
}
