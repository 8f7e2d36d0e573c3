use crate::error::Result;
use crate::nn::{pad_to_multiple, resize_by, Tensor};

use super::{extract_detections, nms, Detection, HeadMap};

/// Anything that maps a `1 x H x W x C` image tensor to a head map.
pub trait HeadModel {
    fn head_map(&self, input: &Tensor) -> Result<HeadMap>;

    /// Inputs are zero-padded at the bottom/right to a multiple of this.
    fn input_multiple(&self) -> usize {
        1
    }
}

pub const DEFAULT_SCALES: [f64; 3] = [0.5, 1.0, 2.0];

/// Runs the model on every pyramid level, maps detections back to the
/// original frame and applies a single NMS over the pooled set.
pub fn multi_scale_detect<M: HeadModel + ?Sized>(
    model: &M,
    image: &Tensor,
    scales: &[f64],
    score_threshold: f64,
    iou_threshold: f64,
) -> Result<Vec<Detection>> {
    let mut pooled = Vec::new();
    for &scale in scales {
        pooled.extend(detect_at_scale(model, image, scale, score_threshold)?);
    }
    Ok(nms(&pooled, iou_threshold))
}

/// Detections of one pyramid level, already in original coordinates.
pub fn detect_at_scale<M: HeadModel + ?Sized>(
    model: &M,
    image: &Tensor,
    scale: f64,
    score_threshold: f64,
) -> Result<Vec<Detection>> {
    let resized = if scale == 1.0 {
        image.clone()
    } else {
        resize_by(image, scale)?
    };
    // effective per-axis factors after rounding the resized extents
    let sy = resized.height() as f64 / image.height() as f64;
    let sx = resized.width() as f64 / image.width() as f64;

    let input = if model.input_multiple() > 1 {
        pad_to_multiple(&resized, model.input_multiple())
    } else {
        resized
    };

    let head = model.head_map(&input)?;
    Ok(extract_detections(&head, score_threshold)
        .into_iter()
        .map(|d| Detection {
            bbox: d.bbox.unscale(sx, sy),
            score: d.score,
            scale,
        })
        .collect())
}
