use crate::error::{Error, Result};
use crate::nn::Tensor;

use super::codec::{decode_box, RegressionTarget};
use super::{AnchorSet, BBox};

/// Channels per anchor: one objectness logit and four box offsets.
pub const CHANNELS_PER_ANCHOR: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    /// Pyramid scale the detection came from.
    pub scale: f64,
}

/// Network output: per cell and anchor `[logit, t_x, t_y, t_w, t_h]`.
#[derive(Debug, Clone)]
pub struct HeadMap {
    grid: Tensor,
    stride: f64,
    anchors: AnchorSet,
}

impl HeadMap {
    pub fn new(grid: Tensor, stride: f64, anchors: AnchorSet) -> Result<Self> {
        if grid.batch() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "head map must have batch 1, got {}",
                grid.batch()
            )));
        }
        if grid.channels() != CHANNELS_PER_ANCHOR * anchors.len() {
            return Err(Error::ShapeMismatch(format!(
                "head map has {} channels, {} anchors need {}",
                grid.channels(),
                anchors.len(),
                CHANNELS_PER_ANCHOR * anchors.len()
            )));
        }
        if stride.is_nan() || stride <= 0.0 {
            return Err(Error::InvalidConfig(format!("stride must be positive, got {stride}")));
        }
        Ok(Self {
            grid,
            stride,
            anchors,
        })
    }

    pub fn grid(&self) -> &Tensor {
        &self.grid
    }

    pub fn stride(&self) -> f64 {
        self.stride
    }

    pub fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        cell_center(row, col, self.stride)
    }

    pub fn logit(&self, row: usize, col: usize, anchor: usize) -> f64 {
        self.grid.get(0, row, col, anchor * CHANNELS_PER_ANCHOR) as f64
    }

    pub fn target(&self, row: usize, col: usize, anchor: usize) -> RegressionTarget {
        let base = anchor * CHANNELS_PER_ANCHOR;
        RegressionTarget::from_array(std::array::from_fn(|k| {
            self.grid.get(0, row, col, base + 1 + k) as f64
        }))
    }
}

/// Pixel center of a grid cell, `((col + 0.5) * stride, (row + 0.5) * stride)`.
pub fn cell_center(row: usize, col: usize, stride: f64) -> (f64, f64) {
    ((col as f64 + 0.5) * stride, (row as f64 + 0.5) * stride)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Every cell/anchor whose sigmoid score reaches `score_threshold`,
/// decoded into image coordinates.
pub fn extract_detections(m: &HeadMap, score_threshold: f64) -> Vec<Detection> {
    let mut out = Vec::new();
    for row in 0..m.height() {
        for col in 0..m.width() {
            for a in m.anchors.iter() {
                let score = sigmoid(m.logit(row, col, a.id));
                if score < score_threshold {
                    continue;
                }
                let t = m.target(row, col, a.id);
                out.push(Detection {
                    bbox: decode_box(&t, a, m.cell_center(row, col)),
                    score,
                    scale: 1.0,
                });
            }
        }
    }
    out
}
