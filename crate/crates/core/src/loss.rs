//! Detection loss: objectness cross-entropy plus a masked box-regression
//! term, its analytic gradient, and max-IoU target assignment.
//!
//! ```text
//! L = 1/N_cls * sum_i CE(p_i, p*_i) + lambda/N_reg * sum_i p*_i * MSE(b_i, b*_i)
//! ```

use crate::detection::{cell_center, encode_box, iou, AnchorSet, BBox, HeadMap, RegressionTarget, CHANNELS_PER_ANCHOR};
use crate::error::{Error, Result};

/// Logits are clamped to this magnitude before the sigmoid.
pub const LOGIT_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub n_cls: f64,
    pub n_reg: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            n_cls: 256.0,
            n_reg: 4.0,
        }
    }
}

/// Head-map-shaped predictions in double precision, laid out like the
/// network output: `(row, col, anchor * 5 + k)` with `k = 0` the logit.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMap {
    height: usize,
    width: usize,
    anchors: usize,
    data: Vec<f64>,
}

impl PredictionMap {
    pub fn zeros(height: usize, width: usize, anchors: usize) -> Self {
        Self {
            height,
            width,
            anchors,
            data: vec![0.0; height * width * anchors * CHANNELS_PER_ANCHOR],
        }
    }

    pub fn from_head(m: &HeadMap) -> Self {
        Self {
            height: m.height(),
            width: m.width(),
            anchors: m.anchors().len(),
            data: m.grid().data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn anchors(&self) -> usize {
        self.anchors
    }

    fn index(&self, row: usize, col: usize, anchor: usize, k: usize) -> usize {
        ((row * self.width + col) * self.anchors + anchor) * CHANNELS_PER_ANCHOR + k
    }

    pub fn get(&self, row: usize, col: usize, anchor: usize, k: usize) -> f64 {
        self.data[self.index(row, col, anchor, k)]
    }

    pub fn set(&mut self, row: usize, col: usize, anchor: usize, k: usize, v: f64) {
        let i = self.index(row, col, anchor, k);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Per cell and anchor: the objectness label and, for positives, the
/// regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMap {
    height: usize,
    width: usize,
    anchors: usize,
    targets: Vec<Option<RegressionTarget>>,
}

impl TargetMap {
    pub fn empty(height: usize, width: usize, anchors: usize) -> Self {
        Self {
            height,
            width,
            anchors,
            targets: vec![None; height * width * anchors],
        }
    }

    fn index(&self, row: usize, col: usize, anchor: usize) -> usize {
        (row * self.width + col) * self.anchors + anchor
    }

    pub fn set_positive(&mut self, row: usize, col: usize, anchor: usize, t: RegressionTarget) {
        let i = self.index(row, col, anchor);
        self.targets[i] = Some(t);
    }

    pub fn get(&self, row: usize, col: usize, anchor: usize) -> Option<&RegressionTarget> {
        self.targets[self.index(row, col, anchor)].as_ref()
    }

    pub fn positives(&self) -> impl Iterator<Item = ((usize, usize, usize), &RegressionTarget)> {
        self.targets.iter().enumerate().filter_map(move |(i, t)| {
            t.as_ref().map(|t| {
                let a = i % self.anchors;
                let cell = i / self.anchors;
                ((cell / self.width, cell % self.width, a), t)
            })
        })
    }

    pub fn positive_count(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.anchors)
    }
}

/// Each ground-truth box claims the one (cell, anchor) slot whose placed
/// anchor overlaps it most; ties go to the lowest (row, col, anchor id).
/// When two boxes claim the same slot the later box's target is kept.
pub fn assign_targets(
    gt: &[BBox],
    anchors: &AnchorSet,
    grid: (usize, usize, f64),
) -> Result<TargetMap> {
    let (h, w, stride) = grid;
    let mut map = TargetMap::empty(h, w, anchors.len());
    for b in gt {
        b.validate()?;
        let mut best: Option<(f64, usize, usize, usize)> = None;
        for row in 0..h {
            for col in 0..w {
                let c = cell_center(row, col, stride);
                for a in anchors.iter() {
                    let v = iou(b, &a.at(c));
                    if best.is_none_or(|(bv, ..)| v > bv) {
                        best = Some((v, row, col, a.id));
                    }
                }
            }
        }
        if let Some((_, row, col, a)) = best {
            let anchor = anchors.get(a).expect("id from the set");
            let t = encode_box(b, anchor, cell_center(row, col, stride))?;
            map.set_positive(row, col, a, t);
        }
    }
    Ok(map)
}

fn check_shapes(pred: &PredictionMap, target: &TargetMap) -> Result<()> {
    if (pred.height, pred.width, pred.anchors) != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{}x{} anchors vs target {:?}",
            pred.height,
            pred.width,
            pred.anchors,
            target.shape()
        )));
    }
    Ok(())
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    crate::detection::sigmoid(z)
}

/// Classification and (unweighted) regression parts, so that
/// `L = cls + lambda * reg`.
pub fn loss_parts(pred: &PredictionMap, target: &TargetMap, cfg: &LossConfig) -> Result<(f64, f64)> {
    check_shapes(pred, target)?;
    let mut ce = 0.0;
    let mut sq = 0.0;
    for (slot, t) in target.targets.iter().enumerate() {
        let base = slot * CHANNELS_PER_ANCHOR;
        let z = pred.data[base].clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
        // -[p* ln s(z) + (1 - p*) ln(1 - s(z))] in overflow-free form
        ce += match t {
            Some(_) => softplus(z) - z,
            None => softplus(z),
        };
        if let Some(t) = t {
            let mse: f64 = t
                .as_array()
                .iter()
                .enumerate()
                .map(|(k, v)| (pred.data[base + 1 + k] - v).powi(2))
                .sum::<f64>()
                / 4.0;
            sq += mse;
        }
    }
    Ok((ce / cfg.n_cls, sq / cfg.n_reg))
}

pub fn detection_loss(pred: &PredictionMap, target: &TargetMap, cfg: &LossConfig) -> Result<f64> {
    let (cls, reg) = loss_parts(pred, target, cfg)?;
    Ok(cls + cfg.lambda * reg)
}

/// Analytic partials of [`detection_loss`] for every prediction channel.
pub fn loss_gradient(pred: &PredictionMap, target: &TargetMap, cfg: &LossConfig) -> Result<PredictionMap> {
    check_shapes(pred, target)?;
    let mut g = PredictionMap::zeros(pred.height, pred.width, pred.anchors);
    for (slot, t) in target.targets.iter().enumerate() {
        let base = slot * CHANNELS_PER_ANCHOR;
        let z = pred.data[base].clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
        let label = if t.is_some() { 1.0 } else { 0.0 };
        g.data[base] = (sigmoid(z) - label) / cfg.n_cls;
        if let Some(t) = t {
            for (k, v) in t.as_array().iter().enumerate() {
                g.data[base + 1 + k] = cfg.lambda * 2.0 * (pred.data[base + 1 + k] - v) / (4.0 * cfg.n_reg);
            }
        }
    }
    Ok(g)
}
