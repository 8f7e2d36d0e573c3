use std::cmp::Ordering;

use super::{iou, Detection};

/// Ranking used by NMS: score descending, then lower `cy`, then lower `cx`;
/// remaining ties keep insertion order (the sort is stable).
pub fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.cy.total_cmp(&b.bbox.cy))
        .then(a.bbox.cx.total_cmp(&b.bbox.cx))
}

/// Greedy non-maximum suppression. A candidate is dropped when its IoU
/// with an already kept detection is `>= iou_threshold`. Output is in
/// rank order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| rank_order(&dets[i], &dets[j]));

    let mut suppressed = vec![false; order.len()];
    let mut kept = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[pos] {
            continue;
        }
        let keep = &dets[i];
        kept.push(keep.clone());
        for (later, &j) in order.iter().enumerate().skip(pos + 1) {
            if !suppressed[later] && iou(&keep.bbox, &dets[j].bbox) >= iou_threshold {
                suppressed[later] = true;
            }
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::BBox;

    fn det(cx: f64, cy: f64, s: f64, score: f64) -> Detection {
        Detection {
            bbox: BBox::new(cx, cy, s, s).unwrap(),
            score,
            scale: 1.0,
        }
    }

    #[test]
    fn single_passes_through() {
        let d = vec![det(1.0, 1.0, 2.0, 0.3)];
        assert_eq!(nms(&d, 0.5), d);
        assert!(nms(&[], 0.5).is_empty());
    }

    #[test]
    fn identical_boxes_keep_best() {
        let d = vec![det(5.0, 5.0, 4.0, 0.8), det(5.0, 5.0, 4.0, 0.9)];
        let k = nms(&d, 0.5);
        assert_eq!(k.len(), 1);
        assert_eq!(k[0].score, 0.9);
    }

    #[test]
    fn threshold_boundary_suppresses() {
        // IoU of unit squares offset by 0.5 is exactly 1/3
        let d = vec![det(0.0, 0.0, 1.0, 0.9), det(0.5, 0.0, 1.0, 0.8)];
        assert_eq!(nms(&d, 1.0 / 3.0).len(), 1);
        assert_eq!(nms(&d, 0.34).len(), 2);
    }

    #[test]
    fn tie_break_order() {
        let d = vec![det(9.0, 9.0, 1.0, 0.5), det(3.0, 1.0, 1.0, 0.5), det(1.0, 1.0, 1.0, 0.5)];
        let k = nms(&d, 0.5);
        let centers: Vec<(f64, f64)> = k.iter().map(|d| (d.bbox.cx, d.bbox.cy)).collect();
        assert_eq!(centers, vec![(1.0, 1.0), (3.0, 1.0), (9.0, 9.0)]);
    }
}
