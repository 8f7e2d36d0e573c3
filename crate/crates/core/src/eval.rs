//! Greedy detection matching and step-method average precision.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::detection::{iou, rank_order, BBox, Detection};
use crate::error::{Error, Result};

pub const DEFAULT_MATCH_IOU: f64 = 0.5;

/// Detections as ranked TP/FP flags, plus the ground-truth total.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    /// `(score, is_true_positive)` in descending score order.
    pub ranked: Vec<(f64, bool)>,
    pub gt_count: usize,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.ranked.iter().filter(|(_, tp)| *tp).count()
    }

    pub fn false_positives(&self) -> usize {
        self.ranked.len() - self.true_positives()
    }

    /// Pools results of several images. Equal scores keep the order in
    /// which the images were merged.
    pub fn merge(mut self, other: &MatchResult) -> MatchResult {
        self.ranked.extend_from_slice(&other.ranked);
        self.ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
        self.gt_count += other.gt_count;
        self
    }
}

/// Walks detections by descending score; each takes its best-overlapping
/// unmatched ground truth if that overlap reaches `iou_threshold`.
pub fn match_detections(dets: &[Detection], gts: &[BBox], iou_threshold: f64) -> MatchResult {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| rank_order(a, b));
    let mut taken = vec![false; gts.len()];
    let ranked = order
        .into_iter()
        .map(|d| {
            let best = gts
                .iter()
                .enumerate()
                .filter(|(j, _)| !taken[*j])
                .map(|(j, g)| (j, iou(&d.bbox, g)))
                .fold(None, |best: Option<(usize, f64)>, (j, v)| match best {
                    Some((_, bv)) if bv >= v => best,
                    _ => Some((j, v)),
                });
            let tp = match best {
                Some((j, v)) if v >= iou_threshold => {
                    taken[j] = true;
                    true
                }
                _ => false,
            };
            (d.score, tp)
        })
        .collect();
    MatchResult {
        ranked,
        gt_count: gts.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    /// 1-based position in the ranked list.
    pub rank: usize,
    pub precision: f64,
    pub recall: f64,
}

pub fn pr_curve(m: &MatchResult) -> Vec<PrPoint> {
    let mut tp = 0usize;
    m.ranked
        .iter()
        .enumerate()
        .map(|(i, &(_, hit))| {
            tp += hit as usize;
            PrPoint {
                rank: i + 1,
                precision: tp as f64 / (i + 1) as f64,
                recall: if m.gt_count == 0 { 0.0 } else { tp as f64 / m.gt_count as f64 },
            }
        })
        .collect()
}

/// Sum of precision at every true-positive rank, over the ground-truth
/// count.
pub fn average_precision(m: &MatchResult) -> Result<f64> {
    if m.gt_count == 0 {
        return Err(Error::NoGroundTruth);
    }
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (i, &(_, hit)) in m.ranked.iter().enumerate() {
        if hit {
            tp += 1;
            sum += tp as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / m.gt_count as f64)
}

pub fn pr_csv(points: &[PrPoint]) -> String {
    let mut s = String::from("rank,precision,recall\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.rank, p.precision, p.recall);
    }
    s
}

/// Matches every image of a set. Both sides must list the same image ids.
pub fn evaluate_images(
    gts: &[(String, Vec<BBox>)],
    dets: &[(String, Vec<Detection>)],
    iou_threshold: f64,
) -> Result<MatchResult> {
    let det_map: BTreeMap<&str, &[Detection]> = dets.iter().map(|(k, v)| (k.as_str(), v.as_slice())).collect();
    let gt_ids: BTreeSet<&str> = gts.iter().map(|(k, _)| k.as_str()).collect();
    if let Some(extra) = det_map.keys().find(|k| !gt_ids.contains(*k)) {
        return Err(Error::InvalidConfig(format!("detections for unknown image {extra}")));
    }
    let mut total = MatchResult::default();
    for (id, boxes) in gts {
        let d = det_map
            .get(id.as_str())
            .ok_or_else(|| Error::InvalidConfig(format!("no detections listed for image {id}")))?;
        total = total.merge(&match_detections(d, boxes, iou_threshold));
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub name: String,
    pub images: usize,
    pub faces: usize,
    pub detections: usize,
    pub ap: f64,
}

/// Fixed-width table with one row per fold and an overall row.
pub fn format_report(folds: &[FoldReport], overall: &FoldReport) -> String {
    let mut s = format!("{:<12} {:>7} {:>7} {:>10} {:>8}\n", "fold", "images", "faces", "detections", "AP");
    for f in folds.iter().chain(std::iter::once(overall)) {
        let _ = writeln!(
            s,
            "{:<12} {:>7} {:>7} {:>10} {:>8.4}",
            f.name, f.images, f.faces, f.detections, f.ap
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(cx: f64, cy: f64, side: f64, score: f64) -> Detection {
        Detection {
            bbox: BBox::new(cx, cy, side, side).unwrap(),
            score,
            scale: 1.0,
        }
    }

    fn flags(m: &MatchResult) -> Vec<bool> {
        m.ranked.iter().map(|r| r.1).collect()
    }

    #[test]
    fn exact_hit() {
        let g = BBox::new(50.0, 50.0, 20.0, 20.0).unwrap();
        let m = match_detections(&[det(50.0, 50.0, 20.0, 0.9)], &[g], 0.5);
        assert_eq!((m.true_positives(), m.false_positives()), (1, 0));
        assert_eq!(average_precision(&m).unwrap(), 1.0);
    }

    #[test]
    fn one_gt_two_dets() {
        let g = BBox::new(50.0, 50.0, 20.0, 20.0).unwrap();
        let m = match_detections(&[det(51.0, 50.0, 20.0, 0.6), det(50.0, 50.0, 20.0, 0.9)], &[g], 0.5);
        assert_eq!(m.ranked, vec![(0.9, true), (0.6, false)]);
    }

    #[test]
    fn iou_boundary() {
        // two 10x10 boxes offset so IoU is just under one half
        let g = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let shift = 10.0 / 3.0 + 0.01;
        let d = det(shift, 0.0, 10.0, 0.8);
        assert!(iou(&d.bbox, &g) < 0.5 && iou(&d.bbox, &g) > 0.49);
        assert_eq!(flags(&match_detections(&[d], &[g], 0.5)), vec![false]);
    }

    #[test]
    fn hand_ap_cases() {
        let tp_fp = MatchResult {
            ranked: vec![(0.9, true), (0.8, false)],
            gt_count: 1,
        };
        assert_eq!(average_precision(&tp_fp).unwrap(), 1.0);
        let fp_tp = MatchResult {
            ranked: vec![(0.9, false), (0.8, true)],
            gt_count: 1,
        };
        assert_eq!(average_precision(&fp_tp).unwrap(), 0.5);
        assert!(matches!(
            average_precision(&MatchResult::default()),
            Err(Error::NoGroundTruth)
        ));
    }

    #[test]
    fn trailing_fp_never_helps() {
        let mut m = MatchResult {
            ranked: vec![(0.9, true), (0.5, false), (0.4, true)],
            gt_count: 3,
        };
        let before = average_precision(&m).unwrap();
        m.ranked.push((0.1, false));
        assert!(average_precision(&m).unwrap() <= before);
    }

    #[test]
    fn pr_points_and_csv() {
        let m = MatchResult {
            ranked: vec![(0.9, true), (0.5, false), (0.4, true)],
            gt_count: 2,
        };
        let pts = pr_curve(&m);
        assert_eq!(pts[2], PrPoint { rank: 3, precision: 2.0 / 3.0, recall: 1.0 });
        assert!(pts.windows(2).all(|w| w[0].recall <= w[1].recall));
        assert!(pr_csv(&pts).starts_with("rank,precision,recall\n1,1,0.5\n"));
    }

    #[test]
    fn image_sets_must_agree() {
        let g = vec![("a".to_string(), vec![BBox::new(5.0, 5.0, 4.0, 4.0).unwrap()])];
        let d = vec![("a".to_string(), vec![det(5.0, 5.0, 4.0, 0.7)])];
        assert_eq!(evaluate_images(&g, &d, 0.5).unwrap().true_positives(), 1);
        assert!(evaluate_images(&g, &[], 0.5).is_err());
        let extra = vec![d[0].clone(), ("b".to_string(), vec![])];
        assert!(evaluate_images(&g, &extra, 0.5).is_err());
    }

    #[test]
    fn report_table() {
        let f = FoldReport {
            name: "fold-01".into(),
            images: 3,
            faces: 4,
            detections: 5,
            ap: 0.75,
        };
        let t = format_report(std::slice::from_ref(&f), &FoldReport { name: "overall".into(), ..f.clone() });
        assert_eq!(t.lines().count(), 3);
        assert!(t.contains("0.7500"));
    }
}
