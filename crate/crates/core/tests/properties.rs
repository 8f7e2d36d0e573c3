use proptest::prelude::*;

use qdet::dataio::{parse_ellipse_list, write_ellipse_list, FddbEllipse, FddbRecord};
use qdet::detection::io::{parse_detections, write_detections};
use qdet::detection::{iou, nms, AnchorSet, BBox, Detection};
use qdet::eval::{average_precision, MatchResult};
use qdet::fixedpoint::{bits_for_range, dequantize, quantize};
use qdet::loss::{detection_loss, LossConfig, PredictionMap, TargetMap};
use qdet::detection::RegressionTarget;
use qdet::model::{cast_storage, decode_model, encode_model, GraphBuilder, GraphMeta, ModelGraph, OutStrategy, StorageFormat};
use qdet::quantizer::ActivationProfile;
use qdet::{QFormat, Tensor};

fn qformat() -> impl Strategy<Value = QFormat> {
    (2u32..=32).prop_flat_map(|word| (0..word).prop_map(move |n| QFormat::with_word(word, n).unwrap()))
}

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..200.0f64, 0.0..200.0f64, 1.0..80.0f64, 1.0..80.0f64).prop_map(|(cx, cy, w, h)| BBox { cx, cy, w, h })
}

fn detection() -> impl Strategy<Value = Detection> {
    (bbox(), 0.0..=1.0f64).prop_map(|(bbox, score)| Detection { bbox, score, scale: 1.0 })
}

/// Small random graph: a stem, one or two blocks, optionally a two-branch
/// concat, then the head.
fn small_graph(seed: u64, blocks: usize, concat: bool, anchors: usize) -> ModelGraph {
    let mut g = GraphBuilder::new(seed, 3);
    let mut x = g.conv("stem", g.input(), 4, 3, 2);
    x = g.batch_norm("stem_BN", x);
    x = g.relu6("stem_relu", x);
    let mut tap = x;
    for b in 0..blocks {
        let (y, e) = g.inverted_residual(&format!("block_{b}"), x, 2, 4, 1);
        tap = e;
        x = y;
    }
    if concat {
        let d = g.depthwise("down", tap, 3, 2);
        let u = g.upsample2x("up", d);
        x = g.concat("cat", x, u);
        g.tag("breakpoint_A", tap);
    }
    g.head("head", x, anchors);
    let extents: Vec<(f64, f64)> = (0..anchors).map(|i| (8.0 * (i + 1) as f64, 12.0 * (i + 1) as f64)).collect();
    g.finish(
        GraphMeta {
            alpha: 0.5,
            strategy: Some(if concat { OutStrategy::C } else { OutStrategy::A }),
            input_hw: (32, 32),
            frozen_until: Some(3),
            head_stride: 2,
            input_multiple: if concat { 4 } else { 1 },
        },
        AnchorSet::new(&extents).unwrap(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn quantize_error_within_half_ulp(fmt in qformat(), u in 0.0..=1.0f64) {
        let x = fmt.min_value() + u * (fmt.max_value() - fmt.min_value());
        let back = dequantize(quantize(x, fmt).unwrap());
        prop_assert!((back - x).abs() <= fmt.ulp() / 2.0);
    }

    #[test]
    fn quantize_saturates_and_is_monotone(fmt in qformat(), a in -1e6..1e6f64, b in -1e6..1e6f64) {
        let (qa, qb) = (quantize(a, fmt).unwrap(), quantize(b, fmt).unwrap());
        prop_assert!(dequantize(qa) >= fmt.min_value() && dequantize(qa) <= fmt.max_value());
        if a <= b {
            prop_assert!(qa.raw() <= qb.raw());
        }
    }

    #[test]
    fn bits_for_range_is_minimal(lo in -1e5..1e5f64, span in 0.0..1e5f64) {
        let hi = lo + span;
        let m = bits_for_range(lo, hi).unwrap();
        let bound = 2f64.powi(m as i32);
        prop_assert!(-bound <= lo && hi < bound);
        if m > 0 {
            let smaller = 2f64.powi(m as i32 - 1);
            prop_assert!(!(-smaller <= lo && hi < smaller));
        }
    }

    #[test]
    fn iou_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nms_antichain_and_idempotent(dets in prop::collection::vec(detection(), 0..60), thr in 0.05..0.95f64) {
        let kept = nms(&dets, thr);
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(iou(&a.bbox, &b.bbox) < thr);
            }
        }
        prop_assert!(kept.windows(2).all(|w| w[0].score >= w[1].score));
        prop_assert_eq!(nms(&kept, thr), kept);
    }

    #[test]
    fn ap_depends_only_on_rank(flags in prop::collection::vec(any::<bool>(), 1..20), extra_gt in 0usize..4) {
        let gt = flags.iter().filter(|f| **f).count() + extra_gt;
        prop_assume!(gt > 0);
        let n = flags.len();
        let m = |score: &dyn Fn(usize) -> f64| MatchResult {
            ranked: flags.iter().enumerate().map(|(i, &f)| (score(i), f)).collect(),
            gt_count: gt,
        };
        let linear = average_precision(&m(&|i| 1.0 - i as f64 / n as f64)).unwrap();
        let cubed = average_precision(&m(&|i| (1.0 - i as f64 / n as f64).powi(3) * 7.0)).unwrap();
        prop_assert_eq!(linear, cubed);
        prop_assert!((0.0..=1.0).contains(&linear));

        let mut trailing = m(&|i| 1.0 - i as f64 / n as f64);
        trailing.ranked.push((-1.0, false));
        prop_assert!(average_precision(&trailing).unwrap() <= linear);
    }

    #[test]
    fn profile_merge_is_a_commutative_monoid(
        xs in prop::collection::vec((0usize..4, prop::collection::vec(-100.0..100.0f32, 1..5)), 0..12),
    ) {
        let profiles: Vec<ActivationProfile> = xs
            .chunks(4)
            .map(|chunk| {
                let mut p = ActivationProfile::new();
                for (layer, v) in chunk {
                    p.observe(&format!("layer{layer}"), v);
                }
                p
            })
            .collect();
        let empty = ActivationProfile::new();
        for p in &profiles {
            prop_assert_eq!(&p.clone().merge(&empty), p);
            prop_assert_eq!(&empty.clone().merge(p), p);
        }
        if let [a, b, c, ..] = profiles.as_slice() {
            prop_assert_eq!(a.clone().merge(b), b.clone().merge(a));
            prop_assert_eq!(a.clone().merge(b).merge(c), a.clone().merge(&b.clone().merge(c)));
        }
        // merging per-chunk profiles equals observing everything at once
        let mut all = ActivationProfile::new();
        for (layer, v) in &xs {
            all.observe(&format!("layer{layer}"), v);
        }
        let merged = profiles.iter().fold(ActivationProfile::new(), |acc, p| acc.merge(p));
        prop_assert_eq!(merged, all.clone());
        prop_assert_eq!(ActivationProfile::parse(&all.to_text()).unwrap(), all);
    }

    #[test]
    fn model_file_round_trips(
        seed in any::<u64>(),
        blocks in 0usize..3,
        concat in any::<bool>(),
        anchors in 1usize..4,
        storage in 0usize..4,
    ) {
        let g = small_graph(seed, blocks, concat, anchors);
        let fmt = match storage {
            0 => StorageFormat::Fp32,
            1 => StorageFormat::Fp16,
            2 => StorageFormat::Q(QFormat::new(0, 15).unwrap()),
            _ => StorageFormat::Q(QFormat::new(3, 20).unwrap()),
        };
        let g = if storage == 0 { g } else { cast_storage(&g, fmt).unwrap() };
        let bytes = encode_model(&g);
        let back = decode_model(&bytes).unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(encode_model(&back), bytes);
    }

    #[test]
    fn random_graphs_run_forward(seed in any::<u64>(), blocks in 0usize..3, concat in any::<bool>()) {
        let g = small_graph(seed, blocks, concat, 2);
        let x = Tensor::filled([1, 16, 16, 3], 0.5);
        let y = g.forward_float(&x).unwrap();
        prop_assert_eq!(y.shape(), [1, 8, 8, 10]);
        prop_assert!(y.all_finite());
    }

    #[test]
    fn detection_file_round_trips(dets in prop::collection::vec(detection(), 0..10)) {
        let text = write_detections([("img/a", dets.as_slice()), ("img/b", &dets[..dets.len() / 2])]);
        let back = parse_detections(&text).unwrap();
        prop_assert_eq!(back.len(), 2);
        prop_assert_eq!(back[0].0.as_str(), "img/a");
        for (a, b) in back[0].1.iter().zip(&dets) {
            prop_assert!((a.bbox.cx - b.bbox.cx).abs() < 1e-9 && (a.bbox.cy - b.bbox.cy).abs() < 1e-9);
            prop_assert!((a.bbox.w - b.bbox.w).abs() < 1e-9 && a.score == b.score);
        }
        prop_assert_eq!(back[1].1.len(), dets.len() / 2);
    }

    #[test]
    fn ellipse_list_round_trips(
        faces in prop::collection::vec((1.0..100.0f64, 1.0..100.0f64, -1.5..1.5f64, 0.0..500.0f64, 0.0..500.0f64), 0..4),
    ) {
        let faces: Vec<FddbEllipse> = faces
            .into_iter()
            .map(|(a, b, angle, x, y)| FddbEllipse {
                major_axis_radius: a.max(b),
                minor_axis_radius: a.min(b),
                angle,
                center_x: x,
                center_y: y,
            })
            .collect();
        let records = vec![
            FddbRecord { image_id: "2002/08/11/big/img_591".into(), faces: faces.clone() },
            FddbRecord { image_id: "2002/08/26/big/img_265".into(), faces },
        ];
        prop_assert_eq!(parse_ellipse_list(&write_ellipse_list(&records)).unwrap(), records);
    }

    #[test]
    fn loss_is_non_negative(
        logits in prop::collection::vec(-40.0..40.0f64, 8),
        regs in prop::collection::vec(-2.0..2.0f64, 32),
        positives in prop::collection::vec(any::<bool>(), 8),
        lambda in 0.0..5.0f64,
    ) {
        let mut p = PredictionMap::zeros(2, 2, 2);
        let mut t = TargetMap::empty(2, 2, 2);
        for slot in 0..8 {
            let (row, col, a) = (slot / 4, (slot / 2) % 2, slot % 2);
            p.set(row, col, a, 0, logits[slot]);
            for k in 0..4 {
                p.set(row, col, a, 1 + k, regs[slot * 4 + k]);
            }
            if positives[slot] {
                t.set_positive(row, col, a, RegressionTarget::from_array([0.1, -0.1, 0.2, 0.0]));
            }
        }
        let l = detection_loss(&p, &t, &LossConfig { lambda, ..Default::default() }).unwrap();
        prop_assert!(l.is_finite() && l >= 0.0);
    }
}
