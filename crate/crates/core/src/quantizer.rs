//! Activation-range profiling and uniform post-training quantization.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fixedpoint::{bits_for_range, QFormat};
use crate::model::{cast_storage, ModelGraph, StorageFormat};
use crate::nn::{pad_to_multiple, Tensor};

/// Observed extremes of one layer's outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerRange {
    pub min: f64,
    pub max: f64,
    /// Number of activation values seen.
    pub count: u64,
}

impl LayerRange {
    fn merge(self, o: LayerRange) -> LayerRange {
        LayerRange {
            min: self.min.min(o.min),
            max: self.max.max(o.max),
            count: self.count + o.count,
        }
    }
}

/// Per-layer min/max over a calibration set. Merging is associative and
/// commutative, so profiles of disjoint image sets combine in any order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivationProfile {
    layers: BTreeMap<String, LayerRange>,
}

impl ActivationProfile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one tensor of values for `layer`. Empty tensors are ignored.
    pub fn observe(&mut self, layer: &str, values: &[f32]) {
        let Some(r) = values.iter().fold(None, |acc: Option<(f32, f32)>, &v| {
            Some(acc.map_or((v, v), |(lo, hi)| (lo.min(v), hi.max(v))))
        }) else {
            return;
        };
        let rec = LayerRange {
            min: r.0 as f64,
            max: r.1 as f64,
            count: values.len() as u64,
        };
        self.insert(layer, rec);
    }

    fn insert(&mut self, layer: &str, rec: LayerRange) {
        self.layers
            .entry(layer.to_string())
            .and_modify(|e| *e = e.merge(rec))
            .or_insert(rec);
    }

    pub fn merge(mut self, other: &ActivationProfile) -> ActivationProfile {
        for (k, &v) in &other.layers {
            self.insert(k, v);
        }
        self
    }

    pub fn get(&self, layer: &str) -> Option<LayerRange> {
        self.layers.get(layer).copied()
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &LayerRange)> {
        self.layers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Smallest minimum and largest maximum across all layers.
    pub fn global_range(&self) -> Option<(f64, f64)> {
        self.layers
            .values()
            .copied()
            .reduce(LayerRange::merge)
            .map(|r| (r.min, r.max))
    }

    /// `layer_id min max count` per line, sorted by layer id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, r) in &self.layers {
            let _ = writeln!(s, "{k} {} {} {}", r.min, r.max, r.count);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut p = Self::new();
        for (i, line) in text.lines().enumerate() {
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.is_empty() {
                continue;
            }
            if t.len() != 4 {
                return Err(err(format!("expected `layer min max count`, got {} fields", t.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("bad number {s:?}: {e}")));
            let (min, max) = (num(t[1])?, num(t[2])?);
            let count: u64 = t[3].parse().map_err(|e| err(format!("bad count {:?}: {e}", t[3])))?;
            if min.is_nan() || max.is_nan() || min > max || count == 0 {
                return Err(err(format!("invalid record min {min} max {max} count {count}")));
            }
            p.insert(t[0], LayerRange { min, max, count });
        }
        Ok(p)
    }
}

/// Runs one image through the float path, recording every node's output.
/// The image is padded to the model's input multiple first.
pub fn profile_image(g: &ModelGraph, image: &Tensor) -> Result<ActivationProfile> {
    let mut p = ActivationProfile::new();
    let input = pad_to_multiple(image, g.meta().input_multiple);
    g.forward_float_observed(&input, &mut |node, out| p.observe(&node.name, out.data()))?;
    Ok(p)
}

pub fn profile_activations(g: &ModelGraph, images: &[Tensor]) -> Result<ActivationProfile> {
    if images.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    images.iter().try_fold(ActivationProfile::new(), |acc, img| {
        Ok(acc.merge(&profile_image(g, img)?))
    })
}

/// Uniform formats for weights and activations sharing one word size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantPlan {
    pub weight_fmt: QFormat,
    pub activation_fmt: QFormat,
}

impl QuantPlan {
    /// Both formats with `n` fractional bits in a `word_bits` word.
    pub fn uniform(word_bits: u32, n: u32) -> Result<Self> {
        let f = QFormat::with_word(word_bits, n)?;
        Ok(Self {
            weight_fmt: f,
            activation_fmt: f,
        })
    }
}

/// Extremes over every stored weight value.
pub fn weight_range(g: &ModelGraph) -> Option<(f64, f64)> {
    g.weights()
        .values()
        .flat_map(|b| b.data.to_f32())
        .fold(None, |acc, v| {
            let v = v as f64;
            Some(acc.map_or((v, v), |(lo, hi): (f64, f64)| (lo.min(v), hi.max(v))))
        })
}

fn format_for(what: &str, lo: f64, hi: f64, word_bits: u32) -> Result<QFormat> {
    let m = bits_for_range(lo, hi)?;
    if m + 1 > word_bits {
        return Err(Error::RangeUnrepresentable {
            what: format!("{what} range [{lo}, {hi}]"),
            needed: m,
            available: word_bits.saturating_sub(1),
        });
    }
    QFormat::new(m, word_bits - 1 - m)
}

/// Integer bits from the observed ranges, the rest of the word fractional.
pub fn plan_quantization(
    profile: &ActivationProfile,
    weight_range: (f64, f64),
    word_bits: u32,
) -> Result<QuantPlan> {
    let (lo, hi) = profile.global_range().ok_or(Error::EmptyCalibration)?;
    Ok(QuantPlan {
        weight_fmt: format_for("weight", weight_range.0, weight_range.1, word_bits)?,
        activation_fmt: format_for("activation", lo, hi, word_bits)?,
    })
}

/// Saturates every weight into the plan's weight format and marks the graph
/// for fixed-point execution.
pub fn quantize_model(g: &ModelGraph, plan: &QuantPlan) -> Result<ModelGraph> {
    if plan.weight_fmt.word_bits() != plan.activation_fmt.word_bits() {
        return Err(Error::InvalidConfig(format!(
            "weight format {} and activation format {} differ in word size",
            plan.weight_fmt, plan.activation_fmt
        )));
    }
    let mut q = cast_storage(g, StorageFormat::Q(plan.weight_fmt))?;
    q.activation_fmt = Some(plan.activation_fmt);
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::AnchorSet;
    use crate::model::{build_detector, GraphBuilder, GraphMeta, ModelConfig, WeightData};

    fn q(m: u32, n: u32) -> QFormat {
        QFormat::new(m, n).unwrap()
    }

    fn profile_with(lo: f64, hi: f64) -> ActivationProfile {
        let mut p = ActivationProfile::new();
        p.observe("a", &[lo as f32, 0.0]);
        p.observe("b", &[hi as f32]);
        p
    }

    #[test]
    fn plan_examples() {
        let p = profile_with(-242.14, 155.91);
        let plan = plan_quantization(&p, (-25.0, 20.0), 16).unwrap();
        assert_eq!(plan.activation_fmt, q(8, 7));
        assert_eq!(plan.weight_fmt, q(5, 10));
        let plan = plan_quantization(&profile_with(-0.9, 0.9), (-0.9, 0.9), 16).unwrap();
        assert_eq!(plan.activation_fmt, q(0, 15));
    }

    #[test]
    fn plan_rejects_huge_range() {
        let p = profile_with(-1e6, 1e6);
        assert!(matches!(
            plan_quantization(&p, (-1.0, 1.0), 16),
            Err(Error::RangeUnrepresentable { .. })
        ));
        assert!(plan_quantization(&ActivationProfile::new(), (-1.0, 1.0), 16).is_err());
    }

    #[test]
    fn narrower_word_never_adds_fraction_bits() {
        let p = profile_with(-3.0, 5.0);
        let mut last = u32::MAX;
        for w in (4..=32).rev() {
            let n = plan_quantization(&p, (-1.0, 1.0), w).unwrap().activation_fmt.n();
            assert!(n <= last);
            last = n;
        }
    }

    #[test]
    fn text_round_trip_is_sorted() {
        let mut p = ActivationProfile::new();
        p.observe("zeta", &[1.0, -2.5]);
        p.observe("alpha", &[0.25]);
        let text = p.to_text();
        assert!(text.starts_with("alpha 0.25 0.25 1\n"));
        assert_eq!(ActivationProfile::parse(&text).unwrap(), p);
        assert!(ActivationProfile::parse("x 2 1 3").is_err());
    }

    /// Two 1x1 convs: `l1 = (x, -x)`, `l2 = 5 * x + 3 * (-x) = 2x`.
    fn two_layer() -> ModelGraph {
        let mut b = GraphBuilder::new(0, 1);
        let l1 = b.conv("l1", 0, 2, 1, 1);
        let l2 = b.conv("l2", l1, 1, 1, 1);
        b.head("head", l2, 1);
        let mut g = b.finish(GraphMeta::default(), AnchorSet::new(&[(4.0, 4.0)]).unwrap()).unwrap();
        g.weights.get_mut("l1/kernel").unwrap().data = WeightData::F32(vec![1.0, -1.0]);
        g.weights.get_mut("l2/kernel").unwrap().data = WeightData::F32(vec![5.0, 3.0]);
        g
    }

    #[test]
    fn hand_built_layer_range() {
        let g = two_layer();
        let img = Tensor::new([1, 1, 2, 1], vec![2.5, -1.5]).unwrap();
        let p = profile_activations(&g, &[img]).unwrap();
        let r = p.get("l2").unwrap();
        assert_eq!((r.min, r.max), (-3.0, 5.0));
        assert_eq!(r.count, 2);
    }

    #[test]
    fn zero_net_zero_image() {
        let mut g = build_detector(
            &ModelConfig {
                alpha: 0.35,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        for b in g.weights.values_mut() {
            if let WeightData::F32(v) = &mut b.data {
                v.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let p = profile_activations(&g, &[Tensor::zeros([1, 32, 32, 3])]).unwrap();
        for (name, r) in p.layers() {
            assert_eq!((r.min, r.max), (0.0, 0.0), "{name}");
        }
    }

    #[test]
    fn merge_equals_joint_profile() {
        let g = build_detector(
            &ModelConfig {
                alpha: 0.35,
                ..Default::default()
            },
            4,
        )
        .unwrap();
        let a = Tensor::from_fn([1, 32, 32, 3], |[_, y, x, c]| ((y * 7 + x * 3 + c) % 11) as f32 / 10.0);
        let b = Tensor::from_fn([1, 32, 32, 3], |[_, y, x, c]| ((y + x * 5 + c * 2) % 13) as f32 / 12.0);
        let joint = profile_activations(&g, &[a.clone(), b.clone()]).unwrap();
        let pa = profile_activations(&g, &[a]).unwrap();
        let pb = profile_activations(&g, &[b]).unwrap();
        assert_eq!(pa.clone().merge(&pb), joint);
        assert_eq!(pb.merge(&pa), joint);
        assert!(profile_activations(&g, &[]).is_err());
    }

    #[test]
    fn quantize_representable_weights_is_lossless() {
        let g = two_layer();
        let plan = QuantPlan::uniform(16, 10).unwrap();
        let qg = quantize_model(&g, &plan).unwrap();
        assert!(qg.is_fixed_point());
        assert_eq!(qg.activation_format(), Some(q(5, 10)));
        assert_eq!(qg.weight("l2/kernel").unwrap().data.to_f32(), vec![5.0, 3.0]);
    }

    #[test]
    fn quantized_weights_within_half_ulp() {
        let g = build_detector(
            &ModelConfig {
                alpha: 0.35,
                ..Default::default()
            },
            9,
        )
        .unwrap();
        let qg = quantize_model(&g, &QuantPlan::uniform(16, 10).unwrap()).unwrap();
        for (name, b) in g.weights() {
            let orig = b.data.to_f32();
            let back = qg.weight(name).unwrap().data.to_f32();
            for (o, r) in orig.iter().zip(&back) {
                assert!((*o as f64 - *r as f64).abs() <= 2f64.powi(-11), "{name}");
            }
        }
    }

    #[test]
    fn fixed_forward_tracks_float() {
        let g = build_detector(
            &ModelConfig {
                alpha: 0.35,
                ..Default::default()
            },
            2,
        )
        .unwrap();
        let img = Tensor::from_fn([1, 32, 32, 3], |[_, y, x, c]| ((y * 3 + x + c) % 7) as f32 / 7.0);
        let p = profile_activations(&g, std::slice::from_ref(&img)).unwrap();
        let plan = plan_quantization(&p, weight_range(&g).unwrap(), 32).unwrap();
        let qg = quantize_model(&g, &plan).unwrap();
        let f = g.forward_float(&img).unwrap();
        let x = qg.forward(&img).unwrap();
        let scale = f.data().iter().fold(0f32, |m, v| m.max(v.abs())) as f64;
        assert!(f.mean_abs_diff(&x).unwrap() < 1e-3 * scale.max(1.0));
    }
}
