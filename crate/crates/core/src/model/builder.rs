use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detection::{AnchorSet, CHANNELS_PER_ANCHOR};
use crate::error::{Error, Result};
use crate::nn::PadSpec;

use super::graph::{GraphMeta, ModelGraph, Node, Op, OutStrategy, WeightBlob};

/// Range of the seeded uniform initializer.
pub const INIT_RANGE: f32 = 0.5;

pub const BREAKPOINT_A: &str = "breakpoint_A";
pub const BREAKPOINT_B: &str = "breakpoint_B";

const BN_EPS: f32 = 1e-3;

/// Inverted-residual stages: (expansion, channels, repeats, first stride).
const STAGES: [(usize, usize, usize, usize); 7] = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
];

/// Block whose expansion output is breakpoint A.
const BREAKPOINT_A_BLOCK: usize = 13;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub alpha: f64,
    pub out_strategy: OutStrategy,
    pub anchors: AnchorSet,
    pub input_hw: (usize, usize),
    pub frozen_until: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            out_strategy: OutStrategy::A,
            anchors: AnchorSet::default_25(),
            input_hw: (224, 224),
            frozen_until: 98,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "width multiplier must be in (0, 1], got {}",
                self.alpha
            )));
        }
        if self.input_hw.0 == 0 || self.input_hw.1 == 0 {
            return Err(Error::InvalidConfig("input size must be positive".into()));
        }
        Ok(())
    }
}

/// MobileNet channel rounding: nearest multiple of `divisor` (at least
/// `divisor`), bumped up one step if rounding lost more than 10%.
pub fn make_divisible(v: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let mut new_v = (((v + d / 2.0) as usize) / divisor * divisor).max(divisor);
    if (new_v as f64) < 0.9 * v {
        new_v += divisor;
    }
    new_v
}

/// Incremental graph construction with seeded weight initialization.
/// Kernels and the head bias draw from `U(-0.5, 0.5)`; batch-norm layers
/// start as the identity (`gamma = 1, beta = 0, mean = 0, var = 1`).
pub struct GraphBuilder {
    nodes: Vec<Node>,
    weights: BTreeMap<String, WeightBlob>,
    tags: BTreeMap<String, usize>,
    rng: ChaCha8Rng,
}

impl GraphBuilder {
    pub fn new(seed: u64, input_channels: usize) -> Self {
        Self {
            nodes: vec![Node {
                name: "input".into(),
                op: Op::Input,
                inputs: vec![],
                channels: input_channels,
            }],
            weights: BTreeMap::new(),
            tags: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn input(&self) -> usize {
        0
    }

    pub fn channels(&self, node: usize) -> usize {
        self.nodes[node].channels
    }

    fn push(&mut self, name: &str, op: Op, inputs: Vec<usize>, channels: usize) -> usize {
        self.nodes.push(Node {
            name: name.to_string(),
            op,
            inputs,
            channels,
        });
        self.nodes.len() - 1
    }

    fn uniform(&mut self, name: String, shape: [usize; 4]) -> String {
        let n = shape.iter().product();
        let v = (0..n)
            .map(|_| self.rng.gen_range(-INIT_RANGE..INIT_RANGE))
            .collect();
        self.weights.insert(
            name.clone(),
            WeightBlob::f32(shape, v).expect("length from shape"),
        );
        name
    }

    fn constant(&mut self, name: String, c: usize, value: f32) -> String {
        self.weights.insert(
            name.clone(),
            WeightBlob::f32([1, 1, 1, c], vec![value; c]).expect("length from shape"),
        );
        name
    }

    pub fn conv(&mut self, name: &str, src: usize, cout: usize, kernel: usize, stride: usize) -> usize {
        let cin = self.channels(src);
        let weight = self.uniform(format!("{name}/kernel"), [kernel, kernel, cin, cout]);
        let op = Op::Conv {
            weight,
            bias: None,
            stride,
            pad: PadSpec::SameAsymmetric { kernel, stride },
        };
        self.push(name, op, vec![src], cout)
    }

    pub fn depthwise(&mut self, name: &str, src: usize, kernel: usize, stride: usize) -> usize {
        let c = self.channels(src);
        let weight = self.uniform(format!("{name}/depthwise_kernel"), [kernel, kernel, c, 1]);
        let op = Op::Depthwise {
            weight,
            stride,
            pad: PadSpec::SameAsymmetric { kernel, stride },
        };
        self.push(name, op, vec![src], c)
    }

    pub fn batch_norm(&mut self, name: &str, src: usize) -> usize {
        let c = self.channels(src);
        let op = Op::BatchNorm {
            gamma: self.constant(format!("{name}/gamma"), c, 1.0),
            beta: self.constant(format!("{name}/beta"), c, 0.0),
            mean: self.constant(format!("{name}/moving_mean"), c, 0.0),
            var: self.constant(format!("{name}/moving_variance"), c, 1.0),
            eps: BN_EPS,
        };
        self.push(name, op, vec![src], c)
    }

    pub fn relu6(&mut self, name: &str, src: usize) -> usize {
        let c = self.channels(src);
        self.push(name, Op::Relu6, vec![src], c)
    }

    pub fn add(&mut self, name: &str, a: usize, b: usize) -> usize {
        let c = self.channels(a);
        self.push(name, Op::Add, vec![a, b], c)
    }

    pub fn upsample2x(&mut self, name: &str, src: usize) -> usize {
        let c = self.channels(src);
        self.push(name, Op::Upsample2x, vec![src], c)
    }

    pub fn concat(&mut self, name: &str, a: usize, b: usize) -> usize {
        let c = self.channels(a) + self.channels(b);
        self.push(name, Op::Concat, vec![a, b], c)
    }

    /// 1x1 convolution to `5 * A` channels with bias.
    pub fn head(&mut self, name: &str, src: usize, anchors: usize) -> usize {
        let cin = self.channels(src);
        let cout = CHANNELS_PER_ANCHOR * anchors;
        let weight = self.uniform(format!("{name}/kernel"), [1, 1, cin, cout]);
        let bias = self.uniform(format!("{name}/bias"), [1, 1, 1, cout]);
        self.push(name, Op::Head { weight, bias }, vec![src], cout)
    }

    pub fn tag(&mut self, tag: &str, node: usize) {
        self.tags.insert(tag.to_string(), node);
    }

    /// Expand (1x1) -> depthwise (3x3) -> linear projection (1x1), with a
    /// residual add when shapes allow. Returns (output, expansion output).
    pub fn inverted_residual(
        &mut self,
        prefix: &str,
        src: usize,
        expansion: usize,
        cout: usize,
        stride: usize,
    ) -> (usize, usize) {
        let cin = self.channels(src);
        let mut x = src;
        if expansion != 1 {
            x = self.conv(&format!("{prefix}_expand"), x, cin * expansion, 1, 1);
            x = self.batch_norm(&format!("{prefix}_expand_BN"), x);
            x = self.relu6(&format!("{prefix}_expand_relu"), x);
        }
        let expanded = x;
        x = self.depthwise(&format!("{prefix}_depthwise"), x, 3, stride);
        x = self.batch_norm(&format!("{prefix}_depthwise_BN"), x);
        x = self.relu6(&format!("{prefix}_depthwise_relu"), x);
        x = self.conv(&format!("{prefix}_project"), x, cout, 1, 1);
        x = self.batch_norm(&format!("{prefix}_project_BN"), x);
        if stride == 1 && cin == cout {
            x = self.add(&format!("{prefix}_add"), src, x);
        }
        (x, expanded)
    }

    pub fn finish(self, meta: GraphMeta, anchors: AnchorSet) -> Result<ModelGraph> {
        ModelGraph::from_parts(meta, anchors, self.nodes, self.weights, self.tags, None)
    }
}

/// Builds the MobileNetV2 detector for a strategy, width multiplier and
/// anchor set, with seeded random weights.
pub fn build_detector(cfg: &ModelConfig, seed: u64) -> Result<ModelGraph> {
    cfg.validate()?;
    let alpha = cfg.alpha;
    let mut g = GraphBuilder::new(seed, 3);

    let first = make_divisible(32.0 * alpha, 8);
    let mut x = g.conv("Conv1", g.input(), first, 3, 2);
    x = g.batch_norm("bn_Conv1", x);
    x = g.relu6("Conv1_relu", x);

    let need_b = cfg.out_strategy != OutStrategy::A;
    let mut block = 0;
    let mut tap_a = None;
    'stages: for (t, c, n, s) in STAGES {
        let cout = make_divisible((c as f64 * alpha) as usize as f64, 8);
        for i in 0..n {
            let stride = if i == 0 { s } else { 1 };
            let prefix = if block == 0 {
                "expanded_conv".to_string()
            } else {
                format!("block_{block}")
            };
            if block == BREAKPOINT_A_BLOCK && !need_b {
                // OutA only needs the expansion of this block
                let cin = g.channels(x);
                let e = g.conv(&format!("{prefix}_expand"), x, cin * t, 1, 1);
                let e = g.batch_norm(&format!("{prefix}_expand_BN"), e);
                let e = g.relu6(&format!("{prefix}_expand_relu"), e);
                tap_a = Some(e);
                break 'stages;
            }
            let (out, expanded) = g.inverted_residual(&prefix, x, t, cout, stride);
            if block == BREAKPOINT_A_BLOCK {
                tap_a = Some(expanded);
            }
            x = out;
            block += 1;
        }
    }
    let tap_a = tap_a.expect("backbone reaches breakpoint A");
    g.tag(BREAKPOINT_A, tap_a);

    let (head_src, head_stride) = match cfg.out_strategy {
        OutStrategy::A => (tap_a, 16),
        OutStrategy::B | OutStrategy::C => {
            let last = if alpha > 1.0 {
                make_divisible(1280.0 * alpha, 8)
            } else {
                1280
            };
            let mut b = g.conv("Conv_1", x, last, 1, 1);
            b = g.batch_norm("Conv_1_bn", b);
            b = g.relu6("out_relu", b);
            g.tag(BREAKPOINT_B, b);
            if cfg.out_strategy == OutStrategy::B {
                (b, 32)
            } else {
                let up = g.upsample2x("breakpoint_B_upsample", b);
                (g.concat("breakpoint_concat", tap_a, up), 16)
            }
        }
    };
    g.head("head", head_src, cfg.anchors.len());

    let meta = GraphMeta {
        alpha,
        strategy: Some(cfg.out_strategy),
        input_hw: cfg.input_hw,
        frozen_until: Some(cfg.frozen_until),
        head_stride,
        input_multiple: if cfg.out_strategy == OutStrategy::C { 32 } else { 1 },
    };
    g.finish(meta, cfg.anchors.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_rounding() {
        assert_eq!(make_divisible(32.0, 8), 32);
        assert_eq!(make_divisible(16.0, 8), 16);
        assert_eq!(make_divisible(12.0, 8), 16);
        assert_eq!(make_divisible(11.0, 8), 16); // 8 would lose >10%
        assert_eq!(make_divisible(3.0, 8), 8);
        assert_eq!(make_divisible(48.0, 8), 48);
    }

    #[test]
    fn breakpoint_channels() {
        let cfg = ModelConfig {
            out_strategy: OutStrategy::C,
            ..Default::default()
        };
        let g = build_detector(&cfg, 0).unwrap();
        assert_eq!(g.tag(BREAKPOINT_A).unwrap().channels, 576);
        assert_eq!(g.tag(BREAKPOINT_B).unwrap().channels, 1280);
        assert_eq!(g.head_channels(), 125);
        let head_in = g.head().inputs[0];
        assert_eq!(g.nodes()[head_in].channels, 1856);
    }

    #[test]
    fn half_width_breakpoint() {
        let cfg = ModelConfig {
            alpha: 0.5,
            ..Default::default()
        };
        let g = build_detector(&cfg, 0).unwrap();
        assert_eq!(g.tag(BREAKPOINT_A).unwrap().channels, 288);
    }

    #[test]
    fn rejects_bad_alpha() {
        for alpha in [0.0, -1.0, 1.5, f64::NAN] {
            let cfg = ModelConfig {
                alpha,
                ..Default::default()
            };
            assert!(build_detector(&cfg, 0).is_err());
        }
    }

    #[test]
    fn seeded_build_is_deterministic() {
        let cfg = ModelConfig {
            alpha: 0.35,
            ..Default::default()
        };
        assert_eq!(build_detector(&cfg, 7).unwrap(), build_detector(&cfg, 7).unwrap());
        assert_ne!(build_detector(&cfg, 7).unwrap(), build_detector(&cfg, 8).unwrap());
    }
}
