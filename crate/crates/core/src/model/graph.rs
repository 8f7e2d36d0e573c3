use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use half::f16;

use crate::detection::{AnchorSet, CHANNELS_PER_ANCHOR};
use crate::error::{Error, Result};
use crate::fixedpoint::QFormat;
use crate::nn::{PadSpec, QTensor, Tensor};

/// How weights are held at rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorageFormat {
    Fp32,
    Fp16,
    Q(QFormat),
}

impl StorageFormat {
    pub fn bits_per_weight(&self) -> u32 {
        match self {
            StorageFormat::Fp32 => 32,
            StorageFormat::Fp16 => 16,
            StorageFormat::Q(f) => f.word_bits(),
        }
    }

    /// Bytes one weight occupies in a model file.
    pub fn bytes_per_weight(&self) -> usize {
        self.bits_per_weight().div_ceil(8) as usize
    }
}

impl fmt::Display for StorageFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StorageFormat::Fp32 => f.write_str("fp32"),
            StorageFormat::Fp16 => f.write_str("fp16"),
            StorageFormat::Q(q) => write!(f, "{q}"),
        }
    }
}

impl FromStr for StorageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fp32" => Ok(StorageFormat::Fp32),
            "fp16" => Ok(StorageFormat::Fp16),
            other => Ok(StorageFormat::Q(other.parse()?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightData {
    F32(Vec<f32>),
    F16(Vec<f16>),
    Q { fmt: QFormat, raw: Vec<i32> },
}

impl WeightData {
    pub fn len(&self) -> usize {
        match self {
            WeightData::F32(v) => v.len(),
            WeightData::F16(v) => v.len(),
            WeightData::Q { raw, .. } => raw.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn format(&self) -> StorageFormat {
        match self {
            WeightData::F32(_) => StorageFormat::Fp32,
            WeightData::F16(_) => StorageFormat::Fp16,
            WeightData::Q { fmt, .. } => StorageFormat::Q(*fmt),
        }
    }

    /// Widened working-precision values.
    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            WeightData::F32(v) => v.clone(),
            WeightData::F16(v) => v.iter().map(|h| h.to_f32()).collect(),
            WeightData::Q { fmt, raw } => {
                let ulp = fmt.ulp();
                raw.iter().map(|&r| (r as f64 * ulp) as f32).collect()
            }
        }
    }
}

/// A named parameter tensor. Vectors use shape `[1, 1, 1, c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBlob {
    pub shape: [usize; 4],
    pub data: WeightData,
}

impl WeightBlob {
    pub fn f32(shape: [usize; 4], values: Vec<f32>) -> Result<Self> {
        if values.len() != shape.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!(
                "blob shape {shape:?} with {} values",
                values.len()
            )));
        }
        Ok(Self {
            shape,
            data: WeightData::F32(values),
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.shape, self.data.to_f32()).expect("blob length matches its shape")
    }

    pub fn to_qtensor(&self) -> Option<QTensor> {
        match &self.data {
            WeightData::Q { fmt, raw } => QTensor::from_raw(self.shape, raw.clone(), *fmt).ok(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input,
    Conv {
        weight: String,
        bias: Option<String>,
        stride: usize,
        pad: PadSpec,
    },
    Depthwise {
        weight: String,
        stride: usize,
        pad: PadSpec,
    },
    BatchNorm {
        gamma: String,
        beta: String,
        mean: String,
        var: String,
        eps: f32,
    },
    Relu6,
    Add,
    Upsample2x,
    Concat,
    /// Final `5 * A` channel convolution with bias, stride 1, SAME padding.
    Head { weight: String, bias: String },
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Conv { .. } => "conv",
            Op::Depthwise { .. } => "depthwise",
            Op::BatchNorm { .. } => "bn",
            Op::Relu6 => "relu6",
            Op::Add => "add",
            Op::Upsample2x => "upsample2x",
            Op::Concat => "concat",
            Op::Head { .. } => "head",
        }
    }

    pub fn weight_names(&self) -> Vec<&str> {
        match self {
            Op::Conv { weight, bias, .. } => {
                let mut v = vec![weight.as_str()];
                v.extend(bias.as_deref());
                v
            }
            Op::Depthwise { weight, .. } => vec![weight],
            Op::BatchNorm {
                gamma,
                beta,
                mean,
                var,
                ..
            } => vec![gamma, beta, mean, var],
            Op::Head { weight, bias } => vec![weight, bias],
            _ => vec![],
        }
    }

    fn arity(&self) -> usize {
        match self {
            Op::Input => 0,
            Op::Add | Op::Concat => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<usize>,
    /// Output channel count.
    pub channels: usize,
}

/// Which backbone tap feeds the detection head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutStrategy {
    /// Head after breakpoint A (stride 16, 576 channels at alpha 1).
    A,
    /// Head after breakpoint B (stride 32, 1280 channels).
    B,
    /// Head on concat(A, upsample2x(B)).
    C,
}

impl fmt::Display for OutStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutStrategy::A => "A",
            OutStrategy::B => "B",
            OutStrategy::C => "C",
        })
    }
}

impl FromStr for OutStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim_start_matches("Out").trim_start_matches("out") {
            "A" | "a" => Ok(OutStrategy::A),
            "B" | "b" => Ok(OutStrategy::B),
            "C" | "c" => Ok(OutStrategy::C),
            _ => Err(Error::InvalidConfig(format!("unknown output strategy {s:?}"))),
        }
    }
}

/// Descriptive metadata carried alongside the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphMeta {
    pub alpha: f64,
    pub strategy: Option<OutStrategy>,
    pub input_hw: (usize, usize),
    /// Layer index up to which weights were frozen during fine-tuning.
    pub frozen_until: Option<usize>,
    /// Input pixels per head-map cell.
    pub head_stride: usize,
    /// Inputs are padded to a multiple of this before the forward pass.
    pub input_multiple: usize,
}

impl Default for GraphMeta {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            strategy: None,
            input_hw: (224, 224),
            frozen_until: None,
            head_stride: 1,
            input_multiple: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub(crate) meta: GraphMeta,
    pub(crate) anchors: AnchorSet,
    pub(crate) nodes: Vec<Node>,
    pub(crate) weights: BTreeMap<String, WeightBlob>,
    pub(crate) tags: BTreeMap<String, usize>,
    pub(crate) storage: StorageFormat,
    pub(crate) activation_fmt: Option<QFormat>,
}

impl ModelGraph {
    /// Assembles and validates a graph.
    pub fn from_parts(
        meta: GraphMeta,
        anchors: AnchorSet,
        nodes: Vec<Node>,
        weights: BTreeMap<String, WeightBlob>,
        tags: BTreeMap<String, usize>,
        activation_fmt: Option<QFormat>,
    ) -> Result<Self> {
        let storage = weights
            .values()
            .next()
            .map(|b| b.data.format())
            .unwrap_or(StorageFormat::Fp32);
        let g = Self {
            meta,
            anchors,
            nodes,
            weights,
            tags,
            storage,
            activation_fmt,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn meta(&self) -> &GraphMeta {
        &self.meta
    }

    pub fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn weights(&self) -> &BTreeMap<String, WeightBlob> {
        &self.weights
    }

    pub fn weight(&self, name: &str) -> Result<&WeightBlob> {
        self.weights
            .get(name)
            .ok_or_else(|| Error::InvalidConfig(format!("missing weight blob {name:?}")))
    }

    pub fn tags(&self) -> &BTreeMap<String, usize> {
        &self.tags
    }

    pub fn tag(&self, name: &str) -> Option<&Node> {
        self.tags.get(name).map(|&i| &self.nodes[i])
    }

    pub fn storage_format(&self) -> StorageFormat {
        self.storage
    }

    /// Format used at layer boundaries when executing in fixed point.
    pub fn activation_format(&self) -> Option<QFormat> {
        self.activation_fmt
    }

    pub fn is_fixed_point(&self) -> bool {
        matches!(self.storage, StorageFormat::Q(_)) && self.activation_fmt.is_some()
    }

    pub fn head(&self) -> &Node {
        self.nodes.last().expect("validated graph has a head")
    }

    pub fn head_channels(&self) -> usize {
        self.head().channels
    }

    pub fn input_channels(&self) -> usize {
        self.nodes[0].channels
    }

    /// Checks every structural invariant: topological order, one input
    /// first and one head last, channel bookkeeping, head channel law,
    /// weight shapes and a single storage format.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.nodes.is_empty() || self.nodes[0].op != Op::Input {
            return bad("graph must start with an input node".into());
        }
        let heads = self
            .nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Head { .. }))
            .count();
        if heads != 1 || !matches!(self.nodes.last().map(|n| &n.op), Some(Op::Head { .. })) {
            return bad(format!("graph needs exactly one head node, last; found {heads}"));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.name.is_empty() || node.name.chars().any(char::is_whitespace) {
                return bad(format!("node {i} has invalid name {:?}", node.name));
            }
            if node.inputs.len() != node.op.arity() {
                return bad(format!("node {} expects {} inputs", node.name, node.op.arity()));
            }
            if node.inputs.iter().any(|&j| j >= i) {
                return bad(format!("node {} is not in topological order", node.name));
            }
            if i > 0 && node.op == Op::Input {
                return bad(format!("second input node {}", node.name));
            }
            let cin: Vec<usize> = node.inputs.iter().map(|&j| self.nodes[j].channels).collect();
            self.check_node(node, &cin)?;
        }
        let a = self.anchors.len();
        if self.head_channels() != CHANNELS_PER_ANCHOR * a {
            return bad(format!(
                "head has {} channels, {a} anchors need {}",
                self.head_channels(),
                CHANNELS_PER_ANCHOR * a
            ));
        }
        for (tag, &i) in &self.tags {
            if i >= self.nodes.len() {
                return bad(format!("tag {tag} points past the graph"));
            }
        }
        if let Some(other) = self.weights.values().find(|b| b.data.format() != self.storage) {
            return bad(format!(
                "mixed storage formats {} and {}",
                self.storage,
                other.data.format()
            ));
        }
        for (name, b) in &self.weights {
            if b.len() != b.shape.iter().product::<usize>() {
                return bad(format!("blob {name} length does not match {:?}", b.shape));
            }
        }
        if self.meta.head_stride == 0 || self.meta.input_multiple == 0 {
            return bad("head stride and input multiple must be positive".into());
        }
        Ok(())
    }

    fn check_node(&self, node: &Node, cin: &[usize]) -> Result<()> {
        let mismatch = |what: &str| {
            Err(Error::ShapeMismatch(format!(
                "node {} ({}): {what}",
                node.name,
                node.op.kind()
            )))
        };
        let vector = |name: &str, c: usize| -> Result<()> {
            let b = self.weight(name)?;
            if b.shape != [1, 1, 1, c] {
                return Err(Error::ShapeMismatch(format!(
                    "blob {name} has shape {:?}, expected [1, 1, 1, {c}]",
                    b.shape
                )));
            }
            Ok(())
        };
        match &node.op {
            Op::Input => Ok(()),
            Op::Conv { weight, bias, .. } => {
                let w = self.weight(weight)?;
                if w.shape[2] != cin[0] || w.shape[3] != node.channels {
                    return mismatch(&format!("kernel {:?} for {} -> {}", w.shape, cin[0], node.channels));
                }
                if let Some(b) = bias {
                    vector(b, node.channels)?;
                }
                Ok(())
            }
            Op::Depthwise { weight, .. } => {
                let w = self.weight(weight)?;
                if w.shape[2] != cin[0] || w.shape[3] != 1 || node.channels != cin[0] {
                    return mismatch(&format!("kernel {:?} for {} channels", w.shape, cin[0]));
                }
                Ok(())
            }
            Op::BatchNorm {
                gamma,
                beta,
                mean,
                var,
                ..
            } => {
                if node.channels != cin[0] {
                    return mismatch("channel count changes");
                }
                for n in [gamma, beta, mean, var] {
                    vector(n, node.channels)?;
                }
                Ok(())
            }
            Op::Relu6 | Op::Upsample2x => {
                if node.channels != cin[0] {
                    return mismatch("channel count changes");
                }
                Ok(())
            }
            Op::Add => {
                if cin[0] != cin[1] || node.channels != cin[0] {
                    return mismatch(&format!("adds {} and {} channels", cin[0], cin[1]));
                }
                Ok(())
            }
            Op::Concat => {
                if node.channels != cin[0] + cin[1] {
                    return mismatch("channels are not the sum of inputs");
                }
                Ok(())
            }
            Op::Head { weight, bias } => {
                let w = self.weight(weight)?;
                if w.shape[2] != cin[0] || w.shape[3] != node.channels {
                    return mismatch(&format!("kernel {:?} for {} -> {}", w.shape, cin[0], node.channels));
                }
                vector(bias, node.channels)
            }
        }
    }
}
