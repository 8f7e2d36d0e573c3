use crate::detection::{HeadMap, HeadModel};
use crate::error::{Error, Result};
use crate::fixedpoint::QFormat;
use crate::nn::{self, fold_batch_norm, PadSpec, QTensor, Tensor};

use super::graph::{ModelGraph, Node, Op, StorageFormat, WeightData};

impl ModelGraph {
    /// For each node, the index of the last node that reads it.
    fn last_uses(&self) -> Vec<usize> {
        let mut last: Vec<usize> = (0..self.nodes.len()).collect();
        for (i, n) in self.nodes.iter().enumerate() {
            for &j in &n.inputs {
                last[j] = i;
            }
        }
        last
    }

    fn check_input(&self, input: &[usize; 4]) -> Result<()> {
        if input[0] != 1 || input[3] != self.input_channels() {
            return Err(Error::ShapeMismatch(format!(
                "model expects 1 x H x W x {}, got {:?}",
                self.input_channels(),
                input
            )));
        }
        Ok(())
    }

    /// Float forward pass in working precision; weights stored as fp16 or
    /// Q codes are widened first. Returns the head output.
    pub fn forward_float(&self, input: &Tensor) -> Result<Tensor> {
        self.forward_float_observed(input, &mut |_, _| {})
    }

    /// Float forward pass reporting every node output to `observe`.
    pub fn forward_float_observed(
        &self,
        input: &Tensor,
        observe: &mut dyn FnMut(&Node, &Tensor),
    ) -> Result<Tensor> {
        self.check_input(&input.shape())?;
        let last = self.last_uses();
        let mut vals: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            let arg = |k: usize| -> &Tensor {
                vals[node.inputs[k]].as_ref().expect("inputs computed before use")
            };
            let out = match &node.op {
                Op::Input => input.clone(),
                Op::Conv {
                    weight,
                    bias,
                    stride,
                    pad,
                } => {
                    let w = self.weight(weight)?.to_tensor();
                    let b = bias.as_ref().map(|b| self.weight(b).map(|b| b.data.to_f32())).transpose()?;
                    nn::conv2d_bias(arg(0), &w, b.as_deref(), *stride, *pad)?
                }
                Op::Depthwise { weight, stride, pad } => {
                    let w = self.weight(weight)?.to_tensor();
                    nn::depthwise_conv2d(arg(0), &w, *stride, *pad)?
                }
                Op::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    var,
                    eps,
                } => {
                    let v = |n: &String| self.weight(n).map(|b| b.data.to_f32());
                    nn::batch_norm(arg(0), &v(gamma)?, &v(beta)?, &v(mean)?, &v(var)?, *eps)?
                }
                Op::Relu6 => nn::relu6(arg(0)),
                Op::Add => nn::add(arg(0), arg(1))?,
                Op::Upsample2x => nn::upsample2x_bilinear(arg(0))?,
                Op::Concat => nn::concat_channels(arg(0), arg(1))?,
                Op::Head { weight, bias } => {
                    let w = self.weight(weight)?.to_tensor();
                    let b = self.weight(bias)?.data.to_f32();
                    let k = w.shape()[0];
                    nn::conv2d_bias(arg(0), &w, Some(&b), 1, PadSpec::SameAsymmetric { kernel: k, stride: 1 })?
                }
            };
            if !out.all_finite() {
                return Err(Error::NonFinite(f64::NAN));
            }
            observe(node, &out);
            for &j in &node.inputs {
                if last[j] == i {
                    vals[j] = None;
                }
            }
            vals[i] = Some(out);
        }
        Ok(vals.pop().flatten().expect("head output"))
    }

    fn qweight(&self, name: &str) -> Result<QTensor> {
        self.weight(name)?.to_qtensor().ok_or_else(|| {
            Error::InvalidConfig(format!("blob {name} is not stored in fixed point"))
        })
    }

    fn weight_format(&self) -> Result<QFormat> {
        match self.storage {
            StorageFormat::Q(f) => Ok(f),
            other => Err(Error::InvalidConfig(format!(
                "fixed-point execution needs Q storage, model is {other}"
            ))),
        }
    }

    /// Integer forward pass: every layer output is requantized to the
    /// graph's activation format.
    pub fn forward_fixed(&self, input: &Tensor) -> Result<QTensor> {
        self.forward_fixed_observed(input, &mut |_, _| {})
    }

    pub fn forward_fixed_observed(
        &self,
        input: &Tensor,
        observe: &mut dyn FnMut(&Node, &QTensor),
    ) -> Result<QTensor> {
        self.check_input(&input.shape())?;
        let act = self.activation_fmt.ok_or_else(|| {
            Error::InvalidConfig("model has no activation format; quantize it first".into())
        })?;
        let wfmt = self.weight_format()?;
        let last = self.last_uses();
        let mut vals: Vec<Option<QTensor>> = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            let arg = |k: usize| -> &QTensor {
                vals[node.inputs[k]].as_ref().expect("inputs computed before use")
            };
            let out = match &node.op {
                Op::Input => QTensor::quantize(input, act)?,
                Op::Conv {
                    weight,
                    bias,
                    stride,
                    pad,
                } => {
                    let w = self.qweight(weight)?;
                    let b = bias.as_ref().map(|b| self.qweight(b)).transpose()?;
                    nn::conv2d_fixed_bias(arg(0), &w, b.as_ref(), *stride, *pad, act)?
                }
                Op::Depthwise { weight, stride, pad } => {
                    let w = self.qweight(weight)?;
                    nn::depthwise_conv2d_fixed(arg(0), &w, *stride, *pad, act)?
                }
                Op::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    var,
                    eps,
                } => {
                    // constant folding of the stored statistics, then an
                    // integer per-channel affine
                    let v = |n: &String| self.weight(n).map(|b| b.data.to_f32());
                    let (scale, shift) = fold_batch_norm(&v(gamma)?, &v(beta)?, &v(mean)?, &v(var)?, *eps)?;
                    let c = scale.len();
                    let scale = QTensor::quantize(&Tensor::new([1, 1, 1, c], scale)?, wfmt)?;
                    let shift = QTensor::quantize(&Tensor::new([1, 1, 1, c], shift)?, wfmt)?;
                    nn::channel_affine_fixed(arg(0), &scale, &shift, act)?
                }
                Op::Relu6 => nn::relu6_fixed(arg(0)),
                Op::Add => nn::add_fixed(arg(0), arg(1), act)?,
                Op::Upsample2x => nn::upsample2x_fixed(arg(0))?,
                Op::Concat => nn::concat_channels_fixed(arg(0), arg(1))?,
                Op::Head { weight, bias } => {
                    let w = self.qweight(weight)?;
                    let b = self.qweight(bias)?;
                    let k = w.shape()[0];
                    nn::conv2d_fixed_bias(
                        arg(0),
                        &w,
                        Some(&b),
                        1,
                        PadSpec::SameAsymmetric { kernel: k, stride: 1 },
                        act,
                    )?
                }
            };
            observe(node, &out);
            for &j in &node.inputs {
                if last[j] == i {
                    vals[j] = None;
                }
            }
            vals[i] = Some(out);
        }
        Ok(vals.pop().flatten().expect("head output"))
    }

    /// Head output in float, via the integer path when the model is marked
    /// for fixed-point execution and the float path otherwise.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        if self.is_fixed_point() {
            Ok(self.forward_fixed(input)?.dequantize())
        } else {
            self.forward_float(input)
        }
    }

    /// Spatial extent of the head map for an input extent.
    pub fn head_extent(&self, input_hw: (usize, usize)) -> (usize, usize) {
        let down = |mut v: usize| {
            let mut s = self.meta.head_stride;
            while s > 1 {
                v = v.div_ceil(2);
                s /= 2;
            }
            v
        };
        (down(input_hw.0), down(input_hw.1))
    }

    pub fn raw_weights_are_fixed(&self) -> bool {
        self.weights
            .values()
            .all(|b| matches!(b.data, WeightData::Q { .. }))
    }
}

impl HeadModel for ModelGraph {
    fn head_map(&self, input: &Tensor) -> Result<HeadMap> {
        let grid = self.forward(input)?;
        HeadMap::new(grid, self.meta.head_stride as f64, self.anchors.clone())
    }

    fn input_multiple(&self) -> usize {
        self.meta.input_multiple
    }
}
