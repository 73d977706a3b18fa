//! Network representation: layer inventory, weights, quantization metadata.

mod format;
mod reference;

pub use format::{load_model, read_raw_tensor, save_model, write_raw_tensor, MODEL_MAGIC, MODEL_VERSION, RAW_TENSOR_MAGIC};
pub use reference::{
    forward_f32, quantize_weights_symmetric, reference_conv_f32, reference_conv_int, relu_in_place,
    ForwardTrace,
};
pub(crate) use format::{read_spec, write_spec};
pub(crate) use reference::{check_weight_bits, flatten_for};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv2d,
    Depthwise,
    FullyConnected,
}

impl LayerKind {
    pub fn tag(self) -> u8 {
        match self {
            LayerKind::Conv2d => 0,
            LayerKind::Depthwise => 1,
            LayerKind::FullyConnected => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(LayerKind::Conv2d),
            1 => Ok(LayerKind::Depthwise),
            2 => Ok(LayerKind::FullyConnected),
            other => Err(Error::UnknownLayerKind(other)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::Depthwise => "depthwise",
            LayerKind::FullyConnected => "fully-connected",
        }
    }
}

/// Geometry of one layer. Fully-connected layers use `kh = kw = 1` and take
/// `in_ch` equal to the flattened input size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub has_relu: bool,
}

impl LayerSpec {
    pub fn conv(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv2d,
            in_ch,
            out_ch,
            kh: k,
            kw: k,
            stride,
            pad,
            has_relu: true,
        }
    }

    pub fn depthwise(ch: usize, k: usize, stride: usize, pad: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Depthwise,
            in_ch: ch,
            out_ch: ch,
            kh: k,
            kw: k,
            stride,
            pad,
            has_relu: true,
        }
    }

    pub fn fully_connected(in_features: usize, out_features: usize) -> Self {
        LayerSpec {
            kind: LayerKind::FullyConnected,
            in_ch: in_features,
            out_ch: out_features,
            kh: 1,
            kw: 1,
            stride: 1,
            pad: 0,
            has_relu: false,
        }
    }

    pub fn with_relu(mut self, has_relu: bool) -> Self {
        self.has_relu = has_relu;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_ch == 0 || self.out_ch == 0 || self.kh == 0 || self.kw == 0 {
            return Err(Error::InvalidModel(format!(
                "{} layer with zero extent: {self:?}",
                self.kind.name()
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidModel("stride must be positive".into()));
        }
        match self.kind {
            LayerKind::Depthwise if self.in_ch != self.out_ch => Err(Error::InvalidModel(format!(
                "depthwise layer needs in_ch == out_ch, got {} and {}",
                self.in_ch, self.out_ch
            ))),
            LayerKind::FullyConnected
                if self.kh != 1 || self.kw != 1 || self.stride != 1 || self.pad != 0 =>
            {
                Err(Error::InvalidModel(
                    "fully-connected layer must have unit kernel, stride 1, no padding".into(),
                ))
            }
            _ => Ok(()),
        }
    }

    /// Channels each filter reads: 1 for depthwise, `in_ch` otherwise.
    pub fn filter_depth(&self) -> usize {
        match self.kind {
            LayerKind::Depthwise => 1,
            _ => self.in_ch,
        }
    }

    /// Expected weight tensor shape `(out_ch, kh, kw, depth)`.
    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_ch, self.kh, self.kw, self.filter_depth()]
    }

    pub fn weight_count(&self) -> usize {
        self.out_ch * self.kh * self.kw * self.filter_depth()
    }

    /// Output `(h, w, c)` for an `(h, w, c)` input.
    pub fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let [h, w, c] = input;
        match self.kind {
            LayerKind::FullyConnected => {
                if h * w * c != self.in_ch {
                    return Err(Error::ShapeMismatch(format!(
                        "fully-connected layer expects {} inputs, got {h}x{w}x{c}",
                        self.in_ch
                    )));
                }
                Ok([1, 1, self.out_ch])
            }
            _ => {
                if c != self.in_ch {
                    return Err(Error::ShapeMismatch(format!(
                        "layer expects {} input channels, got {c}",
                        self.in_ch
                    )));
                }
                let oh = conv_out_extent(h, self.kh, self.stride, self.pad)?;
                let ow = conv_out_extent(w, self.kw, self.stride, self.pad)?;
                Ok([oh, ow, self.out_ch])
            }
        }
    }
}

fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::ShapeMismatch(format!(
            "kernel extent {kernel} exceeds padded input extent {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

pub const MAX_ACT_BITS: u32 = 8;

/// Activation quantization: unsigned, zero point 0, values in `[0, 2^bits - 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantParams {
    pub bits: u32,
    /// Real value of one quantization step.
    pub scale: f32,
}

impl QuantParams {
    pub fn new(bits: u32, scale: f32) -> Result<Self> {
        check_act_bits(bits)?;
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "quantization scale must be positive, got {scale}"
            )));
        }
        Ok(QuantParams { bits, scale })
    }

    pub fn zero_point(&self) -> i32 {
        0
    }

    pub fn max_level(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    /// Upper clip value of the represented range.
    pub fn range_hi(&self) -> f32 {
        self.scale * self.max_level() as f32
    }
}

pub(crate) fn check_act_bits(bits: u32) -> Result<()> {
    if (1..=MAX_ACT_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::BitwidthOutOfRange {
            what: "activation",
            bits,
            min: 1,
            max: MAX_ACT_BITS,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weights: Tensor,
    /// Optional per-filter bias, never pooled.
    pub bias: Option<Vec<f32>>,
    /// Quantization of this layer's input activations, once calibrated.
    pub input_quant: Option<QuantParams>,
}

impl Layer {
    pub fn new(spec: LayerSpec, weights: Tensor, bias: Option<Vec<f32>>) -> Result<Self> {
        let layer = Layer {
            spec,
            weights,
            bias,
            input_quant: None,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.weights.shape() != self.spec.weight_shape().as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "weights shaped {:?}, layer needs {:?}",
                self.weights.shape(),
                self.spec.weight_shape()
            )));
        }
        self.weights.check_finite("weights")?;
        if let Some(bias) = &self.bias {
            if bias.len() != self.spec.out_ch {
                return Err(Error::ShapeMismatch(format!(
                    "bias has {} entries for {} filters",
                    bias.len(),
                    self.spec.out_ch
                )));
            }
            if !bias.iter().all(|b| b.is_finite()) {
                return Err(Error::NonFinite("bias"));
            }
        }
        Ok(())
    }
}

/// A feed-forward chain of layers with a single `(h, w, c)` input.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    pub input_shape: [usize; 3],
    pub layers: Vec<Layer>,
}

impl ModelGraph {
    pub fn new(input_shape: [usize; 3], layers: Vec<Layer>) -> Result<Self> {
        let graph = ModelGraph {
            input_shape,
            layers,
        };
        graph.validate()?;
        Ok(graph)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidModel("model has no layers".into()));
        }
        if self.input_shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidModel(format!(
                "input shape {:?} has a zero extent",
                self.input_shape
            )));
        }
        self.layer_shapes().map(|_| ())?;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate().map_err(|e| e.in_layer(i))?;
        }
        Ok(())
    }

    /// Input shape of every layer followed by the network output shape.
    pub fn layer_shapes(&self) -> Result<Vec<[usize; 3]>> {
        shape_chain(self.input_shape, self.layers.iter().map(|l| &l.spec))
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec.weight_count()).sum()
    }
}

pub(crate) fn shape_chain<'a>(
    input: [usize; 3],
    specs: impl Iterator<Item = &'a LayerSpec>,
) -> Result<Vec<[usize; 3]>> {
    let mut shapes = vec![input];
    let mut current = input;
    for (i, spec) in specs.enumerate() {
        current = spec.output_shape(current).map_err(|e| e.in_layer(i))?;
        shapes.push(current);
    }
    Ok(shapes)
}
