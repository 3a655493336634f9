//! Layered ReLU classifiers: the JSON model format, convolution lowering and
//! deterministic inference.
//!
//! Convolutions are lowered to dense affine layers when a model is loaded, so
//! everything downstream (reachability, falsification) only ever sees
//! [`Layer::Affine`] and [`Layer::Relu`].

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::linalg::{argmax, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("malformed model document: {0}")]
    Malformed(String),
    #[error("layer {layer}: unknown layer type `{kind}`")]
    UnknownLayer { layer: usize, kind: String },
    #[error("layer {layer}: dimension mismatch: {detail}")]
    DimensionMismatch { layer: usize, detail: String },
    #[error("layer {layer}: kernel {kernel:?} larger than padded input {padded:?}")]
    KernelTooLarge { layer: usize, kernel: (usize, usize), padded: (usize, usize) },
    #[error("input has length {got}, network expects {expected}")]
    InputDim { expected: usize, got: usize },
}

/// Dense layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self, String> {
        if weights.rows() != bias.len() {
            return Err(format!("bias has {} entries but weights have {} rows", bias.len(), weights.rows()));
        }
        Ok(Self { weights, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weights.mul_vec(x);
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v += b;
        }
        y
    }
}

/// 2-D convolution over a `(channels, height, width)` input, channel-major.
/// Output is laid out as `(filters, out_h, out_w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_shape: [usize; 3],
    pub filters: usize,
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub padding: [usize; 2],
    /// Indexed `[filter][channel][ky][kx]`.
    pub weights: Vec<Vec<Vec<Vec<f64>>>>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    /// Output spatial size, or `None` when the kernel does not fit.
    pub fn out_hw(&self) -> Option<(usize, usize)> {
        let [_, h, w] = self.in_shape;
        let [kh, kw] = self.kernel;
        let [sh, sw] = self.stride;
        let [ph, pw] = self.padding;
        let (hp, wp) = (h + 2 * ph, w + 2 * pw);
        if kh > hp || kw > wp || kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return None;
        }
        Some(((hp - kh) / sh + 1, (wp - kw) / sw + 1))
    }

    pub fn in_dim(&self) -> usize {
        self.in_shape.iter().product()
    }

    pub fn out_dim(&self) -> usize {
        self.out_hw().map_or(0, |(oh, ow)| self.filters * oh * ow)
    }

    fn check_shape(&self, layer: usize) -> Result<(), NetworkError> {
        let [c, _, _] = self.in_shape;
        let [kh, kw] = self.kernel;
        let ok = self.weights.len() == self.filters
            && self
                .weights
                .iter()
                .all(|f| f.len() == c && f.iter().all(|ch| ch.len() == kh && ch.iter().all(|r| r.len() == kw)));
        if !ok {
            return Err(NetworkError::DimensionMismatch {
                layer,
                detail: format!("conv weights must have shape ({}, {c}, {kh}, {kw})", self.filters),
            });
        }
        if self.bias.len() != self.filters {
            return Err(NetworkError::DimensionMismatch {
                layer,
                detail: format!("conv bias has {} entries, expected {}", self.bias.len(), self.filters),
            });
        }
        Ok(())
    }

    /// Visits every (output index, input index, filter, channel, ky, kx) tap of the
    /// convolution in a fixed order. Taps that land in padding are skipped.
    pub fn for_each_tap(&self, mut f: impl FnMut(usize, usize, [usize; 4])) {
        let Some((oh, ow)) = self.out_hw() else { return };
        let [c, h, w] = self.in_shape;
        let [kh, kw] = self.kernel;
        let [sh, sw] = self.stride;
        let [ph, pw] = self.padding;
        for fi in 0..self.filters {
            for oy in 0..oh {
                for ox in 0..ow {
                    let out = fi * oh * ow + oy * ow + ox;
                    for ci in 0..c {
                        for ky in 0..kh {
                            let iy = (oy * sh + ky) as isize - ph as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let inp = ci * h * w + iy as usize * w + ix as usize;
                                f(out, inp, [fi, ci, ky, kx]);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Lowers a convolution to the equivalent dense layer.
pub fn lower_conv(conv: &Conv2d) -> Result<Affine, NetworkError> {
    lower_conv_at(conv, 0)
}

fn lower_conv_at(conv: &Conv2d, layer: usize) -> Result<Affine, NetworkError> {
    let [_, h, w] = conv.in_shape;
    let Some((oh, ow)) = conv.out_hw() else {
        return Err(NetworkError::KernelTooLarge {
            layer,
            kernel: (conv.kernel[0], conv.kernel[1]),
            padded: (h + 2 * conv.padding[0], w + 2 * conv.padding[1]),
        });
    };
    conv.check_shape(layer)?;
    let mut weights = Matrix::zeros(conv.filters * oh * ow, conv.in_dim());
    conv.for_each_tap(|out, inp, [fi, ci, ky, kx]| {
        weights[(out, inp)] = conv.weights[fi][ci][ky][kx];
    });
    let bias = (0..conv.filters).flat_map(|fi| std::iter::repeat_n(conv.bias[fi], oh * ow)).collect();
    Ok(Affine { weights, bias })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Affine(Affine),
    Relu { width: usize },
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        match self {
            Layer::Affine(a) => a.out_dim(),
            Layer::Relu { width } => *width,
        }
    }
}

/// A feed-forward ReLU classifier. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dim: usize,
    num_classes: usize,
    labels: Option<Vec<String>>,
    layers: Vec<Layer>,
}

impl Network {
    /// Checks that layer dimensions chain and end at `num_classes`.
    pub fn new(
        input_dim: usize,
        num_classes: usize,
        labels: Option<Vec<String>>,
        layers: Vec<Layer>,
    ) -> Result<Self, NetworkError> {
        if input_dim == 0 || num_classes == 0 {
            return Err(NetworkError::Malformed("input_dim and num_classes must be positive".into()));
        }
        let mut dim = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            let expected_in = match layer {
                Layer::Affine(a) => a.in_dim(),
                Layer::Relu { width } => *width,
            };
            if expected_in != dim {
                return Err(NetworkError::DimensionMismatch {
                    layer: i,
                    detail: format!("layer expects input of {expected_in}, previous output is {dim}"),
                });
            }
            dim = layer.out_dim();
        }
        if dim != num_classes {
            return Err(NetworkError::DimensionMismatch {
                layer: layers.len().saturating_sub(1),
                detail: format!("final output is {dim}, num_classes is {num_classes}"),
            });
        }
        if let Some(l) = &labels {
            if l.len() != num_classes {
                return Err(NetworkError::Malformed(format!("{} labels for {num_classes} classes", l.len())));
            }
        }
        Ok(Self { input_dim, num_classes, labels, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Logits for `x`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NetworkError> {
        if x.len() != self.input_dim {
            return Err(NetworkError::InputDim { expected: self.input_dim, got: x.len() });
        }
        let mut v = x.to_vec();
        for layer in &self.layers {
            v = match layer {
                Layer::Affine(a) => a.apply(&v),
                Layer::Relu { .. } => v.into_iter().map(|z| z.max(0.0)).collect(),
            };
        }
        Ok(v)
    }

    /// Logits and predicted class (ties go to the smallest index).
    pub fn infer(&self, x: &[f64]) -> Result<(Vec<f64>, usize), NetworkError> {
        let logits = self.forward(x)?;
        let label = argmax(&logits);
        Ok((logits, label))
    }

    pub fn to_doc(&self) -> ModelDoc {
        ModelDoc {
            version: 1,
            input_dim: self.input_dim,
            num_classes: self.num_classes,
            labels: self.labels.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Affine(a) => LayerDoc::Dense { weights: a.weights.to_rows(), bias: a.bias.clone() },
                    Layer::Relu { .. } => LayerDoc::Relu,
                })
                .collect(),
        }
    }
}

/// On-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub version: u32,
    pub input_dim: usize,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    pub layers: Vec<LayerDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerDoc {
    Dense { weights: Vec<Vec<f64>>, bias: Vec<f64> },
    Relu,
    Conv2d(Conv2d),
}

impl ModelDoc {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model document serializes")
    }

    /// Builds the runtime network, lowering convolutions.
    pub fn build(&self) -> Result<Network, NetworkError> {
        if self.version != 1 {
            return Err(NetworkError::Malformed(format!("unsupported model version {}", self.version)));
        }
        let mut dim = self.input_dim;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, doc) in self.layers.iter().enumerate() {
            let layer = match doc {
                LayerDoc::Dense { weights, bias } => {
                    let weights = Matrix::from_rows(weights).ok_or_else(|| NetworkError::DimensionMismatch {
                        layer: i,
                        detail: "weight rows have unequal lengths".into(),
                    })?;
                    // An empty weight list still has to chain; treat it as 0 x dim.
                    let weights = if weights.rows() == 0 { Matrix::zeros(0, dim) } else { weights };
                    Layer::Affine(
                        Affine::new(weights, bias.clone())
                            .map_err(|detail| NetworkError::DimensionMismatch { layer: i, detail })?,
                    )
                }
                LayerDoc::Relu => Layer::Relu { width: dim },
                LayerDoc::Conv2d(conv) => {
                    if conv.in_dim() != dim {
                        return Err(NetworkError::DimensionMismatch {
                            layer: i,
                            detail: format!(
                                "conv in_shape {:?} has {} values, previous output is {dim}",
                                conv.in_shape,
                                conv.in_dim()
                            ),
                        });
                    }
                    Layer::Affine(lower_conv_at(conv, i)?)
                }
            };
            let expected_in = match &layer {
                Layer::Affine(a) => a.in_dim(),
                Layer::Relu { width } => *width,
            };
            if expected_in != dim {
                return Err(NetworkError::DimensionMismatch {
                    layer: i,
                    detail: format!("layer expects input of {expected_in}, previous output is {dim}"),
                });
            }
            dim = layer.out_dim();
            layers.push(layer);
        }
        Network::new(self.input_dim, self.num_classes, self.labels.clone(), layers)
    }
}

const KNOWN_LAYERS: [&str; 3] = ["dense", "relu", "conv2d"];

/// Parses a model file and lowers it to a [`Network`].
pub fn load_model(text: &str) -> Result<Network, NetworkError> {
    parse_model_doc(text)?.build()
}

/// Parses a model file without lowering. Layer errors carry the layer index.
pub fn parse_model_doc(text: &str) -> Result<ModelDoc, NetworkError> {
    let value: Value = serde_json::from_str(text).map_err(|e| NetworkError::Malformed(e.to_string()))?;
    let layers = value
        .get("layers")
        .and_then(Value::as_array)
        .ok_or_else(|| NetworkError::Malformed("missing `layers` array".into()))?;
    for (i, layer) in layers.iter().enumerate() {
        let kind = layer
            .get("type")
            .and_then(Value::as_str)
            .ok_or_else(|| NetworkError::Malformed(format!("layer {i}: missing string field `type`")))?;
        if !KNOWN_LAYERS.contains(&kind) {
            return Err(NetworkError::UnknownLayer { layer: i, kind: kind.to_string() });
        }
        serde_json::from_value::<LayerDoc>(layer.clone())
            .map_err(|e| NetworkError::Malformed(format!("layer {i}: {e}")))?;
    }
    serde_json::from_value(value).map_err(|e| NetworkError::Malformed(e.to_string()))
}
