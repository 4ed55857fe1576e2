use serde::{Deserialize, Serialize};

use crate::data::InputShape;
use crate::error::{Error, Result};

pub const CONV_KERNEL: usize = 5;
pub const DEFAULT_DROPOUT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    /// d - 64 - 32 - D.
    Mlp,
    /// conv 5x5x8, maxpool, conv 5x5x16, maxpool, fc 64, fc D.
    SmallCnn,
}

/// Which of the two fixed classifiers to build, for what input and class
/// count, and which hidden layers feed descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub kind: ArchKind,
    pub input: InputShape,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub tapped_scales: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerOp {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        in_height: usize,
        in_width: usize,
    },
}

/// A parametric layer followed by its optional rectifier, 2x2 max-pool and
/// dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: &'static str,
    pub op: LayerOp,
    pub relu: bool,
    pub maxpool: bool,
    pub dropout: bool,
}

impl LayerSpec {
    /// Weight matrix is `outputs x fan_in`.
    pub fn fan_in(&self) -> usize {
        match self.op {
            LayerOp::Dense { inputs, .. } => inputs,
            LayerOp::Conv {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
        }
    }

    pub fn outputs(&self) -> usize {
        match self.op {
            LayerOp::Dense { outputs, .. } => outputs,
            LayerOp::Conv { out_channels, .. } => out_channels,
        }
    }

    pub fn input_len(&self) -> usize {
        match self.op {
            LayerOp::Dense { inputs, .. } => inputs,
            LayerOp::Conv {
                in_channels,
                in_height,
                in_width,
                ..
            } => in_channels * in_height * in_width,
        }
    }

    /// Spatial size (H, W) of the pre-activation output.
    pub fn out_spatial(&self) -> (usize, usize) {
        match self.op {
            LayerOp::Dense { .. } => (1, 1),
            LayerOp::Conv {
                kernel,
                in_height,
                in_width,
                ..
            } => (in_height + 1 - kernel, in_width + 1 - kernel),
        }
    }

    /// Length of the pre-activation output per sample (C*H*W).
    pub fn pre_len(&self) -> usize {
        let (h, w) = self.out_spatial();
        self.outputs() * h * w
    }

    /// Length of what this layer hands to the next one.
    pub fn output_len(&self) -> usize {
        let (h, w) = self.out_spatial();
        if self.maxpool {
            self.outputs() * (h / 2) * (w / 2)
        } else {
            self.outputs() * h * w
        }
    }
}

impl ArchSpec {
    pub fn mlp(input_dim: usize, num_classes: usize) -> Self {
        ArchSpec {
            kind: ArchKind::Mlp,
            input: InputShape::Flat { dim: input_dim },
            num_classes,
            dropout_rate: DEFAULT_DROPOUT,
            tapped_scales: vec!["fc1".into(), "fc2".into()],
        }
    }

    pub fn small_cnn(channels: usize, height: usize, width: usize, num_classes: usize) -> Self {
        ArchSpec {
            kind: ArchKind::SmallCnn,
            input: InputShape::Image {
                channels,
                height,
                width,
            },
            num_classes,
            dropout_rate: DEFAULT_DROPOUT,
            tapped_scales: vec!["conv2".into(), "fc1".into()],
        }
    }

    /// Default architecture of `kind` for the given input.
    pub fn for_input(kind: ArchKind, input: InputShape, num_classes: usize) -> Result<Self> {
        match (kind, input) {
            (ArchKind::Mlp, shape) => Ok(ArchSpec {
                input: shape,
                ..ArchSpec::mlp(shape.len(), num_classes)
            }),
            (
                ArchKind::SmallCnn,
                InputShape::Image {
                    channels,
                    height,
                    width,
                },
            ) => Ok(ArchSpec::small_cnn(channels, height, width, num_classes)),
            (ArchKind::SmallCnn, InputShape::Flat { .. }) => Err(Error::invalid("small_cnn needs image-shaped inputs")),
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn with_classes(&self, num_classes: usize) -> Self {
        ArchSpec {
            num_classes,
            ..self.clone()
        }
    }

    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        if self.num_classes < 2 {
            return Err(Error::invalid("need at least 2 output classes"));
        }
        match self.kind {
            ArchKind::Mlp => {
                let d = self.input.len();
                if d == 0 {
                    return Err(Error::invalid("empty input"));
                }
                Ok(vec![
                    dense("fc1", d, 64, true),
                    dense("fc2", 64, 32, true),
                    dense("out", 32, self.num_classes, false),
                ])
            }
            ArchKind::SmallCnn => {
                let InputShape::Image {
                    channels,
                    height,
                    width,
                } = self.input
                else {
                    return Err(Error::invalid("small_cnn needs image-shaped inputs"));
                };
                let conv1 = LayerSpec {
                    name: "conv1",
                    op: LayerOp::Conv {
                        in_channels: channels,
                        out_channels: 8,
                        kernel: CONV_KERNEL,
                        in_height: height,
                        in_width: width,
                    },
                    relu: true,
                    maxpool: true,
                    dropout: false,
                };
                let (h1, w1) = conv1.out_spatial();
                let (h1, w1) = (h1 / 2, w1 / 2);
                if height < CONV_KERNEL || width < CONV_KERNEL || h1 < CONV_KERNEL || w1 < CONV_KERNEL {
                    return Err(Error::invalid(format!(
                        "image {height}x{width} too small for small_cnn"
                    )));
                }
                let conv2 = LayerSpec {
                    name: "conv2",
                    op: LayerOp::Conv {
                        in_channels: 8,
                        out_channels: 16,
                        kernel: CONV_KERNEL,
                        in_height: h1,
                        in_width: w1,
                    },
                    relu: true,
                    maxpool: true,
                    dropout: false,
                };
                let (h2, w2) = conv2.out_spatial();
                if h2 < 2 || w2 < 2 {
                    return Err(Error::invalid(format!(
                        "image {height}x{width} too small for small_cnn"
                    )));
                }
                let flat = conv2.output_len();
                Ok(vec![
                    conv1,
                    conv2,
                    dense("fc1", flat, 64, true),
                    dense("out", 64, self.num_classes, false),
                ])
            }
        }
    }

    /// Layer indices of the tapped scales, in the order given.
    pub fn tapped_layers(&self) -> Result<Vec<usize>> {
        let layers = self.layers()?;
        if self.tapped_scales.is_empty() {
            return Err(Error::invalid("tapped_scales must not be empty"));
        }
        let mut out = Vec::with_capacity(self.tapped_scales.len());
        for name in &self.tapped_scales {
            let idx = layers
                .iter()
                .position(|l| l.name == name.as_str())
                .filter(|&i| layers[i].relu)
                .ok_or_else(|| Error::invalid(format!("no hidden layer named {name:?}")))?;
            if out.contains(&idx) {
                return Err(Error::invalid(format!("scale {name:?} tapped twice")));
            }
            out.push(idx);
        }
        Ok(out)
    }

    /// Descriptor length L_j (channel count) of each tapped scale.
    pub fn scale_lengths(&self) -> Result<Vec<usize>> {
        let layers = self.layers()?;
        Ok(self.tapped_layers()?.into_iter().map(|i| layers[i].outputs()).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        self.tapped_layers().map(|_| ())
    }
}

fn dense(name: &'static str, inputs: usize, outputs: usize, hidden: bool) -> LayerSpec {
    LayerSpec {
        name,
        op: LayerOp::Dense { inputs, outputs },
        relu: hidden,
        maxpool: false,
        dropout: hidden,
    }
}
