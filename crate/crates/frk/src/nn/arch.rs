//! Architecture plans: the hyperparameter-level description of a model.
//!
//! A plan lists layers, parameter shapes, and the canonical input, and is
//! what `architecture.json` stores in a checkpoint. Parameter audits and
//! symbolic shape propagation run on plans; [`super::ModelGraph`] is a plan
//! plus initialized frequency-domain parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::conv_out_dim;
use crate::tensor::param_count;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSpec {
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
    Features {
        len: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerPlan {
    FrConv2d {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    FrLinear {
        name: String,
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
    Relu,
    Relu6,
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    AdaptiveAvgPool2d {
        out_h: usize,
        out_w: usize,
    },
    Dropout {
        p: f64,
    },
    BatchNorm2d {
        name: String,
        num_features: usize,
    },
    Flatten,
    /// Residual connection: output = input + body(input).
    Residual {
        body: Vec<LayerPlan>,
    },
}

impl LayerPlan {
    /// Parameter names and spatial shapes this layer contributes.
    fn collect_param_shapes(&self, out: &mut Vec<(String, Vec<usize>)>) {
        match self {
            LayerPlan::FrConv2d {
                name,
                in_channels,
                out_channels,
                kernel,
                bias,
                ..
            } => {
                out.push((
                    format!("{name}.weight"),
                    vec![*out_channels, *in_channels, *kernel, *kernel],
                ));
                if *bias {
                    out.push((format!("{name}.bias"), vec![*out_channels]));
                }
            }
            LayerPlan::FrLinear {
                name,
                in_features,
                out_features,
                bias,
            } => {
                out.push((format!("{name}.weight"), vec![*out_features, *in_features]));
                if *bias {
                    out.push((format!("{name}.bias"), vec![*out_features]));
                }
            }
            LayerPlan::BatchNorm2d { name, num_features } => {
                out.push((format!("{name}.gamma"), vec![*num_features]));
                out.push((format!("{name}.beta"), vec![*num_features]));
            }
            LayerPlan::Residual { body } => {
                for l in body {
                    l.collect_param_shapes(out);
                }
            }
            _ => {}
        }
    }

    /// Symbolic output shape, validating compatibility.
    pub fn out_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let need4 = |what: &str| -> Result<(usize, usize, usize, usize)> {
            if input.len() != 4 {
                return Err(Error::Shape(format!(
                    "{what} expects (N,C,H,W), got {input:?}"
                )));
            }
            Ok((input[0], input[1], input[2], input[3]))
        };
        match self {
            LayerPlan::FrConv2d {
                name,
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                let (n, c, h, w) = need4("conv2d")?;
                if c != *in_channels {
                    return Err(Error::Shape(format!(
                        "{name}: expected {in_channels} input channels, got {c}"
                    )));
                }
                let oh = conv_out_dim(h, *kernel, *stride, *padding)?;
                let ow = conv_out_dim(w, *kernel, *stride, *padding)?;
                Ok(vec![n, *out_channels, oh, ow])
            }
            LayerPlan::FrLinear {
                name,
                in_features,
                out_features,
                ..
            } => {
                if input.len() != 2 || input[1] != *in_features {
                    return Err(Error::Shape(format!(
                        "{name}: expected (N,{in_features}), got {input:?}"
                    )));
                }
                Ok(vec![input[0], *out_features])
            }
            LayerPlan::Relu | LayerPlan::Relu6 | LayerPlan::Dropout { .. } => {
                Ok(input.to_vec())
            }
            LayerPlan::MaxPool2d { kernel, stride } => {
                let (n, c, h, w) = need4("maxpool2d")?;
                if h < *kernel || w < *kernel {
                    return Err(Error::Shape(format!(
                        "pool window {kernel} exceeds input {h}x{w}"
                    )));
                }
                Ok(vec![n, c, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
            }
            LayerPlan::AdaptiveAvgPool2d { out_h, out_w } => {
                let (n, c, _, _) = need4("adaptive_avgpool2d")?;
                Ok(vec![n, c, *out_h, *out_w])
            }
            LayerPlan::BatchNorm2d { name, num_features } => {
                let (_, c, _, _) = need4("batchnorm2d")?;
                if c != *num_features {
                    return Err(Error::Shape(format!(
                        "{name}: expected {num_features} channels, got {c}"
                    )));
                }
                Ok(input.to_vec())
            }
            LayerPlan::Flatten => {
                if input.len() < 2 {
                    return Err(Error::Shape(format!("flatten expects rank >= 2, got {input:?}")));
                }
                Ok(vec![input[0], input[1..].iter().product()])
            }
            LayerPlan::Residual { body } => {
                let mut shape = input.to_vec();
                for l in body {
                    shape = l.out_shape(&shape)?;
                }
                if shape != input {
                    return Err(Error::Shape(format!(
                        "residual body maps {input:?} to {shape:?}; shapes must match"
                    )));
                }
                Ok(shape)
            }
        }
    }
}

/// A named architecture: builder id, class count, canonical input, layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchPlan {
    pub builder: String,
    pub num_classes: usize,
    pub input: InputSpec,
    pub layers: Vec<LayerPlan>,
}

impl ArchPlan {
    /// Parameter names and spatial shapes in layer order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.collect_param_shapes(&mut out);
        }
        out
    }

    /// Total trainable parameter count.
    pub fn param_total(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| param_count(s))
            .sum()
    }

    /// Propagates an input shape through every layer, validating each step.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut shape = input.to_vec();
        for l in &self.layers {
            shape = l.out_shape(&shape)?;
        }
        Ok(shape)
    }

    /// The canonical batch-1 input shape.
    pub fn canonical_input(&self) -> Vec<usize> {
        match self.input {
            InputSpec::Image {
                channels,
                height,
                width,
            } => vec![1, channels, height, width],
            InputSpec::Features { len } => vec![1, len],
        }
    }
}

fn conv(
    name: &str,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    bias: bool,
) -> LayerPlan {
    LayerPlan::FrConv2d {
        name: name.into(),
        in_channels,
        out_channels,
        kernel,
        stride,
        padding,
        bias,
    }
}

fn linear(name: &str, in_features: usize, out_features: usize) -> LayerPlan {
    LayerPlan::FrLinear {
        name: name.into(),
        in_features,
        out_features,
        bias: true,
    }
}

fn batchnorm(name: &str, num_features: usize) -> LayerPlan {
    LayerPlan::BatchNorm2d {
        name: name.into(),
        num_features,
    }
}

/// Conv(bias-free) + BatchNorm + ReLU6 block.
fn conv_bn_relu(
    name: &str,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out: &mut Vec<LayerPlan>,
) {
    out.push(conv(
        &format!("{name}.conv"),
        in_channels,
        out_channels,
        kernel,
        stride,
        padding,
        false,
    ));
    out.push(batchnorm(&format!("{name}.bn"), out_channels));
    out.push(LayerPlan::Relu6);
}

/// Mobile inverted residual block configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MBConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub expand_ratio: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl MBConvSpec {
    pub fn use_residual(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }
}

fn mbconv_body(name: &str, spec: &MBConvSpec) -> Vec<LayerPlan> {
    let expanded = spec.in_channels * spec.expand_ratio;
    let mut body = Vec::new();
    if spec.expand_ratio != 1 {
        conv_bn_relu(
            &format!("{name}.expand"),
            spec.in_channels,
            expanded,
            1,
            1,
            0,
            &mut body,
        );
    }
    conv_bn_relu(
        &format!("{name}.mid"),
        expanded,
        expanded,
        spec.kernel,
        spec.stride,
        spec.kernel / 2,
        &mut body,
    );
    body.push(conv(
        &format!("{name}.project"),
        expanded,
        spec.out_channels,
        1,
        1,
        0,
        false,
    ));
    body.push(batchnorm(&format!("{name}.project.bn"), spec.out_channels));
    body
}

fn mbconv(name: &str, spec: &MBConvSpec, out: &mut Vec<LayerPlan>) {
    let body = mbconv_body(name, spec);
    if spec.use_residual() {
        out.push(LayerPlan::Residual { body });
    } else {
        out.extend(body);
    }
}

/// The block table of the B0 variant: the listed prefix continued with the
/// standard channel path 40→80→112→192→320 so the 320-channel head input is
/// reachable.
pub fn efficientnet_b0_blocks() -> Vec<MBConvSpec> {
    let spec = |i, o, e, k, s| MBConvSpec {
        in_channels: i,
        out_channels: o,
        expand_ratio: e,
        kernel: k,
        stride: s,
    };
    vec![
        spec(32, 16, 1, 3, 1),
        spec(16, 24, 6, 3, 2),
        spec(24, 24, 6, 3, 1),
        spec(24, 40, 6, 5, 2),
        spec(40, 40, 6, 5, 1),
        spec(40, 80, 6, 3, 2),
        spec(80, 80, 6, 3, 1),
        spec(80, 80, 6, 3, 1),
        spec(80, 112, 6, 5, 1),
        spec(112, 112, 6, 5, 1),
        spec(112, 112, 6, 5, 1),
        spec(112, 192, 6, 5, 2),
        spec(192, 192, 6, 5, 1),
        spec(192, 192, 6, 5, 1),
        spec(192, 192, 6, 5, 1),
        spec(192, 320, 6, 3, 1),
    ]
}

impl ArchPlan {
    /// AlexNet with frequency-regularized conv/linear layers.
    pub fn alexnet(num_classes: usize) -> ArchPlan {
        let layers = vec![
            conv("conv1", 3, 64, 11, 4, 2, true),
            LayerPlan::Relu,
            LayerPlan::MaxPool2d { kernel: 3, stride: 2 },
            conv("conv2", 64, 192, 5, 1, 2, true),
            LayerPlan::Relu,
            LayerPlan::MaxPool2d { kernel: 3, stride: 2 },
            conv("conv3", 192, 384, 3, 1, 1, true),
            LayerPlan::Relu,
            conv("conv4", 384, 256, 3, 1, 1, true),
            LayerPlan::Relu,
            conv("conv5", 256, 256, 3, 1, 1, true),
            LayerPlan::Relu,
            LayerPlan::MaxPool2d { kernel: 3, stride: 2 },
            LayerPlan::AdaptiveAvgPool2d { out_h: 6, out_w: 6 },
            LayerPlan::Flatten,
            LayerPlan::Dropout { p: 0.5 },
            linear("fc1", 256 * 6 * 6, 4096),
            LayerPlan::Relu,
            LayerPlan::Dropout { p: 0.5 },
            linear("fc2", 4096, 4096),
            LayerPlan::Relu,
            linear("fc3", 4096, num_classes),
        ];
        ArchPlan {
            builder: "alexnet".into(),
            num_classes,
            input: InputSpec::Image {
                channels: 3,
                height: 224,
                width: 224,
            },
            layers,
        }
    }

    /// EfficientNetB0 variant with frequency-regularized convolutions.
    pub fn efficientnet_b0(num_classes: usize) -> ArchPlan {
        let mut layers = Vec::new();
        conv_bn_relu("stem", 3, 32, 3, 2, 1, &mut layers);
        for (i, spec) in efficientnet_b0_blocks().iter().enumerate() {
            mbconv(&format!("blocks.{i}"), spec, &mut layers);
        }
        conv_bn_relu("head", 320, 1280, 1, 1, 0, &mut layers);
        layers.push(LayerPlan::AdaptiveAvgPool2d { out_h: 1, out_w: 1 });
        layers.push(LayerPlan::Flatten);
        layers.push(linear("classifier", 1280, num_classes));
        ArchPlan {
            builder: "efficientnetb0".into(),
            num_classes,
            input: InputSpec::Image {
                channels: 3,
                height: 224,
                width: 224,
            },
            layers,
        }
    }

    /// Classic LeNet-5 stack with frequency-regularized conv/linear layers.
    pub fn lenet5(num_classes: usize) -> ArchPlan {
        let layers = vec![
            conv("conv1", 1, 6, 5, 1, 0, true),
            LayerPlan::Relu,
            LayerPlan::MaxPool2d { kernel: 2, stride: 2 },
            conv("conv2", 6, 16, 5, 1, 0, true),
            LayerPlan::Relu,
            LayerPlan::MaxPool2d { kernel: 2, stride: 2 },
            LayerPlan::Flatten,
            linear("fc1", 400, 120),
            LayerPlan::Relu,
            linear("fc2", 120, 84),
            LayerPlan::Relu,
            linear("fc3", 84, num_classes),
        ];
        ArchPlan {
            builder: "lenet5".into(),
            num_classes,
            input: InputSpec::Image {
                channels: 1,
                height: 32,
                width: 32,
            },
            layers,
        }
    }

    /// Small conv net for the synthetic-blob training demo.
    pub fn blob_net(num_classes: usize, channels: usize, height: usize, width: usize) -> ArchPlan {
        let pooled = (height / 2) * (width / 2) * 6;
        let layers = vec![
            conv("conv1", channels, 6, 3, 1, 1, true),
            LayerPlan::Relu,
            LayerPlan::MaxPool2d { kernel: 2, stride: 2 },
            LayerPlan::Flatten,
            linear("fc1", pooled, num_classes),
        ];
        ArchPlan {
            builder: "blobnet".into(),
            num_classes,
            input: InputSpec::Image {
                channels,
                height,
                width,
            },
            layers,
        }
    }
}
