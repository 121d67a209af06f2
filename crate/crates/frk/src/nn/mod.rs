//! Frequency-regularized layers with manual forward/backward, architecture
//! builders, and a desk-scale SGD trainer.
//!
//! Every trainable parameter (conv/linear weights and biases, batchnorm
//! gamma/beta) is a [`FreqParam`]; forward passes reconstruct spatial weights
//! with the inverse DCT, and backward passes map spatial gradients back into
//! the kept frequency coefficients.

pub mod arch;
pub mod ops;
pub mod train;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub use arch::{ArchPlan, InputSpec, LayerPlan, MBConvSpec};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::freqparam::FreqParam;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub struct FrConv2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: FreqParam,
    pub bias: Option<FreqParam>,
}

pub struct FrLinear {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
    pub weight: FreqParam,
    pub bias: Option<FreqParam>,
}

pub struct BatchNorm2d {
    pub name: String,
    pub num_features: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: FreqParam,
    pub beta: FreqParam,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

pub enum Layer {
    FrConv2d(FrConv2d),
    FrLinear(FrLinear),
    Relu,
    Relu6,
    MaxPool2d { kernel: usize, stride: usize },
    AdaptiveAvgPool2d { out_h: usize, out_w: usize },
    Dropout { p: f64 },
    BatchNorm2d(BatchNorm2d),
    Flatten,
    Residual(Vec<Layer>),
}

/// Per-layer context captured by a training forward pass, consumed in
/// reverse by [`ModelGraph::backward`].
pub enum LayerCtx {
    Conv {
        cols: Tensor,
        weight_mat: Tensor,
        input_shape: (usize, usize, usize, usize),
        out_hw: (usize, usize),
    },
    Linear {
        input: Tensor,
        weight: Tensor,
    },
    Relu {
        input: Tensor,
    },
    Relu6 {
        input: Tensor,
    },
    MaxPool(ops::MaxPoolCtx),
    AvgPool {
        input_shape: (usize, usize, usize, usize),
        out_hw: (usize, usize),
    },
    Dropout {
        mask: Option<Tensor>,
    },
    BatchNorm(ops::BatchNormCtx),
    Flatten {
        input_shape: Vec<usize>,
    },
    Residual(Vec<LayerCtx>),
}

/// Frequency-domain gradient accumulator keyed by parameter name.
#[derive(Debug, Default)]
pub struct GradStore {
    grads: BTreeMap<String, Tensor>,
}

impl GradStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, grad: Tensor) {
        match self.grads.get_mut(name) {
            Some(g) => g.add_scaled(1.0, &grad),
            None => {
                self.grads.insert(name.to_string(), grad);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }
}

fn conv_forward(layer: &FrConv2d, x: &Tensor) -> Result<(Tensor, LayerCtx)> {
    let (n, c, h, w) = ops::dims4(x)?;
    if c != layer.in_channels {
        return Err(Error::Shape(format!(
            "{}: expected {} input channels, got {c}",
            layer.name, layer.in_channels
        )));
    }
    let _ = (h, w);
    let weight_mat = layer.weight.reconstruct().reshaped(&[
        layer.out_channels,
        layer.in_channels * layer.kernel * layer.kernel,
    ])?;
    let (cols, oh, ow) = ops::im2col(x, layer.kernel, layer.stride, layer.padding)?;
    let mut out_mat = weight_mat.matmul(&cols)?;
    if let Some(bias) = &layer.bias {
        let b = bias.reconstruct();
        let n_cols = out_mat.shape()[1];
        for (o, &bv) in b.data().iter().enumerate() {
            for v in &mut out_mat.data_mut()[o * n_cols..(o + 1) * n_cols] {
                *v += bv;
            }
        }
    }
    let out = ops::mat_to_nchw(&out_mat, n, oh, ow)?;
    Ok((
        out,
        LayerCtx::Conv {
            cols,
            weight_mat,
            input_shape: (n, c, h, w),
            out_hw: (oh, ow),
        },
    ))
}

fn conv_backward(
    layer: &FrConv2d,
    ctx: &LayerCtx,
    upstream: &Tensor,
    grads: &mut GradStore,
) -> Result<Tensor> {
    let LayerCtx::Conv {
        cols,
        weight_mat,
        input_shape,
        ..
    } = ctx
    else {
        unreachable!("context mismatch");
    };
    let up_mat = ops::nchw_to_mat(upstream)?;
    let dw_mat = up_mat.matmul_nt(cols)?;
    let dw = dw_mat.reshaped(&[
        layer.out_channels,
        layer.in_channels,
        layer.kernel,
        layer.kernel,
    ])?;
    grads.add(
        &format!("{}.weight", layer.name),
        layer.weight.grad_to_freq(&dw)?,
    );
    if let Some(bias) = &layer.bias {
        let n_cols = up_mat.shape()[1];
        let db: Vec<f64> = (0..layer.out_channels)
            .map(|o| up_mat.data()[o * n_cols..(o + 1) * n_cols].iter().sum())
            .collect();
        grads.add(
            &format!("{}.bias", layer.name),
            bias.grad_to_freq(&Tensor::from_vec(&[layer.out_channels], db)?)?,
        );
    }
    let dcols = weight_mat.matmul_tn(&up_mat)?;
    ops::col2im(&dcols, *input_shape, layer.kernel, layer.stride, layer.padding)
}

fn linear_forward_layer(layer: &FrLinear, x: &Tensor) -> Result<(Tensor, LayerCtx)> {
    if x.rank() != 2 || x.shape()[1] != layer.in_features {
        return Err(Error::Shape(format!(
            "{}: expected (N,{}), got {:?}",
            layer.name,
            layer.in_features,
            x.shape()
        )));
    }
    let weight = layer.weight.reconstruct();
    let bias = layer.bias.as_ref().map(|b| b.reconstruct());
    let y = ops::linear_forward(x, &weight, bias.as_ref())?;
    Ok((
        y,
        LayerCtx::Linear {
            input: x.clone(),
            weight,
        },
    ))
}

fn linear_backward_layer(
    layer: &FrLinear,
    ctx: &LayerCtx,
    upstream: &Tensor,
    grads: &mut GradStore,
) -> Result<Tensor> {
    let LayerCtx::Linear { input, weight } = ctx else {
        unreachable!("context mismatch");
    };
    let (dx, dw, db) = ops::linear_backward(input, weight, upstream)?;
    grads.add(
        &format!("{}.weight", layer.name),
        layer.weight.grad_to_freq(&dw)?,
    );
    if let Some(bias) = &layer.bias {
        grads.add(&format!("{}.bias", layer.name), bias.grad_to_freq(&db)?);
    }
    Ok(dx)
}

/// Training forward pass over a layer slice: samples dropout, uses batch
/// statistics (updating the running estimates), and records contexts.
fn train_layers(
    layers: &mut [Layer],
    x: Tensor,
    rng: &mut Rng,
) -> Result<(Tensor, Vec<LayerCtx>)> {
    let mut cur = x;
    let mut ctxs = Vec::with_capacity(layers.len());
    for layer in layers.iter_mut() {
        let (next, ctx) = match layer {
            Layer::FrConv2d(conv) => conv_forward(conv, &cur)?,
            Layer::FrLinear(lin) => linear_forward_layer(lin, &cur)?,
            Layer::Relu => {
                let y = cur.map(|v| v.max(0.0));
                (y, LayerCtx::Relu { input: cur })
            }
            Layer::Relu6 => {
                let y = cur.map(|v| v.clamp(0.0, 6.0));
                (y, LayerCtx::Relu6 { input: cur })
            }
            Layer::MaxPool2d { kernel, stride } => {
                let (y, ctx) = ops::maxpool_forward(&cur, *kernel, *stride)?;
                (y, LayerCtx::MaxPool(ctx))
            }
            Layer::AdaptiveAvgPool2d { out_h, out_w } => {
                let input_shape = ops::dims4(&cur)?;
                let y = ops::adaptive_avgpool_forward(&cur, *out_h, *out_w)?;
                (
                    y,
                    LayerCtx::AvgPool {
                        input_shape,
                        out_hw: (*out_h, *out_w),
                    },
                )
            }
            Layer::Dropout { p } => {
                if *p > 0.0 {
                    let scale = 1.0 / (1.0 - *p);
                    let mask_vals: Vec<f64> = (0..cur.len())
                        .map(|_| if rng.next_f64() < *p { 0.0 } else { scale })
                        .collect();
                    let mask = Tensor::from_vec(cur.shape(), mask_vals)?;
                    let mut y = cur;
                    for (v, m) in y.data_mut().iter_mut().zip(mask.data()) {
                        *v *= m;
                    }
                    (y, LayerCtx::Dropout { mask: Some(mask) })
                } else {
                    (cur, LayerCtx::Dropout { mask: None })
                }
            }
            Layer::BatchNorm2d(bn) => {
                let gamma = bn.gamma.reconstruct();
                let beta = bn.beta.reconstruct();
                let (y, ctx, stats) =
                    ops::batchnorm_forward_train(&cur, gamma.data(), beta.data(), bn.eps)?;
                let unbias = stats.count as f64 / (stats.count as f64 - 1.0);
                for c in 0..bn.num_features {
                    bn.running_mean[c] = (1.0 - bn.momentum) * bn.running_mean[c]
                        + bn.momentum * stats.mean[c];
                    bn.running_var[c] = (1.0 - bn.momentum) * bn.running_var[c]
                        + bn.momentum * stats.var_biased[c] * unbias;
                }
                (y, LayerCtx::BatchNorm(ctx))
            }
            Layer::Flatten => {
                let input_shape = cur.shape().to_vec();
                let flat: usize = input_shape[1..].iter().product();
                let y = cur.reshaped(&[input_shape[0], flat])?;
                (y, LayerCtx::Flatten { input_shape })
            }
            Layer::Residual(body) => {
                let input = cur.clone();
                let (body_out, body_ctxs) = train_layers(body, cur, rng)?;
                if body_out.shape() != input.shape() {
                    return Err(Error::Shape(format!(
                        "residual body changed shape {:?} -> {:?}",
                        input.shape(),
                        body_out.shape()
                    )));
                }
                let mut y = body_out;
                y.add_scaled(1.0, &input);
                (y, LayerCtx::Residual(body_ctxs))
            }
        };
        cur = next;
        ctxs.push(ctx);
    }
    Ok((cur, ctxs))
}

/// Pure inference pass over a layer slice: running batchnorm statistics,
/// dropout as identity, no contexts, no mutation.
fn eval_layers(layers: &[Layer], x: Tensor) -> Result<Tensor> {
    let mut cur = x;
    for layer in layers {
        cur = match layer {
            Layer::FrConv2d(conv) => conv_forward(conv, &cur)?.0,
            Layer::FrLinear(lin) => linear_forward_layer(lin, &cur)?.0,
            Layer::Relu => cur.map(|v| v.max(0.0)),
            Layer::Relu6 => cur.map(|v| v.clamp(0.0, 6.0)),
            Layer::MaxPool2d { kernel, stride } => {
                ops::maxpool_forward(&cur, *kernel, *stride)?.0
            }
            Layer::AdaptiveAvgPool2d { out_h, out_w } => {
                ops::adaptive_avgpool_forward(&cur, *out_h, *out_w)?
            }
            Layer::Dropout { .. } => cur,
            Layer::BatchNorm2d(bn) => {
                let gamma = bn.gamma.reconstruct();
                let beta = bn.beta.reconstruct();
                ops::batchnorm_forward_eval(
                    &cur,
                    gamma.data(),
                    beta.data(),
                    &bn.running_mean,
                    &bn.running_var,
                    bn.eps,
                )?
            }
            Layer::Flatten => {
                let shape = cur.shape().to_vec();
                let flat: usize = shape[1..].iter().product();
                cur.reshaped(&[shape[0], flat])?
            }
            Layer::Residual(body) => {
                let input = cur.clone();
                let body_out = eval_layers(body, cur)?;
                if body_out.shape() != input.shape() {
                    return Err(Error::Shape(format!(
                        "residual body changed shape {:?} -> {:?}",
                        input.shape(),
                        body_out.shape()
                    )));
                }
                let mut y = body_out;
                y.add_scaled(1.0, &input);
                y
            }
        };
    }
    Ok(cur)
}

fn backward_layers(
    layers: &[Layer],
    ctxs: &[LayerCtx],
    upstream: Tensor,
    grads: &mut GradStore,
) -> Result<Tensor> {
    let mut up = upstream;
    for (layer, ctx) in layers.iter().zip(ctxs).rev() {
        up = match (layer, ctx) {
            (Layer::FrConv2d(conv), ctx) => conv_backward(conv, ctx, &up, grads)?,
            (Layer::FrLinear(lin), ctx) => linear_backward_layer(lin, ctx, &up, grads)?,
            (Layer::Relu, LayerCtx::Relu { input }) => {
                let mut dx = up;
                for (d, &x) in dx.data_mut().iter_mut().zip(input.data()) {
                    if x <= 0.0 {
                        *d = 0.0;
                    }
                }
                dx
            }
            (Layer::Relu6, LayerCtx::Relu6 { input }) => {
                let mut dx = up;
                for (d, &x) in dx.data_mut().iter_mut().zip(input.data()) {
                    if x <= 0.0 || x >= 6.0 {
                        *d = 0.0;
                    }
                }
                dx
            }
            (Layer::MaxPool2d { .. }, LayerCtx::MaxPool(ctx)) => {
                ops::maxpool_backward(ctx, &up)?
            }
            (Layer::AdaptiveAvgPool2d { .. }, LayerCtx::AvgPool { input_shape, out_hw }) => {
                ops::adaptive_avgpool_backward(*input_shape, out_hw.0, out_hw.1, &up)?
            }
            (Layer::Dropout { .. }, LayerCtx::Dropout { mask }) => match mask {
                Some(m) => {
                    let mut dx = up;
                    for (d, &mv) in dx.data_mut().iter_mut().zip(m.data()) {
                        *d *= mv;
                    }
                    dx
                }
                None => up,
            },
            (Layer::BatchNorm2d(bn), LayerCtx::BatchNorm(ctx)) => {
                let (dx, dgamma, dbeta) = ops::batchnorm_backward(ctx, &up)?;
                grads.add(
                    &format!("{}.gamma", bn.name),
                    bn.gamma.grad_to_freq(&dgamma)?,
                );
                grads.add(&format!("{}.beta", bn.name), bn.beta.grad_to_freq(&dbeta)?);
                dx
            }
            (Layer::Flatten, LayerCtx::Flatten { input_shape }) => {
                up.reshaped(input_shape)?
            }
            (Layer::Residual(body), LayerCtx::Residual(body_ctxs)) => {
                let identity = up.clone();
                let mut dx = backward_layers(body, body_ctxs, up, grads)?;
                dx.add_scaled(1.0, &identity);
                dx
            }
            _ => unreachable!("layer/context mismatch"),
        };
    }
    Ok(up)
}

fn visit_params<'a>(layers: &'a [Layer], f: &mut dyn FnMut(String, &'a FreqParam)) {
    for layer in layers {
        match layer {
            Layer::FrConv2d(conv) => {
                f(format!("{}.weight", conv.name), &conv.weight);
                if let Some(b) = &conv.bias {
                    f(format!("{}.bias", conv.name), b);
                }
            }
            Layer::FrLinear(lin) => {
                f(format!("{}.weight", lin.name), &lin.weight);
                if let Some(b) = &lin.bias {
                    f(format!("{}.bias", lin.name), b);
                }
            }
            Layer::BatchNorm2d(bn) => {
                f(format!("{}.gamma", bn.name), &bn.gamma);
                f(format!("{}.beta", bn.name), &bn.beta);
            }
            Layer::Residual(body) => visit_params(body, f),
            _ => {}
        }
    }
}

fn visit_params_mut(layers: &mut [Layer], f: &mut dyn FnMut(&str, &mut FreqParam)) {
    for layer in layers {
        match layer {
            Layer::FrConv2d(conv) => {
                f(&format!("{}.weight", conv.name), &mut conv.weight);
                if let Some(b) = &mut conv.bias {
                    f(&format!("{}.bias", conv.name), b);
                }
            }
            Layer::FrLinear(lin) => {
                f(&format!("{}.weight", lin.name), &mut lin.weight);
                if let Some(b) = &mut lin.bias {
                    f(&format!("{}.bias", lin.name), b);
                }
            }
            Layer::BatchNorm2d(bn) => {
                f(&format!("{}.gamma", bn.name), &mut bn.gamma);
                f(&format!("{}.beta", bn.name), &mut bn.beta);
            }
            Layer::Residual(body) => visit_params_mut(body, f),
            _ => {}
        }
    }
}

enum InitMode<'a> {
    He(&'a mut Rng),
    Zeros,
}

fn build_layers(plans: &[LayerPlan], init: &mut InitMode) -> Result<Vec<Layer>> {
    let weight = |shape: &[usize], fan_in: usize, init: &mut InitMode| -> Result<FreqParam> {
        match init {
            InitMode::He(rng) => {
                FreqParam::init(shape, (2.0 / fan_in as f64).sqrt(), rng)
            }
            InitMode::Zeros => FreqParam::from_spatial(&Tensor::zeros(shape)?),
        }
    };
    let mut layers = Vec::with_capacity(plans.len());
    for plan in plans {
        layers.push(match plan {
            LayerPlan::FrConv2d {
                name,
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                bias,
            } => {
                let fan_in = in_channels * kernel * kernel;
                Layer::FrConv2d(FrConv2d {
                    name: name.clone(),
                    in_channels: *in_channels,
                    out_channels: *out_channels,
                    kernel: *kernel,
                    stride: *stride,
                    padding: *padding,
                    weight: weight(
                        &[*out_channels, *in_channels, *kernel, *kernel],
                        fan_in,
                        init,
                    )?,
                    bias: if *bias {
                        Some(FreqParam::from_spatial(&Tensor::zeros(&[*out_channels])?)?)
                    } else {
                        None
                    },
                })
            }
            LayerPlan::FrLinear {
                name,
                in_features,
                out_features,
                bias,
            } => Layer::FrLinear(FrLinear {
                name: name.clone(),
                in_features: *in_features,
                out_features: *out_features,
                weight: weight(&[*out_features, *in_features], *in_features, init)?,
                bias: if *bias {
                    Some(FreqParam::from_spatial(&Tensor::zeros(&[*out_features])?)?)
                } else {
                    None
                },
            }),
            LayerPlan::Relu => Layer::Relu,
            LayerPlan::Relu6 => Layer::Relu6,
            LayerPlan::MaxPool2d { kernel, stride } => Layer::MaxPool2d {
                kernel: *kernel,
                stride: *stride,
            },
            LayerPlan::AdaptiveAvgPool2d { out_h, out_w } => Layer::AdaptiveAvgPool2d {
                out_h: *out_h,
                out_w: *out_w,
            },
            LayerPlan::Dropout { p } => {
                if !(0.0..1.0).contains(p) {
                    return Err(Error::Range(format!(
                        "dropout probability must lie in [0,1), got {p}"
                    )));
                }
                Layer::Dropout { p: *p }
            }
            LayerPlan::BatchNorm2d { name, num_features } => Layer::BatchNorm2d(BatchNorm2d {
                name: name.clone(),
                num_features: *num_features,
                eps: 1e-5,
                momentum: 0.1,
                gamma: FreqParam::from_spatial(&Tensor::new(&[*num_features], 1.0)?)?,
                beta: FreqParam::from_spatial(&Tensor::zeros(&[*num_features])?)?,
                running_mean: vec![0.0; *num_features],
                running_var: vec![1.0; *num_features],
            }),
            LayerPlan::Flatten => Layer::Flatten,
            LayerPlan::Residual { body } => Layer::Residual(build_layers(body, init)?),
        });
    }
    Ok(layers)
}

/// An architecture plan with live frequency-domain parameters.
pub struct ModelGraph {
    pub plan: ArchPlan,
    layers: Vec<Layer>,
}

impl ModelGraph {
    /// Builds and He-initializes the model, validating shape compatibility
    /// for the plan's canonical input.
    pub fn build(plan: ArchPlan, rng: &mut Rng) -> Result<ModelGraph> {
        plan.output_shape(&plan.canonical_input())?;
        let layers = build_layers(&plan.layers, &mut InitMode::He(rng))?;
        Ok(ModelGraph { plan, layers })
    }

    /// Builds the model with zeroed parameters (used when a checkpoint is
    /// about to be installed on top).
    pub fn build_uninit(plan: ArchPlan) -> Result<ModelGraph> {
        plan.output_shape(&plan.canonical_input())?;
        let layers = build_layers(&plan.layers, &mut InitMode::Zeros)?;
        Ok(ModelGraph { plan, layers })
    }

    /// Pure inference pass: running batchnorm statistics, no dropout.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        eval_layers(&self.layers, x.clone())
    }

    /// Training pass: batch statistics, live dropout, returns contexts for
    /// [`Self::backward`].
    pub fn forward_train(
        &mut self,
        x: &Tensor,
        rng: &mut Rng,
    ) -> Result<(Tensor, Vec<LayerCtx>)> {
        train_layers(&mut self.layers, x.clone(), rng)
    }

    /// Accumulates frequency-domain parameter gradients and returns the
    /// gradient with respect to the input.
    pub fn backward(
        &self,
        ctxs: &[LayerCtx],
        upstream: Tensor,
        grads: &mut GradStore,
    ) -> Result<Tensor> {
        backward_layers(&self.layers, ctxs, upstream, grads)
    }

    pub fn for_each_param<'a>(&'a self, f: &mut dyn FnMut(String, &'a FreqParam)) {
        visit_params(&self.layers, f);
    }

    pub fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut FreqParam)) {
        visit_params_mut(&mut self.layers, f);
    }

    pub fn named_params(&self) -> Vec<(String, &FreqParam)> {
        let mut out = Vec::new();
        self.for_each_param(&mut |name, p| out.push((name, p)));
        out
    }

    pub fn param_total(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.total()).sum()
    }

    pub fn kept_total(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.keep()).sum()
    }

    /// Plain SGD on the kept coefficients.
    pub fn apply_sgd(&mut self, grads: &GradStore, lr: f64) {
        self.for_each_param_mut(&mut |name, p| {
            if let Some(g) = grads.get(name) {
                p.coeffs_mut().add_scaled(-lr, g);
            }
        });
    }

    /// Writes the parameter checkpoint plus `architecture.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let params = self.named_params();
        checkpoint::save_params(dir, &params)?;
        let json = serde_json::to_string_pretty(&self.plan).expect("plan serializes");
        fs::write(dir.join("architecture.json"), json + "\n")?;
        Ok(())
    }

    /// Rebuilds a model from `architecture.json` plus the parameter files.
    pub fn load(dir: &Path) -> Result<ModelGraph> {
        let text = fs::read_to_string(dir.join("architecture.json"))?;
        let plan: ArchPlan = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("architecture.json: {e}")))?;
        let mut model = ModelGraph::build_uninit(plan)?;
        let mut loaded: BTreeMap<String, FreqParam> =
            checkpoint::load_params(dir)?.into_iter().collect();
        let mut missing = Vec::new();
        model.for_each_param_mut(&mut |name, p| match loaded.remove(name) {
            Some(lp) => *p = lp,
            None => missing.push(name.to_string()),
        });
        if !missing.is_empty() {
            return Err(Error::Integrity(format!(
                "checkpoint lacks parameters: {missing:?}"
            )));
        }
        if !loaded.is_empty() {
            let extra: Vec<&String> = loaded.keys().collect();
            return Err(Error::Integrity(format!(
                "checkpoint has unknown parameters: {extra:?}"
            )));
        }
        // the architecture's parameter shapes must match what was installed
        for (name, p) in model.named_params() {
            let plan_shape = model
                .plan
                .param_shapes()
                .into_iter()
                .find(|(n, _)| *n == name)
                .map(|(_, s)| s);
            if plan_shape.as_deref() != Some(p.spatial_shape()) {
                return Err(Error::Integrity(format!(
                    "{name}: plan shape {plan_shape:?} vs checkpoint {:?}",
                    p.spatial_shape()
                )));
            }
        }
        Ok(model)
    }

    /// Walks layers in eval mode and names the first whose output contains a
    /// non-finite value. Diagnostic for divergence reports.
    pub fn first_nonfinite_layer(&self, x: &Tensor) -> Option<String> {
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            match eval_layers(std::slice::from_ref(layer), cur) {
                Ok(y) => {
                    if !y.data().iter().all(|v| v.is_finite()) {
                        return Some(format!("layer {i}"));
                    }
                    cur = y;
                }
                Err(_) => return Some(format!("layer {i} (failed)")),
            }
        }
        None
    }
}
