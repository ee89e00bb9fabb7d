//! Architecture descriptions, parameter containers and whole-model
//! forward/backward passes.

use super::element::Element;
use super::layers::{self, ParamGrads};
use super::NnError;
use crate::imaging::SAMPLE_SIZE;
use crate::numerics::{Prng, Tensor};

/// Every preset consumes one 50×50 grayscale channel.
pub const INPUT_SHAPE: [usize; 3] = [1, SAMPLE_SIZE, SAMPLE_SIZE];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv3x3 { in_channels: usize, out_channels: usize },
    MaxPool2x2,
    Flatten,
    Dense { in_features: usize, out_features: usize },
    Relu,
    SoftmaxOutput { classes: usize },
}

impl LayerSpec {
    pub fn is_parametric(&self) -> bool {
        matches!(self, Self::Conv3x3 { .. } | Self::Dense { .. })
    }

    /// `(weights shape, bias shape)` for parametric layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            Self::Conv3x3 { in_channels, out_channels } => {
                Some((vec![out_channels, in_channels, 3, 3], vec![out_channels]))
            }
            Self::Dense { in_features, out_features } => {
                Some((vec![out_features, in_features], vec![out_features]))
            }
            _ => None,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            Self::Conv3x3 { in_channels, .. } => in_channels * 9,
            Self::Dense { in_features, .. } => in_features,
            _ => 0,
        }
    }

    /// Output shape for one sample of shape `input` (no batch axis).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let bad = |why: &str| {
            Err(NnError::InvalidConfig(format!(
                "{self:?} cannot take input {input:?}: {why}"
            )))
        };
        match (*self, input) {
            (Self::Conv3x3 { in_channels, out_channels }, &[c, h, w]) => {
                if c != in_channels {
                    return bad("channel count");
                }
                Ok(vec![out_channels, h, w])
            }
            (Self::MaxPool2x2, &[c, h, w]) => {
                if h < 2 || w < 2 {
                    return bad("spatial size below 2");
                }
                Ok(vec![c, h / 2, w / 2])
            }
            (Self::Flatten, s) => Ok(vec![s.iter().product()]),
            (Self::Dense { in_features, out_features }, &[f]) => {
                if f != in_features {
                    return bad("feature count");
                }
                Ok(vec![out_features])
            }
            (Self::Relu, s) => Ok(s.to_vec()),
            (Self::SoftmaxOutput { classes }, &[f]) => {
                if f != classes {
                    return bad("class count");
                }
                Ok(vec![classes])
            }
            _ => bad("rank"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

pub const PRESETS: [&str; 3] = ["vgg16", "vgg19", "vgg_small"];

fn conv_blocks(blocks: &[&[usize]]) -> (Vec<LayerSpec>, usize) {
    let mut layers = Vec::new();
    let mut channels = INPUT_SHAPE[0];
    for block in blocks {
        for &out in *block {
            layers.push(LayerSpec::Conv3x3 { in_channels: channels, out_channels: out });
            layers.push(LayerSpec::Relu);
            channels = out;
        }
        layers.push(LayerSpec::MaxPool2x2);
    }
    (layers, channels)
}

fn spatial_after_pools(pools: usize) -> usize {
    (0..pools).fold(SAMPLE_SIZE, |s, _| s / 2)
}

fn with_head(mut layers: Vec<LayerSpec>, features: usize, hidden: &[usize], classes: usize) -> Vec<LayerSpec> {
    layers.push(LayerSpec::Flatten);
    let mut width = features;
    for &h in hidden {
        layers.push(LayerSpec::Dense { in_features: width, out_features: h });
        layers.push(LayerSpec::Relu);
        width = h;
    }
    layers.push(LayerSpec::Dense { in_features: width, out_features: classes });
    layers.push(LayerSpec::SoftmaxOutput { classes });
    layers
}

pub fn build_preset(name: &str, num_classes: usize) -> Result<ModelConfig, NnError> {
    if num_classes < 2 {
        return Err(NnError::InvalidConfig(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    let (blocks, hidden): (Vec<&[usize]>, &[usize]) = match name {
        "vgg16" => (
            vec![&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]],
            &[4096, 4096],
        ),
        "vgg19" => (
            vec![
                &[64, 64],
                &[128, 128],
                &[256, 256, 256, 256],
                &[512, 512, 512, 512],
                &[512, 512, 512, 512],
            ],
            &[4096, 4096],
        ),
        "vgg_small" => (vec![&[8, 8], &[16, 16], &[32, 32]], &[128]),
        other => return Err(NnError::UnknownPreset(other.to_string())),
    };
    let (convs, channels) = conv_blocks(&blocks);
    let s = spatial_after_pools(blocks.len());
    let layers = with_head(convs, channels * s * s, hidden, num_classes);
    let config = ModelConfig {
        name: name.to_string(),
        layers,
        num_classes,
    };
    config.validate()?;
    Ok(config)
}

impl ModelConfig {
    /// Flatten followed by a single dense layer; the smallest model the
    /// engine can express.
    pub fn linear(num_classes: usize) -> Self {
        Self {
            name: "linear".into(),
            layers: with_head(Vec::new(), INPUT_SHAPE.iter().product(), &[], num_classes),
            num_classes,
        }
    }

    /// Per-layer output shapes for one `[1, 50, 50]` sample.
    pub fn trace_shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shape = INPUT_SHAPE.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer.output_shape(&shape)?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        match self.layers.last() {
            Some(LayerSpec::SoftmaxOutput { classes }) if *classes == self.num_classes => {}
            _ => {
                return Err(NnError::InvalidConfig(format!(
                    "last layer must be softmax_output over {} classes",
                    self.num_classes
                )))
            }
        }
        self.trace_shapes().map(|_| ())
    }

    pub fn parametric_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| l.is_parametric())
    }

    pub fn count(&self, pred: impl Fn(&LayerSpec) -> bool) -> usize {
        self.layers.iter().filter(|l| pred(l)).count()
    }

    pub fn num_parameters(&self) -> usize {
        self.parametric_layers()
            .filter_map(|l| l.param_shapes())
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T: Element = f32> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Weights and biases of every parametric layer, in declaration order.
/// Gradients share this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Element = f32> {
    pub layers: Vec<LayerParams<T>>,
}

pub type Gradients<T = f32> = ModelParams<T>;

impl<T: Element> ModelParams<T> {
    pub fn zeros_like(config: &ModelConfig) -> Self {
        Self {
            layers: config
                .parametric_layers()
                .filter_map(|l| l.param_shapes())
                .map(|(w, b)| LayerParams {
                    weights: Tensor::zeros(&w),
                    bias: Tensor::zeros(&b),
                })
                .collect(),
        }
    }

    /// Every tensor in order: layer 0 weights, layer 0 bias, layer 1 weights…
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    pub fn cast<U: Element>(&self) -> ModelParams<U> {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: l.weights.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }

    pub fn check_against(&self, config: &ModelConfig) -> Result<(), NnError> {
        let shapes: Vec<_> = config.parametric_layers().filter_map(|l| l.param_shapes()).collect();
        if shapes.len() != self.layers.len() {
            return Err(NnError::ShapeMismatch(format!(
                "config has {} parametric layers, params have {}",
                shapes.len(),
                self.layers.len()
            )));
        }
        for (i, ((w, b), p)) in shapes.iter().zip(&self.layers).enumerate() {
            if p.weights.shape() != w.as_slice() || p.bias.shape() != b.as_slice() {
                return Err(NnError::ShapeMismatch(format!(
                    "parametric layer {i}: expected {w:?}/{b:?}, got {:?}/{:?}",
                    p.weights.shape(),
                    p.bias.shape()
                )));
            }
        }
        Ok(())
    }
}

/// He-normal weights, `N(0, sqrt(2 / fan_in))`, zero biases.
pub fn he_init(config: &ModelConfig, seed: u64) -> ModelParams {
    let mut rng = Prng::new(seed);
    let mut params = ModelParams::<f32>::zeros_like(config);
    for (spec, layer) in config.parametric_layers().zip(params.layers.iter_mut()) {
        let std = (2.0 / spec.fan_in() as f64).sqrt();
        for pair in layer.weights.data_mut().chunks_mut(2) {
            let (a, b) = rng.normal_pair();
            pair[0] = (a * std) as f32;
            if let Some(v) = pair.get_mut(1) {
                *v = (b * std) as f32;
            }
        }
    }
    params
}

enum Saved<T: Element> {
    Input(Tensor<T>),
    Pool { argmax: Vec<usize>, input_shape: Vec<usize> },
    Shape(Vec<usize>),
    Nothing,
}

/// Activations kept by [`model_forward`] for the backward pass.
pub struct ForwardCache<T: Element = f32> {
    saved: Vec<Saved<T>>,
}

impl<T: Element> ForwardCache<T> {
    /// Every ReLU mask and pooling route taken by the forward pass. Two
    /// evaluations with equal patterns lie on the same linear piece of the
    /// network, where the loss is smooth in the parameters.
    pub(crate) fn activation_pattern(&self, config: &ModelConfig) -> Vec<u64> {
        let mut out = Vec::new();
        for (spec, saved) in config.layers.iter().zip(&self.saved) {
            match (spec, saved) {
                (LayerSpec::Relu, Saved::Input(x)) => {
                    for chunk in x.data().chunks(64) {
                        let bits = chunk
                            .iter()
                            .enumerate()
                            .fold(0u64, |acc, (i, &v)| acc | (u64::from(v > T::zero()) << i));
                        out.push(bits);
                    }
                }
                (LayerSpec::MaxPool2x2, Saved::Pool { argmax, .. }) => {
                    out.extend(argmax.iter().map(|&i| i as u64));
                }
                _ => {}
            }
        }
        out
    }
}

fn run_forward<T: Element>(
    config: &ModelConfig,
    params: &ModelParams<T>,
    batch: &Tensor<T>,
    keep: bool,
) -> Result<(Tensor<T>, ForwardCache<T>), NnError> {
    params.check_against(config)?;
    let mut x = batch.clone();
    let mut saved = Vec::with_capacity(if keep { config.layers.len() } else { 0 });
    let mut p = params.layers.iter();
    for spec in &config.layers {
        let (next, s) = match *spec {
            LayerSpec::Conv3x3 { .. } => {
                let lp = p.next().expect("checked");
                let y = layers::conv3x3(&x, &lp.weights, &lp.bias)?;
                (y, Saved::Input(x))
            }
            LayerSpec::Dense { .. } => {
                let lp = p.next().expect("checked");
                let y = layers::dense(&x, &lp.weights, &lp.bias)?;
                (y, Saved::Input(x))
            }
            LayerSpec::Relu => (layers::relu(&x), Saved::Input(x)),
            LayerSpec::MaxPool2x2 => {
                let input_shape = x.shape().to_vec();
                let out = layers::maxpool2x2(&x)?;
                (out.output, Saved::Pool { argmax: out.argmax, input_shape })
            }
            LayerSpec::Flatten => {
                let shape = x.shape().to_vec();
                let n = shape.first().copied().unwrap_or(0);
                let features = shape[1..].iter().product();
                (x.reshape(&[n, features]).expect("same size"), Saved::Shape(shape))
            }
            LayerSpec::SoftmaxOutput { classes } => {
                if x.shape().len() != 2 || x.shape()[1] != classes {
                    return Err(NnError::ShapeMismatch(format!(
                        "softmax_output expects [N,{classes}], got {:?}",
                        x.shape()
                    )));
                }
                (x, Saved::Nothing)
            }
        };
        if keep {
            saved.push(s);
        }
        x = next;
    }
    Ok((x, ForwardCache { saved }))
}

/// Logits `[N, classes]` plus the cache needed by [`model_backward`].
pub fn model_forward<T: Element>(
    config: &ModelConfig,
    params: &ModelParams<T>,
    batch: &Tensor<T>,
) -> Result<(Tensor<T>, ForwardCache<T>), NnError> {
    run_forward(config, params, batch, true)
}

/// Logits only; intermediate activations are dropped as soon as possible.
pub fn predict<T: Element>(
    config: &ModelConfig,
    params: &ModelParams<T>,
    batch: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    run_forward(config, params, batch, false).map(|(y, _)| y)
}

pub fn model_backward<T: Element>(
    config: &ModelConfig,
    params: &ModelParams<T>,
    cache: ForwardCache<T>,
    grad_logits: Tensor<T>,
) -> Result<Gradients<T>, NnError> {
    if cache.saved.len() != config.layers.len() {
        return Err(NnError::ShapeMismatch(
            "forward cache does not match config (was it built by predict?)".into(),
        ));
    }
    let mut grads: Vec<Option<LayerParams<T>>> = vec![None; params.layers.len()];
    let mut param_idx = params.layers.len();
    // The input gradient of the very first parametric layer is never needed.
    let first_param = config.layers.iter().position(|l| l.is_parametric());
    let mut g = grad_logits;
    for (li, (spec, saved)) in config.layers.iter().zip(cache.saved).enumerate().rev() {
        let need_input = first_param.is_some_and(|f| li > f);
        g = match (spec, saved) {
            (LayerSpec::Conv3x3 { .. } | LayerSpec::Dense { .. }, Saved::Input(x)) => {
                param_idx -= 1;
                let lp = &params.layers[param_idx];
                let ParamGrads { input, weights, bias } = if matches!(spec, LayerSpec::Conv3x3 { .. }) {
                    layers::conv3x3_backward(&x, &lp.weights, &g, need_input)?
                } else {
                    layers::dense_backward(&x, &lp.weights, &g, need_input)?
                };
                grads[param_idx] = Some(LayerParams { weights, bias });
                match input {
                    Some(dx) => dx,
                    None => break,
                }
            }
            (LayerSpec::Relu, Saved::Input(x)) => layers::relu_backward(&x, &g)?,
            (LayerSpec::MaxPool2x2, Saved::Pool { argmax, input_shape }) => {
                layers::maxpool2x2_backward(&g, &argmax, &input_shape)?
            }
            (LayerSpec::Flatten, Saved::Shape(shape)) => g
                .reshape(&shape)
                .map_err(|e| NnError::ShapeMismatch(e.to_string()))?,
            (LayerSpec::SoftmaxOutput { .. }, Saved::Nothing) => g,
            _ => unreachable!("cache entries are produced per layer kind"),
        };
    }
    Ok(ModelParams {
        layers: grads
            .into_iter()
            .map(|g| g.expect("every parametric layer visited"))
            .collect(),
    })
}
