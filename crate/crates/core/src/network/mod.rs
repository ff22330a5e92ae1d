//! Declarative CNN construction, forward/backward execution and SGD.

mod train;
mod weights;

pub use train::{
    argmax, classifier_loss, detector_loss, train_classifier, train_detector, ClassSample,
    DetectSample, TrainConfig, TrainReport,
};
pub use weights::{load_weights, save_weights, WeightsError, WEIGHTS_MAGIC, WEIGHTS_VERSION};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detect::GridSpec;
use crate::error::{Error, Result};
use crate::layers::{
    conv2d_backward, conv2d_forward, elu, elu_backward, fc_backward, fc_forward, maxpool2d_backward,
    maxpool2d_forward, softmax, window_output, ConvParams, PoolRecord,
};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn default_stride() -> usize {
    1
}

fn default_input_shape() -> Vec<usize> {
    vec![3, crate::vision::FRAME_SIZE, crate::vision::FRAME_SIZE]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        /// Optional declared input depth, checked during shape propagation.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        in_channels: Option<usize>,
    },
    Maxpool {
        size: usize,
        stride: usize,
    },
    Elu {
        a: f64,
    },
    Flatten,
    Fc {
        units: usize,
    },
    /// Terminal layer emitting class probabilities.
    SoftmaxHead,
    /// Terminal layer reshaping a flat vector into an `[S,S,B·5+C]` grid.
    DetectHead {
        grid: usize,
        boxes: usize,
        classes: usize,
    },
}

impl LayerSpec {
    fn is_head(&self) -> bool {
        matches!(self, LayerSpec::SoftmaxHead | LayerSpec::DetectHead { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub name: String,
    #[serde(default = "default_input_shape")]
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub class_labels: Vec<String>,
}

/// What the final layer of a config produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Classifier { classes: usize },
    Detector(GridSpec),
    /// No head: the raw output of the last layer.
    Features,
}

const NAMED: &[(&str, &str)] = &[
    ("paper-7conv", include_str!("../../configs/paper-7conv.json")),
    ("baseline-9conv", include_str!("../../configs/baseline-9conv.json")),
    ("toy-classifier", include_str!("../../configs/toy-classifier.json")),
    ("toy-detector", include_str!("../../configs/toy-detector.json")),
];

impl NetworkConfig {
    /// One of the shipped configurations.
    pub fn named(name: &str) -> Result<Self> {
        let (_, src) = NAMED
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::InvalidInput(format!("no shipped config named {name:?}")))?;
        Self::from_json(src.as_bytes())
    }

    pub fn shipped_names() -> impl Iterator<Item = &'static str> {
        NAMED.iter().map(|(n, _)| *n)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }

    /// Compact serialization with fixed key order; the fingerprint is taken over it.
    pub fn canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("config serialization is infallible")
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.canonical_json()).into()
    }

    /// Propagates `input_shape` through every layer; returns the shape after each.
    ///
    /// Fails with [`Error::InvalidConfig`] naming the first offending layer.
    pub fn shape_plan(&self) -> Result<Vec<Vec<usize>>> {
        let bad = |index: usize, reason: String| Error::InvalidConfig { index, reason };
        if self.input_shape.is_empty() || self.input_shape.iter().any(|&d| d == 0) {
            return Err(bad(0, format!("invalid input shape {:?}", self.input_shape)));
        }
        if !self.layers.iter().any(|l| matches!(l, LayerSpec::Conv { .. })) {
            return Err(bad(0, "network needs at least one conv layer".into()));
        }
        let classes = self.class_labels.len();
        let mut shape = self.input_shape.clone();
        let mut plan = Vec::with_capacity(self.layers.len());
        for (index, layer) in self.layers.iter().enumerate() {
            if layer.is_head() && index + 1 != self.layers.len() {
                return Err(bad(index, "head layers must come last".into()));
            }
            let chw = |shape: &[usize]| match *shape {
                [c, h, w] => Ok((c, h, w)),
                _ => Err(bad(index, format!("expects [C,H,W] input, got {shape:?}"))),
            };
            shape = match *layer {
                LayerSpec::Conv { filters, kernel, stride, padding, in_channels } => {
                    let (c, h, w) = chw(&shape)?;
                    if in_channels.is_some_and(|want| want != c) {
                        return Err(bad(
                            index,
                            format!("conv declares {} input channels but receives {c}", in_channels.unwrap_or(0)),
                        ));
                    }
                    if filters == 0 {
                        return Err(bad(index, "conv needs at least one filter".into()));
                    }
                    match (window_output(h, kernel, stride, padding), window_output(w, kernel, stride, padding)) {
                        (Some(oh), Some(ow)) => vec![filters, oh, ow],
                        _ => {
                            return Err(bad(
                                index,
                                format!("kernel {kernel} stride {stride} padding {padding} does not fit {h}x{w}"),
                            ))
                        }
                    }
                }
                LayerSpec::Maxpool { size, stride } => {
                    let (c, h, w) = chw(&shape)?;
                    match (window_output(h, size, stride, 0), window_output(w, size, stride, 0)) {
                        (Some(oh), Some(ow)) => vec![c, oh, ow],
                        _ => return Err(bad(index, format!("pool {size}/{stride} does not fit {h}x{w}"))),
                    }
                }
                LayerSpec::Elu { a } => {
                    if !(a >= 0.0) || !a.is_finite() {
                        return Err(bad(index, format!("ELU a must be >= 0, got {a}")));
                    }
                    shape
                }
                LayerSpec::Flatten => vec![shape.iter().product()],
                LayerSpec::Fc { units } => {
                    if shape.len() != 1 {
                        return Err(bad(index, format!("fc expects a flat input, got {shape:?}")));
                    }
                    if units == 0 {
                        return Err(bad(index, "fc needs at least one unit".into()));
                    }
                    vec![units]
                }
                LayerSpec::SoftmaxHead => {
                    if shape != [classes] {
                        return Err(bad(
                            index,
                            format!("softmax head expects [{classes}] scores, got {shape:?}"),
                        ));
                    }
                    shape
                }
                LayerSpec::DetectHead { grid, boxes, classes: c } => {
                    let spec = GridSpec { s: grid, boxes, classes: c };
                    if grid == 0 || boxes == 0 || c == 0 {
                        return Err(bad(index, "detect head needs positive grid, boxes and classes".into()));
                    }
                    if c != classes {
                        return Err(bad(index, format!("detect head has {c} classes but {classes} labels")));
                    }
                    let need = grid * grid * spec.depth();
                    if shape != [need] {
                        return Err(bad(index, format!("detect head expects [{need}], got {shape:?}")));
                    }
                    spec.shape().to_vec()
                }
            };
            plan.push(shape.clone());
        }
        Ok(plan)
    }

    pub fn head(&self) -> HeadKind {
        match self.layers.last() {
            Some(LayerSpec::SoftmaxHead) => HeadKind::Classifier {
                classes: self.class_labels.len(),
            },
            Some(&LayerSpec::DetectHead { grid, boxes, classes }) => HeadKind::Detector(GridSpec {
                s: grid,
                boxes,
                classes,
            }),
            _ => HeadKind::Features,
        }
    }

    /// Replaces the `a` of every ELU layer.
    pub fn with_elu_a(mut self, a: f64) -> Self {
        for l in &mut self.layers {
            if let LayerSpec::Elu { a: old } = l {
                *old = a;
            }
        }
        self
    }

    /// `(height, width)` of the expected input frame.
    pub fn input_hw(&self) -> Option<(usize, usize)> {
        match *self.input_shape {
            [_, h, w] => Some((h, w)),
            _ => None,
        }
    }
}

/// Learnable parameters of one layer. Parameter-free layers hold `None`.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<T: Scalar> {
    None,
    Conv(ConvParams<T>),
    Fc { weights: Tensor<T>, bias: Tensor<T> },
}

impl<T: Scalar> LayerParams<T> {
    /// Weight then bias, for parameterised layers.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        match self {
            LayerParams::None => vec![],
            LayerParams::Conv(p) => vec![&p.weights, &p.bias],
            LayerParams::Fc { weights, bias } => vec![weights, bias],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            LayerParams::None => vec![],
            LayerParams::Conv(p) => vec![&mut p.weights, &mut p.bias],
            LayerParams::Fc { weights, bias } => vec![weights, bias],
        }
    }

    fn zeros_like(&self) -> Self {
        let z = |t: &Tensor<T>| Tensor::zeros(t.shape()).expect("shape already validated");
        match self {
            LayerParams::None => LayerParams::None,
            LayerParams::Conv(p) => LayerParams::Conv(ConvParams {
                weights: z(&p.weights),
                bias: z(&p.bias),
                stride: p.stride,
                padding: p.padding,
            }),
            LayerParams::Fc { weights, bias } => LayerParams::Fc {
                weights: z(weights),
                bias: z(bias),
            },
        }
    }
}

/// Gradients with the same layout as a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T: Scalar> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Self {
            layers: net.params.iter().map(LayerParams::zeros_like).collect(),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| l.tensors())
    }

    /// `self += other`
    pub fn accumulate(&mut self, other: &Grads<T>) -> Result<()> {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            let (ta, tb) = (a.tensors_mut(), b.tensors());
            if ta.len() != tb.len() {
                return Err(Error::ShapeMismatch("gradient layouts differ".into()));
            }
            for (x, y) in ta.into_iter().zip(tb) {
                if x.shape() != y.shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "gradient shapes differ: {:?} vs {:?}",
                        x.shape(),
                        y.shape()
                    )));
                }
                for (u, &v) in x.data_mut().iter_mut().zip(y.data()) {
                    *u += v;
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, k: T) {
        for l in &mut self.layers {
            for t in l.tensors_mut() {
                for v in t.data_mut() {
                    *v *= k;
                }
            }
        }
    }
}

/// Per-layer intermediate state retained by [`Network::forward`] for backprop.
#[derive(Debug, Clone)]
pub struct Trace<T: Scalar> {
    /// Input to each layer, in layer order.
    pub inputs: Vec<Tensor<T>>,
    /// Max-pool source positions, for pooling layers.
    pub pools: Vec<Option<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Scalar> {
    config: NetworkConfig,
    params: Vec<LayerParams<T>>,
    plan: Vec<Vec<usize>>,
}

/// Builds a network with the seeded Glorot-uniform initialisation; biases are zero.
pub fn build_network<T: Scalar>(config: &NetworkConfig, seed: u64) -> Result<Network<T>> {
    let mut rng = SplitMix64::new(seed);
    Network::with_init(config, |fan_in, fan_out, n| {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        (0..n).map(|_| T::from_f64(rng.uniform(-limit, limit))).collect()
    })
}

impl<T: Scalar> Network<T> {
    /// Network with every parameter set to zero.
    pub fn zeroed(config: &NetworkConfig) -> Result<Self> {
        Self::with_init(config, |_, _, n| vec![T::ZERO; n])
    }

    fn with_init(config: &NetworkConfig, mut init: impl FnMut(usize, usize, usize) -> Vec<T>) -> Result<Self> {
        let plan = config.shape_plan()?;
        let mut params = Vec::with_capacity(config.layers.len());
        let mut in_shape = &config.input_shape;
        for (layer, out_shape) in config.layers.iter().zip(&plan) {
            params.push(match *layer {
                LayerSpec::Conv { filters, kernel, stride, padding, .. } => {
                    let c = in_shape[0];
                    let area = kernel * kernel;
                    let w = init(c * area, filters * area, filters * c * area);
                    LayerParams::Conv(ConvParams::new(
                        Tensor::from_vec(&[filters, c, kernel, kernel], w)?,
                        Tensor::zeros(&[filters])?,
                        stride,
                        padding,
                    )?)
                }
                LayerSpec::Fc { units } => {
                    let n = in_shape[0];
                    let w = init(n, units, units * n);
                    LayerParams::Fc {
                        weights: Tensor::from_vec(&[units, n], w)?,
                        bias: Tensor::zeros(&[units])?,
                    }
                }
                _ => LayerParams::None,
            });
            in_shape = out_shape;
        }
        Ok(Self {
            config: config.clone(),
            params,
            plan,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[LayerParams<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.params
    }

    pub fn output_shape(&self) -> &[usize] {
        self.plan.last().map_or(&self.config.input_shape, |s| s)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().flat_map(|p| p.tensors()).map(|t| t.len()).sum()
    }

    pub fn head(&self) -> HeadKind {
        self.config.head()
    }

    /// Copies parameters of the leading layers whose shapes agree with `other`.
    ///
    /// Returns the number of layers copied. Used to start a detector from a
    /// trained classifier that shares its convolutional prefix.
    pub fn load_prefix(&mut self, other: &Network<T>) -> usize {
        let mut copied = 0;
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            let same = mine.tensors().len() == theirs.tensors().len()
                && mine.tensors().iter().zip(theirs.tensors()).all(|(a, b)| a.shape() == b.shape());
            if !same {
                break;
            }
            *mine = theirs.clone();
            copied += 1;
        }
        copied
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        if input.shape() != self.config.input_shape.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "network {} expects input {:?}, got {:?}",
                self.config.name,
                self.config.input_shape,
                input.shape()
            )));
        }
        Ok(())
    }

    fn apply(&self, index: usize, x: Tensor<T>) -> Result<(Tensor<T>, Option<Vec<usize>>)> {
        let out = match (&self.config.layers[index], &self.params[index]) {
            (LayerSpec::Conv { .. }, LayerParams::Conv(p)) => conv2d_forward(&x, p)?,
            (&LayerSpec::Maxpool { size, stride }, _) => {
                let PoolRecord { output, argmax } = maxpool2d_forward(&x, size, stride)?;
                return Ok((output, Some(argmax)));
            }
            (&LayerSpec::Elu { a }, _) => elu(&x, T::from_f64(a))?,
            (LayerSpec::Flatten, _) => {
                let n = x.len();
                x.into_reshaped(&[n])?
            }
            (LayerSpec::Fc { .. }, LayerParams::Fc { weights, bias }) => fc_forward(&x, weights, bias)?,
            (LayerSpec::SoftmaxHead, _) => Tensor::from_vec(x.shape(), softmax(x.data()))?,
            (LayerSpec::DetectHead { .. }, _) => x.into_reshaped(&self.plan[index])?,
            _ => unreachable!("parameters are built from the same config"),
        };
        Ok((out, None))
    }

    /// Runs the network and keeps every layer input for [`Network::backward`].
    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Trace<T>)> {
        self.check_input(input)?;
        let n = self.config.layers.len();
        let mut trace = Trace {
            inputs: Vec::with_capacity(n),
            pools: Vec::with_capacity(n),
        };
        let mut x = input.clone();
        for index in 0..n {
            trace.inputs.push(x.clone());
            let (y, pool) = self.apply(index, x)?;
            trace.pools.push(pool);
            x = y;
        }
        Ok((x, trace))
    }

    /// Forward pass without retaining intermediates.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let mut x = input.clone();
        for index in 0..self.config.layers.len() {
            x = self.apply(index, x)?.0;
        }
        Ok(x)
    }

    /// Output of the layer just below the head (logits or flat grid), plus trace.
    pub(crate) fn forward_to_head(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Trace<T>)> {
        let (out, mut trace) = self.forward(input)?;
        if self.config.layers.last().is_some_and(LayerSpec::is_head) {
            let pre = trace.inputs.pop().expect("non-empty trace");
            trace.pools.pop();
            return Ok((pre, trace));
        }
        Ok((out, trace))
    }

    /// Backpropagates `grad_output` (gradient w.r.t. the network output).
    pub fn backward(&self, trace: &Trace<T>, grad_output: &Tensor<T>) -> Result<Grads<T>> {
        if grad_output.shape() != self.output_shape() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?} does not match output {:?}",
                grad_output.shape(),
                self.output_shape()
            )));
        }
        self.backprop(trace, trace.inputs.len(), grad_output.clone())
    }

    /// Backpropagates through layers `[0, upto)` given the gradient of layer `upto − 1`'s output.
    pub(crate) fn backprop(&self, trace: &Trace<T>, upto: usize, mut grad: Tensor<T>) -> Result<Grads<T>> {
        if trace.inputs.len() < upto {
            return Err(Error::ShapeMismatch("trace shorter than network".into()));
        }
        let mut grads = Grads::zeros_like(self);
        for index in (0..upto).rev() {
            let x = &trace.inputs[index];
            grad = match (&self.config.layers[index], &self.params[index]) {
                (LayerSpec::Conv { .. }, LayerParams::Conv(p)) => {
                    let g = conv2d_backward(x, p, &grad)?;
                    grads.layers[index] = LayerParams::Conv(ConvParams {
                        weights: g.weights,
                        bias: g.bias,
                        stride: p.stride,
                        padding: p.padding,
                    });
                    g.input
                }
                (LayerSpec::Maxpool { .. }, _) => {
                    let argmax = trace.pools[index]
                        .clone()
                        .ok_or_else(|| Error::ShapeMismatch("pool trace missing".into()))?;
                    let record = PoolRecord {
                        output: Tensor::zeros(grad.shape())?,
                        argmax,
                    };
                    maxpool2d_backward(&record, &grad, x.shape())?
                }
                (&LayerSpec::Elu { a }, _) => elu_backward(x, T::from_f64(a), &grad)?,
                (LayerSpec::Flatten, _) | (LayerSpec::DetectHead { .. }, _) => grad.into_reshaped(x.shape())?,
                (LayerSpec::Fc { .. }, LayerParams::Fc { weights, .. }) => {
                    let g = fc_backward(x, weights, &grad)?;
                    grads.layers[index] = LayerParams::Fc {
                        weights: g.weights,
                        bias: g.bias,
                    };
                    g.input
                }
                (LayerSpec::SoftmaxHead, _) => {
                    // dp_k/dz_j = p_k(δ_kj − p_j)
                    let p = softmax(x.data());
                    let dot: T = p.iter().zip(grad.data()).map(|(&pk, &gk)| pk * gk).sum();
                    let g = p.iter().zip(grad.data()).map(|(&pj, &gj)| pj * (gj - dot)).collect();
                    Tensor::from_vec(x.shape(), g)?
                }
                _ => unreachable!("parameters are built from the same config"),
            };
        }
        Ok(grads)
    }

    /// `p ← p − lr·g` for every parameter.
    pub fn sgd_step(&mut self, grads: &Grads<T>, learning_rate: f64) -> Result<()> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::InvalidHyperparameter(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        let lr = T::from_f64(learning_rate);
        for (p, g) in self.params.iter_mut().zip(&grads.layers) {
            let (tp, tg) = (p.tensors_mut(), g.tensors());
            if tp.len() != tg.len() {
                return Err(Error::ShapeMismatch("gradient layout does not match parameters".into()));
            }
            for (w, d) in tp.into_iter().zip(tg) {
                if w.shape() != d.shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "gradient {:?} does not match parameter {:?}",
                        d.shape(),
                        w.shape()
                    )));
                }
                for (wv, &dv) in w.data_mut().iter_mut().zip(d.data()) {
                    *wv -= lr * dv;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(layers: Vec<LayerSpec>, input: Vec<usize>, labels: usize) -> NetworkConfig {
        NetworkConfig {
            name: "tiny".into(),
            input_shape: input,
            layers,
            class_labels: (0..labels).map(|i| format!("c{i}")).collect(),
        }
    }

    fn conv(filters: usize, kernel: usize) -> LayerSpec {
        LayerSpec::Conv { filters, kernel, stride: 1, padding: 0, in_channels: None }
    }

    #[test]
    fn shipped_configs_parse_and_propagate() {
        for name in NetworkConfig::shipped_names() {
            let c = NetworkConfig::named(name).unwrap();
            assert_eq!(c.name, name);
            c.shape_plan().unwrap();
        }
        assert!(NetworkConfig::named("nope").is_err());
    }

    #[test]
    fn paper_7conv_reaches_13x13_grid() {
        let c = NetworkConfig::named("paper-7conv").unwrap();
        let plan = c.shape_plan().unwrap();
        let convs = c.layers.iter().filter(|l| matches!(l, LayerSpec::Conv { .. })).count();
        assert_eq!(convs, 7);
        assert_eq!(plan.last().unwrap(), &vec![13, 13, 2 * 5 + 3]);
        assert_eq!(c.head(), HeadKind::Detector(GridSpec { s: 13, boxes: 2, classes: 3 }));
    }

    #[test]
    fn channel_mismatch_names_layer() {
        let declared = LayerSpec::Conv { filters: 2, kernel: 3, stride: 1, padding: 1, in_channels: Some(3) };
        let c = tiny(vec![conv(16, 3), declared], vec![3, 8, 8], 2);
        match c.shape_plan() {
            Err(Error::InvalidConfig { index: 1, .. }) => {}
            other => panic!("expected invalid config at 1, got {other:?}"),
        }
        let c = tiny(vec![LayerSpec::Flatten, LayerSpec::Fc { units: 2 }], vec![1, 4, 4], 2);
        assert!(matches!(c.shape_plan(), Err(Error::InvalidConfig { index: 0, .. })));
    }

    #[test]
    fn head_must_be_last() {
        let c = tiny(
            vec![conv(1, 1), LayerSpec::Flatten, LayerSpec::SoftmaxHead, LayerSpec::Elu { a: 1.0 }],
            vec![1, 1, 2],
            2,
        );
        assert!(matches!(c.shape_plan(), Err(Error::InvalidConfig { index: 2, .. })));
    }

    #[test]
    fn same_seed_same_bytes() {
        let c = NetworkConfig::named("toy-detector").unwrap();
        let a: Network<f32> = build_network(&c, 9).unwrap();
        let b: Network<f32> = build_network(&c, 9).unwrap();
        let d: Network<f32> = build_network(&c, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, d);
    }

    #[test]
    fn init_respects_glorot_limit() {
        let c = tiny(vec![conv(4, 3), LayerSpec::Flatten, LayerSpec::Fc { units: 3 }], vec![2, 5, 5], 3);
        let net: Network<f64> = build_network(&c, 1).unwrap();
        let LayerParams::Conv(p) = &net.params()[0] else { panic!() };
        let lim = (6.0f64 / (2 * 9 + 4 * 9) as f64).sqrt();
        assert!(p.weights.data().iter().all(|v| v.abs() <= lim));
        assert!(p.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_net_gives_zero_output() {
        let c = tiny(vec![conv(3, 3), LayerSpec::Elu { a: 1.0 }, conv(2, 1)], vec![2, 6, 6], 0);
        let net = Network::<f64>::zeroed(&c).unwrap();
        let out = net.infer(&Tensor::zeros(&[2, 6, 6]).unwrap()).unwrap();
        assert_eq!(out.shape(), &[2, 4, 4]);
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert!(matches!(net.infer(&Tensor::zeros(&[2, 6, 7]).unwrap()), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn sgd_arithmetic() {
        let c = tiny(vec![conv(1, 1)], vec![1, 1, 1], 0);
        let mut net = Network::<f64>::zeroed(&c).unwrap();
        net.params_mut()[0].tensors_mut()[0].data_mut()[0] = 1.0;
        let mut g = Grads::zeros_like(&net);
        let before = net.clone();
        net.sgd_step(&g, 0.1).unwrap();
        assert_eq!(net, before);
        g.layers[0].tensors_mut()[0].data_mut()[0] = 0.5;
        net.sgd_step(&g, 0.1).unwrap();
        assert_eq!(net.params()[0].tensors()[0].data()[0], 0.95);
        assert!(matches!(net.sgd_step(&g, 0.0), Err(Error::InvalidHyperparameter(_))));
        assert!(matches!(net.sgd_step(&g, -1.0), Err(Error::InvalidHyperparameter(_))));
    }

    #[test]
    fn sgd_decreases_convex_quadratic() {
        // loss = (w·x − y)² / 2 for a single 1×1 conv weight
        let c = tiny(vec![conv(1, 1)], vec![1, 1, 1], 0);
        let mut net = Network::<f64>::zeroed(&c).unwrap();
        let x = Tensor::from_vec(&[1, 1, 1], vec![2.0]).unwrap();
        let loss = |net: &Network<f64>| {
            let y = net.infer(&x).unwrap().data()[0];
            0.5 * (y - 3.0) * (y - 3.0)
        };
        let before = loss(&net);
        let (out, trace) = net.forward(&x).unwrap();
        let g = Tensor::from_vec(&[1, 1, 1], vec![out.data()[0] - 3.0]).unwrap();
        let grads = net.backward(&trace, &g).unwrap();
        net.sgd_step(&grads, 0.1).unwrap();
        assert!(loss(&net) < before);
    }

    #[test]
    fn prefix_transfer() {
        let cls = NetworkConfig::named("toy-classifier").unwrap();
        let mut det_cfg = NetworkConfig::named("toy-detector").unwrap();
        det_cfg.layers.truncate(3);
        det_cfg.layers.extend([LayerSpec::Flatten, LayerSpec::Fc { units: 5 }]);
        let src: Network<f32> = build_network(&cls, 1).unwrap();
        let mut dst: Network<f32> = build_network(&det_cfg, 2).unwrap();
        assert_eq!(dst.load_prefix(&src), 3);
        assert_eq!(dst.params()[0], src.params()[0]);
    }

    #[test]
    fn elu_override() {
        let c = NetworkConfig::named("toy-classifier").unwrap().with_elu_a(0.5);
        assert!(c.layers.iter().all(|l| !matches!(l, LayerSpec::Elu { a } if *a != 0.5)));
        assert_ne!(c.fingerprint(), NetworkConfig::named("toy-classifier").unwrap().fingerprint());
    }
}
