//! Network architectures and their flat parameter vectors.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Stream};
use crate::{Error, Result};

/// Hyperparameters of the two-block 1-D CNN detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub dropout: [f64; 2],
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            conv1_filters: 64,
            conv2_filters: 128,
            kernel: 3,
            hidden: 128,
            dropout: [0.2, 0.5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// conv → relu → maxpool → dropout, twice, then flatten → dense+relu
    /// (the embedding) → dense → log-softmax (the head).
    Cnn(CnnConfig),
    /// dense+relu embedding followed by a dense head; for small tests.
    Mlp { hidden: usize },
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::Cnn(CnnConfig::default())
    }
}

/// Activation shape in channels-last layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub len: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(len: usize, channels: usize) -> Self {
        Shape { len, channels }
    }

    pub const fn width(&self) -> usize {
        self.len * self.channels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerKind {
    /// Stride 1, zero "same" padding.
    Conv1d { kernel: usize },
    Relu,
    /// Window 2, stride 2, trailing odd element dropped.
    MaxPool,
    Dropout { rate: f64 },
    Flatten,
    Dense,
    LogSoftmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub kind: LayerKind,
    pub input: Shape,
    pub output: Shape,
    pub param_offset: usize,
    pub param_len: usize,
}

impl LayerDesc {
    /// Weight count; the biases follow the weights in the flat vector.
    pub fn weight_len(&self) -> usize {
        match self.kind {
            LayerKind::Conv1d { kernel } => self.output.channels * kernel * self.input.channels,
            LayerKind::Dense => self.output.width() * self.input.width(),
            _ => 0,
        }
    }

    fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv1d { kernel } => kernel * self.input.channels,
            LayerKind::Dense => self.input.width(),
            _ => 0,
        }
    }
}

/// A network's architecture plus its flat parameter vector ω.
///
/// ω is the embedding section φ followed by the head section c. Layers up to
/// and including the hidden dense layer and its ReLU form φ; the final dense
/// layer and log-softmax form c.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub num_classes: usize,
    pub layout: Vec<LayerDesc>,
    /// Number of layers (from the front of `layout`) that make up φ.
    pub embedding_layers: usize,
    pub embedding_len: usize,
    pub weights: Vec<f64>,
}

impl ModelParams {
    /// Total parameter count m.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn embedding_section(&self) -> &[f64] {
        &self.weights[..self.embedding_len]
    }

    pub fn head_section(&self) -> &[f64] {
        &self.weights[self.embedding_len..]
    }

    pub fn embedding_section_mut(&mut self) -> &mut [f64] {
        &mut self.weights[..self.embedding_len]
    }

    pub fn head_section_mut(&mut self) -> &mut [f64] {
        let split = self.embedding_len;
        &mut self.weights[split..]
    }

    /// Prototype dimensionality d.
    pub fn embedding_dim(&self) -> usize {
        self.layout[self.embedding_layers - 1].output.width()
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.layout == other.layout && self.embedding_layers == other.embedding_layers && self.weights.len() == other.weights.len()
    }

    pub(crate) fn embedding_layout(&self) -> &[LayerDesc] {
        &self.layout[..self.embedding_layers]
    }
}

struct LayoutBuilder {
    layers: Vec<LayerDesc>,
    shape: Shape,
    params: usize,
}

impl LayoutBuilder {
    fn push(&mut self, kind: LayerKind, output: Shape, param_len: usize) {
        self.layers.push(LayerDesc {
            kind,
            input: self.shape,
            output,
            param_offset: self.params,
            param_len,
        });
        self.shape = output;
        self.params += param_len;
    }

    fn conv(&mut self, filters: usize, kernel: usize) {
        let out = Shape::new(self.shape.len, filters);
        let n = filters * kernel * self.shape.channels + filters;
        self.push(LayerKind::Conv1d { kernel }, out, n);
    }

    fn dense(&mut self, units: usize) {
        let n = units * self.shape.width() + units;
        self.push(LayerKind::Dense, Shape::new(1, units), n);
    }

    fn simple(&mut self, kind: LayerKind) {
        let out = match kind {
            LayerKind::MaxPool => Shape::new(self.shape.len / 2, self.shape.channels),
            LayerKind::Flatten => Shape::new(1, self.shape.width()),
            _ => self.shape,
        };
        self.push(kind, out, 0);
    }
}

fn layout_for(architecture: &Architecture, input_dim: usize, num_classes: usize) -> (Vec<LayerDesc>, usize, usize) {
    let mut b = LayoutBuilder {
        layers: Vec::new(),
        shape: Shape::new(input_dim, 1),
        params: 0,
    };
    match architecture {
        Architecture::Cnn(cfg) => {
            b.conv(cfg.conv1_filters, cfg.kernel);
            b.simple(LayerKind::Relu);
            b.simple(LayerKind::MaxPool);
            b.simple(LayerKind::Dropout { rate: cfg.dropout[0] });
            b.conv(cfg.conv2_filters, cfg.kernel);
            b.simple(LayerKind::Relu);
            b.simple(LayerKind::MaxPool);
            b.simple(LayerKind::Dropout { rate: cfg.dropout[1] });
            b.simple(LayerKind::Flatten);
            b.dense(cfg.hidden);
            b.simple(LayerKind::Relu);
        }
        Architecture::Mlp { hidden } => {
            b.simple(LayerKind::Flatten);
            b.dense(*hidden);
            b.simple(LayerKind::Relu);
        }
    }
    let embedding_layers = b.layers.len();
    let embedding_len = b.params;
    b.dense(num_classes);
    b.simple(LayerKind::LogSoftmax);
    (b.layers, embedding_layers, embedding_len)
}

/// Builds the default CNN detector with a seeded initialization.
pub fn build_model(input_dim: usize, num_classes: usize, seed: u64) -> Result<ModelParams> {
    build_model_with(Architecture::default(), input_dim, num_classes, seed)
}

/// Builds `architecture` with fan-in scaled uniform initialization:
/// every weight and bias of a layer is drawn from `U(-1/√fan_in, 1/√fan_in)`.
pub fn build_model_with(architecture: Architecture, input_dim: usize, num_classes: usize, seed: u64) -> Result<ModelParams> {
    if num_classes < 2 {
        return Err(Error::invalid("num_classes", "need at least 2 classes"));
    }
    match architecture {
        Architecture::Cnn(cfg) => {
            if input_dim < 4 {
                return Err(Error::invalid("input_dim", "the CNN needs at least 4 features to pool twice"));
            }
            if cfg.kernel == 0 || cfg.kernel % 2 == 0 {
                return Err(Error::invalid("kernel", "kernel size must be odd"));
            }
            if cfg.conv1_filters == 0 || cfg.conv2_filters == 0 || cfg.hidden == 0 {
                return Err(Error::invalid("architecture", "layer widths must be positive"));
            }
            if cfg.dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
                return Err(Error::invalid("dropout", "rates must lie in [0, 1)"));
            }
        }
        Architecture::Mlp { hidden } => {
            if input_dim == 0 || hidden == 0 {
                return Err(Error::invalid("input_dim", "dimensions must be positive"));
            }
        }
    }

    let (layout, embedding_layers, embedding_len) = layout_for(&architecture, input_dim, num_classes);
    let total: usize = layout.iter().map(|l| l.param_len).sum();
    let mut weights = Vec::with_capacity(total);
    let mut rng = rng::stream(seed, Stream::Init, 0);
    for layer in layout.iter().filter(|l| l.param_len > 0) {
        let bound = 1.0 / libm::sqrt(layer.fan_in() as f64);
        for _ in 0..layer.param_len {
            weights.push(rng.random_range(-bound..bound));
        }
    }
    Ok(ModelParams {
        architecture,
        input_dim,
        num_classes,
        layout,
        embedding_layers,
        embedding_len,
        weights,
    })
}

/// One plain SGD update `ω' = ω − η·g`.
pub fn sgd_step(model: &ModelParams, gradient: &[f64], learning_rate: f64) -> Result<ModelParams> {
    let mut next = model.clone();
    sgd_step_in_place(&mut next, gradient, learning_rate)?;
    Ok(next)
}

pub fn sgd_step_in_place(model: &mut ModelParams, gradient: &[f64], learning_rate: f64) -> Result<()> {
    if !(learning_rate >= 0.0) || !learning_rate.is_finite() {
        return Err(Error::invalid("learning_rate", "must be finite and non-negative"));
    }
    if gradient.len() != model.len() {
        return Err(Error::dims("gradient", model.len(), gradient.len()));
    }
    for (w, g) in model.weights.iter_mut().zip(gradient) {
        *w -= learning_rate * g;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_matches_detector() {
        let model = build_model(16, 9, 7).unwrap();
        let kinds: Vec<_> = model.layout.iter().map(|l| l.kind).collect();
        assert_eq!(
            kinds,
            vec![
                LayerKind::Conv1d { kernel: 3 },
                LayerKind::Relu,
                LayerKind::MaxPool,
                LayerKind::Dropout { rate: 0.2 },
                LayerKind::Conv1d { kernel: 3 },
                LayerKind::Relu,
                LayerKind::MaxPool,
                LayerKind::Dropout { rate: 0.5 },
                LayerKind::Flatten,
                LayerKind::Dense,
                LayerKind::Relu,
                LayerKind::Dense,
                LayerKind::LogSoftmax,
            ]
        );
        assert_eq!(model.layout[0].output, Shape::new(16, 64));
        assert_eq!(model.layout[4].output, Shape::new(8, 128));
        assert_eq!(model.layout[8].output, Shape::new(1, 512));
        assert_eq!(model.embedding_dim(), 128);
        assert_eq!(model.embedding_layers, 11);
        // conv1 + conv2 + dense(128) | dense(9)
        let embedding = (64 * 3 + 64) + (128 * 3 * 64 + 128) + (128 * 512 + 128);
        assert_eq!(model.embedding_len, embedding);
        assert_eq!(model.head_section().len(), 9 * 128 + 9);
        assert_eq!(model.len(), model.embedding_section().len() + model.head_section().len());
    }

    #[test]
    fn build_is_seed_deterministic() {
        let a = build_model(16, 9, 7).unwrap();
        let b = build_model(16, 9, 7).unwrap();
        let c = build_model(16, 9, 8).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn build_rejects_small_inputs() {
        assert!(build_model(2, 9, 0).is_err());
        assert!(build_model(16, 1, 0).is_err());
        assert!(build_model(4, 2, 0).is_ok());
        assert!(build_model(5, 2, 0).is_ok());
    }

    #[test]
    fn init_respects_fan_in_bounds() {
        let model = build_model(16, 9, 3).unwrap();
        for layer in model.layout.iter().filter(|l| l.param_len > 0) {
            let bound = 1.0 / (layer.fan_in() as f64).sqrt();
            let section = &model.weights[layer.param_offset..layer.param_offset + layer.param_len];
            assert!(section.iter().all(|w| w.abs() <= bound));
        }
    }

    #[test]
    fn sgd_step_is_linear() {
        let model = build_model_with(Architecture::Mlp { hidden: 4 }, 3, 2, 1).unwrap();
        let g: Vec<f64> = (0..model.len()).map(|i| (i as f64 * 0.37).sin()).collect();

        assert_eq!(sgd_step(&model, &g, 0.0).unwrap().weights, model.weights);

        let own = model.weights.clone();
        assert!(sgd_step(&model, &own, 1.0).unwrap().weights.iter().all(|w| *w == 0.0));

        let twice = sgd_step(&sgd_step(&model, &g, 0.1).unwrap(), &g, 0.1).unwrap();
        let once = sgd_step(&model, &g, 0.2).unwrap();
        for (a, b) in twice.weights.iter().zip(&once.weights) {
            assert!((a - b).abs() < 1e-12);
        }

        assert!(sgd_step(&model, &g, -0.1).is_err());
        assert!(sgd_step(&model, &g[1..], 0.1).is_err());
    }
}
