use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::layer::Layer;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Tensor};
use crate::seed;

/// Ordered layer stack mapping a `[C,H,W]` image to `L` class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub(crate) layers: Vec<Layer>,
    input_shape: [usize; 3],
    num_classes: usize,
    seed: u64,
    /// `shapes[i]` is the input shape of layer `i`; the last entry is the output.
    shapes: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub labels: Vec<bool>,
}

impl Prediction {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let probabilities: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
        let labels = probabilities.iter().map(|&p| p >= 0.5).collect();
        Self {
            logits,
            probabilities,
            labels,
        }
    }

    pub fn positive_classes(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&c| self.labels[c]).collect()
    }

    /// Class with the largest logit; ties go to the lowest index.
    pub fn top_class(&self) -> usize {
        let mut best = 0;
        for (c, &z) in self.logits.iter().enumerate() {
            if z > self.logits[best] {
                best = c;
            }
        }
        best
    }
}

/// Every intermediate tensor of one forward pass.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    /// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
    activations: Vec<Tensor>,
    argmax: Vec<Option<Vec<usize>>>,
}

impl ActivationTrace {
    pub fn input(&self) -> &Tensor {
        &self.activations[0]
    }

    pub fn layer_input(&self, layer: usize) -> &Tensor {
        &self.activations[layer]
    }

    pub fn layer_output(&self, layer: usize) -> &Tensor {
        &self.activations[layer + 1]
    }

    pub fn logits(&self) -> &[f64] {
        self.activations.last().expect("non-empty trace").data()
    }

    /// Winner indices of a max-pooling layer.
    pub fn argmax(&self, layer: usize) -> Option<&[usize]> {
        self.argmax[layer].as_deref()
    }

    /// Number of traced layers.
    pub fn len(&self) -> usize {
        self.argmax.len()
    }

    pub fn is_empty(&self) -> bool {
        self.argmax.is_empty()
    }
}

/// Gradients of a scalar function of the logits.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub input: Tensor,
    /// `layer_outputs[i]` is the gradient with respect to the output of layer `i`.
    pub layer_outputs: Vec<Tensor>,
}

pub(crate) type ParamGrads = Vec<Option<(Vec<f64>, Vec<f64>)>>;

impl ModelGraph {
    pub fn new(input_shape: [usize; 3], layers: Vec<Layer>, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one layer".into()));
        }
        let mut shapes = vec![input_shape.to_vec()];
        for layer in &layers {
            let next = layer.output_shape(shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        let out = shapes.last().expect("non-empty");
        if out.len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "final layer must produce a logit vector, got {out:?}"
            )));
        }
        let num_classes = out[0];
        Ok(Self {
            layers,
            input_shape,
            num_classes,
            seed,
            shapes,
        })
    }

    /// The reference two-block CNN: conv(16,3×3)/ReLU/maxpool2 →
    /// conv(32,3×3)/ReLU/maxpool2 → global average pool → dense(L), with
    /// freshly initialized parameters.
    pub fn tiny_cnn(input_shape: [usize; 3], num_classes: usize, seed: u64) -> Result<Self> {
        let c = input_shape[0];
        let layers = vec![
            Layer::conv(16, c, 3, 1, 1),
            Layer::Relu,
            Layer::MaxPool { window: 2, stride: 2 },
            Layer::conv(32, 16, 3, 1, 1),
            Layer::Relu,
            Layer::MaxPool { window: 2, stride: 2 },
            Layer::GlobalAvgPool,
            Layer::dense(num_classes, 32),
        ];
        Ok(Self::new(input_shape, layers, seed)?.randomize_parameters(seed))
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layer_input_shape(&self, layer: usize) -> &[usize] {
        &self.shapes[layer]
    }

    pub fn layer_output_shape(&self, layer: usize) -> &[usize] {
        &self.shapes[layer + 1]
    }

    pub fn last_conv_index(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| matches!(l, Layer::Conv(_)))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(|t| t.len()).sum()
    }

    pub fn check_class(&self, class_index: usize) -> Result<()> {
        if class_index >= self.num_classes {
            return Err(Error::InvalidClass {
                index: class_index,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape {
            return Err(Error::ShapeMismatch(format!(
                "model expects {:?}, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor, trace: bool) -> Result<(Prediction, Option<ActivationTrace>)> {
        if trace {
            let t = self.trace(x)?;
            Ok((Prediction::from_logits(t.logits().to_vec()), Some(t)))
        } else {
            Ok((Prediction::from_logits(self.logits(x)?), None))
        }
    }

    pub fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = self.layers[0].forward(x).0;
        for layer in &self.layers[1..] {
            cur = layer.forward(&cur).0;
        }
        Ok(cur.into_data())
    }

    /// Per-class sigmoid probabilities.
    pub fn probabilities(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.logits(x)?.into_iter().map(sigmoid).collect())
    }

    pub fn predict_multilabel(&self, x: &Tensor) -> Result<Prediction> {
        Ok(Prediction::from_logits(self.logits(x)?))
    }

    pub fn trace(&self, x: &Tensor) -> Result<ActivationTrace> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut argmax = Vec::with_capacity(self.layers.len());
        activations.push(x.clone());
        for layer in &self.layers {
            let (out, arg) = layer.forward(activations.last().expect("non-empty"));
            activations.push(out);
            argmax.push(arg);
        }
        Ok(ActivationTrace {
            activations,
            argmax,
        })
    }

    fn check_trace(&self, trace: &ActivationTrace) -> Result<()> {
        if trace.len() != self.layers.len() || trace.input().shape() != self.input_shape {
            return Err(Error::ShapeMismatch("trace does not belong to this model".into()));
        }
        Ok(())
    }

    /// Gradient of the logit of `class_index` with respect to the input and
    /// every layer output.
    pub fn backward(&self, trace: &ActivationTrace, class_index: usize) -> Result<Gradients> {
        self.check_class(class_index)?;
        let mut upstream = vec![0.0; self.num_classes];
        upstream[class_index] = 1.0;
        self.backward_with(trace, &upstream)
    }

    /// Backpropagates an arbitrary upstream gradient over the logits.
    pub fn backward_with(&self, trace: &ActivationTrace, upstream: &[f64]) -> Result<Gradients> {
        self.check_trace(trace)?;
        if upstream.len() != self.num_classes {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient has {} entries for {} classes",
                upstream.len(),
                self.num_classes
            )));
        }
        let n = self.layers.len();
        let mut outputs: Vec<Tensor> = Vec::with_capacity(n);
        let mut grad = upstream.to_vec();
        for i in (0..n).rev() {
            outputs.push(Tensor::new(self.shapes[i + 1].clone(), grad.clone())?);
            grad = self.layers[i].backward_input(
                trace.layer_input(i),
                trace.argmax(i),
                &self.shapes[i + 1],
                &grad,
            );
        }
        outputs.reverse();
        Ok(Gradients {
            input: Tensor::new(self.shapes[0].clone(), grad)?,
            layer_outputs: outputs,
        })
    }

    /// Parameter gradients for an upstream gradient over the logits.
    pub(crate) fn param_gradients(&self, trace: &ActivationTrace, upstream: &[f64]) -> ParamGrads {
        let n = self.layers.len();
        let mut out: ParamGrads = vec![None; n];
        let mut grad = upstream.to_vec();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            out[i] = layer.backward_params(trace.layer_input(i), &grad);
            // The first layer's input gradient is never needed for training.
            if i > 0 {
                grad = layer.backward_input(trace.layer_input(i), trace.argmax(i), &self.shapes[i + 1], &grad);
            }
        }
        out
    }

    /// Copy with every parameter re-drawn from the initialization
    /// distribution: weights `U(±√(6/fan_in))`, biases `U(±1/√fan_in)`.
    pub fn randomize_parameters(&self, seed: u64) -> ModelGraph {
        let mut out = self.clone();
        out.seed = seed;
        for (i, layer) in out.layers.iter_mut().enumerate() {
            if !layer.has_params() {
                continue;
            }
            let fan_in = layer.fan_in().max(1) as f64;
            let bounds = [(6.0 / fan_in).sqrt(), 1.0 / fan_in.sqrt()];
            let mut rng = seed::derived_rng(seed, "init", &[i as u64]);
            for (t, b) in layer.params_mut().into_iter().zip(bounds) {
                let dist = Uniform::new_inclusive(-b, b).expect("finite bound");
                for v in t.data_mut() {
                    *v = quantize(dist.sample(&mut rng));
                }
            }
        }
        out
    }

    /// Copy with zero-mean Gaussian noise of the given std added to every parameter.
    pub fn perturb_parameters(&self, std: f64, seed: u64) -> Result<ModelGraph> {
        if !(std >= 0.0 && std.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise std must be >= 0, got {std}")));
        }
        let mut out = self.clone();
        if std == 0.0 {
            return Ok(out);
        }
        let dist = Normal::new(0.0, std).expect("valid std");
        for (i, layer) in out.layers.iter_mut().enumerate() {
            let mut rng = seed::derived_rng(seed, "perturb", &[i as u64]);
            for t in layer.params_mut() {
                for v in t.data_mut() {
                    *v = quantize(*v + rng.sample(dist));
                }
            }
        }
        Ok(out)
    }

    pub(crate) fn replace_layers(&mut self, layers: Vec<Layer>) {
        debug_assert_eq!(layers.len(), self.layers.len());
        self.layers = layers;
    }
}

/// Parameters are kept at single precision so a saved model reloads exactly.
pub(crate) fn quantize(v: f64) -> f64 {
    v as f32 as f64
}
