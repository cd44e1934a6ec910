use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{NnError, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};

/// Layer widths of the 784-300-100-10 fully connected MNIST network.
pub const LENET_300_100: [usize; 4] = [784, 300, 100, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

/// Dense layer computing `act(x W + b)` with `W` stored `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
}

impl MlpModel {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(NnError::Shape("model needs at least one layer".into()));
        }
        for l in &layers {
            if l.bias.len() != l.fan_out() {
                return Err(NnError::Shape(format!(
                    "layer {} has {} biases for fan-out {}",
                    l.name,
                    l.bias.len(),
                    l.fan_out()
                )));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(NnError::Shape(format!(
                    "layer {} outputs {} but layer {} expects {}",
                    pair[0].name,
                    pair[0].fan_out(),
                    pair[1].name,
                    pair[1].fan_in()
                )));
            }
        }
        let mut names: Vec<&str> = layers.iter().map(|l| l.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(NnError::Shape("layer names must be unique".into()));
        }
        Ok(Self { layers })
    }

    /// Fully connected network over `widths` with layers named `fc1`, `fc2`, ...
    ///
    /// Weights are drawn uniformly from `±sqrt(6 / (fan_in + fan_out))`, biases
    /// start at zero, hidden layers use ReLU and the output layer is linear.
    pub fn with_topology(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(NnError::Shape(format!("invalid topology {widths:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit);
                let data = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
                Layer {
                    name: format!("fc{}", i + 1),
                    weight: Matrix::new(fan_in, fan_out, data).expect("finite init"),
                    bias: vec![0.0; fan_out],
                    activation: if i + 1 == depth {
                        Activation::None
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn lenet_300_100(seed: u64) -> Self {
        Self::with_topology(&LENET_300_100, seed).expect("static topology is valid")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to the layers. Replacing a weight with one of a different
    /// shape breaks the model; use [`MlpModel::set_weight`] for checked updates.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn set_weight(&mut self, name: &str, weight: Matrix) -> Result<()> {
        let layer = self
            .layers
            .iter_mut()
            .find(|l| l.name == name)
            .ok_or_else(|| NnError::Shape(format!("no layer named {name}")))?;
        if layer.weight.shape() != weight.shape() {
            return Err(NnError::Shape(format!(
                "layer {name} is {:?}, replacement is {:?}",
                layer.weight.shape(),
                weight.shape()
            )));
        }
        layer.weight = weight;
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }
}

/// Post-activation outputs of every layer; `activations[0]` is the input batch
/// and the last entry holds the logits.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub activations: Vec<Matrix>,
}

impl ForwardCache {
    pub fn logits(&self) -> &Matrix {
        self.activations.last().expect("cache holds at least the input")
    }
}

pub fn forward(model: &MlpModel, batch: &Matrix) -> Result<ForwardCache> {
    if batch.cols() != model.input_width() {
        return Err(NnError::Shape(format!(
            "batch has {} features, model expects {}",
            batch.cols(),
            model.input_width()
        )));
    }
    let mut activations = Vec::with_capacity(model.layers.len() + 1);
    activations.push(batch.clone());
    for layer in &model.layers {
        let mut z = matmul(activations.last().expect("non-empty"), &layer.weight)?;
        for i in 0..z.rows() {
            let row = z.row_mut(i);
            row.iter_mut().zip(&layer.bias).for_each(|(v, b)| *v += b);
            if layer.activation == Activation::Relu {
                row.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        activations.push(z);
    }
    Ok(ForwardCache { activations })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients with the same layout as the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(NnError::Shape(format!(
            "{} labels for a batch of {rows}",
            labels.len()
        )));
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(NnError::Label { row, label, classes });
    }
    Ok(())
}

/// Writes `softmax(row) - onehot(label)` into `row` and returns `-log softmax(row)[label]`.
fn softmax_xent_row(row: &mut [f64], label: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted_label = row[label] - max;
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
    row[label] -= 1.0;
    sum.ln() - shifted_label
}

fn mean_xent(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let mut delta = logits.clone();
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| softmax_xent_row(delta.row_mut(i), label))
        .sum();
    (total / labels.len() as f64, delta)
}

/// Mean softmax cross-entropy without gradients.
pub fn loss(model: &MlpModel, batch: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(labels, batch.rows(), model.output_width())?;
    let cache = forward(model, batch)?;
    Ok(mean_xent(cache.logits(), labels).0)
}

/// Mean softmax cross-entropy over the batch and its gradient with respect to
/// every weight and bias.
pub fn loss_and_backward(model: &MlpModel, batch: &Matrix, labels: &[usize]) -> Result<(f64, Gradients)> {
    check_labels(labels, batch.rows(), model.output_width())?;
    let cache = forward(model, batch)?;
    let (loss, mut delta) = mean_xent(cache.logits(), labels);
    let inv_b = 1.0 / batch.rows() as f64;
    delta.as_mut_slice().iter_mut().for_each(|v| *v *= inv_b);

    let depth = model.layers.len();
    let mut grads: Vec<Option<LayerGrad>> = vec![None; depth];
    for l in (0..depth).rev() {
        let input = &cache.activations[l];
        let weight = matmul_tn(input, &delta)?;
        let mut bias = vec![0.0; delta.cols()];
        for i in 0..delta.rows() {
            bias.iter_mut().zip(delta.row(i)).for_each(|(b, d)| *b += d);
        }
        grads[l] = Some(LayerGrad { weight, bias });
        if l > 0 {
            let mut prev = matmul_nt(&delta, &model.layers[l].weight)?;
            if model.layers[l - 1].activation == Activation::Relu {
                prev.as_mut_slice()
                    .iter_mut()
                    .zip(input.as_slice())
                    .for_each(|(d, a)| {
                        if *a <= 0.0 {
                            *d = 0.0
                        }
                    });
            }
            delta = prev;
        }
    }
    Ok((
        loss,
        Gradients {
            layers: grads.into_iter().map(|g| g.expect("filled")).collect(),
        },
    ))
}
