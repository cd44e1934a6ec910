use serde::{Deserialize, Serialize};

use super::model::{Gradients, MlpModel};
use super::{NnError, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Multiply the learning rate by `factor` every `every` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub every: u64,
    pub factor: f64,
}

#[derive(Debug, Clone)]
struct Moments {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

/// Optimizer hyper-parameters plus whatever running state the update rule needs.
/// Parameters are visited in model order, weight before bias.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    learning_rate: f64,
    decay: Option<StepDecay>,
    step: u64,
    moments: Option<Moments>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, model: &MlpModel) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(NnError::Options(format!("learning rate {learning_rate} must be positive")));
        }
        let moments = match kind {
            OptimizerKind::Sgd => None,
            OptimizerKind::Adam => {
                let shapes: Vec<Vec<f64>> = model
                    .layers()
                    .iter()
                    .flat_map(|l| [vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]])
                    .collect();
                Some(Moments {
                    first: shapes.clone(),
                    second: shapes,
                })
            }
        };
        Ok(Self {
            kind,
            learning_rate,
            decay: None,
            step: 0,
            moments,
        })
    }

    pub fn with_step_decay(mut self, decay: StepDecay) -> Result<Self> {
        if decay.every == 0 || !(decay.factor > 0.0 && decay.factor.is_finite()) {
            return Err(NnError::Options(format!("invalid step decay {decay:?}")));
        }
        self.decay = Some(decay);
        Ok(self)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Learning rate that the next call to [`OptimizerState::step`] will use.
    pub fn current_learning_rate(&self) -> f64 {
        match self.decay {
            Some(d) => self.learning_rate * d.factor.powi((self.step / d.every) as i32),
            None => self.learning_rate,
        }
    }

    pub fn has_moments(&self) -> bool {
        self.moments.is_some()
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != model.layers().len() {
            return Err(NnError::Shape("gradient/model layer count mismatch".into()));
        }
        for (l, g) in model.layers().iter().zip(&grads.layers) {
            if l.weight.shape() != g.weight.shape() || l.bias.len() != g.bias.len() {
                return Err(NnError::Shape(format!("gradient shape mismatch in layer {}", l.name)));
            }
        }
        let lr = self.current_learning_rate();
        self.step += 1;
        let t = self.step as i32;
        match &mut self.moments {
            None => {
                for (layer, g) in model.layers_mut().iter_mut().zip(&grads.layers) {
                    sgd(layer.weight.as_mut_slice(), g.weight.as_slice(), lr);
                    sgd(&mut layer.bias, &g.bias, lr);
                }
            }
            Some(m) => {
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                let pairs = m.first.chunks_exact_mut(2).zip(m.second.chunks_exact_mut(2));
                for ((layer, g), (first, second)) in model.layers_mut().iter_mut().zip(&grads.layers).zip(pairs) {
                    let ([mw, mb], [vw, vb]) = (first, second) else {
                        unreachable!("moments come in weight/bias pairs")
                    };
                    adam(layer.weight.as_mut_slice(), g.weight.as_slice(), mw, vw, lr, c1, c2);
                    adam(&mut layer.bias, &g.bias, mb, vb, lr, c1, c2);
                }
            }
        }
        Ok(())
    }
}

fn sgd(w: &mut [f64], g: &[f64], lr: f64) {
    w.iter_mut().zip(g).for_each(|(w, g)| *w -= lr * g);
}

fn adam(w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, c1: f64, c2: f64) {
    for (((w, g), m), v) in w.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
}
