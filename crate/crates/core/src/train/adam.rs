use super::TrainError;
use crate::model::ModelWeights;
use crate::tensor::Scalar;

/// Step decay: `base * gamma^floor(epoch / interval)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub gamma: f64,
    pub interval: usize,
    pub total_epochs: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base: 1e-4,
            gamma: 0.1,
            interval: 100,
            total_epochs: 120,
        }
    }
}

impl LrSchedule {
    /// Learning rate for the zero-based `epoch`.
    pub fn lr(&self, epoch: usize) -> f64 {
        self.base * self.gamma.powi((epoch / self.interval.max(1)) as i32)
    }

    /// The same schedule compressed to `epochs` total: the decay point moves
    /// to `round(epochs * interval / total_epochs)`.
    pub fn scaled_to(&self, epochs: usize) -> LrSchedule {
        if epochs >= self.total_epochs || self.total_epochs == 0 {
            return *self;
        }
        let interval = ((epochs * self.interval) as f64 / self.total_epochs as f64).round() as usize;
        LrSchedule {
            interval: interval.max(1),
            total_epochs: epochs,
            ..*self
        }
    }

    /// Constant learning rate `base` for `epochs` epochs.
    pub fn constant(base: f64, epochs: usize) -> LrSchedule {
        LrSchedule {
            base,
            gamma: 1.0,
            interval: epochs.max(1),
            total_epochs: epochs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// First and second moment buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub params: AdamParams,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new<S: Scalar>(weights: &ModelWeights<S>, params: AdamParams) -> Self {
        let zeros = || weights.params().iter().map(|p| vec![0.0; p.numel()]).collect::<Vec<_>>();
        AdamState {
            params,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One update from the gradients stored on `weights`: decoupled weight
/// decay, then the bias-corrected Adam step. Arithmetic is in f64; the
/// result is rounded once to the parameter type.
pub fn adam_step<S: Scalar>(weights: &mut ModelWeights<S>, state: &mut AdamState, lr: f64) -> Result<(), TrainError> {
    if !(lr > 0.0) {
        return Err(TrainError::Config(format!("learning rate must be positive, got {lr}")));
    }
    if let Some(p) = weights.params().iter().find(|p| p.tensor.grad().is_none()) {
        return Err(TrainError::MissingGradient(p.name.clone()));
    }
    if state.m.len() != weights.params().len() {
        return Err(TrainError::Config("optimizer state does not match the model".into()));
    }
    let AdamParams {
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.params;
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for (i, p) in weights.params_mut().iter_mut().enumerate() {
        let grad: Vec<f64> = p.tensor.grad().expect("checked above").iter().map(|g| g.as_f64()).collect();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.tensor.data_mut().iter_mut().enumerate() {
            let g = grad[j];
            let mut theta = w.as_f64();
            theta -= lr * weight_decay * theta;
            m[j] = beta1 * m[j] + (1.0 - beta1) * g;
            v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
            theta -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            *w = S::from_f64(theta);
        }
    }
    Ok(())
}
