use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::arch::{layer_specs, LayerSpec, ModelConfig};
use super::ModelError;
use crate::tensor::{ParamTensor, Scalar, Tensor};

/// Initial PReLU negative slope.
const PRELU_INIT: f64 = 0.25;

/// Parameters of one model, ordered as its layer inventory.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<S: Scalar = f32> {
    config: ModelConfig,
    layers: Vec<LayerSpec>,
    /// First parameter slot of each layer.
    slots: Vec<usize>,
    params: Vec<ParamTensor<S>>,
}

fn param_layout(layers: &[LayerSpec]) -> Vec<(String, [usize; 4])> {
    let mut out = Vec::new();
    for l in layers {
        out.push((format!("{}.weight", l.path), l.weight_dims()));
        out.push((format!("{}.bias", l.path), [1, l.out_channels, 1, 1]));
        if l.prelu {
            out.push((format!("{}.prelu", l.path), [1, l.out_channels, 1, 1]));
        }
    }
    out
}

fn slot_table(layers: &[LayerSpec]) -> Vec<usize> {
    layers
        .iter()
        .scan(0usize, |next, l| {
            let s = *next;
            *next += 2 + l.prelu as usize;
            Some(s)
        })
        .collect()
}

impl<S: Scalar> ModelWeights<S> {
    /// Seeded initialization: He-normal conv weights (variance 2/fan_in),
    /// zero biases, PReLU slopes 0.25. The final fusion conv starts at zero,
    /// so a fresh model is the identity filter.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let layers = layer_specs(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for l in &layers {
            let dims = l.weight_dims();
            let numel: usize = dims.iter().product();
            let weight = if l.path == "fuse.conv" {
                vec![S::zero(); numel]
            } else {
                let normal = Normal::new(0.0, (2.0 / l.fan_in() as f64).sqrt()).expect("positive std");
                (0..numel).map(|_| S::from_f64(normal.sample(&mut rng))).collect()
            };
            params.push(ParamTensor::new(format!("{}.weight", l.path), Tensor::from_vec(dims, weight)?));
            params.push(ParamTensor::new(
                format!("{}.bias", l.path),
                Tensor::zeros([1, l.out_channels, 1, 1]),
            ));
            if l.prelu {
                params.push(ParamTensor::new(
                    format!("{}.prelu", l.path),
                    Tensor::full([1, l.out_channels, 1, 1], S::from_f64(PRELU_INIT)),
                ));
            }
        }
        let slots = slot_table(&layers);
        Ok(ModelWeights {
            config,
            layers,
            slots,
            params,
        })
    }

    /// Wraps externally supplied parameters after checking names and shapes
    /// against the configuration's inventory.
    pub fn from_params(config: ModelConfig, params: Vec<ParamTensor<S>>) -> Result<Self, ModelError> {
        config.validate()?;
        let layers = layer_specs(&config);
        let layout = param_layout(&layers);
        if layout.len() != params.len() {
            return Err(ModelError::Params(format!(
                "{} expects {} parameter tensors, got {}",
                config.variant,
                layout.len(),
                params.len()
            )));
        }
        let mut params = params;
        for ((name, dims), p) in layout.iter().zip(params.iter_mut()) {
            if &p.name != name {
                return Err(ModelError::Params(format!("expected parameter {name:?}, found {:?}", p.name)));
            }
            if p.shape().dims() != *dims {
                return Err(ModelError::Params(format!(
                    "parameter {name:?} has shape {}, expected {:?}",
                    p.shape(),
                    dims
                )));
            }
            p.tensor.set_requires_grad(true);
        }
        let slots = slot_table(&layers);
        Ok(ModelWeights {
            config,
            layers,
            slots,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn set_qp_tag(&mut self, qp: u8) {
        self.config.qp_tag = qp;
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[ParamTensor<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamTensor<S>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&ParamTensor<S>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut ParamTensor<S>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Layer spec and its first parameter slot.
    pub fn layer(&self, path: &str) -> Result<(&LayerSpec, usize), ModelError> {
        self.layers
            .iter()
            .position(|l| l.path == path)
            .map(|i| (&self.layers[i], self.slots[i]))
            .ok_or_else(|| ModelError::UnknownLayer {
                name: path.to_string(),
                valid: self.layers.iter().map(|l| l.path.clone()).collect(),
            })
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    pub fn cast<T: Scalar>(&self) -> ModelWeights<T> {
        ModelWeights {
            config: self.config,
            layers: self.layers.clone(),
            slots: self.slots.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
        }
    }
}
