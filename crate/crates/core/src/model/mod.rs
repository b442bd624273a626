//! RRNet and its baseline variants built on the autodiff tape.
//!
//! Every network is described by an ordered list of [`LayerSpec`]s. The
//! same list creates the parameters, names them, and is walked by the
//! forward pass, so weight files, inventories and taps always agree.

mod arch;
mod weights;

pub use arch::{layer_specs, LayerKind, LayerSpec, ModelConfig, Variant, EDSR_CHANNELS};
pub use weights::ModelWeights;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{finite_difference, uniform, Coords, GradCheckReport, Scalar, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("{variant} expects {expected} input plane(s), got {got}")]
    Arity {
        variant: Variant,
        expected: usize,
        got: usize,
    },
    #[error("spatial size {h}x{w} is not divisible by 4")]
    Spatial { h: usize, w: usize },
    #[error("unknown layer {name:?}; valid layers: {}", valid.join(", "))]
    UnknownLayer { name: String, valid: Vec<String> },
    #[error("parameter mismatch: {0}")]
    Params(String),
}

/// Result of one forward pass: the filtered plane (normalized domain) and
/// every named activation on the tape.
#[derive(Debug, Clone)]
pub struct Forward {
    pub output: Var,
    pub taps: Vec<(String, Var)>,
    pub skip_adds: usize,
}

impl Forward {
    pub fn tap(&self, name: &str) -> Option<Var> {
        self.taps.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn tap_names(&self) -> Vec<String> {
        self.taps.iter().map(|(n, _)| n.clone()).collect()
    }
}

struct Builder<'a, S: Scalar> {
    tape: &'a mut Tape<S>,
    weights: &'a ModelWeights<S>,
    taps: Vec<(String, Var)>,
    skip_adds: usize,
}

impl<S: Scalar> Builder<'_, S> {
    fn layer(&mut self, path: &str, x: Var) -> Result<Var, ModelError> {
        let (spec, slot) = self.weights.layer(path)?;
        let params = self.weights.params();
        let w = self.tape.param(&params[slot], slot);
        let b = self.tape.param(&params[slot + 1], slot + 1);
        let mut y = match spec.kind {
            LayerKind::Conv => self.tape.conv2d(x, w, b, spec.stride, spec.pad)?,
            LayerKind::TransposedConv => self.tape.transposed_conv2d(x, w, b, spec.stride, spec.pad)?,
        };
        if spec.prelu {
            let a = self.tape.param(&params[slot + 2], slot + 2);
            y = self.tape.prelu(y, a)?;
        }
        self.taps.push((path.to_string(), y));
        Ok(y)
    }

    fn tap(&mut self, name: String, v: Var) {
        self.taps.push((name, v));
    }

    /// conv1 + PReLU, three two-conv residual blocks, conv8 + PReLU.
    fn residual_stack(&mut self, prefix: &str, x: Var) -> Result<Var, ModelError> {
        let mut h = self.layer(&format!("{prefix}.conv1"), x)?;
        for i in 1..=3 {
            let a = self.layer(&format!("{prefix}.block{i}.conv_a"), h)?;
            let b = self.layer(&format!("{prefix}.block{i}.conv_b"), a)?;
            h = self.tape.add(b, h)?;
            self.skip_adds += 1;
            self.tap(format!("{prefix}.block{i}"), h);
        }
        self.layer(&format!("{prefix}.conv8"), h)
    }

    /// Encoder-decoder with pre-pool skips.
    fn reconstruction_branch(&mut self, z: Var) -> Result<Var, ModelError> {
        let s = self.tape.try_value(z)?.shape();
        if s.h % 4 != 0 || s.w % 4 != 0 {
            return Err(ModelError::Spatial { h: s.h, w: s.w });
        }
        let s1 = self.layer("rec.conv1", z)?;
        let p1 = self.tape.maxpool2x2(s1)?;
        self.tap("rec.pool1".into(), p1);
        let s2 = self.layer("rec.conv2", p1)?;
        let p2 = self.tape.maxpool2x2(s2)?;
        self.tap("rec.pool2".into(), p2);
        let c3 = self.layer("rec.conv3", p2)?;
        let u1 = self.layer("rec.tconv1", c3)?;
        let c4 = self.layer("rec.conv4", u1)?;
        let j2 = self.tape.concat_channels(c4, s2)?;
        self.tap("rec.concat2".into(), j2);
        let u2 = self.layer("rec.tconv2", j2)?;
        let c5 = self.layer("rec.conv5", u2)?;
        let j1 = self.tape.concat_channels(c5, s1)?;
        self.tap("rec.concat1".into(), j1);
        self.layer("rec.conv6", j1)
    }

    /// Final 3x3 conv to one channel plus the global skip.
    fn fuse(&mut self, features: Var, recon: Var) -> Result<Var, ModelError> {
        let f = self.layer("fuse.conv", features)?;
        let out = self.tape.add(f, recon)?;
        self.tap("output".into(), out);
        Ok(out)
    }
}

/// Runs the variant's network on already-taped inputs. `recon` is the
/// normalized reconstruction `(N,1,H,W)`; `aux` is the residual (RRNET,
/// DUAL_EDSR) or partition mean mask (PARTITION_RECON), absent for
/// RECON_ONLY_EDSR.
pub fn variant_forward<S: Scalar>(
    tape: &mut Tape<S>,
    weights: &ModelWeights<S>,
    recon: Var,
    aux: Option<Var>,
) -> Result<Forward, ModelError> {
    let variant = weights.config().variant;
    let got = 1 + aux.is_some() as usize;
    if got != variant.arity() {
        return Err(ModelError::Arity {
            variant,
            expected: variant.arity(),
            got,
        });
    }
    let zs = tape.try_value(recon)?.shape();
    if let Some(a) = aux {
        let s = tape.try_value(a)?.shape();
        if s != zs {
            return Err(ModelError::Config(format!("auxiliary plane {s} does not match reconstruction {zs}")));
        }
    }
    let mut b = Builder {
        tape,
        weights,
        taps: Vec::new(),
        skip_adds: 0,
    };
    let features = match (variant, aux) {
        (Variant::Rrnet, Some(x)) => {
            let r = b.residual_stack("res", x)?;
            let z = b.reconstruction_branch(recon)?;
            b.tape.concat_channels(r, z)?
        }
        (Variant::DualEdsr | Variant::PartitionRecon, Some(x)) => {
            let r = b.residual_stack(variant.aux_prefix(), x)?;
            let z = b.residual_stack("rec_edsr", recon)?;
            b.tape.concat_channels(r, z)?
        }
        (Variant::ReconOnlyEdsr, None) => b.residual_stack("rec_edsr", recon)?,
        _ => unreachable!("arity checked above"),
    };
    b.tap("fuse.concat".into(), features);
    let output = b.fuse(features, recon)?;
    Ok(Forward {
        output,
        taps: b.taps,
        skip_adds: b.skip_adds,
    })
}

/// Forward-only convenience: filters normalized planes and returns the
/// normalized output.
pub fn predict<S: Scalar>(
    weights: &ModelWeights<S>,
    recon: Tensor<S>,
    aux: Option<Tensor<S>>,
) -> Result<Tensor<S>, ModelError> {
    let mut tape = Tape::new();
    let z = tape.input(recon);
    let a = aux.map(|t| tape.input(t));
    let f = variant_forward(&mut tape, weights, z, a)?;
    Ok(tape.value(f.output).clone())
}

/// Finite-difference check of the whole network in 64-bit on an 8x8 input,
/// sampling `per_tensor` coordinates of every parameter. The fusion conv is
/// randomized first so gradients reach both branches.
pub fn gradcheck_network(variant: Variant, per_tensor: usize, seed: u64) -> Result<GradCheckReport, ModelError> {
    let config = ModelConfig::new(variant, 37);
    let mut weights = ModelWeights::<f64>::init(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    for name in ["fuse.conv.weight", "fuse.conv.bias"] {
        let p = weights.param_mut(name).expect("fusion layer exists");
        let shape = p.shape();
        p.tensor = uniform(&mut rng, shape, -0.1, 0.1).with_grad();
    }
    let recon = uniform(&mut rng, [1, 1, 8, 8], 0.0, 1.0);
    let aux = uniform(&mut rng, [1, 1, 8, 8], -0.2, 0.2);
    let noise = uniform(&mut rng, [1, 1, 8, 8], -0.05, 0.05);
    let label = Tensor::from_vec(
        [1, 1, 8, 8],
        recon.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect(),
    )?;
    let mut params = weights.params().to_vec();
    let report = finite_difference(&mut params, Coords::Sample(per_tensor), seed, |tape, ps| {
        let w = ModelWeights::from_params(config, ps.to_vec()).map_err(|e| TensorError::Argument {
            op: "gradcheck_network",
            reason: e.to_string(),
        })?;
        let z = tape.input(recon.clone());
        let a = (variant.arity() == 2).then(|| tape.input(aux.clone()));
        let f = variant_forward(tape, &w, z, a).map_err(|e| match e {
            ModelError::Tensor(t) => t,
            other => TensorError::Argument {
                op: "gradcheck_network",
                reason: other.to_string(),
            },
        })?;
        let y = tape.input(label.clone());
        tape.mse_loss(f.output, y)
    })?;
    Ok(report)
}

#[cfg(test)]
mod tests;
