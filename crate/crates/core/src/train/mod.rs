//! Patch datasets, the Adam optimizer and the training loop.

mod adam;
mod dataset;

pub use adam::{adam_step, AdamParams, AdamState, LrSchedule};
pub use dataset::{
    aux_plane, build_dataset, frame_tensor, load_samples, patch_origins, residual_tensor, BuildSummary, DatasetManifest, Sample,
    SampleRecord, MANIFEST_NAME, PATCH_SIZE,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codec::{CodecError, QuadtreeParams};
use crate::model::{variant_forward, ModelConfig, ModelError, ModelWeights};
use crate::tensor::{Tape, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("qp mismatch: expected {expected}, found {found}")]
    QpMismatch { expected: u8, found: u8 },
    #[error("parameter {0:?} has no gradient")]
    MissingGradient(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Full-length schedule; compressed to `epochs` when shorter.
    pub schedule: LrSchedule,
    pub adam: AdamParams,
    pub quadtree: QuadtreeParams,
    /// Per-epoch loss lines on standard error.
    pub verbose: bool,
}

impl TrainOptions {
    pub fn new(epochs: usize, seed: u64) -> Self {
        TrainOptions {
            epochs,
            batch: 16,
            seed,
            schedule: LrSchedule::default(),
            adam: AdamParams::default(),
            quadtree: QuadtreeParams::default(),
            verbose: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: ModelWeights,
    /// Mean training loss of each epoch.
    pub history: Vec<f64>,
}

/// Forward and backward over one batch, one patch at a time; leaves the
/// batch-mean gradient on `weights` and returns the batch-mean loss.
pub fn batch_gradient(weights: &mut ModelWeights, batch: &[&Sample]) -> Result<f64, TrainError> {
    weights.zero_grad();
    let mut total = 0.0;
    for s in batch {
        let mut tape = Tape::new();
        let z = tape.input(s.recon.clone());
        let a = s.aux.clone().map(|t| tape.input(t));
        let f = variant_forward(&mut tape, weights, z, a)?;
        let y = tape.input(s.label.clone());
        let loss = tape.mse_loss(f.output, y)?;
        total += tape.value(loss).data()[0] as f64;
        tape.backward(loss, weights.params_mut())?;
    }
    let scale = 1.0 / batch.len() as f32;
    for p in weights.params_mut() {
        if let Some(g) = p.tensor.grad_mut() {
            g.iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(total / batch.len() as f64)
}

/// Mean per-patch MSE (normalized domain) without updating anything.
pub fn evaluate_loss(weights: &ModelWeights, samples: &[Sample]) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut total = 0.0;
    for s in samples {
        let mut tape = Tape::new();
        let z = tape.input(s.recon.clone());
        let a = s.aux.clone().map(|t| tape.input(t));
        let f = variant_forward(&mut tape, weights, z, a)?;
        let y = tape.input(s.label.clone());
        let loss = tape.mse_loss(f.output, y)?;
        total += tape.value(loss).data()[0] as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Seeded per-epoch permutations of the sample indices.
#[derive(Debug, Clone)]
pub struct EpochShuffler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
}

impl EpochShuffler {
    pub fn new(len: usize, seed: u64) -> Self {
        EpochShuffler {
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5348_5546),
            order: (0..len).collect(),
        }
    }

    pub fn next_epoch(&mut self) -> &[usize] {
        self.order.shuffle(&mut self.rng);
        &self.order
    }
}

/// Runs `epochs` epochs of seeded-shuffle minibatch Adam over in-memory
/// samples. The last partial batch of each epoch is dropped.
pub fn train_samples(
    weights: &mut ModelWeights,
    samples: &[Sample],
    epochs: usize,
    schedule: &LrSchedule,
    opts: &TrainOptions,
) -> Result<Vec<f64>, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if opts.batch == 0 || opts.batch > samples.len() {
        return Err(TrainError::Config(format!(
            "batch size {} must be between 1 and the sample count {}",
            opts.batch,
            samples.len()
        )));
    }
    let mut shuffler = EpochShuffler::new(samples.len(), opts.seed);
    let mut state = AdamState::new(weights, opts.adam);
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let order = shuffler.next_epoch().to_vec();
        let lr = schedule.lr(epoch);
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks_exact(opts.batch) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            sum += batch_gradient(weights, &batch)?;
            adam_step(weights, &mut state, lr)?;
            steps += 1;
        }
        let mean = sum / steps as f64;
        if opts.verbose {
            eprintln!("epoch {:>4}/{epochs}  lr {lr:.1e}  loss {mean:.6e}", epoch + 1);
        }
        history.push(mean);
    }
    for p in weights.params_mut() {
        p.tensor.clear_grad();
    }
    Ok(history)
}

/// Trains a fresh model of `config` on the manifest's patches.
pub fn train(config: ModelConfig, manifest: &DatasetManifest, opts: &TrainOptions) -> Result<TrainOutcome, TrainError> {
    let qp = manifest.uniform_qp()?;
    if qp != config.qp_tag {
        return Err(TrainError::QpMismatch {
            expected: config.qp_tag,
            found: qp,
        });
    }
    let samples = load_samples(manifest, config.variant, &opts.quadtree)?;
    let mut weights = ModelWeights::init(config, opts.seed)?;
    let schedule = opts.schedule.scaled_to(opts.epochs);
    let history = train_samples(&mut weights, &samples, opts.epochs, &schedule, opts)?;
    Ok(TrainOutcome { weights, history })
}

/// Continues training `base` on another qp's patches at the constant base
/// learning rate; the result is tagged with the manifest's qp.
pub fn fine_tune(base: &ModelWeights, manifest: &DatasetManifest, opts: &TrainOptions) -> Result<TrainOutcome, TrainError> {
    let qp = manifest.uniform_qp()?;
    let mut weights = base.clone();
    weights.set_qp_tag(qp);
    if opts.epochs == 0 {
        return Ok(TrainOutcome {
            weights,
            history: Vec::new(),
        });
    }
    let samples = load_samples(manifest, base.config().variant, &opts.quadtree)?;
    let schedule = LrSchedule::constant(opts.schedule.base, opts.epochs);
    let history = train_samples(&mut weights, &samples, opts.epochs, &schedule, opts)?;
    Ok(TrainOutcome { weights, history })
}
