//! The Ambient Loss, the training step, and the training loop.
//!
//! For each measurement-derived latent `x_{t₁}` a later step `t₂` is drawn on
//! `(t₁, T]` and two independent noises `ε_a`, `ε_b` transport it to
//! `x_{t₂}^a`, `x_{t₂}^b`. With `SG` the stop-gradient:
//!
//! ```text
//! L₁ = ½ Σ_{k∈{a,b}} ‖ε̂(x_{t₂}^k) − ω₁·SG(ε̂(x_{t₁})) − ω₂·ε_k‖²
//! L₂ = ‖(ε̂(x_{t₂}^a) − ε̂(x_{t₂}^b)) − ω₂·(ε_a − ε_b)‖²
//! L  = L₁ + λ·L₂
//! ```
//!
//! Norms are means over pixels and batch members.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::time::Instant;

use rand::Rng as _;
use thiserror::Error;

use crate::decoupling::{mixing_weights, propagate_latent, DecouplingError, MixingWeights};
use crate::denoiser::{Denoiser, DenoiserError};
use crate::imaging::Image;
use crate::schedule::{Latent, NoiseSchedule};
use crate::tensor::{adam_step, AdamConfig, AdamState, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at step {step}: l1={l1} l2={l2}")]
    NonFinite { step: u64, l1: f64, l2: f64 },
    #[error("stop-gradient argument carries a gradient")]
    StopGradient,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("batch of {images} images but {weights} mixing weights")]
    Batch { images: usize, weights: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint fingerprint {found} does not match expected {expected}")]
    Fingerprint { expected: String, found: String },
    #[error("checkpoint version {0} is not supported")]
    Version(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Decoupling(#[from] DecouplingError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Cosine decay of the learning rate to zero over this many steps;
    /// `0` keeps it constant.
    pub decay_steps: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            batch_size: 16,
            adam: AdamConfig::default(),
            decay_steps: 0,
        }
    }
}

impl TrainConfig {
    /// Learning rate for the update that takes the model from `step` to
    /// `step + 1`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.decay_steps == 0 {
            return self.adam.lr;
        }
        let progress = (step as f64 / self.decay_steps as f64).min(1.0);
        self.adam.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(TrainError::Config(format!("lambda {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr {}", self.adam.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub l1: f64,
    pub l2: f64,
    pub lambda: f64,
    pub total: f64,
}

/// Everything needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: Denoiser,
    pub adam: AdamState,
    pub step: u64,
    pub rng: crate::rng::Rng,
    pub fingerprint: String,
}

impl TrainState {
    pub fn new(model: Denoiser, seed: u64, fingerprint: impl Into<String>) -> Self {
        let adam = AdamState::new(&model.params);
        Self {
            model,
            adam,
            step: 0,
            rng: crate::rng::stream(seed, 1),
            fingerprint: fingerprint.into(),
        }
    }
}

fn per_sample_constant(
    shape: &[usize],
    w: &[MixingWeights],
    f: impl Fn(usize, &MixingWeights) -> f32,
) -> Result<Tensor> {
    let n = shape[0];
    if w.len() != n {
        return Err(TrainError::Batch {
            images: n,
            weights: w.len(),
        });
    }
    let per = shape.iter().skip(1).product::<usize>();
    let data = (0..n * per).map(|i| f(i, &w[i / per])).collect();
    Ok(Tensor::new(shape.to_vec(), data)?)
}

/// `‖ε̂_tot − ω₁·SG(ε̂_{t₁}) − ω₂·ε‖²`, with one weight set per batch member.
///
/// `eps_t1_hat` must not require a gradient.
pub fn ambient_l1(
    tape: &mut Tape,
    eps_tot_hat: Var,
    eps_t1_hat: Var,
    eps: &Tensor,
    w: &[MixingWeights],
) -> Result<Var> {
    if tape.requires_grad(eps_t1_hat) {
        return Err(TrainError::StopGradient);
    }
    let shape = tape.value(eps_tot_hat).shape().to_vec();
    for s in [tape.value(eps_t1_hat).shape(), eps.shape()] {
        if s != shape.as_slice() {
            return Err(TensorError::ShapeMismatch {
                op: "ambient_l1",
                shapes: vec![shape.clone(), s.to_vec()],
            }
            .into());
        }
    }
    let reference = tape.value(eps_t1_hat).data().to_vec();
    let target = per_sample_constant(&shape, w, |i, w| {
        (w.omega1 * reference[i] as f64 + w.omega2 * eps.data()[i] as f64) as f32
    })?;
    let target = tape.constant(target);
    Ok(tape.mse(eps_tot_hat, target)?)
}

/// `‖(ε̂_a − ε̂_b) − ω₂·(ε_a − ε_b)‖²`.
pub fn ambient_l2(
    tape: &mut Tape,
    hat_a: Var,
    hat_b: Var,
    eps_a: &Tensor,
    eps_b: &Tensor,
    w: &[MixingWeights],
) -> Result<Var> {
    let shape = tape.value(hat_a).shape().to_vec();
    if eps_a.shape() != shape.as_slice() || eps_b.shape() != shape.as_slice() {
        return Err(TensorError::ShapeMismatch {
            op: "ambient_l2",
            shapes: vec![shape, eps_a.shape().to_vec(), eps_b.shape().to_vec()],
        }
        .into());
    }
    let diff = tape.sub(hat_a, hat_b)?;
    let target = per_sample_constant(&shape, w, |i, w| {
        (w.omega2 * (eps_a.data()[i] as f64 - eps_b.data()[i] as f64)) as f32
    })?;
    let target = tape.constant(target);
    Ok(tape.mse(diff, target)?)
}

/// Noise draws and step choices for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct AmbientBatch {
    pub x_t1: Vec<Latent>,
    pub weights: Vec<MixingWeights>,
    pub eps_a: Vec<Image>,
    pub eps_b: Vec<Image>,
}

impl AmbientBatch {
    /// Draws `t₂ ~ U(t₁, T]` and two noises per latent.
    pub fn draw<R: rand::Rng>(x_t1: Vec<Latent>, sched: &NoiseSchedule, rng: &mut R) -> Result<Self> {
        let mut weights = Vec::with_capacity(x_t1.len());
        let (mut eps_a, mut eps_b) = (Vec::new(), Vec::new());
        for x in &x_t1 {
            if x.t >= sched.steps() {
                return Err(DecouplingError::Order {
                    t1: x.t,
                    t2: sched.steps(),
                }
                .into());
            }
            let t2 = rng.random_range(x.t + 1..=sched.steps());
            weights.push(mixing_weights(x.t, t2, sched)?);
            let (h, w) = x.image.dims();
            eps_a.push(Image::gaussian(h, w, rng));
            eps_b.push(Image::gaussian(h, w, rng));
        }
        Ok(Self {
            x_t1,
            weights,
            eps_a,
            eps_b,
        })
    }
}

fn stack(images: &[&Image]) -> Result<Tensor> {
    let (h, w) = images[0].dims();
    let data = images.iter().flat_map(|i| i.data().iter().copied()).collect();
    Ok(Tensor::new(vec![images.len(), 1, h, w], data)?)
}

/// Handles to the loss nodes of one recorded batch.
pub struct LossGraph {
    pub l1: Var,
    pub l2: Var,
    pub total: Var,
    /// The stop-gradient copy of `ε̂(x_{t₁})`.
    pub reference: Var,
}

/// Records the full Ambient Loss for `batch` on `tape`.
pub fn record_ambient_loss(
    tape: &mut Tape,
    model: &Denoiser,
    params: &crate::denoiser::BoundParams,
    batch: &AmbientBatch,
    lambda: f64,
) -> Result<LossGraph> {
    let n = batch.x_t1.len();
    if n == 0 || batch.weights.len() != n {
        return Err(TrainError::Batch {
            images: n,
            weights: batch.weights.len(),
        });
    }
    let mut xa = Vec::with_capacity(n);
    let mut xb = Vec::with_capacity(n);
    for ((x, w), (ea, eb)) in batch
        .x_t1
        .iter()
        .zip(&batch.weights)
        .zip(batch.eps_a.iter().zip(&batch.eps_b))
    {
        xa.push(propagate_latent(x, w, ea)?.image);
        xb.push(propagate_latent(x, w, eb)?.image);
    }
    let t1s: Vec<usize> = batch.weights.iter().map(|w| w.t1).collect();
    let t2s: Vec<usize> = batch.weights.iter().map(|w| w.t2).collect();

    let x1 = tape.constant(model.batch_tensor(&batch.x_t1.iter().map(|x| &x.image).collect::<Vec<_>>())?);
    let live = model.forward(tape, params, x1, &t1s)?;
    let reference = tape.detach(live);

    let ea = stack(&batch.eps_a.iter().collect::<Vec<_>>())?;
    let eb = stack(&batch.eps_b.iter().collect::<Vec<_>>())?;
    let va = tape.constant(model.batch_tensor(&xa.iter().collect::<Vec<_>>())?);
    let vb = tape.constant(model.batch_tensor(&xb.iter().collect::<Vec<_>>())?);
    let hat_a = model.forward(tape, params, va, &t2s)?;
    let hat_b = model.forward(tape, params, vb, &t2s)?;

    let la = ambient_l1(tape, hat_a, reference, &ea, &batch.weights)?;
    let lb = ambient_l1(tape, hat_b, reference, &eb, &batch.weights)?;
    let sum = tape.add(la, lb)?;
    let l1 = tape.mul_scalar(sum, 0.5)?;
    let l2 = ambient_l2(tape, hat_a, hat_b, &ea, &eb, &batch.weights)?;
    let weighted = tape.mul_scalar(l2, lambda as f32)?;
    let total = tape.add(l1, weighted)?;
    Ok(LossGraph {
        l1,
        l2,
        total,
        reference,
    })
}

/// One optimizer step on `batch`. The state is untouched on error.
pub fn training_step(state: &mut TrainState, batch: &AmbientBatch, cfg: &TrainConfig) -> Result<LossTerms> {
    let step = state.step;
    step_inner(state, batch, cfg).map_err(|e| {
        if overflowed(&e) {
            TrainError::NonFinite {
                step,
                l1: f64::NAN,
                l2: f64::NAN,
            }
        } else {
            e
        }
    })
}

/// Whether `e` is the tape's guard against non-finite values, which fires
/// before a loss can be read.
fn overflowed(e: &TrainError) -> bool {
    let t = match e {
        TrainError::Tensor(t) | TrainError::Denoiser(DenoiserError::Tensor(t)) => t,
        _ => return false,
    };
    matches!(t, TensorError::NonFinite { .. } | TensorError::NonFiniteGradient { .. })
}

fn step_inner(state: &mut TrainState, batch: &AmbientBatch, cfg: &TrainConfig) -> Result<LossTerms> {
    let mut tape = Tape::new();
    let params = state.model.bind(&mut tape, true);
    let g = record_ambient_loss(&mut tape, &state.model, &params, batch, cfg.lambda)?;
    let l1 = tape.value(g.l1).item()? as f64;
    let l2 = tape.value(g.l2).item()? as f64;
    let total = tape.value(g.total).item()? as f64;
    if !total.is_finite() {
        return Err(TrainError::NonFinite {
            step: state.step,
            l1,
            l2,
        });
    }
    let mut grads = tape.backward(g.total)?;
    let grads: Vec<Tensor> = params
        .vars()
        .iter()
        .map(|&v| grads.take(v).expect("every trainable leaf has a gradient"))
        .collect();
    let adam = AdamConfig {
        lr: cfg.lr_at(state.step),
        ..cfg.adam
    };
    adam_step(&mut state.model.params, &grads, &mut state.adam, &adam)?;
    state.step += 1;
    Ok(LossTerms {
        l1,
        l2,
        lambda: cfg.lambda,
        total,
    })
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub losses: LossTerms,
    pub wall_time: f64,
}

pub const LOG_HEADER: &str = "step,l1,l2,total,wall_time";

impl LogRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:.3}",
            self.step, self.losses.l1, self.losses.l2, self.losses.total, self.wall_time
        )
    }
}

/// Runs `steps` steps, drawing batches uniformly (with replacement) from
/// `data` through the state's generator. `on_step` sees every row.
pub fn train(
    state: &mut TrainState,
    data: &[Latent],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    steps: u64,
    mut on_step: impl FnMut(&TrainState, &LogRow) -> Result<()>,
) -> Result<Vec<LogRow>> {
    cfg.validate()?;
    if data.is_empty() && steps > 0 {
        return Err(TrainError::Config("no training data".into()));
    }
    let start = Instant::now();
    let mut log = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        let picks: Vec<Latent> = (0..cfg.batch_size)
            .map(|_| data[state.rng.random_range(0..data.len())].clone())
            .collect();
        let batch = AmbientBatch::draw(picks, sched, &mut state.rng)?;
        let losses = training_step(state, &batch, cfg)?;
        let row = LogRow {
            step: state.step,
            losses,
            wall_time: start.elapsed().as_secs_f64(),
        };
        on_step(state, &row)?;
        log.push(row);
    }
    Ok(log)
}

/// Exponential moving average of a loss curve.
pub fn smoothed(values: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = None;
    for &v in values {
        let next = match acc {
            None => v,
            Some(a) => alpha * v + (1.0 - alpha) * a,
        };
        acc = Some(next);
        out.push(next);
    }
    out
}
