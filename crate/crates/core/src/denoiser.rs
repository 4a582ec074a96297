//! The ε-prediction network.
//!
//! A plain residual conv stack at full resolution:
//!
//! ```text
//! stem:   h = silu(conv3x3(x) + b)               1 → C channels
//! time:   e = W₂·silu(W₁·sinusoid(t) + b₁) + b₂  added to h channelwise
//! blocks: h = h + silu(conv3x3(h) + b)           × depth
//! head:   ε̂ = conv3x3(h) + b                     C → 1, zero-initialized
//! ```
//!
//! The receptive field is `1 + 2·(depth + 2)` pixels.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::imaging::Image;
use crate::schedule::{Latent, NoiseSchedule, ScheduleError};
use crate::tensor::{Parameters, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DenoiserError {
    #[error("invalid denoiser config: {0}")]
    Config(String),
    #[error("input is {actual:?}, network was built for {expected:?}")]
    Resolution {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("{images} images but {steps} timesteps")]
    BatchMismatch { images: usize, steps: usize },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub channels: usize,
    pub depth: usize,
    pub time_embed_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            depth: 4,
            time_embed_dim: 64,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<(), DenoiserError> {
        if self.channels < 8 {
            return Err(DenoiserError::Config(format!("channels {} < 8", self.channels)));
        }
        if self.depth < 2 {
            return Err(DenoiserError::Config(format!("depth {} < 2", self.depth)));
        }
        if self.time_embed_dim < 2 || !self.time_embed_dim.is_multiple_of(2) {
            return Err(DenoiserError::Config(format!(
                "time_embed_dim {} must be even and >= 2",
                self.time_embed_dim
            )));
        }
        Ok(())
    }

    pub fn receptive_field(&self) -> usize {
        1 + 2 * (self.depth + 2)
    }
}

/// Predicted noise for one latent.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserOutput {
    pub eps_hat: Image,
}

/// Network weights plus the resolution they were trained at.
#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub height: usize,
    pub width: usize,
    pub params: Parameters,
}

/// Parameter handles on one tape, in [`Parameters`] order.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

fn gaussian_tensor<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| (rng.sample::<f64, _>(StandardNormal) * std) as f32)
        .collect();
    Tensor::new(shape.to_vec(), data).expect("finite init")
}

/// Sinusoidal features of each timestep, `[N, dim]`.
pub fn timestep_embedding(ts: &[usize], dim: usize) -> Tensor {
    let half = dim / 2;
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        let t = t as f64;
        let freqs = (0..half).map(|i| (-(10_000f64.ln()) * i as f64 / half as f64).exp());
        let args: Vec<f64> = freqs.map(|f| t * f).collect();
        data.extend(args.iter().map(|a| a.sin() as f32));
        data.extend(args.iter().map(|a| a.cos() as f32));
    }
    Tensor::new(vec![ts.len(), dim], data).expect("finite embedding")
}

impl Denoiser {
    /// Fan-in scaled Gaussian weights, zero biases, zero head.
    pub fn init(config: DenoiserConfig, height: usize, width: usize, seed: u64) -> Result<Self, DenoiserError> {
        config.validate()?;
        let mut rng = crate::rng::stream(seed, 0);
        let (c, e) = (config.channels, config.time_embed_dim);
        let kaiming = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
        let mut p = Parameters::new();
        p.push("stem.w", gaussian_tensor(&[c, 1, 3, 3], kaiming(9), &mut rng));
        p.push("stem.b", Tensor::zeros(&[c]));
        p.push("time.w1", gaussian_tensor(&[e, c], kaiming(e), &mut rng));
        p.push("time.b1", Tensor::zeros(&[c]));
        p.push("time.w2", gaussian_tensor(&[c, c], kaiming(c), &mut rng));
        p.push("time.b2", Tensor::zeros(&[c]));
        // residual branches are scaled down so the trunk variance stays O(1)
        let branch = kaiming(9 * c) / (config.depth as f64).sqrt();
        for i in 0..config.depth {
            p.push(format!("block{i}.w"), gaussian_tensor(&[c, c, 3, 3], branch, &mut rng));
            p.push(format!("block{i}.b"), Tensor::zeros(&[c]));
        }
        p.push("head.w", Tensor::zeros(&[1, c, 3, 3]));
        p.push("head.b", Tensor::zeros(&[1]));
        Ok(Self {
            config,
            height,
            width,
            params: p,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Puts the weights on `tape` as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .params
            .tensors()
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        BoundParams { vars }
    }

    /// Stacks images into an `[N, 1, H, W]` tensor after a resolution check.
    pub fn batch_tensor(&self, images: &[&Image]) -> Result<Tensor, DenoiserError> {
        let mut data = Vec::with_capacity(images.len() * self.height * self.width);
        for img in images {
            if img.dims() != (self.height, self.width) {
                return Err(DenoiserError::Resolution {
                    expected: (self.height, self.width),
                    actual: img.dims(),
                });
            }
            data.extend_from_slice(img.data());
        }
        Ok(Tensor::new(vec![images.len(), 1, self.height, self.width], data)?)
    }

    /// Records the forward pass for `x = [N, 1, H, W]` at per-sample steps.
    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, x: Var, ts: &[usize]) -> Result<Var, DenoiserError> {
        let n = tape.value(x).shape()[0];
        if ts.len() != n {
            return Err(DenoiserError::BatchMismatch {
                images: n,
                steps: ts.len(),
            });
        }
        let v = &p.vars;
        let h = tape.conv2d(x, v[0])?;
        let h = tape.broadcast_add_channelwise(h, v[1])?;
        let mut h = tape.silu(h)?;

        let emb = tape.constant(timestep_embedding(ts, self.config.time_embed_dim));
        let e = tape.matmul(emb, v[2])?;
        let e = tape.broadcast_add_channelwise(e, v[3])?;
        let e = tape.silu(e)?;
        let e = tape.matmul(e, v[4])?;
        let e = tape.broadcast_add_channelwise(e, v[5])?;
        h = tape.broadcast_add_channelwise(h, e)?;

        for i in 0..self.config.depth {
            let (w, b) = (v[6 + 2 * i], v[7 + 2 * i]);
            let r = tape.conv2d(h, w)?;
            let r = tape.broadcast_add_channelwise(r, b)?;
            let r = tape.silu(r)?;
            h = tape.add(h, r)?;
        }
        let k = 6 + 2 * self.config.depth;
        let out = tape.conv2d(h, v[k])?;
        Ok(tape.broadcast_add_channelwise(out, v[k + 1])?)
    }

    /// Gradient-free prediction for a batch of images at per-sample steps.
    pub fn predict_batch(
        &self,
        images: &[&Image],
        ts: &[usize],
        sched: &NoiseSchedule,
    ) -> Result<Vec<Image>, DenoiserError> {
        if images.len() != ts.len() {
            return Err(DenoiserError::BatchMismatch {
                images: images.len(),
                steps: ts.len(),
            });
        }
        for &t in ts {
            sched.check_step(t)?;
        }
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let x = tape.constant(self.batch_tensor(images)?);
        let out = self.forward(&mut tape, &p, x, ts)?;
        let hw = self.height * self.width;
        Ok(tape
            .value(out)
            .data()
            .chunks_exact(hw)
            .map(|c| Image::new(self.height, self.width, c.to_vec()).expect("finite prediction"))
            .collect())
    }

    /// `ε̂(x_t, t)`.
    pub fn predict_eps(&self, x_t: &Latent, sched: &NoiseSchedule) -> Result<DenoiserOutput, DenoiserError> {
        let mut out = self.predict_batch(&[&x_t.image], &[x_t.t], sched)?;
        Ok(DenoiserOutput {
            eps_hat: out.pop().expect("one prediction"),
        })
    }
}
