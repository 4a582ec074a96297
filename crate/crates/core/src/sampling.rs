//! Deterministic DDIM from `T` down to `t₁`, then one-shot recovery of `x₀`.

use thiserror::Error;

use crate::denoiser::{Denoiser, DenoiserError};
use crate::imaging::Image;
use crate::schedule::{Latent, NoiseSchedule, ScheduleError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("DDIM step must not go forward: t={t}, t_prev={t_prev}")]
    Order { t: usize, t_prev: usize },
    #[error("invalid sampler config: {0}")]
    Config(String),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    pub num_ddim_steps: usize,
    /// Only `0` (deterministic) is supported.
    pub eta: f64,
    pub t1: usize,
    /// Clamp each intermediate `x₀` estimate to `[0, 1]` and step with the
    /// noise consistent with it.
    pub clip_x0: bool,
}

impl SamplerConfig {
    pub fn new(t1: usize) -> Self {
        Self {
            num_ddim_steps: 50,
            eta: 0.0,
            t1,
            clip_x0: true,
        }
    }

    pub fn validate(&self, sched: &NoiseSchedule) -> Result<(), SamplingError> {
        sched.check_step(self.t1)?;
        if self.num_ddim_steps == 0 {
            return Err(SamplingError::Config("num_ddim_steps must be >= 1".into()));
        }
        if self.eta != 0.0 {
            return Err(SamplingError::Config(format!("eta {} unsupported, only 0", self.eta)));
        }
        if self.t1 >= sched.steps() {
            return Err(SamplingError::Config(format!("t1 {} leaves no steps below T", self.t1)));
        }
        Ok(())
    }

    /// Strictly decreasing, evenly spaced steps from `T` to `t₁` inclusive.
    /// Fewer than `num_ddim_steps` intervals when `T − t₁` is smaller.
    pub fn substeps(&self, sched: &NoiseSchedule) -> Vec<usize> {
        let (top, t1) = (sched.steps(), self.t1);
        let n = self.num_ddim_steps.min(top - t1);
        let mut out: Vec<usize> = (0..=n)
            .map(|i| t1 + ((top - t1) as f64 * (n - i) as f64 / n as f64).round() as usize)
            .collect();
        out.dedup();
        out
    }
}

/// One deterministic DDIM transition. `t_prev == x_t.t` is a no-op.
pub fn ddim_step(x_t: &Latent, t_prev: usize, eps_hat: &Image, sched: &NoiseSchedule) -> Result<Latent, SamplingError> {
    let t = x_t.t;
    sched.check_step(t)?;
    sched.check_step(t_prev)?;
    if t_prev > t {
        return Err(SamplingError::Order { t, t_prev });
    }
    if eps_hat.dims() != x_t.image.dims() {
        return Err(SamplingError::Shape(x_t.image.dims(), eps_hat.dims()));
    }
    if t_prev == t {
        return Ok(x_t.clone());
    }
    let (z, s) = (sched.zeta(t), sched.noise_coef(t));
    let (zp, sp) = (sched.zeta(t_prev), sched.noise_coef(t_prev));
    let image = x_t.image.zip_map(eps_hat, |x, e| {
        let x0 = (x as f64 - s * e as f64) / z;
        (zp * x0 + sp * e as f64) as f32
    });
    Ok(Latent { image, t: t_prev })
}

/// The noise that maps `x_t` to the `[0, 1]`-clamped `x₀` estimate.
pub fn clip_prediction(x_t: &Latent, eps_hat: &Image, sched: &NoiseSchedule) -> Result<Image, SamplingError> {
    let x0 = recover_x0(x_t, eps_hat, sched)?.clamped;
    let (z, s) = (sched.zeta(x_t.t), sched.noise_coef(x_t.t));
    Ok(x_t.image.zip_map(&x0, |x, x0| ((x as f64 - z * x0 as f64) / s) as f32))
}

/// A recovered clean image and its pre-clamp values.
#[derive(Clone, Debug, PartialEq)]
pub struct Recovered {
    pub clamped: Image,
    pub raw: Image,
}

/// `x₀ = (x_{t₁} − √(1−ᾱ_{t₁})·ε̂)/√ᾱ_{t₁}`.
pub fn recover_x0(x_t1: &Latent, eps_hat: &Image, sched: &NoiseSchedule) -> Result<Recovered, SamplingError> {
    sched.check_step(x_t1.t)?;
    if eps_hat.dims() != x_t1.image.dims() {
        return Err(SamplingError::Shape(x_t1.image.dims(), eps_hat.dims()));
    }
    let (z, s) = (sched.zeta(x_t1.t), sched.noise_coef(x_t1.t));
    let raw = x_t1
        .image
        .zip_map(eps_hat, |x, e| ((x as f64 - s * e as f64) / z) as f32);
    Ok(Recovered {
        clamped: raw.clamp01(),
        raw,
    })
}

/// Ensemble members processed per network call.
const CHUNK: usize = 16;

/// Runs the chain for a batch of starting latents at `T`.
pub fn ddim_chain(
    model: &Denoiser,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    x_top: Vec<Image>,
) -> Result<Vec<Recovered>, SamplingError> {
    cfg.validate(sched)?;
    let steps = cfg.substeps(sched);
    let mut xs: Vec<Latent> = x_top.into_iter().map(|image| Latent { image, t: steps[0] }).collect();
    for pair in steps.windows(2) {
        let eps = predict(model, sched, &xs)?;
        xs = xs
            .iter()
            .zip(&eps)
            .map(|(x, e)| {
                if cfg.clip_x0 {
                    ddim_step(x, pair[1], &clip_prediction(x, e, sched)?, sched)
                } else {
                    ddim_step(x, pair[1], e, sched)
                }
            })
            .collect::<Result<_, _>>()?;
    }
    let eps = predict(model, sched, &xs)?;
    xs.iter().zip(&eps).map(|(x, e)| recover_x0(x, e, sched)).collect()
}

fn predict(model: &Denoiser, sched: &NoiseSchedule, xs: &[Latent]) -> Result<Vec<Image>, SamplingError> {
    let images: Vec<&Image> = xs.iter().map(|x| &x.image).collect();
    let ts: Vec<usize> = xs.iter().map(|x| x.t).collect();
    Ok(model.predict_batch(&images, &ts, sched)?)
}

/// Draws `count` samples. Member `i` starts from Gaussian stream `i` under
/// `seed`, so results do not depend on batching or thread count.
pub fn generate_som_samples(
    model: &Denoiser,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<Recovered>, SamplingError> {
    cfg.validate(sched)?;
    let starts: Vec<usize> = (0..count).step_by(CHUNK).collect();
    let chunks = crate::parallel::par_map(&starts, |&s| {
        let x_top = (s..(s + CHUNK).min(count))
            .map(|i| {
                let mut rng = crate::rng::stream(seed, i as u64);
                Image::gaussian(model.height, model.width, &mut rng)
            })
            .collect();
        ddim_chain(model, sched, cfg, x_top)
    });
    let mut out = Vec::with_capacity(count);
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}
