//! Closed-form transport of a latent from `t₁` to a later `t₂`, and the
//! split of the total noise at `t₂` into measurement and diffusion parts.
//!
//! With `ρ = √(ᾱ_{t₂}/ᾱ_{t₁})`:
//!
//! ```text
//! x_{t₂} = ρ·x_{t₁} + √(1−ρ²)·ε
//!        = √ᾱ_{t₂}·x₀ + √(1−ᾱ_{t₂})·(ω₁·ε₀ + ω₂·ε)
//! ω₁ = ρ·√(1−ᾱ_{t₁}) / √(1−ᾱ_{t₂}),   ω₂ = √(1−ρ²) / √(1−ᾱ_{t₂})
//! ```
//!
//! `ε₀` is the measurement noise in unit form, `ε₀ = n/σ_y`.

use thiserror::Error;

use crate::imaging::Image;
use crate::schedule::{Latent, NoiseSchedule, ScheduleError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecouplingError {
    #[error("need t1 < t2, got t1={t1}, t2={t2}")]
    Order { t1: usize, t2: usize },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("latent is at step {actual}, weights expect {expected}")]
    StepMismatch { expected: usize, actual: usize },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error("mixing weights violate ω₁²+ω₂²=1 by {0:e}")]
    Identity(f64),
}

/// Transport and mixing coefficients for one `(t₁, t₂)` pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixingWeights {
    pub t1: usize,
    pub t2: usize,
    pub rho: f64,
    pub omega1: f64,
    pub omega2: f64,
}

impl MixingWeights {
    /// `√(1−ρ²)`, the scale of the injected diffusion noise.
    pub fn injected_scale(&self) -> f64 {
        (1.0 - self.rho * self.rho).max(0.0).sqrt()
    }
}

pub fn mixing_weights(t1: usize, t2: usize, sched: &NoiseSchedule) -> Result<MixingWeights, DecouplingError> {
    sched.check_step(t1)?;
    sched.check_step(t2)?;
    if t2 <= t1 {
        return Err(DecouplingError::Order { t1, t2 });
    }
    let (a1, a2) = (sched.alpha_bar(t1), sched.alpha_bar(t2));
    let rho2 = a2 / a1;
    let rho = rho2.sqrt();
    let (s1, s2) = ((1.0 - a1).sqrt(), (1.0 - a2).sqrt());
    let w = MixingWeights {
        t1,
        t2,
        rho,
        omega1: rho * s1 / s2,
        omega2: (1.0 - rho2).sqrt() / s2,
    };
    let gap = (w.omega1 * w.omega1 + w.omega2 * w.omega2 - 1.0).abs();
    if gap > 1e-9 {
        return Err(DecouplingError::Identity(gap));
    }
    Ok(w)
}

/// `x_{t₂} = ρ·x_{t₁} + √(1−ρ²)·ε`.
pub fn propagate_latent(x_t1: &Latent, w: &MixingWeights, eps: &Image) -> Result<Latent, DecouplingError> {
    if x_t1.t != w.t1 {
        return Err(DecouplingError::StepMismatch {
            expected: w.t1,
            actual: x_t1.t,
        });
    }
    if x_t1.image.dims() != eps.dims() {
        return Err(DecouplingError::Shape(x_t1.image.dims(), eps.dims()));
    }
    let (r, s) = (w.rho, w.injected_scale());
    let image = x_t1.image.zip_map(eps, |x, e| (r * x as f64 + s * e as f64) as f32);
    Ok(Latent { image, t: w.t2 })
}

/// Measurement noise `ε₀` and injected diffusion noise `ε`, both unit scale.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePair {
    pub eps0: Image,
    pub eps: Image,
}

/// `ε_tot = ω₁·ε₀ + ω₂·ε`.
pub fn compose_total_noise(pair: &NoisePair, w: &MixingWeights) -> Result<Image, DecouplingError> {
    if pair.eps0.dims() != pair.eps.dims() {
        return Err(DecouplingError::Shape(pair.eps0.dims(), pair.eps.dims()));
    }
    let (a, b) = (w.omega1, w.omega2);
    Ok(pair
        .eps0
        .zip_map(&pair.eps, |e0, e| (a * e0 as f64 + b * e as f64) as f32))
}
