//! Diffusion noise schedules and the measurement-integration step finder.
//!
//! Timesteps are 1-based: `t = 1` is the least noisy step and `t = T` the
//! most noisy. All coefficients are kept in `f64`.

use thiserror::Error;

use crate::imaging::Image;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("schedule needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("invalid beta range [{start}, {end}]: need 0 < start <= end < 1")]
    BetaRange { start: f64, end: f64 },
    #[error("alpha_bar must lie in (0, 1] and strictly decrease (index {0})")]
    AlphaBar(usize),
    #[error("timestep {t} outside 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
}

/// `ᾱ_t` table with the derived image and noise coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
    zeta: Vec<f64>,
    sqrt_one_minus: Vec<f64>,
}

impl NoiseSchedule {
    /// Standard DDPM schedule with `β_t` linear between the endpoints,
    /// inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, ScheduleError> {
        if steps < 2 {
            return Err(ScheduleError::TooFewSteps(steps));
        }
        let valid = beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0;
        if !valid || !beta_start.is_finite() || !beta_end.is_finite() {
            return Err(ScheduleError::BetaRange {
                start: beta_start,
                end: beta_end,
            });
        }
        let betas = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect();
        Ok(Self::from_betas(betas))
    }

    /// The default desk schedule: `T = 1000`, `β ∈ [1e-4, 0.02]`.
    pub fn default_linear() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("default schedule is valid")
    }

    fn from_betas(betas: Vec<f64>) -> Self {
        let mut alpha_bar = Vec::with_capacity(betas.len());
        let mut acc = 1.0f64;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Self::assemble(betas, alpha_bar)
    }

    /// Builds a schedule from an explicit `ᾱ` table (strictly decreasing,
    /// each in `(0, 1)`).
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self, ScheduleError> {
        if alpha_bar.len() < 2 {
            return Err(ScheduleError::TooFewSteps(alpha_bar.len()));
        }
        let mut prev = 1.0;
        let mut betas = Vec::with_capacity(alpha_bar.len());
        for (i, &a) in alpha_bar.iter().enumerate() {
            if !(a > 0.0 && a < prev) {
                return Err(ScheduleError::AlphaBar(i));
            }
            betas.push(1.0 - a / prev);
            prev = a;
        }
        Ok(Self::assemble(betas, alpha_bar))
    }

    fn assemble(betas: Vec<f64>, alpha_bar: Vec<f64>) -> Self {
        let zeta = alpha_bar.iter().map(|a| a.sqrt()).collect();
        let sqrt_one_minus = alpha_bar.iter().map(|a| (1.0 - a).sqrt()).collect();
        Self {
            betas,
            alpha_bar,
            zeta,
            sqrt_one_minus,
        }
    }

    /// Total number of steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn check_step(&self, t: usize) -> Result<(), ScheduleError> {
        if t == 0 || t > self.steps() {
            Err(ScheduleError::StepOutOfRange { t, steps: self.steps() })
        } else {
            Ok(())
        }
    }

    /// `β_t`. Panics outside `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `ᾱ_t`. Panics outside `1..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// `ζ_t = √ᾱ_t`, the clean-image coefficient.
    pub fn zeta(&self, t: usize) -> f64 {
        self.zeta[t - 1]
    }

    /// `√(1 − ᾱ_t)`, the noise coefficient.
    pub fn noise_coef(&self, t: usize) -> f64 {
        self.sqrt_one_minus[t - 1]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Stable text identity of the table, used in manifests and checkpoints.
    pub fn fingerprint(&self) -> String {
        let mut text = format!("schedule:{}", self.steps());
        for b in &self.betas {
            text.push_str(&format!(":{:016x}", b.to_bits()));
        }
        crate::fingerprint(&text)
    }
}

/// An image stamped with the diffusion step it lives at.
#[derive(Clone, Debug, PartialEq)]
pub struct Latent {
    pub image: Image,
    pub t: usize,
}

/// `x_t = ζ_t·x₀ + √(1−ᾱ_t)·ε` with externally drawn `ε`.
pub fn forward_diffuse(x0: &Image, t: usize, eps: &Image, sched: &NoiseSchedule) -> Result<Latent, ScheduleError> {
    sched.check_step(t)?;
    if x0.dims() != eps.dims() {
        return Err(ScheduleError::Shape(x0.dims(), eps.dims()));
    }
    let (a, b) = (sched.zeta(t), sched.noise_coef(t));
    let image = x0.zip_map(eps, |x, e| (a * x as f64 + b * e as f64) as f32);
    Ok(Latent { image, t })
}

/// The clean-signal coefficient a measurement with noise std `sigma_y` has
/// after normalization by `√(1+σ_y²)`.
pub fn integration_target(sigma_y: f64) -> f64 {
    1.0 / (1.0 + sigma_y * sigma_y).sqrt()
}

/// `t₁ = argmin_t |√ᾱ_t − 1/√(1+σ_y²)|`, ties resolved toward the smaller `t`.
pub fn find_integration_step(sigma_y: f64, sched: &NoiseSchedule) -> usize {
    step_for_coefficient(integration_target(sigma_y.max(0.0)), sched)
}

/// The step whose `√ᾱ_t` is closest to `target`, ties toward the smaller `t`.
///
/// `√ᾱ_t` is strictly decreasing, so the crossing point is found by binary
/// search and only its two neighbours are compared.
pub fn step_for_coefficient(target: f64, sched: &NoiseSchedule) -> usize {
    let zeta = &sched.zeta;
    // first index whose coefficient is <= target
    let idx = zeta.partition_point(|&z| z > target);
    let best = if idx == 0 {
        0
    } else if idx == zeta.len() {
        zeta.len() - 1
    } else {
        let above = (zeta[idx - 1] - target).abs();
        let below = (zeta[idx] - target).abs();
        if below < above {
            idx
        } else {
            idx - 1
        }
    };
    best + 1
}
