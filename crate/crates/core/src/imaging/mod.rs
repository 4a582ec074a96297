//! Images, the additive-noise measurement model, phantoms and dataset files.
//!
//! The imaging operator is the identity: a measurement is the object plus
//! i.i.d. Gaussian noise, `y = x₀ + σ·ε`. Intensities live on a nominal
//! `[0, 1]` scale and `σ` is expressed in the same units.

mod dataset;
mod lumpy;
mod noise;
mod pgm;

pub use dataset::{dataset_read, dataset_write, Dataset, DatasetError, Plane, Sample};
pub use lumpy::{render_lumps, sample_lumpy_background, LumpyParams, Phantom};
pub use noise::{estimate_noise_std, NoiseEstimate, NoiseEstimator};
pub use pgm::{write_pgm, write_pgm_grid};

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::schedule::Latent;

/// Smallest allowed side length.
pub const MIN_SIDE: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("image {height}x{width} needs {expected} values, got {actual}")]
    BadLength {
        height: usize,
        width: usize,
        expected: usize,
        actual: usize,
    },
    #[error("image sides must be >= {MIN_SIDE}, got {height}x{width}")]
    TooSmall { height: usize, width: usize },
    #[error("image contains a non-finite value")]
    NonFinite,
    #[error("noise estimation needs at least 16x16 pixels, got {height}x{width}")]
    TooSmallForEstimate { height: usize, width: usize },
}

/// A 2D scalar field, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(ImageError::TooSmall { height, width });
        }
        if data.len() != height * width {
            return Err(ImageError::BadLength {
                height,
                width,
                expected: height * width,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ImageError::NonFinite);
        }
        Ok(Self { height, width, data })
    }

    /// Panics if a side is below [`MIN_SIDE`] or `f` yields a non-finite value.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data).expect("valid image")
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("valid image")
    }

    /// Unit Gaussian noise field.
    pub fn gaussian<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Self {
        let data = (0..height * width)
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect();
        Self::new(height, width, data).expect("valid image")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(height, width)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Panics if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Self::new(self.height, self.width, data).expect("finite map")
    }

    /// Elementwise combination; panics on a shape mismatch.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f32, f32) -> f32) -> Self {
        assert_eq!(self.dims(), other.dims(), "zip_map shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Self::new(self.height, self.width, data).expect("finite zip_map")
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / self.data.len() as f64
    }

    /// Mean squared difference.
    pub fn mse(&self, other: &Self) -> f64 {
        assert_eq!(self.dims(), other.dims(), "mse shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
            / self.data.len() as f64
    }

    /// Copies the `size×size` window whose top-left corner is `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, size: usize) -> Self {
        assert!(
            y0 + size <= self.height && x0 + size <= self.width,
            "crop out of bounds"
        );
        Self::from_fn(size, size, |y, x| self.get(y0 + y, x0 + x))
    }
}

/// The imaging operator `𝓗`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OperatorDescriptor {
    #[default]
    Identity,
}

impl OperatorDescriptor {
    pub fn apply(&self, x0: &Image) -> Image {
        match self {
            OperatorDescriptor::Identity => x0.clone(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OperatorDescriptor::Identity => "identity",
        }
    }
}

/// A noisy observation together with its noise level.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub y: Image,
    pub sigma_y: f64,
    pub operator: OperatorDescriptor,
}

impl Measurement {
    /// Same observation with a different (for instance estimated) noise level.
    pub fn with_sigma(&self, sigma_y: f64) -> Self {
        assert!(sigma_y >= 0.0);
        Self {
            sigma_y,
            ..self.clone()
        }
    }
}

/// `y = x₀ + σ·ε` with `ε` drawn from the seeded stream.
pub fn simulate_measurement(x0: &Image, sigma: f64, seed: u64) -> Measurement {
    assert!(sigma >= 0.0, "noise std must be non-negative");
    let mut rng = crate::rng::stream(seed, 0);
    let sigma32 = sigma as f32;
    let clean = OperatorDescriptor::Identity.apply(x0);
    let data = clean
        .data()
        .iter()
        .map(|&v| v + sigma32 * rng.sample::<f32, _>(StandardNormal))
        .collect();
    Measurement {
        y: Image::new(x0.height(), x0.width(), data).expect("finite measurement"),
        sigma_y: sigma,
        operator: OperatorDescriptor::Identity,
    }
}

/// A measurement scaled by `1/√(1+σ_y²)` so that its image and noise
/// coefficients have unit sum of squares.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedMeasurement {
    pub image: Image,
    pub sigma_y: f64,
    /// `1/√(1+σ_y²)`
    pub signal_coef: f64,
    /// `σ_y/√(1+σ_y²)`
    pub noise_coef: f64,
}

impl NormalizedMeasurement {
    /// Treats the normalized measurement as the latent at step `t`.
    pub fn at_step(&self, t: usize) -> Latent {
        Latent {
            image: self.image.clone(),
            t,
        }
    }
}

pub fn normalize_measurement(m: &Measurement) -> NormalizedMeasurement {
    let s = m.sigma_y;
    let signal_coef = 1.0 / (1.0 + s * s).sqrt();
    let image = if s == 0.0 {
        m.y.clone()
    } else {
        m.y.map(|v| (v as f64 * signal_coef) as f32)
    };
    NormalizedMeasurement {
        image,
        sigma_y: s,
        signal_coef,
        noise_coef: s * signal_coef,
    }
}
