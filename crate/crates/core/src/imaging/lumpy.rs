//! Lumpy backgrounds: a Poisson number of Gaussian blobs at uniformly random
//! positions, summed on a constant baseline.
//!
//! The field is periodic (blob distances wrap around the edges), which makes
//! the ensemble stationary: every pixel has the same expected value
//! `dc_offset + K̄·a·2πw²/(H·W)`.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use super::Image;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LumpyParams {
    /// Poisson mean of the blob count.
    pub mean_lump_count: f64,
    pub lump_amplitude: f64,
    /// Gaussian standard deviation in pixels.
    pub lump_width: f64,
    pub dc_offset: f64,
}

impl Default for LumpyParams {
    /// Tuned for 64×64 fields.
    fn default() -> Self {
        Self {
            mean_lump_count: 80.0,
            lump_amplitude: 0.2,
            lump_width: 4.0,
            dc_offset: 0.1,
        }
    }
}

impl LumpyParams {
    /// Same lump density as `self` (given for a `from`-sided field) on a
    /// `to`-sided field.
    pub fn rescaled(&self, from: usize, to: usize) -> Self {
        let ratio = (to * to) as f64 / (from * from) as f64;
        Self {
            mean_lump_count: self.mean_lump_count * ratio,
            ..*self
        }
    }

    /// Analytic ensemble mean at any pixel of a `size×size` field.
    pub fn expected_mean(&self, size: usize) -> f64 {
        let blob_mass = 2.0 * std::f64::consts::PI * self.lump_width.powi(2);
        self.dc_offset + self.mean_lump_count * self.lump_amplitude * blob_mass / (size * size) as f64
    }

    pub fn is_valid(&self) -> bool {
        [
            self.mean_lump_count,
            self.lump_amplitude,
            self.lump_width,
            self.dc_offset,
        ]
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0)
    }

    pub fn fingerprint(&self) -> String {
        crate::fingerprint(&format!(
            "lumpy:{:?}:{:?}:{:?}:{:?}",
            self.mean_lump_count, self.lump_amplitude, self.lump_width, self.dc_offset
        ))
    }
}

/// A sampled background, clipped to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub image: Image,
    /// Fraction of pixels that were clipped.
    pub clipped_fraction: f64,
    pub lump_count: usize,
}

/// Unclipped field with one blob per `(y, x)` center.
pub fn render_lumps(params: &LumpyParams, size: usize, centers: &[(f64, f64)]) -> Image {
    let n = size as f64;
    let inv = 1.0 / (2.0 * params.lump_width.powi(2)).max(f64::MIN_POSITIVE);
    let mut acc = vec![params.dc_offset; size * size];
    for &(cy, cx) in centers {
        for y in 0..size {
            let dy = wrap(y as f64 - cy, n);
            let ey = dy * dy;
            for x in 0..size {
                let dx = wrap(x as f64 - cx, n);
                acc[y * size + x] += params.lump_amplitude * (-(ey + dx * dx) * inv).exp();
            }
        }
    }
    Image::new(size, size, acc.into_iter().map(|v| v as f32).collect()).expect("finite lumps")
}

/// Minimal-image displacement on a ring of length `n`.
fn wrap(d: f64, n: f64) -> f64 {
    d - n * (d / n).round()
}

pub fn sample_lumpy_background(params: &LumpyParams, size: usize, seed: u64) -> Phantom {
    assert!(params.is_valid(), "lumpy parameters must be finite and non-negative");
    let mut rng = crate::rng::stream(seed, 0);
    let count = if params.mean_lump_count > 0.0 {
        Poisson::new(params.mean_lump_count)
            .expect("positive Poisson mean")
            .sample(&mut rng) as usize
    } else {
        0
    };
    let n = size as f64;
    let centers: Vec<(f64, f64)> = (0..count)
        .map(|_| (rng.random::<f64>() * n, rng.random::<f64>() * n))
        .collect();
    let raw = render_lumps(params, size, &centers);
    let clipped = raw.data().iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
    Phantom {
        image: raw.clamp01(),
        clipped_fraction: clipped as f64 / raw.len() as f64,
        lump_count: count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_lumps_is_constant() {
        let p = LumpyParams {
            mean_lump_count: 0.0,
            ..Default::default()
        };
        let ph = sample_lumpy_background(&p, 16, 5);
        assert!(ph.image.data().iter().all(|&v| v == 0.1f64 as f32));
        assert_eq!(ph.clipped_fraction, 0.0);
    }

    #[test]
    fn single_lump_peak() {
        let p = LumpyParams {
            lump_amplitude: 1.5,
            ..Default::default()
        };
        let img = render_lumps(&p, 32, &[(16.0, 16.0)]);
        assert!((img.get(16, 16) as f64 - 1.6).abs() < 1e-6);
        // symmetric falloff
        assert_eq!(img.get(16, 12), img.get(16, 20));
    }

    #[test]
    fn deterministic_given_seed() {
        let p = LumpyParams::default();
        assert_eq!(sample_lumpy_background(&p, 32, 11), sample_lumpy_background(&p, 32, 11));
        assert_ne!(sample_lumpy_background(&p, 32, 11), sample_lumpy_background(&p, 32, 12));
    }

    #[test]
    fn default_clipping_is_small() {
        let p = LumpyParams::default();
        let frac: f64 = (0..50)
            .map(|s| sample_lumpy_background(&p, 64, s).clipped_fraction)
            .sum::<f64>()
            / 50.0;
        // about 1.2% with periodic blobs
        assert!(frac < 0.02, "{frac}");
    }
}
