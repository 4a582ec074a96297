//! Measurement noise level estimation.

use super::{Image, ImageError};

/// `Φ⁻¹(3/4)`: the MAD of a unit Gaussian.
const MAD_TO_STD: f64 = 0.674_489_750_196_081_7;

/// Which noise level a pipeline stage should use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NoiseEstimator {
    /// The simulated σ recorded with the measurement.
    #[default]
    Known,
    /// Robust MAD of the diagonal Haar detail band.
    HighpassMad,
    /// Plain `std(y)` over the whole measurement. Biased upward by the
    /// object's own variance.
    PlainStd,
}

impl NoiseEstimator {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseEstimator::Known => "known",
            NoiseEstimator::HighpassMad => "highpass",
            NoiseEstimator::PlainStd => "std",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "known" => Some(Self::Known),
            "highpass" => Some(Self::HighpassMad),
            "std" => Some(Self::PlainStd),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseEstimate {
    /// `median(|HH|) / 0.6745` over non-overlapping 2×2 blocks.
    pub highpass_mad: f64,
    /// Population standard deviation of all pixels.
    pub plain_std: f64,
}

impl NoiseEstimate {
    pub fn get(&self, which: NoiseEstimator) -> Option<f64> {
        match which {
            NoiseEstimator::Known => None,
            NoiseEstimator::HighpassMad => Some(self.highpass_mad),
            NoiseEstimator::PlainStd => Some(self.plain_std),
        }
    }
}

/// Estimates the std of additive white noise in `y`.
///
/// The diagonal detail coefficient `(a − b − c + d)/2` of each 2×2 block has
/// the same variance as the pixel noise and almost no response to smooth
/// structure, so its median absolute value gives a robust estimate.
pub fn estimate_noise_std(y: &Image) -> Result<NoiseEstimate, ImageError> {
    let (h, w) = y.dims();
    if h < 16 || w < 16 {
        return Err(ImageError::TooSmallForEstimate { height: h, width: w });
    }
    let mut detail = Vec::with_capacity((h / 2) * (w / 2));
    for by in 0..h / 2 {
        for bx in 0..w / 2 {
            let (r, c) = (2 * by, 2 * bx);
            let a = y.get(r, c) as f64;
            let b = y.get(r, c + 1) as f64;
            let cc = y.get(r + 1, c) as f64;
            let d = y.get(r + 1, c + 1) as f64;
            detail.push(((a - b - cc + d) / 2.0).abs());
        }
    }
    detail.sort_by(f64::total_cmp);
    let n = detail.len();
    let median = if n % 2 == 1 {
        detail[n / 2]
    } else {
        0.5 * (detail[n / 2 - 1] + detail[n / 2])
    };
    Ok(NoiseEstimate {
        highpass_mad: median / MAD_TO_STD,
        plain_std: y.variance().sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{sample_lumpy_background, simulate_measurement, LumpyParams};

    #[test]
    fn constant_image_has_no_noise() {
        let e = estimate_noise_std(&Image::filled(32, 32, 0.4)).unwrap();
        assert_eq!(e.highpass_mad, 0.0);
        assert!(e.plain_std < 1e-7);
    }

    #[test]
    fn too_small_rejected() {
        assert!(estimate_noise_std(&Image::zeros(8, 32)).is_err());
    }

    #[test]
    fn unit_noise_calibration() {
        let mut rng = crate::rng::stream(17, 0);
        let img = Image::gaussian(256, 256, &mut rng);
        let e = estimate_noise_std(&img).unwrap();
        assert!((e.highpass_mad - 1.0).abs() < 0.05, "{}", e.highpass_mad);
    }

    #[test]
    fn lumpy_phantom_estimate_beats_plain_std() {
        let p = LumpyParams::default();
        let x0 = sample_lumpy_background(&p, 64, 4).image;
        let m = simulate_measurement(&x0, 0.08, 5);
        let e = estimate_noise_std(&m.y).unwrap();
        assert!((e.highpass_mad / 0.08 - 1.0).abs() < 0.15, "{}", e.highpass_mad);
        assert!(e.plain_std > 0.08 * 1.15, "{}", e.plain_std);
    }
}
