//! High-frequency residual energy.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::imaging::Image;

/// Radial frequency (cycles per pixel) above which energy counts as high.
/// Half the Nyquist frequency.
pub const HIGHFREQ_CUTOFF: f64 = 0.25;

fn radius(ky: usize, kx: usize, h: usize, w: usize) -> f64 {
    let f = |k: usize, n: usize| {
        let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        k / n as f64
    };
    (f(ky, h).powi(2) + f(kx, w).powi(2)).sqrt()
}

/// Fraction of the non-DC spectral energy of one image above the cutoff.
/// A constant image has no non-DC energy and scores 0.
fn image_fraction(img: &Image, planner: &mut FftPlanner<f64>) -> f64 {
    let (h, w) = img.dims();
    let mut buf: Vec<Complex<f64>> = img.data().iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    let row = planner.plan_fft_forward(w);
    for r in buf.chunks_exact_mut(w) {
        row.process(r);
    }
    let col = planner.plan_fft_forward(h);
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
    let (mut high, mut total) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if y == 0 && x == 0 {
                continue;
            }
            let e = buf[y * w + x].norm_sqr();
            total += e;
            if radius(y, x, h, w) > HIGHFREQ_CUTOFF {
                high += e;
            }
        }
    }
    if total > 0.0 {
        high / total
    } else {
        0.0
    }
}

/// Ensemble mean of the per-image high-band energy fraction.
pub fn highfreq_residual_energy(ensemble: &[Image]) -> f64 {
    if ensemble.is_empty() {
        return 0.0;
    }
    let fractions = crate::parallel::par_map(ensemble, |img| image_fraction(img, &mut FftPlanner::new()));
    fractions.iter().sum::<f64>() / ensemble.len() as f64
}

/// Share of non-DC frequency bins above the cutoff on an `h×w` grid: the
/// expected score of white noise.
pub fn highfreq_band_fraction(h: usize, w: usize) -> f64 {
    let mut high = 0usize;
    for y in 0..h {
        for x in 0..w {
            if (y, x) != (0, 0) && radius(y, x, h, w) > HIGHFREQ_CUTOFF {
                high += 1;
            }
        }
    }
    high as f64 / (h * w - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_images_score_zero() {
        assert_eq!(
            highfreq_residual_energy(&[Image::filled(16, 16, 0.3), Image::zeros(16, 16)]),
            0.0
        );
        assert_eq!(highfreq_residual_energy(&[]), 0.0);
    }

    #[test]
    fn checkerboard_is_all_high() {
        let img = Image::from_fn(16, 16, |y, x| ((y + x) % 2) as f32);
        assert!((highfreq_residual_energy(&[img]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slow_cosine_is_all_low() {
        let img = Image::from_fn(32, 32, |_, x| (2.0 * std::f32::consts::PI * x as f32 / 32.0).cos());
        assert!(highfreq_residual_energy(&[img]) < 1e-12);
    }
}
