//! Structural similarity and its distribution over random image pairs.

use rand::Rng;

use super::EvalError;
use crate::imaging::Image;

const WINDOW: usize = 7;
const WINDOW_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn window() -> [f64; WINDOW] {
    let c = (WINDOW / 2) as f64;
    let mut w = [0.0; WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-(i as f64 - c).powi(2) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian filter over the valid region.
fn filter(src: &[f64], h: usize, w: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - WINDOW + 1, w - WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM with a 7×7 Gaussian window (σ = 1.5) on unit dynamic range.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, EvalError> {
    if a.dims() != b.dims() {
        return Err(EvalError::Shape(a.dims(), b.dims()));
    }
    let (h, w) = a.dims();
    if h < WINDOW || w < WINDOW {
        return Err(EvalError::Empty("image smaller than the SSIM window"));
    }
    let k = window();
    let av: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let bv: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mu_a = filter(&av, h, w, &k);
    let mu_b = filter(&bv, h, w, &k);
    let e_aa = filter(&prod(&av, &av), h, w, &k);
    let e_bb = filter(&prod(&bv, &bv), h, w, &k);
    let e_ab = filter(&prod(&av, &bv), h, w, &k);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * (ma * mb) + C1) * (2.0 * cov + C2);
        let den = (ma * ma + mb * mb + C1) * (va + vb + C2);
        total += num / den;
    }
    Ok((total / mu_a.len() as f64).clamp(-1.0, 1.0))
}

/// Histogram density of SSIM over random cross-pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct SsimPdf {
    /// `bins + 1` edges spanning `[-1, 1]`.
    pub bin_edges: Vec<f64>,
    pub densities: Vec<f64>,
    pub sample_count: usize,
    /// Mean SSIM over the pairs.
    pub mean: f64,
}

impl SsimPdf {
    pub fn bin_width(&self) -> f64 {
        self.bin_edges[1] - self.bin_edges[0]
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect()
    }

    pub fn integral(&self) -> f64 {
        self.densities.iter().sum::<f64>() * self.bin_width()
    }

    /// Pair counts recovered from the densities.
    pub fn counts(&self) -> Vec<f64> {
        let scale = self.sample_count as f64 * self.bin_width();
        self.densities.iter().map(|d| d * scale).collect()
    }
}

/// SSIM of `pairs` uniformly drawn `(a_i, b_j)` pairs, binned on `[-1, 1]`.
/// An SSIM of exactly 1 lands in the last bin.
pub fn ssim_pdf(set_a: &[Image], set_b: &[Image], pairs: usize, seed: u64, bins: usize) -> Result<SsimPdf, EvalError> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(EvalError::Empty("ssim_pdf needs two nonempty ensembles"));
    }
    if pairs == 0 || bins == 0 {
        return Err(EvalError::Empty("ssim_pdf needs pairs > 0 and bins > 0"));
    }
    let mut rng = crate::rng::stream(seed, 0);
    let index: Vec<(usize, usize)> = (0..pairs)
        .map(|_| (rng.random_range(0..set_a.len()), rng.random_range(0..set_b.len())))
        .collect();
    let values = crate::parallel::par_map(&index, |&(i, j)| ssim(&set_a[i], &set_b[j]));
    let values: Vec<f64> = values.into_iter().collect::<Result<_, _>>()?;
    let width = 2.0 / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in &values {
        let k = (((v + 1.0) / width).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    let norm = 1.0 / (pairs as f64 * width);
    Ok(SsimPdf {
        bin_edges: (0..=bins).map(|k| -1.0 + k as f64 * width).collect(),
        densities: counts.iter().map(|&c| c as f64 * norm).collect(),
        sample_count: pairs,
        mean: values.iter().sum::<f64>() / pairs as f64,
    })
}

/// `∫|p − q|`, in `[0, 2]`.
pub fn pdf_l1_distance(p: &SsimPdf, q: &SsimPdf) -> Result<f64, EvalError> {
    if p.bin_edges != q.bin_edges {
        return Err(EvalError::Bins);
    }
    Ok(p.densities
        .iter()
        .zip(&q.densities)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        * p.bin_width())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(seed: u64) -> Image {
        let mut rng = crate::rng::stream(seed, 0);
        Image::gaussian(24, 24, &mut rng).map(|v| (0.5 + 0.15 * v).clamp(0.0, 1.0))
    }

    #[test]
    fn self_similarity_is_exact() {
        let x = texture(1);
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn symmetric() {
        let (a, b) = (texture(1), texture(2));
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-7);
    }

    #[test]
    fn inverted_half_plane() {
        let x = Image::from_fn(32, 32, |_, c| if c < 16 { 0.0 } else { 1.0 });
        let inv = x.map(|v| 1.0 - v);
        let s = ssim(&x, &inv).unwrap();
        // golden value
        assert!((s - GOLDEN_HALF_PLANE).abs() < 1e-9, "{s}");
        assert!(s < 0.1);
    }

    // matches an independent numpy evaluation to 1e-15
    const GOLDEN_HALF_PLANE: f64 = -0.097_537_249_674_183;

    #[test]
    fn shape_mismatch() {
        assert!(ssim(&Image::zeros(16, 16), &Image::zeros(16, 17)).is_err());
    }

    #[test]
    fn single_image_is_point_mass_at_one() {
        let x = [texture(3)];
        let p = ssim_pdf(&x, &x, 50, 0, 40).unwrap();
        assert!((p.densities[39] * p.bin_width() - 1.0).abs() < 1e-12);
        assert!(p.densities[..39].iter().all(|&d| d == 0.0));
        assert_eq!(p.mean, 1.0);
    }

    #[test]
    fn density_normalization_and_mass() {
        let a: Vec<Image> = (0..6).map(texture).collect();
        let b: Vec<Image> = (10..16).map(texture).collect();
        let p = ssim_pdf(&a, &b, 333, 7, 64).unwrap();
        assert!((p.integral() - 1.0).abs() < 1e-6);
        let mass: f64 = p.counts().iter().sum();
        assert!((mass - 333.0).abs() < 1e-6);
        assert_eq!(pdf_l1_distance(&p, &p).unwrap(), 0.0);
        let q = ssim_pdf(&a, &b, 10, 7, 32).unwrap();
        assert_eq!(pdf_l1_distance(&p, &q), Err(EvalError::Bins));
    }
}
