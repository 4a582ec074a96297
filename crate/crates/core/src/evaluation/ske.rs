//! Signal-known-exactly detection patches.

use rand::Rng;

use super::EvalError;
use crate::imaging::Image;

/// A centered Gaussian signal on square background patches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SkeTask {
    pub patch_size: usize,
    /// Gaussian std in reference units.
    pub signal_width: f64,
    pub signal_amplitude: f64,
    /// Pixels per width unit on a 64-pixel patch. The pixel std is
    /// `signal_width · width_scale · patch_size / 64`.
    pub width_scale: f64,
}

impl Default for SkeTask {
    fn default() -> Self {
        Self {
            patch_size: 32,
            signal_width: 0.3,
            signal_amplitude: 0.32,
            width_scale: 10.0,
        }
    }
}

impl SkeTask {
    pub fn sigma_px(&self) -> f64 {
        self.signal_width * self.width_scale * self.patch_size as f64 / 64.0
    }

    /// Requires the ±3σ extent to fit in the patch.
    pub fn validate(&self) -> Result<(), EvalError> {
        let s = self.sigma_px();
        if self.patch_size == 0 || s <= 0.0 || !s.is_finite() {
            return Err(EvalError::Task(format!(
                "signal std {s} px on a {}-px patch",
                self.patch_size
            )));
        }
        if 6.0 * s > self.patch_size as f64 {
            return Err(EvalError::Task(format!(
                "signal std {s:.3} px does not fit in a {}-px patch",
                self.patch_size
            )));
        }
        if self.signal_amplitude < 0.0 || !self.signal_amplitude.is_finite() {
            return Err(EvalError::Task(format!("amplitude {}", self.signal_amplitude)));
        }
        Ok(())
    }

    /// The signal profile, peaked at pixel `(p/2, p/2)`.
    pub fn signal(&self) -> Image {
        let p = self.patch_size;
        let c = (p / 2) as f64;
        let inv = 1.0 / (2.0 * self.sigma_px().powi(2));
        Image::from_fn(p, p, |y, x| {
            let r2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
            (self.signal_amplitude * (-r2 * inv).exp()) as f32
        })
    }
}

/// Balanced, paired classes: `present[i] = absent[i] + signal`.
#[derive(Clone, Debug, PartialEq)]
pub struct SkePatches {
    pub absent: Vec<Image>,
    pub present: Vec<Image>,
}

impl SkePatches {
    pub fn len(&self) -> usize {
        self.absent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.absent.is_empty()
    }

    /// Every patch with its label (`true` = signal present).
    pub fn labeled(&self) -> impl Iterator<Item = (&Image, bool)> {
        self.absent
            .iter()
            .map(|p| (p, false))
            .chain(self.present.iter().map(|p| (p, true)))
    }

    pub fn split_at(&self, n: usize) -> (SkePatches, SkePatches) {
        let (a0, a1) = self.absent.split_at(n);
        let (p0, p1) = self.present.split_at(n);
        (
            SkePatches {
                absent: a0.to_vec(),
                present: p0.to_vec(),
            },
            SkePatches {
                absent: a1.to_vec(),
                present: p1.to_vec(),
            },
        )
    }
}

/// Crops `per_background` random patches from each background and makes a
/// signal-present copy of each.
pub fn make_ske_patches(
    backgrounds: &[Image],
    task: &SkeTask,
    per_background: usize,
    seed: u64,
) -> Result<SkePatches, EvalError> {
    task.validate()?;
    let p = task.patch_size;
    let signal = task.signal();
    let mut rng = crate::rng::stream(seed, 0);
    let mut out = SkePatches {
        absent: Vec::with_capacity(backgrounds.len() * per_background),
        present: Vec::with_capacity(backgrounds.len() * per_background),
    };
    for bg in backgrounds {
        let (h, w) = bg.dims();
        if p > h || p > w {
            return Err(EvalError::PatchTooLarge {
                patch: p,
                height: h,
                width: w,
            });
        }
        for _ in 0..per_background {
            let y0 = rng.random_range(0..=h - p);
            let x0 = rng.random_range(0..=w - p);
            let absent = bg.crop(y0, x0, p);
            out.present.push(absent.zip_map(&signal, |a, s| a + s));
            out.absent.push(absent);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn backgrounds() -> Vec<Image> {
        (0..4)
            .map(|i| Image::from_fn(40, 40, |y, x| ((y * 7 + x * 3 + i) % 11) as f32 * 0.05))
            .collect()
    }

    #[test]
    fn width_rule() {
        assert!((SkeTask::default().sigma_px() - 1.5).abs() < 1e-12);
        let big = SkeTask {
            patch_size: 64,
            ..Default::default()
        };
        assert!((big.sigma_px() - 3.0).abs() < 1e-12);
        let wide = SkeTask {
            signal_width: 3.0,
            ..Default::default()
        };
        assert!(wide.validate().is_err());
    }

    #[test]
    fn peak_is_amplitude() {
        let s = SkeTask::default().signal();
        assert_eq!(s.get(16, 16), 0.32f32);
        let max = s.data().iter().cloned().fold(f32::MIN, f32::max);
        assert_eq!(max, 0.32f32);
    }

    #[test]
    fn zero_amplitude_gives_identical_classes() {
        let t = SkeTask {
            signal_amplitude: 0.0,
            ..Default::default()
        };
        let p = make_ske_patches(&backgrounds(), &t, 3, 1).unwrap();
        assert_eq!(p.absent, p.present);
        assert_eq!(p.len(), 12);
    }

    #[test]
    fn present_minus_absent_is_signal() {
        let t = SkeTask::default();
        let p = make_ske_patches(&backgrounds(), &t, 2, 2).unwrap();
        let s = t.signal();
        for (a, b) in p.absent.iter().zip(&p.present) {
            for ((x, y), z) in a.data().iter().zip(b.data()).zip(s.data()) {
                assert_eq!(*y, *x + *z);
            }
        }
        assert_eq!(p.labeled().filter(|(_, l)| *l).count(), 8);
    }

    #[test]
    fn patch_larger_than_image() {
        let t = SkeTask {
            patch_size: 48,
            ..Default::default()
        };
        assert!(matches!(
            make_ske_patches(&backgrounds(), &t, 1, 0),
            Err(EvalError::PatchTooLarge { .. })
        ));
    }
}
