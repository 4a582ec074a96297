//! The Hotelling observer and ROC analysis.

use nalgebra::{DMatrix, DVector};

use super::{EvalError, SkePatches};
use crate::imaging::Image;

/// Ridge added to the class covariance before inversion.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum Regularization {
    None,
    /// `γ = factor · trace(S) / dim`.
    Relative(f64),
    /// `γ = 1e-3 · trace(S) / dim`.
    #[default]
    Standard,
}

impl Regularization {
    fn gamma(&self, trace: f64, dim: usize) -> Option<f64> {
        match self {
            Regularization::None => None,
            Regularization::Relative(f) => Some(f * trace / dim as f64),
            Regularization::Standard => Some(1e-3 * trace / dim as f64),
        }
    }
}

/// A trained linear template `w = S⁻¹Δs̄`.
#[derive(Clone, Debug, PartialEq)]
pub struct HotellingObserver {
    pub template: Image,
    /// `√(Δs̄ᵀ S⁻¹ Δs̄)` on the training set.
    pub train_snr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObserverResult {
    pub template: Image,
    pub statistics_present: Vec<f64>,
    pub statistics_absent: Vec<f64>,
    pub auc: f64,
    /// Empirical SNR of the test statistics.
    pub snr: f64,
}

fn class_matrix(patches: &[Image]) -> (DMatrix<f64>, DVector<f64>) {
    let (n, d) = (patches.len(), patches[0].len());
    let mut x = DMatrix::<f64>::zeros(n, d);
    for (i, p) in patches.iter().enumerate() {
        for (j, &v) in p.data().iter().enumerate() {
            x[(i, j)] = v as f64;
        }
    }
    let mean = DVector::from_iterator(d, x.column_iter().map(|c| c.mean()));
    for (j, mut col) in x.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    (x, mean)
}

pub fn hotelling_observer(train: &SkePatches, reg: Regularization) -> Result<HotellingObserver, EvalError> {
    if train.absent.len() < 2 || train.present.len() < 2 {
        return Err(EvalError::Empty("need at least two training patches per class"));
    }
    let dims = train.absent[0].dims();
    if let Some(p) = train.labeled().find(|(p, _)| p.dims() != dims) {
        return Err(EvalError::Shape(dims, p.0.dims()));
    }
    let d = dims.0 * dims.1;
    let (xa, ma) = class_matrix(&train.absent);
    let (xp, mp) = class_matrix(&train.present);
    let sa = xa.tr_mul(&xa) / (train.absent.len() - 1) as f64;
    let sp = xp.tr_mul(&xp) / (train.present.len() - 1) as f64;
    let mut s = (sa + sp) * 0.5;
    match reg.gamma(s.trace(), d) {
        Some(g) => {
            for i in 0..d {
                s[(i, i)] += g;
            }
        }
        None => {
            if train.absent.len() + train.present.len() - 2 < d {
                return Err(EvalError::Singular);
            }
        }
    }
    let chol = s.cholesky().ok_or(EvalError::Singular)?;
    let delta = mp - ma;
    let w = chol.solve(&delta);
    let train_snr = delta.dot(&w).max(0.0).sqrt();
    let template =
        Image::new(dims.0, dims.1, w.iter().map(|&v| v as f32).collect()).map_err(|_| EvalError::Singular)?;
    Ok(HotellingObserver { template, train_snr })
}

impl HotellingObserver {
    pub fn statistic(&self, patch: &Image) -> f64 {
        self.template
            .data()
            .iter()
            .zip(patch.data())
            .map(|(&w, &x)| w as f64 * x as f64)
            .sum()
    }

    pub fn evaluate(&self, test: &SkePatches) -> Result<ObserverResult, EvalError> {
        for (p, _) in test.labeled() {
            if p.dims() != self.template.dims() {
                return Err(EvalError::Shape(self.template.dims(), p.dims()));
            }
        }
        let present: Vec<f64> = test.present.iter().map(|p| self.statistic(p)).collect();
        let absent: Vec<f64> = test.absent.iter().map(|p| self.statistic(p)).collect();
        let auc = auc(&present, &absent)?;
        let (mp, vp) = mean_var(&present);
        let (ma, va) = mean_var(&absent);
        let pooled = (0.5 * (vp + va)).sqrt();
        let snr = if pooled > 0.0 { (mp - ma) / pooled } else { 0.0 };
        Ok(ObserverResult {
            template: self.template.clone(),
            statistics_present: present,
            statistics_absent: absent,
            auc,
            snr,
        })
    }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var)
}

/// Mann–Whitney estimate of `P(s_present > s_absent)`, ties counted ½.
pub fn auc(present: &[f64], absent: &[f64]) -> Result<f64, EvalError> {
    if present.is_empty() || absent.is_empty() {
        return Err(EvalError::Empty("auc needs both classes"));
    }
    let mut all: Vec<(f64, bool)> = present
        .iter()
        .map(|&v| (v, true))
        .chain(absent.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // sum of mid-ranks of the present class
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        rank_sum += mid * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let (np, na) = (present.len() as f64, absent.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * na))
}

/// Empirical ROC points `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(present: &[f64], absent: &[f64]) -> Vec<(f64, f64)> {
    let mut thresholds: Vec<f64> = present.iter().chain(absent).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (np, na) = (present.len().max(1) as f64, absent.len().max(1) as f64);
    let mut out = vec![(0.0, 0.0)];
    for t in thresholds {
        let tp = present.iter().filter(|&&v| v >= t).count() as f64;
        let fp = absent.iter().filter(|&&v| v >= t).count() as f64;
        out.push((fp / na, tp / np));
    }
    out
}
