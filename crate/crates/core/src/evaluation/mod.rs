//! Task-based and statistical image-quality metrics.

mod hotelling;
mod ske;
mod spectrum;
mod ssim;
pub mod stats;

pub use hotelling::{auc, hotelling_observer, roc_curve, HotellingObserver, ObserverResult, Regularization};
pub use ske::{make_ske_patches, SkePatches, SkeTask};
pub use spectrum::{highfreq_band_fraction, highfreq_residual_energy, HIGHFREQ_CUTOFF};
pub use ssim::{pdf_l1_distance, ssim, ssim_pdf, SsimPdf};

use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("patch size {patch} exceeds image {height}x{width}")]
    PatchTooLarge { patch: usize, height: usize, width: usize },
    #[error("invalid SKE task: {0}")]
    Task(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error("covariance is singular; enable regularization")]
    Singular,
    #[error("histograms have different bin edges")]
    Bins,
}

/// `metric,value,fingerprint` rows.
pub fn write_metrics_csv(path: &Path, rows: &[(String, f64)], fingerprint: &str) -> io::Result<()> {
    let mut out = String::from("metric,value,fingerprint\n");
    for (name, value) in rows {
        out.push_str(&format!("{name},{value:?},{fingerprint}\n"));
    }
    std::fs::write(path, out)
}

/// `bin_center,density` rows.
pub fn write_pdf_csv(path: &Path, pdf: &SsimPdf) -> io::Result<()> {
    let mut f = io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "bin_center,density")?;
    for (c, d) in pdf.bin_centers().iter().zip(&pdf.densities) {
        writeln!(f, "{c:?},{d:?}")?;
    }
    f.flush()
}

/// `fpr,tpr` rows.
pub fn write_roc_csv(path: &Path, roc: &[(f64, f64)]) -> io::Result<()> {
    let mut f = io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "fpr,tpr")?;
    for (x, y) in roc {
        writeln!(f, "{x:?},{y:?}")?;
    }
    f.flush()
}
