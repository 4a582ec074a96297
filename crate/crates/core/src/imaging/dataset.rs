//! Dataset directories: a `manifest.txt` of `key=value` lines plus one raw
//! little-endian float32 file per sample.
//!
//! Each sample file holds the planes listed under `planes` in that order,
//! e.g. `planes=y,x0` stores the measurement followed by its ground truth.
//! Every file's SHA-256 is recorded as `checksum.<file>=<hex>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::Image;

pub const MANIFEST: &str = "manifest.txt";
const FORMAT: &str = "amid-dataset";
const VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("checksum mismatch for {file}: manifest {expected}, found {actual}")]
    Checksum {
        file: String,
        expected: String,
        actual: String,
    },
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("manifest is missing key `{0}`")]
    MissingKey(&'static str),
    #[error("{file}: expected {expected} bytes, found {actual}")]
    Size {
        file: String,
        expected: usize,
        actual: usize,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What a stored plane contains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Plane {
    /// Noisy measurement `y`.
    Measurement,
    /// Clean object `x₀` (ground truth or a generated sample).
    Object,
}

impl Plane {
    fn tag(self) -> &'static str {
        match self {
            Plane::Measurement => "y",
            Plane::Object => "x0",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Sample {
    pub measurement: Option<Image>,
    pub truth: Option<Image>,
}

/// An ensemble of equally sized samples with its provenance metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    /// Noise std of the measurements, when known.
    pub sigma: Option<f64>,
    pub samples: Vec<Sample>,
    /// Free-form provenance (`seed`, `params`, `schedule`, `normalization`,
    /// `origin`, ...). Keys must not contain `=` or newlines.
    pub meta: BTreeMap<String, String>,
}

impl Dataset {
    pub fn new(height: usize, width: usize) -> Self {
        let mut meta = BTreeMap::new();
        for key in ["seed", "params", "schedule", "normalization"] {
            meta.insert(key.to_string(), "none".to_string());
        }
        Self {
            height,
            width,
            sigma: None,
            samples: Vec::new(),
            meta,
        }
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn has_measurements(&self) -> bool {
        self.samples.first().is_some_and(|s| s.measurement.is_some())
    }

    pub fn has_truth(&self) -> bool {
        self.samples.first().is_some_and(|s| s.truth.is_some())
    }

    pub fn truths(&self) -> Vec<Image> {
        self.samples.iter().filter_map(|s| s.truth.clone()).collect()
    }

    pub fn measurements(&self) -> Vec<Image> {
        self.samples.iter().filter_map(|s| s.measurement.clone()).collect()
    }

    fn planes(&self) -> Vec<Plane> {
        let mut p = Vec::new();
        if self.has_measurements() {
            p.push(Plane::Measurement);
        }
        if self.has_truth() {
            p.push(Plane::Object);
        }
        p
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let (m, t) = (self.has_measurements(), self.has_truth());
        for (i, s) in self.samples.iter().enumerate() {
            if s.measurement.is_some() != m || s.truth.is_some() != t {
                return Err(DatasetError::Invalid(format!("sample {i} has different planes")));
            }
            for img in s.measurement.iter().chain(s.truth.iter()) {
                if img.dims() != (self.height, self.width) {
                    return Err(DatasetError::Invalid(format!(
                        "sample {i} is {:?}, dataset is {}x{}",
                        img.dims(),
                        self.height,
                        self.width
                    )));
                }
            }
        }
        if !self.samples.is_empty() && !m && !t {
            return Err(DatasetError::Invalid("samples carry no planes".into()));
        }
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(DatasetError::Invalid(format!("bad metadata entry `{k}`")));
            }
        }
        Ok(())
    }
}

fn file_name(i: usize) -> String {
    format!("sample_{i:05}.f32")
}

pub fn dataset_write(dir: &Path, ds: &Dataset) -> Result<(), DatasetError> {
    ds.validate()?;
    fs::create_dir_all(dir)?;
    let planes = ds.planes();
    let mut lines = vec![
        format!("format={FORMAT}"),
        format!("version={VERSION}"),
        format!("count={}", ds.samples.len()),
        format!("height={}", ds.height),
        format!("width={}", ds.width),
        format!(
            "planes={}",
            planes.iter().map(|p| p.tag()).collect::<Vec<_>>().join(",")
        ),
        format!("sigma={}", ds.sigma.map_or("unknown".to_string(), |s| format!("{s:?}"))),
    ];
    for (k, v) in &ds.meta {
        lines.push(format!("{k}={v}"));
    }
    for (i, s) in ds.samples.iter().enumerate() {
        let mut bytes = Vec::with_capacity(planes.len() * ds.height * ds.width * 4);
        for img in s.measurement.iter().chain(s.truth.iter()) {
            for v in img.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let name = file_name(i);
        fs::write(dir.join(&name), &bytes)?;
        lines.push(format!("checksum.{name}={}", crate::sha256_hex(&bytes)));
    }
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

pub fn dataset_read(dir: &Path) -> Result<Dataset, DatasetError> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        return Err(DatasetError::MissingFile(manifest_path));
    }
    let text = fs::read_to_string(&manifest_path)?;
    let mut kv: BTreeMap<String, String> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| DatasetError::Manifest {
            line: n + 1,
            msg: "expected key=value".into(),
        })?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }

    let take =
        |kv: &mut BTreeMap<String, String>, key: &'static str| kv.remove(key).ok_or(DatasetError::MissingKey(key));
    let parse_usize = |v: String, key: &str| {
        v.parse::<usize>()
            .map_err(|_| DatasetError::Invalid(format!("`{key}` is not an integer: {v}")))
    };
    if take(&mut kv, "format")? != FORMAT {
        return Err(DatasetError::Invalid("not an amid dataset".into()));
    }
    let version = take(&mut kv, "version")?;
    if version != VERSION {
        return Err(DatasetError::Invalid(format!("unsupported version {version}")));
    }
    let count = parse_usize(take(&mut kv, "count")?, "count")?;
    let height = parse_usize(take(&mut kv, "height")?, "height")?;
    let width = parse_usize(take(&mut kv, "width")?, "width")?;
    let planes_text = take(&mut kv, "planes")?;
    let planes: Vec<Plane> = planes_text
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| match s {
            "y" => Ok(Plane::Measurement),
            "x0" => Ok(Plane::Object),
            other => Err(DatasetError::Invalid(format!("unknown plane `{other}`"))),
        })
        .collect::<Result<_, _>>()?;
    let sigma = match take(&mut kv, "sigma")?.as_str() {
        "unknown" => None,
        s => Some(
            s.parse::<f64>()
                .map_err(|_| DatasetError::Invalid(format!("bad sigma `{s}`")))?,
        ),
    };

    let plane_len = height * width;
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let name = file_name(i);
        let expected = kv
            .remove(&format!("checksum.{name}"))
            .ok_or(DatasetError::MissingKey("checksum"))?;
        let path = dir.join(&name);
        if !path.exists() {
            return Err(DatasetError::MissingFile(path));
        }
        let bytes = fs::read(&path)?;
        let actual = crate::sha256_hex(&bytes);
        if actual != expected {
            return Err(DatasetError::Checksum {
                file: name,
                expected,
                actual,
            });
        }
        if bytes.len() != planes.len() * plane_len * 4 {
            return Err(DatasetError::Size {
                file: name,
                expected: planes.len() * plane_len * 4,
                actual: bytes.len(),
            });
        }
        let mut sample = Sample::default();
        for (p, chunk) in planes.iter().zip(bytes.chunks_exact(plane_len * 4)) {
            let data = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let img = Image::new(height, width, data).map_err(|e| DatasetError::Invalid(format!("{name}: {e}")))?;
            match p {
                Plane::Measurement => sample.measurement = Some(img),
                Plane::Object => sample.truth = Some(img),
            }
        }
        samples.push(sample);
    }
    kv.retain(|k, _| !k.starts_with("checksum."));
    Ok(Dataset {
        height,
        width,
        sigma,
        samples,
        meta: kv,
    })
}
