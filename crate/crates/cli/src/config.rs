//! `RunConfig`: the TOML experiment description shared by every verb.

use std::path::Path;

use serde::{Deserialize, Serialize};

use amid::denoiser::DenoiserConfig;
use amid::evaluation::SkeTask;
use amid::imaging::{LumpyParams, NoiseEstimator};
use amid::sampling::SamplerConfig;
use amid::schedule::{find_integration_step, NoiseSchedule};
use amid::tensor::AdamConfig;
use amid::training::TrainConfig;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LumpySection {
    /// Blob count at the reference size; rescaled to keep the density.
    pub mean_lump_count: f64,
    pub reference_size: usize,
    pub lump_amplitude: f64,
    pub lump_width: f64,
    pub dc_offset: f64,
}

impl Default for LumpySection {
    fn default() -> Self {
        let p = LumpyParams::default();
        Self {
            mean_lump_count: p.mean_lump_count,
            reference_size: 64,
            lump_amplitude: p.lump_amplitude,
            lump_width: p.lump_width,
            dc_offset: p.dc_offset,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub count: usize,
    pub size: usize,
    pub sigma: f64,
    /// `known`, `highpass` or `std`.
    pub noise_estimator: String,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            count: 256,
            size: 32,
            sigma: 0.1,
            noise_estimator: "known".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSection {
    pub channels: usize,
    pub depth: usize,
    pub time_embed_dim: usize,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        let c = DenoiserConfig::default();
        Self {
            channels: c.channels,
            depth: c.depth,
            time_embed_dim: c.time_embed_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lambda: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    /// Cosine learning-rate decay horizon; `0` keeps the rate constant.
    pub decay_steps: u64,
    /// Total step count; a resumed run continues up to it.
    pub steps: u64,
    /// Also write `checkpoint_<step>.ckpt` every this many steps (0: never).
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lambda: t.lambda,
            lr: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            adam_eps: t.adam.eps,
            batch_size: t.batch_size,
            decay_steps: 2000,
            steps: 2000,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub num_ddim_steps: usize,
    pub eta: f64,
    /// Integration step; `0` derives it from `data.sigma`.
    pub t1: usize,
    /// Clamp intermediate `x₀` estimates to `[0, 1]`.
    pub clip_x0: bool,
    pub count: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            num_ddim_steps: 50,
            eta: 0.0,
            t1: 0,
            clip_x0: true,
            count: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkeSection {
    pub patch_size: usize,
    pub signal_width: f64,
    pub signal_amplitude: f64,
    pub width_scale: f64,
    /// Patches of each class cut from every background.
    pub per_background: usize,
}

impl Default for SkeSection {
    fn default() -> Self {
        let t = SkeTask::default();
        Self {
            patch_size: t.patch_size,
            signal_width: t.signal_width,
            signal_amplitude: t.signal_amplitude,
            width_scale: t.width_scale,
            per_background: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ssim_pairs: usize,
    pub ssim_bins: usize,
    /// Share of each ensemble used to fit the observer.
    pub observer_train_fraction: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            ssim_pairs: 2000,
            ssim_bins: 50,
            observer_train_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            lambdas: vec![0.0, 0.2, 0.5, 0.75],
            seeds: vec![0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedSection {
    pub phantom: u64,
    pub measure: u64,
    pub init: u64,
    pub train: u64,
    pub sample: u64,
    pub eval: u64,
}

impl Default for SeedSection {
    fn default() -> Self {
        Self {
            phantom: 1000,
            measure: 5000,
            init: 0,
            train: 0,
            sample: 77,
            eval: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schedule: ScheduleSection,
    pub lumpy: LumpySection,
    pub data: DataSection,
    pub denoiser: DenoiserSection,
    pub train: TrainSection,
    pub sampler: SamplerSection,
    pub ske: SkeSection,
    pub eval: EvalSection,
    pub ablation: AblationSection,
    pub seeds: SeedSection,
}

impl RunConfig {
    /// Reads `path` (or the defaults when `None`) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::from_io(p, e))?,
            None => String::new(),
        };
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| parse_error(text, &e))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        // typed errors carry spans only when deserializing source text
        let cfg: RunConfig = if overrides.is_empty() {
            toml::from_str(text).map_err(|e| parse_error(text, &e))?
        } else {
            table.try_into().map_err(|e: toml::de::Error| CliError::Parse {
                line: None,
                msg: one_line(e.message()),
            })?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form: every key, fixed order.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn fingerprint(&self) -> String {
        amid::fingerprint(&self.canonical())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        self.schedule()?;
        if !self.lumpy_params().is_valid() || self.lumpy.reference_size == 0 {
            return bad("lumpy parameters must be finite and non-negative".into());
        }
        if !(self.data.sigma >= 0.0 && self.data.sigma.is_finite()) {
            return bad(format!("data.sigma {}", self.data.sigma));
        }
        if self.data.size < amid::imaging::MIN_SIDE {
            return bad(format!(
                "data.size {} below {}",
                self.data.size,
                amid::imaging::MIN_SIDE
            ));
        }
        self.noise_estimator()?;
        self.denoiser_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.train_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.ske_task()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.ske.per_background == 0 {
            return bad("ske.per_background must be >= 1".into());
        }
        if !(self.eval.observer_train_fraction > 0.0 && self.eval.observer_train_fraction < 1.0) {
            return bad("eval.observer_train_fraction must lie in (0, 1)".into());
        }
        if self.eval.ssim_bins == 0 || self.eval.ssim_pairs == 0 {
            return bad("eval.ssim_bins and eval.ssim_pairs must be >= 1".into());
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, CliError> {
        let s = &self.schedule;
        NoiseSchedule::linear(s.steps, s.beta_start, s.beta_end).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn lumpy_params(&self) -> LumpyParams {
        let l = &self.lumpy;
        LumpyParams {
            mean_lump_count: l.mean_lump_count,
            lump_amplitude: l.lump_amplitude,
            lump_width: l.lump_width,
            dc_offset: l.dc_offset,
        }
        .rescaled(l.reference_size, self.data.size)
    }

    pub fn noise_estimator(&self) -> Result<NoiseEstimator, CliError> {
        NoiseEstimator::parse(&self.data.noise_estimator)
            .ok_or_else(|| CliError::Config(format!("unknown noise estimator `{}`", self.data.noise_estimator)))
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        DenoiserConfig {
            channels: self.denoiser.channels,
            depth: self.denoiser.depth,
            time_embed_dim: self.denoiser.time_embed_dim,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lambda: t.lambda,
            batch_size: t.batch_size,
            adam: AdamConfig {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.adam_eps,
            },
            decay_steps: t.decay_steps,
        }
    }

    /// Sampler for measurements at noise level `sigma`.
    pub fn sampler_config(&self, sched: &NoiseSchedule) -> SamplerConfig {
        let t1 = match self.sampler.t1 {
            0 => find_integration_step(self.data.sigma, sched),
            t => t,
        };
        SamplerConfig {
            num_ddim_steps: self.sampler.num_ddim_steps,
            eta: self.sampler.eta,
            t1,
            clip_x0: self.sampler.clip_x0,
        }
    }

    pub fn ske_task(&self) -> SkeTask {
        let s = &self.ske;
        SkeTask {
            patch_size: s.patch_size,
            signal_width: s.signal_width,
            signal_amplitude: s.signal_amplitude,
            width_scale: s.width_scale,
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn parse_error(text: &str, e: &toml::de::Error) -> CliError {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    CliError::Parse {
        line,
        msg: one_line(e.message()),
    }
}

/// `section.key=value`; the value is read as a TOML value, or as a bare
/// string when it does not parse as one.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let err = |msg: &str| CliError::Parse {
        line: None,
        msg: format!("--set {spec}: {msg}"),
    };
    let (path, raw) = spec.split_once('=').ok_or_else(|| err("expected section.key=value"))?;
    let (section, key) = path.trim().split_once('.').ok_or_else(|| err("expected section.key"))?;
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let toml::Value::Table(sec) = entry else {
        return Err(err("not a section"));
    };
    sec.insert(key.to_string(), value);
    Ok(())
}
