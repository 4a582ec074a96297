//! One function per verb. Every command reads its inputs from disk, writes
//! artifacts plus `run.txt` into its output directory, and nothing else.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use amid::denoiser::Denoiser;
use amid::evaluation::{
    highfreq_residual_energy, hotelling_observer, make_ske_patches, pdf_l1_distance, roc_curve, ssim_pdf,
    write_metrics_csv, write_pdf_csv, write_roc_csv, Regularization,
};
use amid::imaging::{
    dataset_read, dataset_write, estimate_noise_std, normalize_measurement, sample_lumpy_background,
    simulate_measurement, write_pgm_grid, Dataset, Image, Measurement, NoiseEstimator, Sample,
};
use amid::sampling::{generate_som_samples, recover_x0};
use amid::schedule::{find_integration_step, Latent, NoiseSchedule};
use amid::training::{load_checkpoint, save_checkpoint, smoothed, train, TrainState, LOG_HEADER};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::provenance::RunRecord;

pub const CHECKPOINT: &str = "checkpoint.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const PREVIEW: &str = "preview.pgm";
pub const METRICS: &str = "metrics.csv";
pub const ABLATION: &str = "ablation.csv";
const PREVIEW_COUNT: usize = 16;
/// EMA weight for the reported final loss.
const LOSS_SMOOTHING: f64 = 0.02;

/// A parsed invocation, replayable from its `run.txt`.
#[derive(Clone, Debug)]
pub struct Invocation {
    pub command: String,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, PathBuf>,
    pub out: PathBuf,
    pub deterministic: bool,
}

impl Invocation {
    fn input(&self, name: &str) -> Result<&Path, CliError> {
        let p = self
            .inputs
            .get(name)
            .ok_or_else(|| CliError::Config(format!("{} needs --{name}", self.command)))?;
        if !p.exists() {
            return Err(CliError::MissingInput(p.clone()));
        }
        Ok(p)
    }

    fn record(&self, seed: u64) -> Result<RunRecord, CliError> {
        let mut r = RunRecord::new(&self.command, seed, self.deterministic, &self.config);
        for name in self.inputs.keys() {
            r.input(name, self.input(name)?)?;
        }
        Ok(r)
    }
}

pub fn run(inv: &Invocation) -> Result<(), CliError> {
    let start = Instant::now();
    for name in inv.inputs.keys() {
        inv.input(name)?;
    }
    fs::create_dir_all(&inv.out).map_err(|e| CliError::from_io(&inv.out, e))?;
    let record = match inv.command.as_str() {
        "phantom" => phantom(inv)?,
        "measure" => measure(inv)?,
        "train" => cmd_train(inv)?,
        "sample" => sample(inv)?,
        "recover" => recover(inv)?,
        "eval" => eval(inv)?,
        "ablate" => ablate(inv)?,
        other => return Err(CliError::Config(format!("unknown command `{other}`"))),
    };
    record.write(&inv.out, start.elapsed().as_secs_f64())
}

fn preview(dir: &Path, images: &[Image]) -> Result<(), CliError> {
    write_pgm_grid(&dir.join(PREVIEW), &images[..images.len().min(PREVIEW_COUNT)], 4)?;
    Ok(())
}

fn phantom(inv: &Invocation) -> Result<RunRecord, CliError> {
    let c = &inv.config;
    let params = c.lumpy_params();
    let seed = c.seeds.phantom;
    let mut ds = Dataset::new(c.data.size, c.data.size);
    let mut clipped = 0.0;
    for i in 0..c.data.count {
        let p = sample_lumpy_background(&params, c.data.size, seed + i as u64);
        clipped += p.clipped_fraction;
        ds.samples.push(Sample {
            measurement: None,
            truth: Some(p.image),
        });
    }
    let clipped = clipped / c.data.count.max(1) as f64;
    ds.set_meta("seed", seed);
    ds.set_meta("params", params.fingerprint());
    ds.set_meta("origin", "lumpy");
    ds.set_meta("clipped_fraction", format!("{clipped:?}"));
    ds.set_meta("config", c.fingerprint());
    dataset_write(&inv.out, &ds)?;
    preview(&inv.out, &ds.truths())?;
    let mut r = inv.record(seed)?;
    r.note("clipped_fraction", format!("{clipped:?}"));
    Ok(r)
}

fn measure(inv: &Invocation) -> Result<RunRecord, CliError> {
    let c = &inv.config;
    let mut ds = dataset_read(inv.input("input")?)?;
    if !ds.has_truth() {
        return Err(CliError::Config("measure needs a dataset with ground truth".into()));
    }
    let seed = c.seeds.measure;
    for (i, s) in ds.samples.iter_mut().enumerate() {
        let x = s.truth.as_ref().expect("checked above");
        s.measurement = Some(simulate_measurement(x, c.data.sigma, seed + i as u64).y);
    }
    ds.sigma = Some(c.data.sigma);
    ds.set_meta("measure_seed", seed);
    ds.set_meta("operator", "identity");
    ds.set_meta("config", c.fingerprint());
    dataset_write(&inv.out, &ds)?;
    preview(&inv.out, &ds.measurements())?;
    inv.record(seed)
}

/// Measurements of `ds` with the noise level chosen by the configured
/// estimator. Estimates are pooled over the dataset by their median.
fn measurements(ds: &Dataset, c: &RunConfig) -> Result<(Vec<Measurement>, f64), CliError> {
    if !ds.has_measurements() {
        return Err(CliError::Config("dataset has no measurements".into()));
    }
    let ys = ds.measurements();
    let sigma = match c.noise_estimator()? {
        NoiseEstimator::Known => ds
            .sigma
            .ok_or_else(|| CliError::Config("dataset sigma unknown; pick another noise_estimator".into()))?,
        which => {
            let mut est: Vec<f64> = ys
                .iter()
                .map(|y| {
                    Ok(estimate_noise_std(y)
                        .map_err(|e| CliError::Other(e.to_string()))?
                        .get(which)
                        .expect("estimated"))
                })
                .collect::<Result<_, CliError>>()?;
            est.sort_by(f64::total_cmp);
            est[est.len() / 2]
        }
    };
    let ms = ys
        .into_iter()
        .map(|y| Measurement {
            y,
            sigma_y: sigma,
            operator: Default::default(),
        })
        .collect();
    Ok((ms, sigma))
}

/// Trains from scratch (or from `resume`) up to `train.steps`, writing the
/// checkpoint and log into `out`. Returns the smoothed final L₁ and first L₁.
fn train_into(
    c: &RunConfig,
    sched: &NoiseSchedule,
    data: &[Latent],
    resume: Option<&Path>,
    out: &Path,
    tag: &str,
    deterministic: bool,
) -> Result<(TrainState, Vec<f64>), CliError> {
    let size = c.data.size;
    let fp = training_fingerprint(c);
    let mut state = match resume {
        Some(p) => load_checkpoint(p, Some(&fp)).map_err(|e| match e {
            amid::training::TrainError::Io(io) => CliError::from_io(p, io),
            other => other.into(),
        })?,
        None => TrainState::new(
            Denoiser::init(c.denoiser_config(), size, size, c.seeds.init)?,
            c.seeds.train,
            &fp,
        ),
    };
    if (state.model.height, state.model.width) != (size, size) {
        return Err(CliError::Config(format!(
            "checkpoint is {}x{}, data is {size}x{size}",
            state.model.height, state.model.width
        )));
    }
    let target = c.train.steps;
    if state.step > target {
        return Err(CliError::Config(format!(
            "checkpoint is at step {}, beyond train.steps={target}",
            state.step
        )));
    }
    let every = c.train.checkpoint_every;
    let mut log = format!("{LOG_HEADER}\n");
    let remaining = target - state.step;
    let rows = train(&mut state, data, sched, &c.train_config(), remaining, |st, row| {
        if every > 0 && row.step % every == 0 {
            save_checkpoint(st, &out.join(format!("{tag}checkpoint_{:06}.ckpt", row.step)))?;
        }
        if row.step % 100 == 0 {
            eprintln!("step {} l1={:.5} l2={:.5}", row.step, row.losses.l1, row.losses.l2);
        }
        Ok(())
    })?;
    let mut l1 = Vec::with_capacity(rows.len());
    for mut row in rows {
        if deterministic {
            row.wall_time = 0.0;
        }
        log.push_str(&row.csv());
        log.push('\n');
        l1.push(row.losses.l1);
    }
    fs::write(out.join(format!("{tag}{TRAIN_LOG}")), log)?;
    save_checkpoint(&state, &out.join(format!("{tag}{CHECKPOINT}")))?;
    Ok((state, l1))
}

/// Identity of a training trajectory: everything that shapes it except the
/// step budget.
pub fn training_fingerprint(c: &RunConfig) -> String {
    let mut t = c.train.clone();
    t.steps = 0;
    t.checkpoint_every = 0;
    let text = format!(
        "{}\n{}\n{}\ninit={} train={} size={}",
        toml::to_string(&c.schedule).expect("serializes"),
        toml::to_string(&c.denoiser).expect("serializes"),
        toml::to_string(&t).expect("serializes"),
        c.seeds.init,
        c.seeds.train,
        c.data.size
    );
    amid::fingerprint(&text)
}

fn training_latents(c: &RunConfig, sched: &NoiseSchedule, path: &Path) -> Result<(Vec<Latent>, f64, usize), CliError> {
    let ds = dataset_read(path)?;
    if ds.height != c.data.size || ds.width != c.data.size {
        return Err(CliError::Config(format!(
            "dataset is {}x{}, config data.size is {}",
            ds.height, ds.width, c.data.size
        )));
    }
    let (ms, sigma) = measurements(&ds, c)?;
    let t1 = find_integration_step(sigma, sched);
    let data = ms.iter().map(|m| normalize_measurement(m).at_step(t1)).collect();
    Ok((data, sigma, t1))
}

fn cmd_train(inv: &Invocation) -> Result<RunRecord, CliError> {
    let c = &inv.config;
    let sched = c.schedule()?;
    let (data, sigma, t1) = training_latents(c, &sched, inv.input("data")?)?;
    let resume = inv
        .inputs
        .contains_key("resume")
        .then(|| inv.input("resume"))
        .transpose()?;
    let (_, l1) = train_into(c, &sched, &data, resume, &inv.out, "", inv.deterministic)?;
    let mut r = inv.record(c.seeds.train)?;
    r.note("sigma", format!("{sigma:?}"));
    r.note("t1", t1);
    if let (Some(first), Some(last)) = (l1.first(), smoothed(&l1, LOSS_SMOOTHING).last()) {
        r.note("l1_first", format!("{first:?}"));
        r.note("l1_smoothed_final", format!("{last:?}"));
    }
    Ok(r)
}

fn load_model(inv: &Invocation) -> Result<Denoiser, CliError> {
    let p = inv.input("checkpoint")?;
    let st = load_checkpoint(p, None).map_err(|e| match e {
        amid::training::TrainError::Io(io) => CliError::from_io(p, io),
        other => other.into(),
    })?;
    Ok(st.model)
}

fn sample(inv: &Invocation) -> Result<RunRecord, CliError> {
    let c = &inv.config;
    let sched = c.schedule()?;
    let model = load_model(inv)?;
    let scfg = c.sampler_config(&sched);
    let gen = generate_som_samples(&model, &sched, &scfg, c.sampler.count, c.seeds.sample)?;
    let mut ds = Dataset::new(model.height, model.width);
    ds.samples = gen
        .into_iter()
        .map(|r| Sample {
            measurement: None,
            truth: Some(r.clamped),
        })
        .collect();
    ds.set_meta("seed", c.seeds.sample);
    ds.set_meta("origin", "generated");
    ds.set_meta("t1", scfg.t1);
    ds.set_meta("config", c.fingerprint());
    dataset_write(&inv.out, &ds)?;
    preview(&inv.out, &ds.truths())?;
    let mut r = inv.record(c.seeds.sample)?;
    r.note("t1", scfg.t1);
    Ok(r)
}

/// One-shot `x₀` estimates from held-out measurements at their `t₁`.
fn recover(inv: &Invocation) -> Result<RunRecord, CliError> {
    let c = &inv.config;
    let sched = c.schedule()?;
    let model = load_model(inv)?;
    let ds = dataset_read(inv.input("data")?)?;
    let (ms, sigma) = measurements(&ds, c)?;
    let t1 = find_integration_step(sigma, &sched);
    let mut out = Dataset::new(ds.height, ds.width);
    out.sigma = ds.sigma;
    let truths = ds.truths();
    let (mut mse_rec, mut mse_meas) = (0.0, 0.0);
    for (i, m) in ms.iter().enumerate() {
        let lat = normalize_measurement(m).at_step(t1);
        let eps = model.predict_eps(&lat, &sched)?.eps_hat;
        let rec = recover_x0(&lat, &eps, &sched)?.clamped;
        if let Some(x) = truths.get(i) {
            mse_rec += rec.mse(x);
            mse_meas += m.y.mse(x);
        }
        out.samples.push(Sample {
            measurement: Some(m.y.clone()),
            truth: Some(rec),
        });
    }
    out.set_meta("origin", "recovered");
    out.set_meta("t1", t1);
    out.set_meta("config", c.fingerprint());
    dataset_write(&inv.out, &out)?;
    preview(&inv.out, &out.truths())?;
    if !truths.is_empty() {
        let n = truths.len() as f64;
        let rows = [
            ("mse_recovered".to_string(), mse_rec / n),
            ("mse_measurement".to_string(), mse_meas / n),
        ];
        write_metrics_csv(&inv.out.join(METRICS), &rows, &c.fingerprint())?;
    }
    let mut r = inv.record(0)?;
    r.note("sigma", format!("{sigma:?}"));
    r.note("t1", t1);
    Ok(r)
}

struct Detection {
    auc: f64,
    snr: f64,
    roc: Vec<(f64, f64)>,
}

/// Hotelling SKE detection on one background ensemble, fitting the
/// observer on a leading share of the patches and testing on the rest.
fn detection(c: &RunConfig, backgrounds: &[Image]) -> Result<Detection, CliError> {
    let patches = make_ske_patches(backgrounds, &c.ske_task(), c.ske.per_background, c.seeds.eval)?;
    let n_train = ((patches.len() as f64) * c.eval.observer_train_fraction).round() as usize;
    let (train, test) = patches.split_at(n_train);
    let r = hotelling_observer(&train, Regularization::Standard)?.evaluate(&test)?;
    Ok(Detection {
        auc: r.auc,
        snr: r.snr,
        roc: roc_curve(&r.statistics_present, &r.statistics_absent),
    })
}

fn ensemble_mean(images: &[Image]) -> f64 {
    images.iter().map(|i| i.mean()).sum::<f64>() / images.len().max(1) as f64
}

/// Compares a generated ensemble with ground truth (and optionally with
/// the measurements). The truth set is halved: the first half serves as
/// the truth side of truth-vs-truth, the second as the shared reference.
fn eval(inv: &Invocation) -> Result<RunRecord, CliError> {
    let c = &inv.config;
    let gen = dataset_read(inv.input("generated")?)?.truths();
    let truth = dataset_read(inv.input("truth")?)?.truths();
    if gen.is_empty() || truth.len() < 2 {
        return Err(CliError::Config(
            "eval needs generated samples and at least two truth samples".into(),
        ));
    }
    let (truth_a, reference) = truth.split_at(truth.len() / 2);
    let (pairs, bins, seed) = (c.eval.ssim_pairs, c.eval.ssim_bins, c.seeds.eval);
    let pdf_tt = ssim_pdf(truth_a, reference, pairs, seed, bins)?;
    let pdf_gt = ssim_pdf(&gen, reference, pairs, seed, bins)?;
    write_pdf_csv(&inv.out.join("ssim_pdf_truth.csv"), &pdf_tt)?;
    write_pdf_csv(&inv.out.join("ssim_pdf_generated.csv"), &pdf_gt)?;
    let det_gen = detection(c, &gen)?;
    let det_truth = detection(c, &truth)?;
    write_roc_csv(&inv.out.join("roc_generated.csv"), &det_gen.roc)?;
    write_roc_csv(&inv.out.join("roc_truth.csv"), &det_truth.roc)?;
    let mut rows: Vec<(String, f64)> = vec![
        ("ssim_mean_truth_truth".into(), pdf_tt.mean),
        ("ssim_mean_generated_truth".into(), pdf_gt.mean),
        ("ssim_pdf_distance_generated".into(), pdf_l1_distance(&pdf_gt, &pdf_tt)?),
        ("highfreq_energy_generated".into(), highfreq_residual_energy(&gen)),
        ("highfreq_energy_truth".into(), highfreq_residual_energy(&truth)),
        ("mean_generated".into(), ensemble_mean(&gen)),
        ("mean_truth".into(), ensemble_mean(&truth)),
        ("auc_generated".into(), det_gen.auc),
        ("auc_truth".into(), det_truth.auc),
        ("snr_generated".into(), det_gen.snr),
        ("snr_truth".into(), det_truth.snr),
    ];
    if inv.inputs.contains_key("measured") {
        let meas = dataset_read(inv.input("measured")?)?.measurements();
        if meas.is_empty() {
            return Err(CliError::Config("--measured dataset has no measurements".into()));
        }
        let pdf_mt = ssim_pdf(&meas, reference, pairs, seed, bins)?;
        write_pdf_csv(&inv.out.join("ssim_pdf_measured.csv"), &pdf_mt)?;
        rows.push(("ssim_mean_measured_truth".into(), pdf_mt.mean));
        rows.push(("ssim_pdf_distance_measured".into(), pdf_l1_distance(&pdf_mt, &pdf_tt)?));
        rows.push(("highfreq_energy_measured".into(), highfreq_residual_energy(&meas)));
    }
    write_metrics_csv(&inv.out.join(METRICS), &rows, &c.fingerprint())?;
    inv.record(seed)
}

fn ablate(inv: &Invocation) -> Result<RunRecord, CliError> {
    let base = &inv.config;
    let sched = base.schedule()?;
    let (data, sigma, t1) = training_latents(base, &sched, inv.input("data")?)?;
    let truth = dataset_read(inv.input("truth")?)?.truths();
    if truth.is_empty() {
        return Err(CliError::Config("--truth dataset has no ground truth".into()));
    }
    let mut csv =
        String::from("lambda,seed,highfreq_residual_energy,ssim_generated_truth,l1_smoothed_final,fingerprint\n");
    for &seed in &base.ablation.seeds {
        for &lambda in &base.ablation.lambdas {
            let mut c = base.clone();
            c.train.lambda = lambda;
            c.seeds.init = seed;
            c.seeds.train = seed;
            c.validate()?;
            let tag = format!("lambda{lambda}_seed{seed}_");
            eprintln!("ablation: lambda={lambda} seed={seed}");
            let (state, l1) = train_into(&c, &sched, &data, None, &inv.out, &tag, inv.deterministic)?;
            let gen: Vec<Image> = generate_som_samples(
                &state.model,
                &sched,
                &c.sampler_config(&sched),
                c.sampler.count,
                c.seeds.sample,
            )?
            .into_iter()
            .map(|r| r.clamped)
            .collect();
            write_pgm_grid(
                &inv.out.join(format!("{tag}{PREVIEW}")),
                &gen[..gen.len().min(PREVIEW_COUNT)],
                4,
            )?;
            let pdf = ssim_pdf(&gen, &truth, c.eval.ssim_pairs, c.seeds.eval, c.eval.ssim_bins)?;
            let l1_final = smoothed(&l1, LOSS_SMOOTHING).last().copied().unwrap_or(f64::NAN);
            csv.push_str(&format!(
                "{lambda:?},{seed},{:?},{:?},{l1_final:?},{}\n",
                highfreq_residual_energy(&gen),
                pdf.mean,
                c.fingerprint()
            ));
        }
    }
    fs::write(inv.out.join(ABLATION), csv)?;
    let mut r = inv.record(base.seeds.sample)?;
    r.note("sigma", format!("{sigma:?}"));
    r.note("t1", t1);
    Ok(r)
}
