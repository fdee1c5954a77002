//! Experiment execution, scoring and persistence.
//!
//! For every seed the ground truth is prior item `seed mod n`; its noisy
//! measurement is shared by all replicas of that seed. Replicas differ only
//! in their run id. Jobs fan out over a worker pool and come back in
//! (seed, replica) order, so outputs do not depend on the thread count.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DatasetSource, ExperimentConfig};
use super::data::{load_dataset, save_png, save_raw, synth_dataset};
use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Shape};
use crate::metrics::{ambiguity_psnr_flagged, ssim, DEFAULT_DATA_RANGE};
use crate::operators::{apply_noise, measure, residual_norm, ForwardOperator, Measurement, OperatorSpec};
use crate::prior::PriorDataset;
use crate::rng::{Purpose, RngStream};
use crate::samplers::sample;

pub const CSV_HEADER: &str =
    "task,sampler,nfe,sgld_steps,seed,replica,psnr_db,ssim,residual_norm,runtime_ms,image_path";

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub sampler: String,
    pub nfe: usize,
    pub sgld_steps: usize,
    pub seed: u64,
    pub replica: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub residual_norm: f64,
    pub runtime_ms: f64,
    /// Relative to the output directory; empty when the run failed.
    pub image_path: String,
    #[serde(skip)]
    pub error: Option<String>,
}

impl ReportRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// A finished run with the data needed for further analysis.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub row: ReportRow,
    pub truth_index: usize,
    pub output: Option<ImageGrid>,
}

pub fn load_prior(cfg: &ExperimentConfig) -> Result<PriorDataset> {
    match &cfg.dataset {
        DatasetSource::Directory { path } => load_dataset(path),
        DatasetSource::Synthetic {
            generator,
            n,
            height,
            width,
            channels,
            seed,
        } => synth_dataset(*generator, *n, Shape::new(*height, *width, *channels), *seed),
    }
}

pub fn truth_index(seed: u64, n: usize) -> usize {
    (seed % n as u64) as usize
}

/// Noisy measurement of prior item `seed mod n`.
pub fn seed_measurement(
    cfg: &ExperimentConfig,
    prior: &PriorDataset,
    op: &ForwardOperator,
    seed: u64,
) -> Result<Measurement> {
    let truth = prior.item(truth_index(seed, prior.len()));
    let clean = measure(op, truth)?;
    let mut y = apply_noise(
        &clean,
        cfg.noise_sigma,
        &RngStream::new(seed, 0, 0, Purpose::MeasurementNoise),
    )?;
    y.seed = Some(seed);
    Ok(y)
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn image_rel_path(cfg: &ExperimentConfig, seed: u64, replica: usize) -> PathBuf {
    PathBuf::from(&cfg.task).join(seed.to_string()).join(format!(
        "{}_nfe{}_r{}.png",
        cfg.sampler_label(),
        cfg.schedule.nfe,
        replica
    ))
}

struct Scored {
    psnr_db: f64,
    ssim: f64,
    residual_norm: f64,
}

fn score(
    op: &ForwardOperator,
    y: &Measurement,
    x: &ImageGrid,
    truth: &ImageGrid,
    allow_rot: bool,
) -> Result<Scored> {
    let (psnr_db, rotated) = ambiguity_psnr_flagged(x, truth, allow_rot, DEFAULT_DATA_RANGE)?;
    let oriented = if rotated {
        crate::metrics::rot180(x)
    } else {
        x.clone()
    };
    Ok(Scored {
        psnr_db,
        ssim: ssim(&oriented, truth, DEFAULT_DATA_RANGE).unwrap_or(f64::NAN),
        residual_norm: residual_norm(op, x, y)?,
    })
}

/// Run every (seed, replica) job of `cfg` against `prior`. Images are written
/// under `cfg.out_dir` when `persist` is set.
pub fn run_records(cfg: &ExperimentConfig, prior: &PriorDataset, persist: bool) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let op = cfg.operator.build(prior.item(0).shape())?;
    let allow_rot = matches!(cfg.operator, OperatorSpec::PhaseRetrieval { .. });
    let measurements: Vec<Result<Measurement>> = cfg
        .seeds
        .iter()
        .map(|&seed| seed_measurement(cfg, prior, &op, seed))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..cfg.seeds.len())
        .flat_map(|s| (0..cfg.best_of).map(move |r| (s, r)))
        .collect();
    let label = cfg.sampler_label();

    let run_job = |&(s, replica): &(usize, usize)| -> RunRecord {
        let seed = cfg.seeds[s];
        let truth_idx = truth_index(seed, prior.len());
        let mut row = ReportRow {
            task: cfg.task.clone(),
            sampler: label.clone(),
            nfe: cfg.schedule.nfe,
            sgld_steps: cfg.mo.sgld_steps,
            seed,
            replica,
            psnr_db: f64::NAN,
            ssim: f64::NAN,
            residual_norm: f64::NAN,
            runtime_ms: 0.0,
            image_path: String::new(),
            error: None,
        };
        let start = Instant::now();
        let result = (|| -> Result<ImageGrid> {
            let y = measurements[s].as_ref().map_err(|e| Error::Config(e.to_string()))?;
            let run = cfg.sampler_run(seed, replica)?;
            let out = sample(prior, &op, y, &run)?;
            row.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
            let scored = score(&op, y, &out.image, prior.item(truth_idx), allow_rot)?;
            row.psnr_db = scored.psnr_db;
            row.ssim = scored.ssim;
            row.residual_norm = scored.residual_norm;
            if persist {
                let rel = image_rel_path(cfg, seed, replica);
                let path = cfg.out_dir.join(&rel);
                save_png(&path, &out.image)?;
                if cfg.save_raw {
                    save_raw(&path.with_extension("f64"), &out.image)?;
                }
                row.image_path = rel.to_string_lossy().replace('\\', "/");
            }
            Ok(out.image)
        })();
        let output = match result {
            Ok(img) => Some(img),
            Err(e) => {
                row.error = Some(e.to_string());
                row.image_path.clear();
                None
            }
        };
        RunRecord {
            row,
            truth_index: truth_idx,
            output,
        }
    };

    let pool = thread_pool(cfg.threads)?;
    Ok(pool.install(|| jobs.par_iter().map(run_job).collect()))
}

pub fn write_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::Format(e.to_string()))?;
    }
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Format(e.to_string())))
        .collect()
}

/// CSV text with the `runtime_ms` column blanked, for golden comparisons.
pub fn strip_runtime(csv_text: &str) -> String {
    let col = CSV_HEADER.split(',').position(|c| c == "runtime_ms").expect("column");
    csv_text
        .lines()
        .map(|line| {
            line.split(',')
                .enumerate()
                .map(|(k, f)| if k == col { "" } else { f })
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn write_outputs(out_dir: &Path, configs: &[ExperimentConfig], rows: &[ReportRow]) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_csv(&out_dir.join("results.csv"), rows)?;
    if let [only] = configs {
        let path = out_dir.join("config.toml");
        fs::write(&path, only.to_toml_string()?).map_err(|e| Error::io(&path, e))?;
    } else {
        let dir = out_dir.join("configs");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (k, cfg) in configs.iter().enumerate() {
            let path = dir.join(format!("{k:02}.toml"));
            fs::write(&path, cfg.to_toml_string()?).map_err(|e| Error::io(&path, e))?;
        }
    }
    let errors: Vec<String> = rows
        .iter()
        .filter_map(|r| {
            r.error
                .as_ref()
                .map(|e| format!("{} seed={} replica={}: {e}", r.sampler, r.seed, r.replica))
        })
        .collect();
    if !errors.is_empty() {
        let path = out_dir.join("errors.log");
        fs::write(&path, errors.join("\n") + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Run several configs that share one prior; rows are concatenated in
/// variant order and written to the first config's output directory.
pub fn run_variants(variants: &[ExperimentConfig]) -> Result<Vec<ReportRow>> {
    let first = variants
        .first()
        .ok_or_else(|| Error::Config("no experiment to run".into()))?;
    let prior = load_prior(first)?;
    let mut rows = Vec::new();
    for cfg in variants {
        let mut run_cfg = cfg.clone();
        run_cfg.out_dir = first.out_dir.clone();
        rows.extend(run_records(&run_cfg, &prior, true)?.into_iter().map(|r| r.row));
    }
    write_outputs(&first.out_dir, variants, &rows)?;
    Ok(rows)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    run_variants(std::slice::from_ref(cfg))
}

pub fn sweep_variants(cfg: &ExperimentConfig, nfes: &[usize]) -> Result<Vec<ExperimentConfig>> {
    if nfes.is_empty() {
        return Err(Error::Config("empty NFE list".into()));
    }
    nfes.iter()
        .map(|&nfe| {
            let mut c = cfg.clone();
            c.schedule.nfe = nfe;
            c.validate()?;
            Ok(c)
        })
        .collect()
}

pub fn nfe_sweep(cfg: &ExperimentConfig, nfes: &[usize]) -> Result<Vec<ReportRow>> {
    run_variants(&sweep_variants(cfg, nfes)?)
}

/// Paired SGLD and Adam inner loops, otherwise identical.
pub fn optimizer_variants(cfg: &ExperimentConfig) -> [ExperimentConfig; 2] {
    use super::config::OptimizerKind;
    let mut sgld = cfg.clone();
    sgld.mo.optimizer = OptimizerKind::Sgld;
    let mut adam = cfg.clone();
    adam.mo.optimizer = OptimizerKind::Adam;
    [sgld, adam]
}

/// Per-step re-initialization against a single reused inner solution.
pub fn init_variants(cfg: &ExperimentConfig) -> [ExperimentConfig; 2] {
    use crate::samplers::InitMode;
    let mut per_step = cfg.clone();
    per_step.sampler.init_mode = InitMode::PerStep;
    let mut same = cfg.clone();
    same.sampler.init_mode = InitMode::SameSolution;
    [per_step, same]
}

pub fn ablate_optimizer(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    run_variants(&optimizer_variants(cfg))
}

pub fn ablate_init(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    run_variants(&init_variants(cfg))
}

/// Highest-PSNR replica per seed (ties: lowest replica), in seed order.
pub fn best_per_seed(rows: &[ReportRow]) -> Vec<ReportRow> {
    let mut out: Vec<ReportRow> = Vec::new();
    for row in rows.iter().filter(|r| !r.failed()) {
        match out
            .iter_mut()
            .find(|b| b.seed == row.seed && b.sampler == row.sampler && b.nfe == row.nfe)
        {
            Some(b) => {
                if row.psnr_db > b.psnr_db || (row.psnr_db == b.psnr_db && row.replica < b.replica) {
                    *b = row.clone();
                }
            }
            None => out.push(row.clone()),
        }
    }
    out
}

/// Median of the finite values; `NaN` if there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Success,
    AllFailed,
    PartialFailure,
}

impl RunStatus {
    pub fn of(rows: &[ReportRow]) -> Self {
        let failed = rows.iter().filter(|r| r.failed()).count();
        if failed == 0 {
            RunStatus::Success
        } else if failed == rows.len() {
            RunStatus::AllFailed
        } else {
            RunStatus::PartialFailure
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Success => 0,
            RunStatus::AllFailed => 2,
            RunStatus::PartialFailure => 3,
        }
    }
}
