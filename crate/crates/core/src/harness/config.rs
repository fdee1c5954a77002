//! Experiment configuration.
//!
//! A config file is TOML. Its `task` key selects a preset; every other key
//! overrides the preset. Unknown keys are rejected. The fully resolved
//! config serializes back to TOML and re-resolves to itself.
//!
//! ```toml
//! task = "random-inpaint"
//! family = "ffhq"            # which hyperparameter row of the preset
//! seeds = [0, 1, 2]
//! best_of = 1
//! noise_sigma = 0.05
//! out_dir = "out"
//! threads = 0                # 0: one worker per core
//! save_raw = false
//!
//! [dataset]
//! kind = "synthetic"         # or "directory" with `path = "..."`
//! generator = "blobs"        # blobs | bars | digits-like
//! n = 16
//! height = 32
//! width = 32
//! channels = 1
//! seed = 0
//!
//! [operator]
//! kind = "random_inpaint"
//! keep_prob = 0.3
//! mask_seed = 0
//!
//! [schedule]
//! nfe = 50
//! sigma_max = 80.0
//! sigma_min = 0.05
//! rho = 7.0
//!
//! [mo]
//! sgld_steps = 150
//! sgld_lr = 5e-5
//! tau = 0.01
//! optimizer = "sgld"         # or "adam"
//! adam_lr = 0.01
//! lr_decay_r = 0.01
//! lr_decay_p = 2.0
//!
//! [sampler]
//! kind = "dps-mo"            # dps-mo | red-diff-mo | dps
//! init_mode = "per-step"     # or "same-solution"
//! guidance_scale = 0.3
//! mu_optimizer = "adam"      # adam | sgd | momentum
//! mu_lr = 0.1
//! mu_momentum = 0.9
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::SynthKind;
use crate::error::{Error, Result};
use crate::grid::Shape;
use crate::mo::{AdamParams, InnerOptimizer, MoConfig};
use crate::operators::{DownsampleKernel, OperatorSpec};
use crate::samplers::{InitMode, MuOptimizer, SamplerKind, SamplerRun};
use crate::schedule::{EdmSchedule, LrDecay};

pub const TASKS: [&str; 8] = [
    "sr",
    "box-inpaint",
    "random-inpaint",
    "gaussian-deblur",
    "motion-deblur",
    "phase-retrieval",
    "nonlinear-deblur",
    "hdr",
];

/// Tasks whose forward operator is linear.
pub const LINEAR_TASKS: [&str; 5] = [
    "sr",
    "box-inpaint",
    "random-inpaint",
    "gaussian-deblur",
    "motion-deblur",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Ffhq,
    Imagenet,
}

/// Published per-task hyperparameters at full resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskHyper {
    pub nfe: usize,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub sgld_steps: usize,
    pub sgld_lr: f64,
}

const fn hyper(nfe: usize, sigma_max: f64, sigma_min: f64, sgld_steps: usize) -> TaskHyper {
    TaskHyper {
        nfe,
        sigma_max,
        sigma_min,
        sgld_steps,
        sgld_lr: 5e-5,
    }
}

/// Row of the hyperparameter table for `task`, in [`TASKS`] order.
pub fn task_hyper(task: &str, family: Family) -> Result<TaskHyper> {
    const FFHQ: [TaskHyper; 8] = [
        hyper(50, 80.0, 0.01, 150),
        hyper(50, 80.0, 0.05, 100),
        hyper(50, 80.0, 0.05, 150),
        hyper(50, 80.0, 0.002, 50),
        hyper(50, 80.0, 0.02, 100),
        hyper(100, 80.0, 0.05, 500),
        hyper(100, 80.0, 0.05, 200),
        hyper(100, 80.0, 0.02, 500),
    ];
    const IMAGENET: [TaskHyper; 8] = [
        hyper(100, 1.0, 0.02, 100),
        hyper(100, 80.0, 0.02, 50),
        hyper(100, 1.0, 0.02, 50),
        hyper(100, 80.0, 0.02, 200),
        hyper(100, 80.0, 0.02, 100),
        TaskHyper {
            sgld_lr: 5e-4,
            ..hyper(1000, 80.0, 0.05, 50)
        },
        hyper(100, 80.0, 0.05, 200),
        hyper(100, 80.0, 0.02, 50),
    ];
    let k = task_index(task)?;
    Ok(match family {
        Family::Ffhq => FFHQ[k],
        Family::Imagenet => IMAGENET[k],
    })
}

fn task_index(task: &str) -> Result<usize> {
    TASKS
        .iter()
        .position(|&t| t == task)
        .ok_or_else(|| Error::Config(format!("unknown task `{task}` (expected one of {TASKS:?})")))
}

/// Desk-scale operator for `task` on 32x32 images.
pub fn desk_operator(task: &str) -> Result<OperatorSpec> {
    Ok(match task_index(task)? {
        0 => OperatorSpec::Downsample {
            factor: 4,
            kernel: DownsampleKernel::Bicubic,
        },
        1 => OperatorSpec::BoxInpaint {
            box_h: 16,
            box_w: 16,
            position_seed: 0,
        },
        2 => OperatorSpec::RandomInpaint {
            keep_prob: 0.3,
            mask_seed: 0,
        },
        3 => OperatorSpec::GaussianBlur {
            ksize: 9,
            blur_sigma: 3.0,
        },
        4 => OperatorSpec::MotionBlur {
            ksize: 9,
            intensity: 0.5,
            kernel_seed: 0,
        },
        5 => OperatorSpec::PhaseRetrieval { oversample: 2.0 },
        6 => OperatorSpec::NonlinearBlur {
            ksize: 9,
            blur_sigma: 3.0,
            gain: 2.0,
        },
        _ => OperatorSpec::Hdr { factor: 2.0 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Directory {
        path: PathBuf,
    },
    Synthetic {
        generator: SynthKind,
        n: usize,
        height: usize,
        width: usize,
        channels: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub nfe: usize,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgld,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoParams {
    pub sgld_steps: usize,
    pub sgld_lr: f64,
    pub tau: f64,
    pub optimizer: OptimizerKind,
    pub adam_lr: f64,
    pub lr_decay_r: f64,
    pub lr_decay_p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MuOptimizerKind {
    Adam,
    Sgd,
    Momentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerParams {
    pub kind: SamplerKind,
    pub init_mode: InitMode,
    pub guidance_scale: f64,
    pub mu_optimizer: MuOptimizerKind,
    pub mu_lr: f64,
    pub mu_momentum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: String,
    pub family: Family,
    pub seeds: Vec<u64>,
    pub best_of: usize,
    pub noise_sigma: f64,
    pub out_dir: PathBuf,
    pub threads: usize,
    pub save_raw: bool,
    pub dataset: DatasetSource,
    pub operator: OperatorSpec,
    pub schedule: ScheduleParams,
    pub mo: MoParams,
    pub sampler: SamplerParams,
}

/// Env var naming the default output root.
pub const OUT_DIR_ENV: &str = "MEASOPT_OUT_DIR";

fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("measopt-out"))
}

impl ExperimentConfig {
    /// Desk-scale preset for `task` with the `family` hyperparameter row.
    pub fn preset(task: &str, family: Family) -> Result<Self> {
        let h = task_hyper(task, family)?;
        let nonlinear = !LINEAR_TASKS.contains(&task);
        Ok(Self {
            task: task.to_string(),
            family,
            seeds: (0..4).collect(),
            best_of: if nonlinear { 4 } else { 1 },
            noise_sigma: 0.05,
            out_dir: default_out_dir(),
            threads: 0,
            save_raw: false,
            dataset: DatasetSource::Synthetic {
                generator: SynthKind::Blobs,
                n: 16,
                height: 32,
                width: 32,
                channels: 1,
                seed: 0,
            },
            operator: desk_operator(task)?,
            schedule: ScheduleParams {
                nfe: h.nfe,
                sigma_max: h.sigma_max,
                sigma_min: h.sigma_min,
                rho: 7.0,
            },
            mo: MoParams {
                sgld_steps: h.sgld_steps,
                sgld_lr: h.sgld_lr,
                tau: 0.01,
                optimizer: OptimizerKind::Sgld,
                adam_lr: AdamParams::default().lr,
                lr_decay_r: LrDecay::default().r,
                lr_decay_p: LrDecay::default().p,
            },
            sampler: SamplerParams {
                kind: SamplerKind::DpsMo,
                init_mode: InitMode::PerStep,
                guidance_scale: 0.3,
                mu_optimizer: MuOptimizerKind::Adam,
                mu_lr: 0.1,
                mu_momentum: 0.9,
            },
        })
    }

    /// Resolve a TOML document: preset from `task` (and `family`), then overrides.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Self::from_table(table)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_table(overrides: toml::Table) -> Result<Self> {
        let task = match overrides.get("task") {
            Some(toml::Value::String(t)) => t.clone(),
            Some(_) => return Err(Error::Config("`task` must be a string".into())),
            None => return Err(Error::Config("missing `task`".into())),
        };
        let family: Family = match overrides.get("family") {
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e: toml::de::Error| Error::Config(format!("family: {e}")))?,
            None => Family::Ffhq,
        };
        let mut base = toml::Table::try_from(Self::preset(&task, family)?)
            .map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, overrides);
        let cfg: Self = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Apply `key.path = value` overrides (TOML value syntax, bare strings allowed).
    pub fn with_overrides(&self, pairs: &[(String, String)]) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for (key, raw) in pairs {
            let value = parse_value(raw);
            let mut node = &mut table;
            let parts: Vec<&str> = key.split('.').collect();
            for part in &parts[..parts.len() - 1] {
                node = node
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("`{part}` is not a section")))?;
            }
            node.insert(parts[parts.len() - 1].to_string(), value);
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        task_index(&self.task)?;
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must not be empty".into()));
        }
        if self.best_of == 0 {
            return Err(Error::Config("`best_of` must be at least 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("`noise_sigma` must be non-negative".into()));
        }
        if let DatasetSource::Synthetic { n, .. } = self.dataset {
            if n == 0 {
                return Err(Error::Config("`dataset.n` must be at least 1".into()));
            }
        }
        self.schedule()?.validate()?;
        self.mo_config().validate()?;
        if self.sampler.guidance_scale < 0.0 {
            return Err(Error::Config("`sampler.guidance_scale` must be non-negative".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<EdmSchedule> {
        let s = &self.schedule;
        let sched = EdmSchedule {
            rho: s.rho,
            ..EdmSchedule::new(s.sigma_max, s.sigma_min, s.nfe)?
        };
        sched.validate()?;
        Ok(sched)
    }

    pub fn mo_config(&self) -> MoConfig {
        let m = &self.mo;
        MoConfig {
            n_sgld: m.sgld_steps,
            tau: m.tau,
            optimizer: match m.optimizer {
                OptimizerKind::Sgld => InnerOptimizer::Sgld,
                OptimizerKind::Adam => InnerOptimizer::Adam(AdamParams {
                    lr: m.adam_lr,
                    ..AdamParams::default()
                }),
            },
            decay: LrDecay {
                base_eta: m.sgld_lr,
                r: m.lr_decay_r,
                p: m.lr_decay_p,
            },
        }
    }

    pub fn mu_optimizer(&self) -> MuOptimizer {
        let s = &self.sampler;
        match s.mu_optimizer {
            MuOptimizerKind::Adam => MuOptimizer::Adam { lr: s.mu_lr },
            MuOptimizerKind::Sgd => MuOptimizer::Sgd { lr: s.mu_lr },
            MuOptimizerKind::Momentum => MuOptimizer::Momentum {
                lr: s.mu_lr,
                beta: s.mu_momentum,
            },
        }
    }

    pub fn sampler_run(&self, seed: u64, replica: usize) -> Result<SamplerRun> {
        Ok(SamplerRun {
            kind: self.sampler.kind,
            schedule: self.schedule()?,
            mo: self.mo_config(),
            init_mode: self.sampler.init_mode,
            guidance_scale: self.sampler.guidance_scale,
            mu_optimizer: self.mu_optimizer(),
            seed,
            run: replica as u64,
            zero_noise: false,
        })
    }

    /// Sampler name plus markers for non-default inner settings; used in
    /// report rows and image file names.
    pub fn sampler_label(&self) -> String {
        let mut label = self.sampler.kind.name().to_string();
        if self.sampler.kind != SamplerKind::Dps {
            if self.mo.optimizer == OptimizerKind::Adam {
                label.push_str("+adam");
            }
            if self.sampler.init_mode == InitMode::SameSolution {
                label.push_str("+same-init");
            }
        }
        label
    }

    pub fn image_shape(&self) -> Option<Shape> {
        match self.dataset {
            DatasetSource::Synthetic {
                height,
                width,
                channels,
                ..
            } => Some(Shape::new(height, width, channels)),
            DatasetSource::Directory { .. } => None,
        }
    }
}

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (key, value) in overrides {
        match (base.get_mut(&key), value) {
            // A new operator or dataset kind replaces the whole section.
            (Some(toml::Value::Table(b)), toml::Value::Table(o))
                if o.get("kind").is_none_or(|k| Some(k) == b.get("kind")) =>
            {
                merge(b, o)
            }
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_resolves_and_round_trips() {
        for task in TASKS {
            for family in [Family::Ffhq, Family::Imagenet] {
                let cfg = ExperimentConfig::preset(task, family).unwrap();
                cfg.validate().unwrap();
                let echo = cfg.to_toml_string().unwrap();
                assert_eq!(ExperimentConfig::from_toml_str(&echo).unwrap(), cfg);
            }
        }
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let cfg = ExperimentConfig::from_toml_str(
            "task = \"sr\"\nseeds = [7]\n[schedule]\nnfe = 12\n[operator]\nkind = \"identity\"\n",
        )
        .unwrap();
        assert_eq!(cfg.seeds, vec![7]);
        assert_eq!(cfg.schedule.nfe, 12);
        assert_eq!(cfg.schedule.sigma_min, 0.01);
        assert_eq!(cfg.operator, OperatorSpec::Identity);
        assert!(ExperimentConfig::from_toml_str("task = \"sr\"\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("task = \"sr\"\n[mo]\nsgld_stepz = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("task = \"nope\"\n").is_err());
        assert!(ExperimentConfig::from_toml_str("task = \"sr\"\nseeds = []\n").is_err());
    }

    #[test]
    fn imagenet_phase_retrieval_uses_larger_rate() {
        let h = task_hyper("phase-retrieval", Family::Imagenet).unwrap();
        assert_eq!((h.nfe, h.sgld_lr), (1000, 5e-4));
        assert_eq!(task_hyper("gaussian-deblur", Family::Ffhq).unwrap().sigma_min, 0.002);
    }

    #[test]
    fn flag_overrides() {
        let cfg = ExperimentConfig::preset("hdr", Family::Ffhq).unwrap();
        let out = cfg
            .with_overrides(&[
                ("schedule.nfe".into(), "7".into()),
                ("sampler.kind".into(), "dps".into()),
                ("mo.tau".into(), "0.5".into()),
            ])
            .unwrap();
        assert_eq!(out.schedule.nfe, 7);
        assert_eq!(out.sampler.kind, SamplerKind::Dps);
        assert_eq!(out.mo.tau, 0.5);
        assert!(cfg.with_overrides(&[("mo.nope".into(), "1".into())]).is_err());
    }
}
