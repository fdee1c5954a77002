use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use measopt::harness::config::Family;
use measopt::harness::run::{self, median, ReportRow, RunStatus};
use measopt::harness::ExperimentConfig;
use measopt::validate;

#[derive(Parser)]
#[command(name = "measopt", version, about = "Measurement-optimized diffusion posterior sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config.
    Run(Common),
    /// Run the same config at several NFE values.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated NFE values.
        #[arg(long, value_delimiter = ',', required = true)]
        nfes: Vec<usize>,
    },
    /// Paired SGLD and Adam inner loops.
    AblateOptimizer(Common),
    /// Per-step re-initialization against one reused inner solution.
    AblateInit(Common),
    /// Run the built-in invariant checks.
    Validate,
}

#[derive(Args)]
struct Common {
    /// TOML config; without it the preset for --task is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    family: Option<String>,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    nfe: Option<usize>,
    #[arg(long)]
    sgld_steps: Option<usize>,
    #[arg(long)]
    sampler: Option<String>,
    #[arg(long)]
    best_of: Option<usize>,
    /// Arbitrary `section.key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn resolve(&self) -> measopt::Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.task) {
            (Some(path), _) => ExperimentConfig::from_file(path)?,
            (None, Some(task)) => {
                let mut table = toml::Table::new();
                table.insert("task".into(), task.clone().into());
                if let Some(f) = &self.family {
                    table.insert("family".into(), f.clone().into());
                }
                ExperimentConfig::from_table(table)?
            }
            (None, None) => {
                return Err(measopt::Error::Config("give --config or --task".into()))
            }
        };
        let mut pairs: Vec<(String, String)> = Vec::new();
        if self.config.is_some() {
            if let Some(task) = &self.task {
                pairs.push(("task".into(), format!("{task:?}")));
            }
        }
        if let Some(f) = &self.family {
            let family: Family = toml::Value::String(f.clone())
                .try_into()
                .map_err(|e: toml::de::Error| measopt::Error::Config(format!("family: {e}")))?;
            cfg.family = family;
        }
        if let Some(seed) = self.seed {
            pairs.push(("seeds".into(), format!("[{seed}]")));
        }
        if let Some(dir) = &self.out_dir {
            pairs.push(("out_dir".into(), format!("{:?}", dir.to_string_lossy())));
        }
        for (key, value) in [
            ("threads", self.threads),
            ("schedule.nfe", self.nfe),
            ("mo.sgld_steps", self.sgld_steps),
            ("best_of", self.best_of),
        ] {
            if let Some(v) = value {
                pairs.push((key.into(), v.to_string()));
            }
        }
        if let Some(s) = &self.sampler {
            pairs.push(("sampler.kind".into(), format!("{s:?}")));
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| measopt::Error::Config(format!("expected KEY=VALUE, got `{kv}`")))?;
            pairs.push((k.trim().into(), v.trim().into()));
        }
        cfg.with_overrides(&pairs)
    }
}

fn summarize(rows: &[ReportRow]) {
    let best = run::best_per_seed(rows);
    let mut groups: Vec<(String, usize)> = Vec::new();
    for r in &best {
        if !groups.contains(&(r.sampler.clone(), r.nfe)) {
            groups.push((r.sampler.clone(), r.nfe));
        }
    }
    for (sampler, nfe) in groups {
        let sel: Vec<&ReportRow> = best.iter().filter(|r| r.sampler == sampler && r.nfe == nfe).collect();
        println!(
            "{sampler} nfe={nfe}: median psnr {:.2} dB, median ssim {:.3} over {} seeds",
            median(sel.iter().map(|r| r.psnr_db)),
            median(sel.iter().map(|r| r.ssim)),
            sel.len()
        );
    }
    for r in rows.iter().filter(|r| r.failed()) {
        eprintln!(
            "failed: {} seed={} replica={}: {}",
            r.sampler,
            r.seed,
            r.replica,
            r.error.as_deref().unwrap_or("")
        );
    }
}

fn execute(common: &Common, go: impl FnOnce(&ExperimentConfig) -> measopt::Result<Vec<ReportRow>>) -> ExitCode {
    let cfg = match common.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(1);
        }
    };
    match go(&cfg) {
        Ok(rows) => {
            summarize(&rows);
            println!("wrote {}", cfg.out_dir.join("results.csv").display());
            ExitCode::from(RunStatus::of(&rows).exit_code() as u8)
        }
        Err(e @ measopt::Error::Config(_)) => {
            eprintln!("config error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(c) => execute(&c, run::run_experiment),
        Command::Sweep { common, nfes } => execute(&common, |cfg| run::nfe_sweep(cfg, &nfes)),
        Command::AblateOptimizer(c) => execute(&c, run::ablate_optimizer),
        Command::AblateInit(c) => execute(&c, run::ablate_init),
        Command::Validate => {
            let checks = validate::run_checks();
            let mut failed = 0;
            for check in &checks {
                let status = if check.passed { "ok  " } else { "FAIL" };
                println!("{status} {}: {}", check.name, check.detail);
                failed += usize::from(!check.passed);
            }
            println!("{} checks, {failed} failed", checks.len());
            if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
    }
}
