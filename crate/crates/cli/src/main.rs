//! `featcache`: pretrain a toy teacher, train caching routers, sample and
//! evaluate them. Every run writes into `--out` with a `manifest.json`.

mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use featcache::trainer::{LtcSampling, Objective, Paradigm, ProxyMetric};

use config::RunConfig;
use error::CliError;
use run::RunDir;

#[derive(Parser)]
#[command(name = "featcache", version, about = "Learnable feature caching for a toy diffusion transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Train the teacher on synthetic data.
    Pretrain,
    /// Train a caching router against a frozen teacher.
    TrainRouter {
        #[arg(long)]
        teacher: PathBuf,
    },
    /// Generate samples per eval seed, optionally under a router.
    Sample {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        router: Option<PathBuf>,
    },
    /// Measure routers and heuristic schedules against the uncached teacher.
    Eval {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        router: Vec<PathBuf>,
    },
    /// Per-step noise error and proxy weight of a router.
    ProxyTrace {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        router: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Pretrain => "pretrain",
            Command::TrainRouter { .. } => "train-router",
            Command::Sample { .. } => "sample",
            Command::Eval { .. } => "eval",
            Command::ProxyTrace { .. } => "proxy-trace",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Iepo,
    Ltc,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParadigmArg {
    Sdt,
    Ltc,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Fro,
    L1,
    Kl,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplingArg {
    Even,
    Any,
}

/// Flags that override values from `--config`.
#[derive(clap::Args)]
struct Overrides {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    objective: Option<ObjectiveArg>,
    #[arg(long, global = true, value_enum)]
    paradigm: Option<ParadigmArg>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    interval_c: Option<usize>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    teacher_forcing: Option<bool>,
    #[arg(long, global = true, value_enum)]
    proxy_metric: Option<MetricArg>,
    #[arg(long, global = true, value_enum)]
    ltc_sampling: Option<SamplingArg>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = self.objective {
            t.objective = match v {
                ObjectiveArg::Iepo => Objective::Iepo,
                ObjectiveArg::Ltc => Objective::Ltc,
            };
        }
        if let Some(v) = self.paradigm {
            t.paradigm = match v {
                ParadigmArg::Sdt => Paradigm::Sdt,
                ParadigmArg::Ltc => Paradigm::Ltc,
            };
        }
        if let Some(v) = self.beta {
            t.beta = v;
        }
        if let Some(v) = self.interval_c {
            t.interval_c = v;
        }
        if let Some(v) = self.tau {
            t.tau = v;
        }
        if let Some(v) = self.teacher_forcing {
            t.teacher_forcing = v;
        }
        if let Some(v) = self.proxy_metric {
            t.proxy_metric = match v {
                MetricArg::Fro => ProxyMetric::Fro,
                MetricArg::L1 => ProxyMetric::L1,
                MetricArg::Kl => ProxyMetric::Kl,
            };
        }
        if let Some(v) = self.ltc_sampling {
            t.ltc_sampling = match v {
                SamplingArg::Even => LtcSampling::Even,
                SamplingArg::Any => LtcSampling::Any,
            };
        }
    }
}

fn effective_config(opts: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = match &opts.config {
        Some(path) => RunConfig::load(path).map_err(|m| CliError::Config(vec![m]))?,
        None => RunConfig::default(),
    };
    opts.apply(&mut cfg);
    cfg.propagate_seed();
    let violations = cfg.violations();
    if !violations.is_empty() {
        return Err(CliError::Config(violations));
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = effective_config(&cli.opts)?;
    let text = cfg.to_toml();
    let hash = run::text_hash(&cfg.without_out().to_toml());
    let mut run = RunDir::create(&cfg.out, cli.command.name(), &text, hash, cfg.seed)?;
    let result = run.write("config.toml", text.as_bytes()).and_then(|()| match &cli.command {
        Command::Pretrain => commands::pretrain(&cfg, &mut run),
        Command::TrainRouter { teacher } => commands::train(&cfg, &mut run, teacher),
        Command::Sample { teacher, router } => commands::sample_cmd(&cfg, &mut run, teacher, router.as_deref()),
        Command::Eval { teacher, router } => commands::eval(&cfg, &mut run, teacher, router),
        Command::ProxyTrace { teacher, router } => commands::proxy_trace(&cfg, &mut run, teacher, router),
    });
    match result {
        Ok(()) => {
            run.complete()?;
            println!("run complete: {}", run_path(&cfg));
            Ok(())
        }
        Err(e) => {
            run.fail(&e)?;
            Err(e)
        }
    }
}

fn run_path(cfg: &RunConfig) -> String {
    cfg.out.join(run::MANIFEST).display().to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
