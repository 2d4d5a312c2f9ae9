//! `reinit-lab`: single runs, grids, stage sweeps, label-noise studies and
//! the online simulation from the command line. Results go to stdout as JSON;
//! failures print `{"error": {...}}` to stderr and exit non-zero.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use reinit_core::harness::{
    grid_search, inspect_run, noise_study, online_sim, run_experiment, stage_sweep, Method, OnlineMethod, RunConfig,
    Setting, LR_GRID, NOISE_GRID, ONLINE_CHUNKS, STAGE_GRID, WD_GRID,
};
use reinit_core::{Error, ReinitSpec, Result};

#[derive(Parser, Debug)]
#[command(
    name = "reinit-lab",
    version,
    about = "Staged training with re-initialization for small MLPs"
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// JSON file mirroring RunConfig; defaults to the desk-scale recipe.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    wd: Option<f64>,
    /// Number of stages T.
    #[arg(long, global = true)]
    stages: Option<usize>,
    #[arg(long, global = true, value_enum)]
    reinit: Option<ReinitArg>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Enables self-distillation with this weight.
    #[arg(long, global = true)]
    distill_beta: Option<f64>,
    #[arg(long, global = true)]
    noise_q: Option<f64>,
    #[arg(long, global = true, value_enum)]
    setting: Option<SettingArg>,
    /// Base seed; init, data split, noise and shuffle seeds derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ReinitArg {
    None,
    Sp,
    Layerwise,
    Full,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SettingArg {
    None,
    D,
    Dc,
    Dcw,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One staged training run.
    Train,
    /// Learning-rate x weight-decay grid.
    Grid {
        #[arg(long, value_delimiter = ',')]
        lr_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        wd_grid: Option<Vec<f64>>,
    },
    /// Equal-compute sweep over the number of stages.
    Stages {
        #[arg(long, value_delimiter = ',')]
        t_values: Option<Vec<usize>>,
    },
    /// Grid-tuned comparison of methods under label noise.
    Noise {
        #[arg(long, value_delimiter = ',')]
        q_values: Option<Vec<f64>>,
        /// standard, sgdr, sp, layerwise, full, ban; `+distill` adds distillation.
        #[arg(long, value_delimiter = ',', default_value = "standard,sp,sp+distill")]
        methods: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        lr_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        wd_grid: Option<Vec<f64>>,
        /// Epoch budgets for the standard-training arm.
        #[arg(long, value_delimiter = ',')]
        budgets: Vec<usize>,
    },
    /// Data arriving in chunks: scratch vs warm start vs shrink & perturb.
    Online {
        #[arg(long, default_value_t = ONLINE_CHUNKS)]
        chunks: usize,
        #[arg(long, default_value_t = 12)]
        epochs_per_chunk: usize,
        #[arg(long, value_delimiter = ',', default_value = "scratch,warm_start,shrink_perturb")]
        methods: Vec<String>,
    },
    /// Summarize a finished run under `--out`.
    Inspect { run_id: String },
}

impl Overrides {
    fn build(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::desk_default(),
        };
        if let Some(s) = self.setting {
            cfg.apply_setting(match s {
                SettingArg::None => Setting::None,
                SettingArg::D => Setting::D,
                SettingArg::Dc => Setting::Dc,
                SettingArg::Dcw => Setting::Dcw,
            });
        }
        if let Some(lr) = self.lr {
            cfg.lr = lr;
        }
        if let Some(wd) = self.wd {
            cfg.weight_decay = wd;
        }
        if let Some(t) = self.stages {
            cfg.stages = t;
        }
        if let Some(r) = self.reinit {
            cfg.reinit = match r {
                ReinitArg::None => ReinitSpec::None,
                ReinitArg::Sp => ReinitSpec::shrink_perturb(),
                ReinitArg::Full => ReinitSpec::Full,
                ReinitArg::Layerwise => {
                    let k = cfg.network.num_blocks();
                    ReinitSpec::LayerWise {
                        blocks: k,
                        repeats: (cfg.stages / k).max(1),
                        rescale: Default::default(),
                    }
                }
            };
        }
        if self.lambda.is_some() || self.gamma.is_some() {
            match &mut cfg.reinit {
                ReinitSpec::ShrinkPerturb { lambda, gamma } => {
                    *lambda = self.lambda.unwrap_or(*lambda);
                    *gamma = self.gamma.unwrap_or(*gamma);
                }
                _ => {
                    return Err(Error::Config(
                        "--lambda/--gamma need shrink & perturb (--reinit sp)".into(),
                    ))
                }
            }
        }
        if let Some(beta) = self.distill_beta {
            cfg.distill.enabled = true;
            cfg.distill.beta = beta;
        }
        if let Some(q) = self.noise_q {
            cfg.noise_q = q;
        }
        if let Some(seed) = self.seed {
            cfg.seeds = reinit_core::harness::Seeds::from_base(seed);
        }
        Ok(cfg)
    }
}

/// The study method matching the configured re-initialization.
fn method_of(cfg: &RunConfig) -> Result<Method> {
    let base = match cfg.reinit {
        ReinitSpec::None => "sgdr",
        ReinitSpec::ShrinkPerturb { .. } => "sp",
        ReinitSpec::LayerWise { .. } => "layerwise",
        ReinitSpec::Full => "full",
    };
    let name = if cfg.distill.enabled {
        format!("{base}+distill")
    } else {
        base.to_string()
    };
    Method::parse(&name, cfg.network.num_blocks())
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn execute(cli: &Cli) -> Result<Value> {
    let out: &Path = &cli.overrides.out;
    if let Command::Inspect { run_id } = &cli.command {
        let info = inspect_run(&out.join(run_id))?;
        return Ok(json!({
            "summary": to_json(&info.summary)?,
            "epochs_logged": info.metrics.len(),
            "best_checkpoint": info.best.map(|h| json!({"stage": h.stage, "epoch": h.epoch})),
            "teacher_files": info.teacher_files,
        }));
    }
    let cfg = cli.overrides.build()?;
    match &cli.command {
        Command::Train => {
            let o = run_experiment(&cfg, Some(out))?;
            let mut v = to_json(&o.summary())?;
            v["run_dir"] = json!(o.run_dir);
            Ok(v)
        }
        Command::Grid { lr_grid, wd_grid } => {
            let lrs = lr_grid.clone().unwrap_or_else(|| LR_GRID.to_vec());
            let wds = wd_grid.clone().unwrap_or_else(|| WD_GRID.to_vec());
            let g = grid_search(&cfg, &lrs, &wds, Some(out))?;
            let mut v = to_json(&g)?;
            v["robustness"] = json!(g.robustness());
            Ok(v)
        }
        Command::Stages { t_values } => {
            let ts = t_values.clone().unwrap_or_else(|| STAGE_GRID.to_vec());
            to_json(&stage_sweep(&cfg, &method_of(&cfg)?, &ts, Some(out))?)
        }
        Command::Noise {
            q_values,
            methods,
            lr_grid,
            wd_grid,
            budgets,
        } => {
            let qs = q_values.clone().unwrap_or_else(|| NOISE_GRID.to_vec());
            let ms = methods
                .iter()
                .map(|m| Method::parse(m.trim(), cfg.network.num_blocks()))
                .collect::<Result<Vec<_>>>()?;
            let lrs = lr_grid.clone().unwrap_or_else(|| LR_GRID.to_vec());
            let wds = wd_grid.clone().unwrap_or_else(|| WD_GRID.to_vec());
            to_json(&noise_study(&cfg, &qs, &ms, &lrs, &wds, budgets, Some(out))?)
        }
        Command::Online {
            chunks,
            epochs_per_chunk,
            methods,
        } => {
            let mut curves = Vec::new();
            for m in methods {
                let m: OnlineMethod = m.trim().parse()?;
                curves.push(online_sim(&cfg, *chunks, m, *epochs_per_chunk, Some(out))?);
            }
            to_json(&curves)
        }
        Command::Inspect { .. } => unreachable!("handled above"),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Format { .. } | Error::Table { .. } | Error::Shape(_) => 3,
        Error::Io { .. } | Error::Json(_) => 4,
        Error::Numerical { .. } => 5,
        Error::Logic(_) | Error::Harness(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json values serialize"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let err = json!({"error": {"kind": e.kind(), "message": e.to_string()}});
            eprintln!("{err}");
            ExitCode::from(exit_code(&e))
        }
    }
}
