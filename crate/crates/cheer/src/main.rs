use std::path::PathBuf;
use std::process::ExitCode;

use cheer::config::{parse_channels, Overrides, RunConfig};
use cheer::error::{CliError, Result};
use cheer::io::read_json;
use cheer::report::{render_table, write_report};
use cheer::runner::{run_experiment, run_sweep, Sweep};
use cheer::stages::{self, render_theory};
use cheer_core::experiment::Method;
use cheer_core::theory::BoundCheckConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Knowledge infusion from many-channel to few-channel time-series
/// classifiers.
#[derive(Parser)]
#[command(name = "cheer", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON); defaults to the built-in benchmark.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory written by `gen-data`, used instead of a synthetic draw.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paired_ratio: Option<f64>,
    /// `all`, `0,2`, `top-mi:2`, `bottom-mi:2`, `top-entropy:2`, ...
    #[arg(long)]
    channels: Option<String>,
}

impl Common {
    fn load(&self, methods: Vec<String>, workers: Option<usize>) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref())?.apply(&Overrides {
            seed: self.seed,
            paired_ratio: self.paired_ratio,
            channels: self.channels.clone(),
            methods,
            data_dir: self.data.clone(),
            workers,
        })
    }

    /// The `--seed` value, else the first configured seed.
    fn seed(&self, cfg: &RunConfig) -> u64 {
        self.seed.unwrap_or(cfg.experiment.seeds[0])
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Direct,
    Kd,
    At,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    PairedRatio,
    Channels,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw the synthetic rich, poor and paired datasets.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Also write `data.bin` next to each `data.csv`.
        #[arg(long)]
        binary: bool,
    },
    /// Train the rich model on the rich split.
    TrainRich {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Behavior plus target infusion into a poor model.
    Infuse {
        #[command(flatten)]
        common: Common,
        /// Output of `train-rich` (or its `model/` directory).
        #[arg(long)]
        rich: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a comparison model.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Baseline,
        /// Needed by `kd` and `at`.
        #[arg(long)]
        rich: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a dataset directory.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        channels: Option<String>,
        /// Write the metrics as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo check of the agreement bound.
    VerifyTheory {
        /// Settings (JSON); defaults to the built-in realizable setting.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate per-seed results into a table with p-values.
    Report {
        /// Results directory holding `seeds/`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Every seed and method, then the report.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        method: Vec<String>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// One full run per value of a parameter, summarized as CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        method: Vec<String>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_list<T: std::str::FromStr>(v: &[String]) -> Result<Vec<T>> {
    v.iter()
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("bad sweep value `{s}`")))
        })
        .collect()
}

fn execute(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData { common, out, binary } => {
            let cfg = common.load(vec![], None)?;
            stages::gen_data(&cfg, common.seed(&cfg), &out, binary)?;
            println!("wrote {}", out.display());
        }
        Cmd::TrainRich { common, out } => {
            let cfg = common.load(vec![], None)?;
            let r = stages::train_rich_stage(&cfg, common.seed(&cfg), &out)?;
            print!("{}", r.result.metrics);
        }
        Cmd::Infuse { common, rich, out } => {
            let cfg = common.load(vec![], None)?;
            let r = stages::poor_stage(&cfg, Method::Cheer, Some(&rich), common.seed(&cfg), &out)?;
            print!("{}", r.result.metrics);
        }
        Cmd::Baseline {
            common,
            method,
            rich,
            out,
        } => {
            let cfg = common.load(vec![], None)?;
            let m = match method {
                Baseline::Direct => Method::Direct,
                Baseline::Kd => Method::Kd,
                Baseline::At => Method::At,
            };
            let r = stages::poor_stage(&cfg, m, rich.as_deref(), common.seed(&cfg), &out)?;
            print!("{}", r.result.metrics);
        }
        Cmd::Evaluate {
            model,
            data,
            channels,
            out,
        } => {
            let policy = channels.as_deref().map(parse_channels).transpose()?;
            let m = stages::evaluate_model(&model, &data, policy.as_ref())?;
            print!("{m}");
            if let Some(out) = out {
                cheer::io::write_json(&out, &m)?;
            }
        }
        Cmd::VerifyTheory {
            config,
            seed,
            trials,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => read_json(&p)?,
                None => BoundCheckConfig::realizable(seed.unwrap_or(0)),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            let r = stages::verify_theory(&cfg, &out)?;
            print!("{}", render_theory(&r));
        }
        Cmd::Report { out } => {
            let r = write_report(&out)?;
            print!("{}", render_table(&r.aggregate));
        }
        Cmd::Run {
            common,
            method,
            workers,
            out,
        } => {
            let cfg = common.load(method, workers)?;
            let o = run_experiment(&cfg, &out)?;
            finish_run(&o)?;
        }
        Cmd::Sweep {
            common,
            param,
            values,
            method,
            workers,
            out,
        } => {
            let cfg = common.load(method, workers)?;
            let sweep = match param {
                SweepParam::PairedRatio => Sweep::PairedRatio(parse_list(&values)?),
                SweepParam::Channels => Sweep::ChannelCount(parse_list(&values)?),
            };
            for o in run_sweep(&cfg, &sweep, &out)? {
                finish_run(&o)?;
            }
        }
    }
    Ok(())
}

fn finish_run(o: &cheer::runner::RunOutcome) -> Result<()> {
    if let Some(r) = &o.report {
        print!("{}", render_table(&r.aggregate));
    }
    for f in &o.failures {
        let method = f.method.map_or("(seed)", |m| m.name());
        eprintln!("failed: seed {} method {method}: {}", f.seed, f.message);
    }
    if !o.failures.is_empty() {
        return Err(CliError::PartialFailure {
            failed: o.failures.len(),
        });
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
