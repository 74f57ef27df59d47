use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tpidm::checkpoint::ModelKind;
use tpidm::config::ExperimentConfig;
use tpidm::experiment::{self, CHECKPOINT_FILE};
use tpidm::par::{self, Execution};

/// Physics-informed diffusion anomaly detection experiments.
///
/// Exit codes: 0 success, 1 invalid input or config, 2 runtime or numeric
/// failure, 3 IO failure. TPIDM_THREADS caps the worker thread count.
#[derive(Parser, Debug)]
#[command(name = "tpidm", version)]
struct Cli {
    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Preset {
    LvDesk,
    LvFull,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModelArg {
    Diffusion,
    Ae,
    Vae,
}

#[derive(clap::Args, Debug)]
struct ConfigArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in config used when --config is absent.
    #[arg(long, value_enum, default_value = "lv-desk")]
    preset: Preset,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> tpidm::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => match self.preset {
                Preset::LvDesk => ExperimentConfig::lv_desk(),
                Preset::LvFull => ExperimentConfig::lv_full(),
            },
        };
        if let Some(seed) = self.seed {
            cfg.reseed(seed);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the configured series and write series.csv plus metadata.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes model.ckpt and train_log.csv.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Series CSV; the configured source is used when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "diffusion")]
        model: ModelArg,
    },
    /// Score the evaluation windows; writes scores.csv and metrics.json.
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Replaces the config stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the evaluation-set and ELBO seeds.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw windows by ancestral sampling; writes samples.csv.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project training and generated windows onto two principal axes.
    Pca {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Generated windows from `sample`; drawn afresh when absent.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time scoring of a fixed number of windows.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> tpidm::Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::best_available()
    };
    match cli.command {
        Command::GenData { config, out } => {
            let path = experiment::cmd_gen_data(&config.load()?, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Train {
            config,
            data,
            out,
            model,
        } => {
            let kind = match model {
                ModelArg::Diffusion => ModelKind::Diffusion,
                ModelArg::Ae => ModelKind::Autoencoder,
                ModelArg::Vae => ModelKind::Variational,
            };
            let outcome =
                experiment::cmd_train(&config.load()?, data.as_deref(), &out, kind, exec)?;
            let last = outcome.report.epochs.last().map_or(f64::NAN, |e| e.total);
            println!(
                "trained {} steps, final epoch loss {last}; wrote {}",
                outcome.report.steps,
                out.join(CHECKPOINT_FILE).display()
            );
        }
        Command::Detect {
            checkpoint,
            data,
            config,
            seed,
            out,
        } => {
            let mut cfg = match &config {
                Some(path) => Some(ExperimentConfig::load(path)?),
                None => None,
            };
            if let Some(seed) = seed {
                let mut c = match cfg {
                    Some(c) => c,
                    None => embedded_config(&checkpoint)?,
                };
                c.dataset.eval_seed = seed;
                c.detection.elbo_seed = seed;
                cfg = Some(c);
            }
            let r = experiment::cmd_detect(&checkpoint, data.as_deref(), cfg.as_ref(), &out, exec)?;
            println!(
                "precision {:.4} recall {:.4} f1 {:.4} threshold {}",
                r.precision, r.recall, r.f1, r.threshold
            );
        }
        Command::Sample {
            checkpoint,
            count,
            seed,
            out,
        } => {
            let path = experiment::cmd_sample(&checkpoint, count, seed, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Pca {
            checkpoint,
            data,
            samples,
            count,
            seed,
            out,
        } => {
            let pca = experiment::cmd_pca(
                &checkpoint,
                data.as_deref(),
                samples.as_deref(),
                count,
                seed,
                &out,
            )?;
            println!(
                "explained variance {:.4} {:.4}",
                pca.explained[0], pca.explained[1]
            );
        }
        Command::Bench {
            checkpoint,
            data,
            count,
            out,
        } => {
            let r =
                experiment::cmd_bench(&checkpoint, data.as_deref(), count, out.as_deref(), exec)?;
            println!(
                "scored {} windows in {:.3} s ({:.1} windows/s, parallel {})",
                r.windows, r.seconds, r.windows_per_second, r.parallel
            );
        }
    }
    Ok(())
}

fn embedded_config(checkpoint: &Path) -> tpidm::Result<ExperimentConfig> {
    let ckpt = tpidm::checkpoint::Checkpoint::load(checkpoint)?;
    Ok(experiment::TrainedModel::from_checkpoint(&ckpt)?.1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    par::init_threads_from_env();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
