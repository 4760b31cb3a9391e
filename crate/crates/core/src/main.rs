use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use intsnn::checkpoint;
use intsnn::error::{Error, Result};
use intsnn::experiment::presets::{self, load_preset};
use intsnn::experiment::report::{cost_text, emit_report, summarize};
use intsnn::experiment::runner::{cost_summary, load_datasets, run_with_data};
use intsnn::experiment::{load_config, ExperimentConfig};
use intsnn::learner::evaluate;

#[derive(Parser)]
#[command(name = "intsnn", version, about = "Integer-only online SNN training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment TOML file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in config by name (see `intsnn presets`).
    #[arg(long)]
    preset: Option<String>,
    /// Override a config value, e.g. `train.epochs=3` or `layers.0.v_th=96`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        match (&self.config, &self.preset) {
            (Some(p), _) => load_config(p, &self.overrides),
            (None, Some(n)) => load_preset(n, &self.overrides),
            (None, None) => Err(Error::Config("give --config or --preset".into())),
        }
    }

    fn label(&self) -> String {
        match (&self.config, &self.preset) {
            (Some(p), _) => p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            (None, Some(n)) => n.clone(),
            (None, None) => "run".into(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed, then write metrics, summary, cost report, and checkpoints.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory (default: runs/<config name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// A seed count N (seeds 0..N) or a comma-separated list.
        #[arg(long)]
        seeds: Option<String>,
        /// Directory holding the MNIST IDX files or the SHD binaries.
        #[arg(long)]
        dataset_dir: Option<PathBuf>,
        /// Suppress per-epoch progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Print the memory model and closed-form per-batch op counts.
    Cost {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        json: bool,
    },
    /// Test accuracy of a saved checkpoint.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset_dir: Option<PathBuf>,
    },
    /// List built-in configs, or print one.
    Presets {
        #[arg(long, value_name = "NAME")]
        show: Option<String>,
    },
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("--seeds `{s}`: expected N or a,b,c"));
    if s.contains(',') {
        return s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect();
    }
    let n: u64 = s.trim().parse().map_err(|_| bad())?;
    if n == 0 {
        return Err(bad());
    }
    Ok((0..n).collect())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            cfg,
            out,
            seeds,
            dataset_dir,
            quiet,
        } => {
            let mut config = cfg.load()?;
            if let Some(s) = seeds {
                config.seeds = parse_seeds(&s)?;
            }
            let out = out.unwrap_or_else(|| PathBuf::from("runs").join(cfg.label()));
            let data = load_datasets(&config, dataset_dir.as_deref())?;
            eprintln!(
                "train {} / test {} samples, seeds {:?}",
                data.0.len(),
                data.1.len(),
                config.seeds
            );
            let seeds = config.seeds.clone();
            let manifest = run_with_data(&config, &seeds, &data, &out, |seed, r| {
                if !quiet {
                    eprintln!(
                        "seed {seed} epoch {}: train {:.4} test {:.4} loss {}",
                        r.epoch, r.train_acc, r.test_acc, r.loss
                    );
                }
            })?;
            emit_report(&manifest)?;
            let s = summarize(&manifest);
            println!(
                "test accuracy {:.2}% ± {:.2}% over {} seed(s); results in {}",
                100.0 * s.test_acc_mean,
                100.0 * s.test_acc_std,
                s.seeds.len(),
                out.display()
            );
        }
        Command::Cost { cfg, json } => {
            let c = cost_summary(&cfg.load()?);
            if json {
                let text = serde_json::to_string_pretty(&c).map_err(|e| Error::Config(e.to_string()))?;
                println!("{text}");
            } else {
                print!("{}", cost_text(&c));
            }
        }
        Command::Eval {
            cfg,
            checkpoint: path,
            dataset_dir,
        } => {
            let config = cfg.load()?;
            let train_cfg = config.train_config(config.seeds[0]);
            let mut net = checkpoint::load(&config.net_config(), &train_cfg, &path)?;
            let (_, test) = load_datasets(&config, dataset_dir.as_deref())?;
            let acc = evaluate(&mut net, test.as_ref(), &train_cfg)?;
            println!("test accuracy {:.2}% on {} samples", 100.0 * acc, test.len());
        }
        Command::Presets { show: Some(name) } => {
            let text = presets::source(&name).ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?;
            print!("{text}");
        }
        Command::Presets { show: None } => {
            for name in presets::names() {
                println!("{name}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({}): {e}", e.category());
            ExitCode::from(match e.category() {
                "config" => 2,
                "io" => 3,
                "dataset" => 4,
                _ => 5,
            })
        }
    }
}
