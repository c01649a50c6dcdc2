use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use mcnet::train::Checkpoint;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::experiment::{build_trainer, load_data, run_dir, summary, train_to_end, write_run, RunResult};

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Experiment config (TOML)
    #[arg(long)]
    pub config: PathBuf,

    /// `key=value` or `section.key=value`, applied after the file
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Continue a single-seed run from this checkpoint
    #[arg(long)]
    pub resume: Option<PathBuf>,

    /// Only print the summary
    #[arg(short, long)]
    pub quiet: bool,
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<Vec<RunResult>> {
    let cfg = ExperimentConfig::load(&args.config, &args.overrides)?;
    run_experiment(&cfg, args.resume.as_deref(), args.quiet, out)
}

/// Trains every configured seed and writes per-run metrics, checkpoints,
/// the resolved config and `summary.txt` under the output directory.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    resume: Option<&std::path::Path>,
    quiet: bool,
    out: &mut dyn Write,
) -> Result<Vec<RunResult>> {
    let seeds = cfg.seeds();
    if resume.is_some() && seeds.len() != 1 {
        return Err(CliError::Usage("--resume needs a config with exactly one seed".into()));
    }
    let data = load_data(cfg)?;
    let root = &cfg.run.output_dir;
    std::fs::create_dir_all(root).map_err(CliError::io(root))?;
    let snapshot = root.join("config.toml");
    std::fs::write(&snapshot, cfg.to_toml()).map_err(CliError::io(&snapshot))?;

    let mut runs = Vec::new();
    for seed in seeds {
        let mut trainer = build_trainer(cfg, &data, seed)?;
        if let Some(path) = resume {
            let ckpt = Checkpoint::load(path).map_err(|e| match e {
                mcnet::Error::Io(source) => CliError::Io {
                    path: path.to_path_buf(),
                    source,
                },
                other => other.into(),
            })?;
            ckpt.restore(&mut trainer)?;
        }
        let mut log = Vec::new();
        train_to_end(&mut trainer, cfg, &data, |m| {
            log.push(format!(
                "seed {seed} epoch {:>3} train loss {:.4} acc {:.4} | test loss {:.4} acc {:.4} | lr {:e}",
                m.epoch,
                m.train_loss,
                m.train_accuracy,
                m.test_loss.unwrap_or(f64::NAN),
                m.test_accuracy.unwrap_or(f64::NAN),
                m.lr
            ));
        })?;
        if !quiet {
            for line in &log {
                writeln!(out, "{line}").map_err(CliError::io("stdout"))?;
            }
        }
        write_run(&run_dir(cfg, seed), &mut trainer, cfg)?;
        runs.push(RunResult {
            seed,
            history: trainer.history.clone(),
        });
    }
    let text = summary(cfg, &runs);
    let path = root.join("summary.txt");
    std::fs::write(&path, &text).map_err(CliError::io(&path))?;
    write!(out, "{text}").map_err(CliError::io("stdout"))?;
    Ok(runs)
}
