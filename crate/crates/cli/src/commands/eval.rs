use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use mcnet::train::Checkpoint;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::experiment::{build_trainer, load_data};

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    /// Experiment config the checkpoint was trained with
    #[arg(long)]
    pub config: PathBuf,

    #[arg(long)]
    pub checkpoint: PathBuf,

    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

/// Test-split loss and accuracy of a saved model.
pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<(f64, f64)> {
    let cfg = ExperimentConfig::load(&args.config, &args.overrides)?;
    let ckpt = Checkpoint::load(&args.checkpoint).map_err(|e| match e {
        mcnet::Error::Io(source) => CliError::Io {
            path: args.checkpoint.clone(),
            source,
        },
        other => other.into(),
    })?;
    let data = load_data(&cfg)?;
    let mut trainer = build_trainer(&cfg, &data, ckpt.seed)?;
    ckpt.restore(&mut trainer)?;
    let e = trainer.evaluate(&data.test)?;
    writeln!(
        out,
        "epoch {} test loss {:.6} accuracy {:.4} ({} samples)",
        ckpt.epoch,
        e.loss,
        e.accuracy,
        data.test.len()
    )
    .map_err(CliError::io("stdout"))?;
    Ok((e.loss, e.accuracy))
}
