use std::io::Write;

use clap::{Args, ValueEnum};
use mcnet::gradcheck::{run_scope, GradCheckConfig, GradReport, Scope};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScopeArg {
    Layers,
    Head,
    #[value(name = "model-mini")]
    ModelMini,
    All,
}

#[derive(Args, Debug, Clone)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub scope: ScopeArg,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn format_report(r: &GradReport, tolerance: f64) -> String {
    let checked: usize = r.tensors.iter().map(|t| t.checked).sum();
    let skipped: usize = r.tensors.iter().map(|t| t.skipped).sum();
    let mut s = format!(
        "{:<26} max_rel_err {:.3e}  checked {:>4}  skipped {:>3}  {}\n",
        r.name,
        r.max_rel_err,
        checked,
        skipped,
        if r.passed { "PASS" } else { "FAIL" }
    );
    for t in r.tensors.iter().filter(|t| t.max_rel_err >= tolerance) {
        s += &format!("    {}.{} max_rel_err {:.3e}\n", r.name, t.name, t.max_rel_err);
    }
    s
}

pub fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<Vec<GradReport>> {
    let config = GradCheckConfig {
        seed: args.seed,
        ..Default::default()
    };
    let scopes = match args.scope {
        ScopeArg::Layers => vec![Scope::Layers],
        ScopeArg::Head => vec![Scope::Head],
        ScopeArg::ModelMini => vec![Scope::ModelMini],
        ScopeArg::All => vec![Scope::Layers, Scope::Head, Scope::ModelMini],
    };
    let mut reports = Vec::new();
    for scope in scopes {
        reports.extend(run_scope(scope, &config)?);
    }
    let mut text = format!(
        "central differences, eps {:e}, tolerance {:e}, seed {}\n",
        config.eps, config.tolerance, config.seed
    );
    for r in &reports {
        text += &format_report(r, config.tolerance);
    }
    write!(out, "{text}").map_err(CliError::io("stdout"))?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(reports)
    } else {
        Err(CliError::CheckFailed(format!("gradient check failed for: {}", failed.join(", "))))
    }
}
