use std::io::Write;

use clap::{Args, ValueEnum};
use mcnet::backbones::{count_stats, BackboneSpec, ClassifierMode, FlopConvention, Model, ModelStats};
use mcnet::scorenorm::NormalizerKind;
use mcnet::SeededRng;
use serde_json::json;

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StatsMode {
    Original,
    Multi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Convention {
    /// 1 multiply-accumulate = 1 FLOP
    Mac,
    /// 1 multiply-accumulate = 2 FLOPs
    #[value(name = "2mac")]
    TwoMac,
}

#[derive(Args, Debug, Clone)]
pub struct StatsArgs {
    /// Backbone preset
    #[arg(long)]
    pub model: String,

    #[arg(long, value_enum, default_value = "multi")]
    pub mode: StatsMode,

    /// Report both modes and their ratio
    #[arg(long)]
    pub both: bool,

    /// Input shape as B,C,H,W
    #[arg(long, default_value = "1,3,32,32")]
    pub input: String,

    #[arg(long, default_value_t = 10)]
    pub classes: usize,

    #[arg(long, value_enum, default_value = "mac")]
    pub flops: Convention,

    /// Print JSON instead of a table
    #[arg(long)]
    pub json: bool,
}

/// Published multi/original parameter totals (millions) for the full-size
/// presets, shown next to the computed ratio.
pub const REFERENCE_PARAMS: [(&str, f64, f64); 2] = [("vgg16", 21.5, 15.7), ("resnet18", 15.9, 10.2)];

pub fn reference_ratio(model: &str) -> Option<(f64, f64)> {
    REFERENCE_PARAMS
        .iter()
        .find(|(m, _, _)| *m == model)
        .map(|&(_, multi, orig)| (multi, orig))
}

fn parse_input(s: &str) -> Result<Vec<usize>> {
    let dims: std::result::Result<Vec<usize>, _> = s.split(',').map(|d| d.trim().parse()).collect();
    match dims {
        Ok(d) if d.len() == 4 && d.iter().all(|&v| v > 0) => Ok(d),
        _ => Err(CliError::Usage(format!("--input must be four positive integers B,C,H,W, got `{s}`"))),
    }
}

pub fn compute(model: &str, mode: StatsMode, input: &[usize], classes: usize, convention: FlopConvention) -> Result<ModelStats> {
    let spec = BackboneSpec::preset(model).map_err(|e| CliError::Usage(e.to_string()))?;
    let mode = match mode {
        StatsMode::Original => ClassifierMode::Original,
        StatsMode::Multi => ClassifierMode::MultiHeads(NormalizerKind::L2SqrtExp),
    };
    let m = Model::<f32>::build(&spec, mode, classes, &mut SeededRng::new(0))?;
    Ok(count_stats(&m, input, convention)?)
}

fn table(s: &ModelStats, mode: StatsMode) -> String {
    let mut t = format!(
        "{} ({}) input {:?}\n{:<12} {:>14} {:>16}  output\n",
        s.model,
        if mode == StatsMode::Multi { "multi" } else { "original" },
        s.input_shape,
        "part",
        "params",
        "flops"
    );
    for p in s.parts() {
        t += &format!("{:<12} {:>14} {:>16}  {:?}\n", p.name, p.params, p.flops, p.out_shape);
    }
    t += &format!("{:<12} {:>14} {:>16}\n", "total", s.params, s.flops);
    t
}

fn to_json(s: &ModelStats, mode: StatsMode) -> serde_json::Value {
    json!({
        "model": s.model,
        "mode": if mode == StatsMode::Multi { "multi" } else { "original" },
        "input": s.input_shape,
        "convention": s.convention.to_string(),
        "params": s.params,
        "flops": s.flops,
        "parts": s.parts().map(|p| json!({
            "name": p.name,
            "params": p.params,
            "macs": p.macs,
            "flops": p.flops,
            "out_shape": p.out_shape,
        })).collect::<Vec<_>>(),
    })
}

pub fn cmd_stats(args: &StatsArgs, out: &mut dyn Write) -> Result<Vec<ModelStats>> {
    let input = parse_input(&args.input)?;
    let convention = match args.flops {
        Convention::Mac => FlopConvention::Mac,
        Convention::TwoMac => FlopConvention::TwoPerMac,
    };
    let modes = if args.both {
        vec![StatsMode::Original, StatsMode::Multi]
    } else {
        vec![args.mode]
    };
    let stats = modes
        .iter()
        .map(|&m| compute(&args.model, m, &input, args.classes, convention))
        .collect::<Result<Vec<_>>>()?;
    let ratio = args.both.then(|| {
        (
            stats[1].params as f64 / stats[0].params as f64,
            stats[1].flops as f64 / stats[0].flops as f64,
        )
    });
    let text = if args.json {
        let mut v = json!({
            "runs": stats.iter().zip(&modes).map(|(s, &m)| to_json(s, m)).collect::<Vec<_>>(),
        });
        if let Some((p, f)) = ratio {
            v["ratio"] = json!({ "params": p, "flops": f });
        }
        format!("{}\n", serde_json::to_string_pretty(&v).expect("json"))
    } else {
        let mut t = format!("flops: {}\n", convention.note());
        for (s, &m) in stats.iter().zip(&modes) {
            t += &table(s, m);
        }
        if let Some((p, f)) = ratio {
            t += &format!("ratio multi/original: params {p:.3} flops {f:.3}");
            if let Some((multi, orig)) = reference_ratio(&args.model) {
                t += &format!(" (reference params {multi}M/{orig}M = {:.3})", multi / orig);
            }
            t += "\n";
        }
        t
    };
    write!(out, "{text}").map_err(CliError::io("stdout"))?;
    Ok(stats)
}
