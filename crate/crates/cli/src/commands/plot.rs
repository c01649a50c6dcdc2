use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};

use crate::error::{CliError, Result};
use crate::metrics::{parse_csv, MetricRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Accuracy,
    Loss,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Args, Debug, Clone)]
pub struct PlotArgs {
    /// Metrics CSVs, one series each
    #[arg(required = true)]
    pub csv: Vec<PathBuf>,

    /// Output SVG path
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, value_enum, default_value = "accuracy")]
    pub metric: Metric,

    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,

    /// Series labels, in CSV order; defaults to `dir/file` names
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn default_label(path: &Path) -> String {
    let stem = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    match path.parent().and_then(Path::file_name) {
        Some(dir) => format!("{}/{stem}", dir.to_string_lossy()),
        None => stem,
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Tick step from {1, 2, 5} x 10^k giving at most `max` intervals.
fn nice_step(span: f64, max: usize) -> f64 {
    let raw = span / max as f64;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| span / s <= max as f64)
        .unwrap_or(10.0 * mag)
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    format!("{v:.decimals$}")
}

pub fn select(rows: &[MetricRow], metric: Metric, split: Split) -> Vec<(f64, f64)> {
    let name = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    rows.iter()
        .filter(|r| r.split == name)
        .map(|r| {
            let y = match metric {
                Metric::Accuracy => r.accuracy,
                Metric::Loss => r.loss,
            };
            (r.epoch as f64, y)
        })
        .collect()
}

/// Line chart of every series against epoch. Output depends only on the
/// inputs.
pub fn render_svg(series: &[Series], title: &str, y_label: &str) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        if y.is_finite() {
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-9 {
        let pad = 0.05 * y0.abs().max(1.0);
        y0 -= pad;
        y1 += pad;
    }
    let ystep = nice_step(y1 - y0, 8);
    let (y0, y1) = ((y0 / ystep).floor() * ystep, (y1 / ystep).ceil() * ystep);
    let xstep = nice_step(x1 - x0, 10).max(1.0);
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    let mut y = y0;
    while y <= y1 + ystep * 1e-6 {
        let py = sy(y);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#e0e0e0"/>"##,
            LEFT + pw
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            py + 4.0,
            fmt_tick(y, ystep)
        );
        y += ystep;
    }
    let mut x = (x0 / xstep).ceil() * xstep;
    while x <= x1 + 1e-9 {
        let px = sx(x);
        let _ = writeln!(
            s,
            r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#333"/>"##,
            TOP + ph,
            TOP + ph + 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph + 18.0,
            fmt_tick(x, xstep)
        );
        x += xstep;
    }
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#333"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );
    for (k, series) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = series
            .points
            .iter()
            .filter(|(_, y)| y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{}"/>"#,
            path.join(" ")
        );
        let ly = TOP + 14.0 + 20.0 * k as f64;
        let lx = LEFT + pw + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="3"/>"#,
            lx + 22.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 28.0,
            ly + 4.0,
            escape(&series.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn cmd_plot(args: &PlotArgs, out: &mut dyn Write) -> Result<Vec<Series>> {
    if !args.labels.is_empty() && args.labels.len() != args.csv.len() {
        return Err(CliError::Usage(format!(
            "{} labels for {} CSV files",
            args.labels.len(),
            args.csv.len()
        )));
    }
    let mut series = Vec::new();
    for (k, path) in args.csv.iter().enumerate() {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let rows = parse_csv(path, &text)?;
        let points = select(&rows, args.metric, args.split);
        if points.is_empty() {
            return Err(CliError::Parse {
                path: path.clone(),
                line: 0,
                message: format!("no {:?} rows", args.split).to_lowercase(),
            });
        }
        series.push(Series {
            label: args.labels.get(k).cloned().unwrap_or_else(|| default_label(path)),
            points,
        });
    }
    let (metric, split) = (
        format!("{:?}", args.metric).to_lowercase(),
        format!("{:?}", args.split).to_lowercase(),
    );
    let svg = render_svg(&series, &format!("{split} {metric} per epoch"), &metric);
    std::fs::write(&args.out, svg).map_err(CliError::io(&args.out))?;
    writeln!(out, "wrote {} ({} series)", args.out.display(), series.len()).map_err(CliError::io("stdout"))?;
    Ok(series)
}
