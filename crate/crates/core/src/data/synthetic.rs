use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Each class is a fixed random image plus small gaussian pixel noise.
    TwoGaussians,
    /// Each class is a stripe orientation and period, drawn with random
    /// phase and colors under heavy pixel noise.
    StripedPatterns,
}

impl SyntheticKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "two_gaussians" => Ok(Self::TwoGaussians),
            "striped_patterns" => Ok(Self::StripedPatterns),
            other => Err(Error::Config(format!(
                "unknown synthetic kind `{other}` (two_gaussians, striped_patterns)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::TwoGaussians => "two_gaussians",
            Self::StripedPatterns => "striped_patterns",
        }
    }
}

const GAUSSIAN_NOISE: f64 = 0.05;
const STRIPE_NOISE: f64 = 0.3;

/// Three-channel `image_size x image_size` images with balanced labels
/// (`i % n_classes` before a seeded shuffle).
pub fn make_synthetic(
    kind: SyntheticKind,
    n_samples: usize,
    n_classes: usize,
    image_size: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(Error::Data(format!("need at least 2 classes, got {n_classes}")));
    }
    if image_size == 0 {
        return Err(Error::Shape("image size must be positive".into()));
    }
    let root = SeededRng::new(seed);
    let plane = image_size * image_size;
    let mut labels: Vec<usize> = (0..n_samples).map(|i| i % n_classes).collect();
    root.split(1).shuffle(&mut labels);
    let mut pixels = Vec::with_capacity(n_samples * 3 * plane);
    match kind {
        SyntheticKind::TwoGaussians => {
            let mut proto_rng = root.split(2);
            let protos: Vec<Vec<f64>> = (0..n_classes)
                .map(|_| (0..3 * plane).map(|_| proto_rng.uniform_range(0.25, 0.75)).collect())
                .collect();
            for (i, &label) in labels.iter().enumerate() {
                let mut rng = root.derive(&[3, i as u64]);
                pixels.extend(protos[label].iter().map(|&m| {
                    (m + GAUSSIAN_NOISE * rng.normal()).clamp(0.0, 1.0) as f32
                }));
            }
        }
        SyntheticKind::StripedPatterns => {
            for (i, &label) in labels.iter().enumerate() {
                let mut rng = root.derive(&[4, i as u64]);
                pixels.extend(stripes(label, image_size, &mut rng));
            }
        }
    }
    Dataset::new([3, image_size, image_size], n_classes, pixels, labels)
}

/// Class `k` draws stripes with orientation `k % 4` (rows, columns,
/// diagonal, anti-diagonal) and period `2 + (k / 4) % 3`.
fn stripes(class: usize, size: usize, rng: &mut SeededRng) -> Vec<f32> {
    let orientation = class % 4;
    let period = 2 + (class / 4) % 3;
    let phase = rng.below(period);
    let fg: Vec<f64> = (0..3).map(|_| rng.uniform_range(0.55, 1.0)).collect();
    let bg: Vec<f64> = (0..3).map(|_| rng.uniform_range(0.0, 0.45)).collect();
    let mut out = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                let coord = match orientation {
                    0 => y,
                    1 => x,
                    2 => x + y,
                    _ => x + size - y,
                };
                let on = 2 * ((coord + phase) % period) < period;
                let base = if on { fg[c] } else { bg[c] };
                out.push((base + STRIPE_NOISE * rng.normal()).clamp(0.0, 1.0) as f32);
            }
        }
    }
    out
}
