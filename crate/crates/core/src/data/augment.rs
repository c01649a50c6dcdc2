use super::{ChannelStats, LabeledImage};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Random erasing: with probability `prob`, replace a rectangle whose area
/// fraction and aspect ratio are drawn uniformly from the given ranges by
/// uniform noise in `[0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EraseSpec {
    pub prob: f64,
    pub area: (f64, f64),
    pub aspect: (f64, f64),
    /// Rectangles that do not fit are redrawn up to this many times.
    pub attempts: usize,
}

impl Default for EraseSpec {
    fn default() -> Self {
        Self {
            prob: 0.5,
            area: (0.02, 0.33),
            aspect: (0.3, 3.3),
            attempts: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPolicy {
    /// Zero padding on every side before the random crop back to the
    /// original size; 0 disables cropping.
    pub crop_pad: usize,
    pub flip_prob: f64,
    pub normalize: Option<ChannelStats>,
    pub erase: Option<EraseSpec>,
}

impl AugmentPolicy {
    /// Pad-4 crop, horizontal flip with probability 0.5, normalization with
    /// `stats` and the default erasing settings.
    pub fn standard(stats: ChannelStats) -> Self {
        Self {
            crop_pad: 4,
            flip_prob: 0.5,
            normalize: Some(stats),
            erase: Some(EraseSpec::default()),
        }
    }

    pub fn disabled() -> Self {
        Self {
            crop_pad: 0,
            flip_prob: 0.0,
            normalize: None,
            erase: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64, what: &str| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} probability {p} outside [0, 1]")))
            }
        };
        prob(self.flip_prob, "flip")?;
        if let Some(e) = &self.erase {
            prob(e.prob, "erase")?;
            let (a0, a1) = e.area;
            let (r0, r1) = e.aspect;
            if !(0.0 < a0 && a0 <= a1 && a1 <= 1.0) {
                return Err(Error::Config(format!(
                    "erase area range ({a0}, {a1}) must satisfy 0 < lo <= hi <= 1"
                )));
            }
            if !(0.0 < r0 && r0 <= r1) {
                return Err(Error::Config(format!(
                    "erase aspect range ({r0}, {r1}) must satisfy 0 < lo <= hi"
                )));
            }
        }
        if let Some(s) = &self.normalize {
            if s.std.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
                return Err(Error::Config("normalization std must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Rectangle `[top, top + height) x [left, left + width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EraseRegion {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Draws the erasing decision and rectangle for an `h x w` image.
///
/// Draw order: one uniform for the erase decision, then per attempt one
/// uniform for the area fraction and one for the aspect ratio, then the top
/// and left offsets once a rectangle fits.
pub fn sample_erase_region(
    h: usize,
    w: usize,
    spec: &EraseSpec,
    rng: &mut SeededRng,
) -> Option<EraseRegion> {
    if !rng.bernoulli(spec.prob) {
        return None;
    }
    let area = (h * w) as f64;
    for _ in 0..spec.attempts {
        let target = rng.uniform_range(spec.area.0, spec.area.1) * area;
        let aspect = rng.uniform_range(spec.aspect.0, spec.aspect.1);
        let eh = (target * aspect).sqrt().round() as usize;
        let ew = (target / aspect).sqrt().round() as usize;
        if eh >= 1 && ew >= 1 && eh < h && ew < w {
            let top = rng.below(h - eh + 1);
            let left = rng.below(w - ew + 1);
            return Some(EraseRegion {
                top,
                left,
                height: eh,
                width: ew,
            });
        }
    }
    None
}

/// Applies per-channel `(x - mean) / std`.
pub fn normalize(img: &LabeledImage, stats: &ChannelStats) -> LabeledImage {
    let s = img.pixels.shape();
    let plane = s[1] * s[2];
    let mut data = img.pixels.data().to_vec();
    for (c, px) in data.chunks_exact_mut(plane).enumerate() {
        let (m, sd) = (stats.mean[c] as f32, stats.std[c] as f32);
        px.iter_mut().for_each(|v| *v = (*v - m) / sd);
    }
    LabeledImage {
        pixels: Tensor::from_vec(s, data).expect("shape unchanged"),
        label: img.label,
    }
}

/// Pad-and-crop, horizontal flip, normalization, then erasing. The label
/// and shape never change.
pub fn augment(img: &LabeledImage, policy: &AugmentPolicy, rng: &mut SeededRng) -> LabeledImage {
    let s = img.pixels.shape().to_vec();
    let (ch, h, w) = (s[0], s[1], s[2]);
    let src = img.pixels.data();
    let mut data = vec![0f32; src.len()];

    let p = policy.crop_pad;
    let (dy, dx) = if p > 0 {
        (rng.below(2 * p + 1), rng.below(2 * p + 1))
    } else {
        (0, 0)
    };
    let flip = rng.bernoulli(policy.flip_prob);
    for c in 0..ch {
        for y in 0..h {
            // row y of the crop is row y + dy - p of the source
            let sy = (y + dy).checked_sub(p).filter(|&v| v < h);
            for x in 0..w {
                let ox = if flip { w - 1 - x } else { x };
                let sx = (x + dx).checked_sub(p).filter(|&v| v < w);
                if let (Some(sy), Some(sx)) = (sy, sx) {
                    data[(c * h + y) * w + ox] = src[(c * h + sy) * w + sx];
                }
            }
        }
    }
    let mut out = LabeledImage {
        pixels: Tensor::from_vec(&s, data).expect("shape unchanged"),
        label: img.label,
    };
    if let Some(stats) = &policy.normalize {
        out = normalize(&out, stats);
    }
    if let Some(spec) = &policy.erase {
        if let Some(r) = sample_erase_region(h, w, spec, rng) {
            let d = out.pixels.data_mut();
            for c in 0..ch {
                for y in r.top..r.top + r.height {
                    for x in r.left..r.left + r.width {
                        d[(c * h + y) * w + x] = rng.uniform() as f32;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> LabeledImage {
        LabeledImage {
            pixels: Tensor::from_vec(&[2, 3, 4], (0..24).map(|v| v as f32).collect()).unwrap(),
            label: 5,
        }
    }

    #[test]
    fn disabled_policy_is_identity() {
        let img = ramp();
        let out = augment(&img, &AugmentPolicy::disabled(), &mut SeededRng::new(3));
        assert_eq!(out, img);
    }

    #[test]
    fn flip_mirrors_columns_and_is_an_involution() {
        let img = ramp();
        let policy = AugmentPolicy {
            flip_prob: 1.0,
            ..AugmentPolicy::disabled()
        };
        let once = augment(&img, &policy, &mut SeededRng::new(0));
        assert_eq!(&once.pixels.data()[..4], &[3.0, 2.0, 1.0, 0.0]);
        let twice = augment(&once, &policy, &mut SeededRng::new(1));
        assert_eq!(twice, img);
    }

    #[test]
    fn crop_keeps_shape_and_label() {
        let img = ramp();
        let policy = AugmentPolicy {
            crop_pad: 2,
            erase: Some(EraseSpec {
                prob: 1.0,
                ..Default::default()
            }),
            ..AugmentPolicy::disabled()
        };
        for seed in 0..20 {
            let out = augment(&img, &policy, &mut SeededRng::new(seed));
            assert_eq!(out.pixels.shape(), img.pixels.shape());
            assert_eq!(out.label, 5);
        }
    }

    #[test]
    fn invalid_policies() {
        let mut p = AugmentPolicy::disabled();
        p.flip_prob = 1.5;
        assert!(p.validate().is_err());
        let mut p = AugmentPolicy::disabled();
        p.erase = Some(EraseSpec {
            area: (0.5, 0.2),
            ..Default::default()
        });
        assert!(p.validate().is_err());
    }
}
