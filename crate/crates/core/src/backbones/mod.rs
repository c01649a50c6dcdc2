//! Declarative backbones built as chains of sets, `h_t = Set_t(h_{t-1})`,
//! with either one final classifier or one [`ClassifierHead`] per set.
//!
//! [`ClassifierHead`]: crate::heads::ClassifierHead

mod blocks;
mod model;
mod stats;

pub use blocks::{DenseLayer, ResidualBlock};
pub use model::{ClassifierMode, ForwardOutput, Model};
pub use stats::{count_stats, propagate_shapes, FlopConvention, ModelStats, PartStats};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// Each `(k, c)` entry is a conv (plus batchnorm when enabled) and relu.
    PlainConv,
    /// Two 3x3 convs with a skip connection; 1x1 projection when the
    /// shape changes.
    ResidualBasic,
    /// Batchnorm, relu, 1x1 conv, then 2x2 max pooling.
    DownsampleTransition,
    /// Bottleneck convs whose output is concatenated to the input; the
    /// last entry's channel count is the growth per repeat.
    DenseConcat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    /// `(kernel, out_channels)` per conv.
    pub channels: Vec<(usize, usize)>,
    pub repeat: usize,
}

impl BlockSpec {
    pub fn new(kind: BlockKind, channels: &[(usize, usize)], repeat: usize) -> Self {
        Self {
            kind,
            channels: channels.to_vec(),
            repeat,
        }
    }

    pub fn plain(kernel: usize, out: usize, repeat: usize) -> Self {
        Self::new(BlockKind::PlainConv, &[(kernel, out)], repeat)
    }

    pub fn residual(out: usize, repeat: usize) -> Self {
        Self::new(BlockKind::ResidualBasic, &[(3, out), (3, out)], repeat)
    }

    /// Output channels given the block's input channels.
    pub fn out_channels(&self, in_channels: usize) -> usize {
        match self.kind {
            BlockKind::DenseConcat => {
                in_channels + self.repeat * self.channels.last().map_or(0, |c| c.1)
            }
            _ => self.channels.last().map_or(in_channels, |c| c.1),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.repeat == 0 {
            return Err(Error::Build("block repeat must be >= 1".into()));
        }
        if self.channels.is_empty() {
            return Err(Error::Build("block has an empty channel plan".into()));
        }
        for &(k, c) in &self.channels {
            if c == 0 {
                return Err(Error::Build("block channels must be positive".into()));
            }
            if k != 1 && k != 3 {
                return Err(Error::Build(format!("kernel {k} not supported (1 or 3)")));
            }
        }
        match self.kind {
            BlockKind::ResidualBasic if self.channels.len() != 2 || self.channels[0].0 != 3 => {
                Err(Error::Build(
                    "residual_basic expects exactly two 3x3 convs".into(),
                ))
            }
            BlockKind::DownsampleTransition if self.channels != [(1, self.channels[0].1)] => Err(
                Error::Build("downsample_transition expects a single 1x1 conv".into()),
            ),
            _ => Ok(()),
        }
    }
}

/// How a set shrinks the spatial extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    /// 2x2 max pooling after the set's blocks.
    MaxPool,
    /// The first conv of the set (and its skip projection) uses stride 2.
    StrideFirst,
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SetSpec {
    pub blocks: Vec<BlockSpec>,
    pub reduction: Reduction,
    /// Declared input channels; checked against the chain when present.
    pub in_channels: Option<usize>,
}

impl SetSpec {
    pub fn new(blocks: Vec<BlockSpec>, reduction: Reduction) -> Self {
        Self {
            blocks,
            reduction,
            in_channels: None,
        }
    }

    pub fn expecting(mut self, in_channels: usize) -> Self {
        self.in_channels = Some(in_channels);
        self
    }

    pub fn out_channels(&self, in_channels: usize) -> usize {
        self.blocks
            .iter()
            .fold(in_channels, |c, b| b.out_channels(c))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneSpec {
    pub name: String,
    pub in_channels: usize,
    pub sets: Vec<SetSpec>,
    /// Batchnorm after every conv inside the sets; convs carry a bias
    /// only when this is off.
    pub batchnorm: bool,
    /// Hidden widths of the original final classifier (before the
    /// `-> N` layer).
    pub classifier_hidden: Vec<usize>,
}

impl BackboneSpec {
    /// Number of sets, T.
    pub fn depth(&self) -> usize {
        self.sets.len()
    }

    /// Output channels of every set, `h_1 .. h_T`.
    pub fn set_channels(&self) -> Vec<usize> {
        let mut c = self.in_channels;
        self.sets
            .iter()
            .map(|s| {
                c = s.out_channels(c);
                c
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sets.is_empty() {
            return Err(Error::Build(format!("{}: backbone has no sets", self.name)));
        }
        if self.in_channels == 0 {
            return Err(Error::Build("input channels must be positive".into()));
        }
        let mut c = self.in_channels;
        for (t, set) in self.sets.iter().enumerate() {
            let name = format!("{}: set{}", self.name, t + 1);
            if set.blocks.is_empty() {
                return Err(Error::Build(format!("{name} has no blocks")));
            }
            if let Some(expected) = set.in_channels {
                if expected != c {
                    return Err(Error::Build(format!(
                        "{name} declares {expected} input channels but receives {c}"
                    )));
                }
            }
            for b in &set.blocks {
                b.validate().map_err(|e| match e {
                    Error::Build(m) => Error::Build(format!("{name}: {m}")),
                    other => other,
                })?;
            }
            if set.reduction == Reduction::StrideFirst
                && !matches!(
                    set.blocks[0].kind,
                    BlockKind::PlainConv | BlockKind::ResidualBasic
                )
            {
                return Err(Error::Build(format!(
                    "{name}: stride-first reduction needs a conv or residual first block"
                )));
            }
            c = set.out_channels(c);
        }
        if self.classifier_hidden.contains(&0) {
            return Err(Error::Build("classifier hidden widths must be positive".into()));
        }
        Ok(())
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "vgg16" => Ok(Self::vgg16()),
            "resnet18" => Ok(Self::resnet18()),
            "mini_vgg" => Ok(Self::mini_vgg()),
            "mini_resnet" => Ok(Self::mini_resnet()),
            "mini_cnn" => Ok(Self::mini_cnn()),
            other => Err(Error::Build(format!(
                "unknown model preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            ))),
        }
    }

    /// 13 convs in five sets, each followed by 2x2 max pooling, and a
    /// 4096-4096 fully connected classifier.
    pub fn vgg16() -> Self {
        let widths = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];
        Self {
            name: "vgg16".into(),
            in_channels: 3,
            sets: plain_sets(&widths),
            batchnorm: false,
            classifier_hidden: vec![4096, 4096],
        }
    }

    /// 3x3 stem set followed by four sets of two basic residual blocks;
    /// sets 3-5 halve the spatial extent with a stride-2 first conv.
    pub fn resnet18() -> Self {
        residual_family("resnet18", &[64, 64, 128, 256, 512], 2)
    }

    pub fn mini_vgg() -> Self {
        Self {
            name: "mini_vgg".into(),
            in_channels: 3,
            sets: plain_sets(&[(8, 1), (16, 1), (32, 1)]),
            batchnorm: false,
            classifier_hidden: Vec::new(),
        }
    }

    pub fn mini_resnet() -> Self {
        residual_family("mini_resnet", &[8, 8, 16, 32], 1)
    }

    /// One set of one conv: a plain CNN.
    pub fn mini_cnn() -> Self {
        Self {
            name: "mini_cnn".into(),
            in_channels: 3,
            sets: vec![SetSpec::new(vec![BlockSpec::plain(3, 8, 1)], Reduction::None)],
            batchnorm: true,
            classifier_hidden: Vec::new(),
        }
    }
}

pub const PRESETS: [&str; 5] = ["vgg16", "resnet18", "mini_vgg", "mini_resnet", "mini_cnn"];

fn plain_sets(widths: &[(usize, usize)]) -> Vec<SetSpec> {
    let mut c = 3;
    widths
        .iter()
        .map(|&(w, n)| {
            let s = SetSpec::new(vec![BlockSpec::plain(3, w, n)], Reduction::MaxPool).expecting(c);
            c = w;
            s
        })
        .collect()
}

/// Stem conv set, one unreduced residual set, then stride-2 residual sets.
fn residual_family(name: &str, widths: &[usize], repeat: usize) -> BackboneSpec {
    let mut sets = vec![SetSpec::new(vec![BlockSpec::plain(3, widths[0], 1)], Reduction::None).expecting(3)];
    for (i, &w) in widths.iter().enumerate().skip(1) {
        let reduction = if i == 1 {
            Reduction::None
        } else {
            Reduction::StrideFirst
        };
        sets.push(SetSpec::new(vec![BlockSpec::residual(w, repeat)], reduction).expecting(widths[i - 1]));
    }
    BackboneSpec {
        name: name.into(),
        in_channels: 3,
        sets,
        batchnorm: true,
        classifier_hidden: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in PRESETS {
            BackboneSpec::preset(p).unwrap().validate().unwrap();
        }
        assert!(BackboneSpec::preset("alexnet").is_err());
    }

    #[test]
    fn channel_plans() {
        assert_eq!(BackboneSpec::resnet18().set_channels(), vec![64, 64, 128, 256, 512]);
        assert_eq!(BackboneSpec::vgg16().set_channels(), vec![64, 128, 256, 512, 512]);
    }

    #[test]
    fn broken_chain_is_a_build_error() {
        let mut spec = BackboneSpec::vgg16();
        spec.sets[2].in_channels = Some(64);
        let err = spec.validate().unwrap_err();
        assert!(matches!(err, Error::Build(ref m) if m.contains("set3")), "{err}");
    }

    #[test]
    fn dense_blocks_grow_channels() {
        let b = BlockSpec::new(BlockKind::DenseConcat, &[(1, 128), (3, 32)], 6);
        assert_eq!(b.out_channels(64), 64 + 6 * 32);
    }
}
