use std::fmt;

use super::{BackboneSpec, BlockKind, Model, Reduction};
use crate::error::{Error, Result};
use crate::layers::{Layer, LayerCost};
use crate::tensor::Scalar;

/// How multiply-accumulates are converted to FLOPs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FlopConvention {
    /// One multiply-accumulate counts as one FLOP.
    #[default]
    Mac,
    /// One multiply-accumulate counts as two FLOPs.
    TwoPerMac,
}

impl FlopConvention {
    pub fn per_mac(self) -> u64 {
        match self {
            FlopConvention::Mac => 1,
            FlopConvention::TwoPerMac => 2,
        }
    }

    pub fn note(self) -> &'static str {
        match self {
            FlopConvention::Mac => "1 MAC = 1 FLOP; pools, activations, normalizers: 1 op per output element",
            FlopConvention::TwoPerMac => "1 MAC = 2 FLOPs; pools, activations, normalizers: 1 op per output element",
        }
    }
}

impl fmt::Display for FlopConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlopConvention::Mac => "mac",
            FlopConvention::TwoPerMac => "2mac",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartStats {
    pub name: String,
    pub params: usize,
    pub macs: u64,
    pub ops: u64,
    pub flops: u64,
    pub out_shape: Vec<usize>,
}

impl PartStats {
    fn from_cost(name: String, cost: LayerCost, convention: FlopConvention) -> Self {
        Self {
            name,
            params: cost.params,
            macs: cost.macs,
            ops: cost.ops,
            flops: cost.macs * convention.per_mac() + cost.ops,
            out_shape: cost.out_shape,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelStats {
    pub model: String,
    pub input_shape: Vec<usize>,
    pub convention: FlopConvention,
    pub params: usize,
    pub flops: u64,
    pub sets: Vec<PartStats>,
    pub heads: Vec<PartStats>,
    pub classifier: Option<PartStats>,
}

impl ModelStats {
    pub fn parts(&self) -> impl Iterator<Item = &PartStats> {
        self.sets
            .iter()
            .chain(&self.heads)
            .chain(self.classifier.iter())
    }
}

/// Parameter and FLOP totals for one forward pass at `input_shape`, broken
/// down by set, head and final classifier.
pub fn count_stats<T: Scalar>(
    model: &Model<T>,
    input_shape: &[usize],
    convention: FlopConvention,
) -> Result<ModelStats> {
    propagate_shapes(model.spec(), input_shape)?;
    let mut shape = input_shape.to_vec();
    let mut sets = Vec::new();
    let mut set_shapes = Vec::new();
    for (t, set) in model.sets().iter().enumerate() {
        let name = format!("set{}", t + 1);
        let cost = set.cost(&shape).map_err(|e| e.within(&name))?;
        shape = cost.out_shape.clone();
        set_shapes.push(shape.clone());
        sets.push(PartStats::from_cost(name, cost, convention));
    }
    let mut heads = Vec::new();
    for head in model.heads() {
        let name = format!("head{}", head.set_index);
        let cost = head
            .cost(&set_shapes[head.set_index - 1])
            .map_err(|e| e.within(&name))?;
        heads.push(PartStats::from_cost(name, cost, convention));
    }
    let classifier = match model.classifier() {
        Some(fc) => Some(PartStats::from_cost(
            "classifier".into(),
            fc.cost(&shape)?,
            convention,
        )),
        None => None,
    };
    let mut stats = ModelStats {
        model: model.spec().name.clone(),
        input_shape: input_shape.to_vec(),
        convention,
        params: 0,
        flops: 0,
        sets,
        heads,
        classifier,
    };
    stats.params = stats.parts().map(|p| p.params).sum();
    stats.flops = stats.parts().map(|p| p.flops).sum();
    Ok(stats)
}

/// Output shape of every set for `input`, derived from the spec alone.
/// Fails when a set would have to reduce a spatial extent below 1.
pub fn propagate_shapes(spec: &BackboneSpec, input: &[usize]) -> Result<Vec<Vec<usize>>> {
    if input.len() != 4 || input[1] != spec.in_channels {
        return Err(Error::Shape(format!(
            "{} expects input [B,{},H,W], got {input:?}",
            spec.name, spec.in_channels
        )));
    }
    let (b, mut c, mut h, mut w) = (input[0], input[1], input[2], input[3]);
    let mut out = Vec::with_capacity(spec.depth());
    for (t, set) in spec.sets.iter().enumerate() {
        let halve = |h: &mut usize, w: &mut usize, ceil: bool| -> Result<()> {
            if *h < 2 || *w < 2 {
                return Err(Error::Shape(format!(
                    "input {}x{} is too small: set{} receives {h}x{w} and must halve it",
                    input[2],
                    input[3],
                    t + 1
                )));
            }
            if ceil {
                *h = h.div_ceil(2);
                *w = w.div_ceil(2);
            } else {
                *h /= 2;
                *w /= 2;
            }
            Ok(())
        };
        if set.reduction == Reduction::StrideFirst {
            halve(&mut h, &mut w, true)?;
        }
        for block in &set.blocks {
            if block.kind == BlockKind::DownsampleTransition {
                for _ in 0..block.repeat {
                    halve(&mut h, &mut w, false)?;
                }
            }
            c = block.out_channels(c);
        }
        if set.reduction == Reduction::MaxPool {
            halve(&mut h, &mut w, false)?;
        }
        out.push(vec![b, c, h, w]);
    }
    Ok(out)
}
