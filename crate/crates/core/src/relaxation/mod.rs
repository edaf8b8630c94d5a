//! Continuous relaxation of the supernet: mixed operators with partial
//! channel connections inside cells, and softmax-weighted fusion of the
//! incoming connections at every cell site.

mod cell;
mod network;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dil_conv3x3, sep_conv3x3, Ctx, ParamStore, SepConvParams, Stencil, Var};
use crate::supernet::{EdgeKind, SupernetGraph, Vertex};

pub use cell::{cell_forward, CellArchParams, CellWeights, MixedEdge};
pub use network::{NetworkOutput, SupernetConfig, SupernetLayout, SupernetModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OperatorKind {
    SepConv3x3,
    DilConv3x3r2,
    AvgPool3x3,
    SkipConnect,
    Zero,
}

impl OperatorKind {
    /// Candidate set in enum order; this order is also the decode tie-break order.
    pub const ALL: [OperatorKind; 5] = [
        OperatorKind::SepConv3x3,
        OperatorKind::DilConv3x3r2,
        OperatorKind::AvgPool3x3,
        OperatorKind::SkipConnect,
        OperatorKind::Zero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::SepConv3x3 => "sep_conv_3x3",
            OperatorKind::DilConv3x3r2 => "dil_conv_3x3",
            OperatorKind::AvgPool3x3 => "avg_pool_3x3",
            OperatorKind::SkipConnect => "skip_connect",
            OperatorKind::Zero => "zero",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.name() == s)
    }

    /// Creates the weights this operator needs at width `c` (channel count is preserved).
    pub fn make_params(self, store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, c: usize) -> OpParams {
        match self {
            OperatorKind::SepConv3x3 => {
                OpParams::Conv(SepConvParams::new(store, rng, &format!("{prefix}.sep"), c, c, Stencil::Dense))
            }
            OperatorKind::DilConv3x3r2 => {
                OpParams::Conv(SepConvParams::new(store, rng, &format!("{prefix}.dil"), c, c, Stencil::Dilated2))
            }
            _ => OpParams::Free,
        }
    }

    pub fn apply(self, ctx: &mut Ctx<'_>, x: Var, params: &OpParams) -> Result<Var> {
        match (self, params) {
            (OperatorKind::SepConv3x3, OpParams::Conv(w)) => sep_conv3x3(ctx, x, w),
            (OperatorKind::DilConv3x3r2, OpParams::Conv(w)) => dil_conv3x3(ctx, x, w),
            (OperatorKind::AvgPool3x3, _) => Ok(ctx.tape.avg_pool3x3(x)),
            (OperatorKind::SkipConnect, _) => Ok(x),
            (OperatorKind::Zero, _) => Ok(ctx.tape.zeros_like(x)),
            (op, OpParams::Free) => Err(Error::invalid(format!("{} needs weights", op.name()))),
        }
    }
}

/// Weights owned by one operator instance.
#[derive(Clone, Debug, PartialEq)]
pub enum OpParams {
    Conv(SepConvParams),
    Free,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CellKind {
    Expanding,
    Contracting,
    NonScaling,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::Expanding, CellKind::Contracting, CellKind::NonScaling];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Expanding => "expanding",
            CellKind::Contracting => "contracting",
            CellKind::NonScaling => "nonscaling",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Cell kind carried by a supernet edge; `None` for skip and terminal edges.
    pub fn for_edge(kind: EdgeKind) -> Option<CellKind> {
        match kind {
            EdgeKind::Contract => Some(CellKind::Contracting),
            EdgeKind::NonScale => Some(CellKind::NonScaling),
            EdgeKind::Expand => Some(CellKind::Expanding),
            EdgeKind::Skip | EdgeKind::Terminal => None,
        }
    }

    /// Applies the kind's resampling prelude.
    pub fn resample(self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        match self {
            CellKind::Contracting => ctx.tape.max_pool2(x),
            CellKind::Expanding => Ok(ctx.tape.bilinear_up2(x)),
            CellKind::NonScaling => Ok(x),
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

/// Channel split of a partial connection: the first `channels / k` channels
/// go through the mixed operator, the rest bypass it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartialMask {
    pub channels: usize,
    pub k: usize,
}

impl PartialMask {
    pub fn new(channels: usize, k: usize) -> Result<Self> {
        if k == 0 || channels == 0 || channels % k != 0 {
            return Err(Error::invalid(format!(
                "partial connection needs channels divisible by k (channels {channels}, k {k})"
            )));
        }
        Ok(PartialMask { channels, k })
    }

    pub fn selected(&self) -> usize {
        self.channels / self.k
    }

    pub fn selected_range(&self) -> std::ops::Range<usize> {
        0..self.selected()
    }
}

/// `Σ_o softmax(alpha)_o · o(x[sel])` on the selected channels, bypass on the rest.
/// `alpha` is a vector node over [`OperatorKind::ALL`]; `ops` holds one entry per operator.
pub fn partial_connect(ctx: &mut Ctx<'_>, x: Var, alpha: Var, mask: PartialMask, ops: &[OpParams]) -> Result<Var> {
    let c = ctx.tape.value(x).channels();
    if c != mask.channels {
        return Err(Error::shape(
            "partial_connect",
            format!("input has {c} channels, mask expects {}", mask.channels),
        ));
    }
    if ops.len() != OperatorKind::ALL.len() || ctx.tape.value(alpha).len() != ops.len() {
        return Err(Error::shape(
            "partial_connect",
            format!("{} operators, {} weights", ops.len(), ctx.tape.value(alpha).len()),
        ));
    }
    let sel = mask.selected();
    let xs = if sel == c { x } else { ctx.tape.slice_channels(x, 0, sel)? };
    let mut outs = Vec::with_capacity(ops.len());
    for (op, w) in OperatorKind::ALL.iter().zip(ops) {
        outs.push(op.apply(ctx, xs, w)?);
    }
    let weights = ctx.tape.softmax(alpha)?;
    let mixed = ctx.tape.weighted_sum(&outs, weights)?;
    if sel == c {
        return Ok(mixed);
    }
    let rest = ctx.tape.slice_channels(x, sel, c)?;
    ctx.tape.concat_channels(&[mixed, rest])
}

/// Width of every vertex: `base * 2^scale` at sites, `base` at the input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelPlan {
    pub base: usize,
    pub k: usize,
    pub widths: Vec<usize>,
}

impl ChannelPlan {
    pub fn width(&self, v: usize) -> usize {
        self.widths[v]
    }

    pub fn scale_width(&self, scale: usize) -> usize {
        self.base << scale
    }
}

pub fn channel_plan(g: &SupernetGraph, base_channels: usize, k: usize) -> Result<ChannelPlan> {
    if k == 0 || base_channels == 0 || base_channels % k != 0 {
        return Err(Error::invalid(format!(
            "base_channels {base_channels} must be a positive multiple of k={k}"
        )));
    }
    let widths = g
        .vertices()
        .iter()
        .map(|v| match v {
            Vertex::Site { scale, .. } => base_channels << scale.0,
            _ => base_channels,
        })
        .collect();
    Ok(ChannelPlan {
        base: base_channels,
        k,
        widths,
    })
}
