use rand::Rng;

use super::{partial_connect, CellKind, OpParams, OperatorKind, PartialMask};
use crate::error::{Error, Result};
use crate::numerics::{ConvSpec, Ctx, ParamGroup, ParamId, ParamStore, Tensor, Var};

/// Architecture scalars of one cell kind, shared by every site of that kind.
///
/// Block `i` (0-based) has `i + 1` incoming edges: edge 0 is the cell input,
/// edge `j > 0` is the output of block `j - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellArchParams {
    pub kind: CellKind,
    pub blocks: usize,
    /// `alpha[i][j]`: vector over [`OperatorKind::ALL`].
    pub alpha: Vec<Vec<ParamId>>,
    /// `p[i]`: vector over the `i + 1` incoming edges of block `i`.
    pub p: Vec<ParamId>,
}

impl CellArchParams {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, kind: CellKind, blocks: usize, noise: f64) -> Self {
        let n_ops = OperatorKind::ALL.len();
        let mut alpha = Vec::with_capacity(blocks);
        let mut p = Vec::with_capacity(blocks);
        for i in 0..blocks {
            let row = (0..=i)
                .map(|j| {
                    store.add(
                        format!("cell.{}.alpha.b{i}.e{j}", kind.name()),
                        ParamGroup::Alpha,
                        arch_vector(rng, n_ops, noise),
                    )
                })
                .collect();
            alpha.push(row);
            p.push(store.add(
                format!("cell.{}.p.b{i}", kind.name()),
                ParamGroup::EdgeP,
                arch_vector(rng, i + 1, noise),
            ));
        }
        CellArchParams { kind, blocks, alpha, p }
    }
}

/// Zero plus Gaussian noise of the given scale.
pub(crate) fn arch_vector(rng: &mut impl Rng, n: usize, noise: f64) -> Tensor {
    if noise == 0.0 {
        return Tensor::zeros([1, n, 1, 1]);
    }
    crate::numerics::ops::normal_tensor(rng, [1, n, 1, 1], noise)
}

/// Operator weights of every (block, edge, operator) triple on one mixed edge.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedEdge {
    pub ops: Vec<OpParams>,
}

/// Kernel weights of one cell instance at one supernet edge.
#[derive(Clone, Debug, PartialEq)]
pub struct CellWeights {
    pub kind: CellKind,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    /// `edges[i][j]` mirrors [`CellArchParams::alpha`].
    pub edges: Vec<Vec<MixedEdge>>,
    /// 1x1 projection of the concatenated blocks, absent when widths already agree.
    pub projection: Option<ParamId>,
}

impl CellWeights {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        kind: CellKind,
        blocks: usize,
        c_in: usize,
        c_out: usize,
        k: usize,
    ) -> Result<Self> {
        let mask = PartialMask::new(c_in, k)?;
        let c = mask.selected();
        let mut edges = Vec::with_capacity(blocks);
        for i in 0..blocks {
            let row = (0..=i)
                .map(|j| MixedEdge {
                    ops: OperatorKind::ALL
                        .iter()
                        .map(|op| op.make_params(store, rng, &format!("{prefix}.b{i}.e{j}"), c))
                        .collect(),
                })
                .collect();
            edges.push(row);
        }
        let cat = blocks * c_in;
        let projection = (cat != c_out).then(|| {
            store.add(
                format!("{prefix}.proj"),
                ParamGroup::Weight,
                crate::numerics::ops::normal_tensor(rng, [c_out, cat, 1, 1], (1.0 / cat as f64).sqrt()),
            )
        });
        Ok(CellWeights {
            kind,
            c_in,
            c_out,
            k,
            edges,
            projection,
        })
    }
}

/// Relaxed cell: resample, then `X_i = Σ_j softmax(p_i)_j · partial_connect(X_j)`,
/// then concatenate all block outputs and project to `c_out`.
pub fn cell_forward(ctx: &mut Ctx<'_>, x: Var, arch: &CellArchParams, w: &CellWeights) -> Result<Var> {
    if arch.kind != w.kind || arch.blocks != w.edges.len() {
        return Err(Error::invalid(format!(
            "cell parameters for {} with {} blocks do not match weights for {} with {} blocks",
            arch.kind.name(),
            arch.blocks,
            w.kind.name(),
            w.edges.len()
        )));
    }
    let mask = PartialMask::new(w.c_in, w.k)?;
    let input = arch.kind.resample(ctx, x)?;
    let mut states = vec![input];
    for i in 0..arch.blocks {
        let mut branches = Vec::with_capacity(i + 1);
        for j in 0..=i {
            let a = ctx.p(arch.alpha[i][j]);
            branches.push(partial_connect(ctx, states[j], a, mask, &w.edges[i][j].ops)?);
        }
        let p = ctx.p(arch.p[i]);
        let coef = ctx.tape.softmax(p)?;
        states.push(ctx.tape.weighted_sum(&branches, coef)?);
    }
    let cat = ctx.tape.concat_channels(&states[1..])?;
    match w.projection {
        Some(pid) => {
            let pv = ctx.p(pid);
            ctx.tape.conv2d(cat, pv, ConvSpec::POINTWISE)
        }
        None => Ok(cat),
    }
}
