//! Executable form of a decoded architecture.
//!
//! Operators run on all channels (no partial connection). A site sums the
//! outputs of its selected incoming edges; every active last-layer site feeds
//! a 1x1 classifier upsampled to input resolution, and the heads are summed.

use std::collections::BTreeMap;

use rand::Rng;

use crate::decode::{CellGenotype, DecodedArch};
use crate::error::{Error, Result};
use crate::numerics::ops::normal_tensor;
use crate::numerics::{ConvNormParams, ConvSpec, Ctx, ParamGroup, ParamId, ParamStore, PointwiseParams, Var};
use crate::relaxation::{CellKind, OpParams};

#[derive(Clone, Debug)]
pub struct DecodedCellWeights {
    pub kind: CellKind,
    pub c_in: usize,
    pub c_out: usize,
    /// One operator per block.
    pub ops: Vec<OpParams>,
    pub projection: Option<ParamId>,
}

#[derive(Clone, Debug)]
pub struct DecodedNet {
    pub arch: DecodedArch,
    pub stem: ConvNormParams,
    /// Keyed by supernet edge id.
    pub cells: BTreeMap<usize, DecodedCellWeights>,
    pub heads: Vec<(usize, usize, PointwiseParams)>,
}

impl DecodedNet {
    /// Fresh weights for `arch`, registered in `store`.
    pub fn new(arch: &DecodedArch, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        let cfg = &arch.config;
        let stem = ConvNormParams::new(store, rng, "stem", cfg.in_channels, cfg.base_channels);
        let mut cells = BTreeMap::new();
        for inst in &arch.cell_instances {
            let c_in = arch.plan.width(inst.from);
            let c_out = arch.plan.width(inst.vertex);
            let genotype = arch.genotype(inst.kind);
            let prefix = format!("edge{}.{}", inst.edge, inst.kind.name());
            let ops = genotype
                .blocks
                .iter()
                .enumerate()
                .map(|(i, &(_, op))| op.make_params(store, rng, &format!("{prefix}.b{i}"), c_in))
                .collect();
            let cat = genotype.blocks.len() * c_in;
            let projection = (cat != c_out).then(|| {
                store.add(
                    format!("{prefix}.proj"),
                    ParamGroup::Weight,
                    normal_tensor(rng, [c_out, cat, 1, 1], (1.0 / cat as f64).sqrt()),
                )
            });
            cells.insert(
                inst.edge,
                DecodedCellWeights {
                    kind: inst.kind,
                    c_in,
                    c_out,
                    ops,
                    projection,
                },
            );
        }
        let heads = arch
            .active_heads()
            .into_iter()
            .map(|(site, scale)| {
                let head = PointwiseParams::new(
                    store,
                    rng,
                    &format!("head.s{scale}"),
                    arch.plan.width(site),
                    cfg.num_classes,
                    true,
                );
                (site, scale, head)
            })
            .collect();
        Ok(DecodedNet {
            arch: arch.clone(),
            stem,
            cells,
            heads,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, input: Var) -> Result<Var> {
        let g = &self.arch.graph;
        let m = 1usize << (self.arch.config.scales - 1);
        {
            let x = ctx.tape.value(input);
            if x.channels() != self.arch.config.in_channels || x.height() % m != 0 || x.width() % m != 0 {
                return Err(Error::shape(
                    "decoded forward",
                    format!("input {:?} incompatible with the architecture", x.shape()),
                ));
            }
        }
        let mut values: Vec<Option<Var>> = vec![None; g.vertices().len()];
        values[g.input()] = Some(self.stem.forward(ctx, input)?);
        for v in self.arch.active_sites() {
            let mut terms = Vec::new();
            for e in self.arch.selected_incoming(v) {
                let src = values[g.edge(e).from].expect("selected edges form connected paths");
                terms.push(match self.cells.get(&e) {
                    Some(w) => decoded_cell_forward(ctx, src, self.arch.genotype(w.kind), w)?,
                    None => src,
                });
            }
            values[v] = Some(ctx.tape.sum(&terms)?);
        }
        let mut outs = Vec::with_capacity(self.heads.len());
        for (site, scale, head) in &self.heads {
            let mut h = head.forward(ctx, values[*site].expect("head site is active"))?;
            for _ in 0..*scale {
                h = ctx.tape.bilinear_up2(h);
            }
            outs.push(h);
        }
        let logits = ctx.tape.sum(&outs)?;
        if !ctx.tape.value(logits).all_finite() {
            return Err(Error::NonFinite("decoded network logits".into()));
        }
        Ok(logits)
    }
}

/// Resample, then block `i` computes `op_i(X_{input_i})`; blocks are
/// concatenated and projected to `c_out`.
pub fn decoded_cell_forward(ctx: &mut Ctx<'_>, x: Var, genotype: &CellGenotype, w: &DecodedCellWeights) -> Result<Var> {
    let input = w.kind.resample(ctx, x)?;
    let mut states = vec![input];
    for (&(src, op), params) in genotype.blocks.iter().zip(&w.ops) {
        let out = op.apply(ctx, states[src], params)?;
        states.push(out);
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
