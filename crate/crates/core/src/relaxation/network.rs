use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cell::{arch_vector, cell_forward, CellArchParams, CellWeights};
use super::{channel_plan, CellKind, ChannelPlan};
use crate::error::{Error, Result};
use crate::numerics::{softmax_vec, ConvNormParams, Ctx, ParamGroup, ParamId, ParamStore, PointwiseParams, Tensor, Var};
use crate::supernet::{build_supernet, SupernetGraph};

/// Shape of a relaxed supernet.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupernetConfig {
    pub layers: usize,
    pub scales: usize,
    pub blocks: usize,
    pub k: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub num_classes: usize,
}

impl SupernetConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("scales", self.scales),
            ("blocks", self.blocks),
            ("k", self.k),
            ("base_channels", self.base_channels),
            ("in_channels", self.in_channels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("num_classes must be at least 2"));
        }
        if self.base_channels % self.k != 0 {
            return Err(Error::invalid(format!(
                "base_channels {} must be divisible by k={}",
                self.base_channels, self.k
            )));
        }
        Ok(())
    }

    /// Spatial sizes must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.scales - 1)
    }
}

/// Parameter handles and structure of a relaxed supernet. The values live in a
/// separate [`ParamStore`] so the same layout can read any checkpoint.
#[derive(Clone, Debug)]
pub struct SupernetLayout {
    pub config: SupernetConfig,
    pub graph: SupernetGraph,
    pub plan: ChannelPlan,
    pub stem: ConvNormParams,
    /// Indexed by [`CellKind`] order.
    pub cells: Vec<CellArchParams>,
    /// One β vector per vertex (over its incoming edges); `None` at the terminals.
    pub beta: Vec<Option<ParamId>>,
    /// Cell weights per supernet edge; `None` for skip and terminal edges.
    pub edge_cells: Vec<Option<CellWeights>>,
    /// `(site, scale, classifier)` for every last-layer site.
    pub heads: Vec<(usize, usize, PointwiseParams)>,
}

pub struct NetworkOutput {
    pub logits: Var,
    /// Softmax mixing weights actually applied at each cell site.
    pub mixing: Vec<(usize, Vec<f64>)>,
}

impl SupernetLayout {
    pub fn cell(&self, kind: CellKind) -> &CellArchParams {
        &self.cells[kind.index()]
    }

    /// Softmax of each site's β group, read from `store`.
    pub fn mixing_weights(&self, store: &ParamStore) -> Result<Vec<(usize, Vec<f64>)>> {
        self.beta
            .iter()
            .enumerate()
            .filter_map(|(v, b)| b.map(|id| (v, id)))
            .map(|(v, id)| Ok((v, softmax_vec(store.tensor(id).data())?)))
            .collect()
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let m = self.config.size_multiple();
        if x.channels() != self.config.in_channels {
            return Err(Error::shape(
                "network_forward",
                format!("input has {} channels, network expects {}", x.channels(), self.config.in_channels),
            ));
        }
        if x.height() % m != 0 || x.width() % m != 0 || x.height() == 0 || x.width() == 0 {
            return Err(Error::shape(
                "network_forward",
                format!("spatial size {}x{} is not a positive multiple of {m}", x.height(), x.width()),
            ));
        }
        Ok(())
    }

    /// Relaxed forward pass producing per-pixel class logits at input resolution.
    pub fn forward(&self, ctx: &mut Ctx<'_>, input: Var) -> Result<NetworkOutput> {
        self.check_input(ctx.tape.value(input))?;
        let g = &self.graph;
        let mut values: Vec<Option<Var>> = vec![None; g.vertices().len()];
        values[g.input()] = Some(self.stem.forward(ctx, input)?);
        let mut mixing = Vec::new();
        for v in g.site_ids() {
            let mut branches = Vec::new();
            for &e in g.incoming(v) {
                let edge = g.edge(e);
                let src = values[edge.from].expect("topological construction order");
                let out = match (&self.edge_cells[e], CellKind::for_edge(edge.kind)) {
                    (Some(w), Some(kind)) => cell_forward(ctx, src, self.cell(kind), w)?,
                    _ => src,
                };
                branches.push(out);
            }
            let beta_id = self.beta[v].expect("every site has a beta group");
            let b = ctx.p(beta_id);
            let weights = ctx.tape.softmax(b)?;
            mixing.push((v, ctx.tape.value(weights).data().to_vec()));
            let out = ctx.tape.weighted_sum(&branches, weights)?;
            if !ctx.tape.value(out).all_finite() {
                return Err(Error::NonFinite(format!("vertex {}", g.vertex(v).label())));
            }
            values[v] = Some(out);
        }
        let mut heads = Vec::with_capacity(self.heads.len());
        for (site, scale, head) in &self.heads {
            let mut h = head.forward(ctx, values[*site].expect("site evaluated"))?;
            for _ in 0..*scale {
                h = ctx.tape.bilinear_up2(h);
            }
            heads.push(h);
        }
        let logits = ctx.tape.sum(&heads)?;
        if !ctx.tape.value(logits).all_finite() {
            return Err(Error::NonFinite("output logits".into()));
        }
        Ok(NetworkOutput { logits, mixing })
    }
}

/// A relaxed supernet together with its parameter values.
#[derive(Clone, Debug)]
pub struct SupernetModel {
    pub layout: SupernetLayout,
    pub store: ParamStore,
}

impl SupernetModel {
    /// Builds the network. Kernels draw from `weight_rng`; architecture scalars
    /// are `arch_noise`-scaled Gaussian draws from `arch_rng` around zero.
    pub fn new(config: SupernetConfig, weight_rng: &mut impl Rng, arch_rng: &mut impl Rng, arch_noise: f64) -> Result<Self> {
        config.validate()?;
        let graph = build_supernet(config.layers, config.scales)?;
        let plan = channel_plan(&graph, config.base_channels, config.k)?;
        let mut store = ParamStore::new();
        let stem = ConvNormParams::new(&mut store, weight_rng, "stem", config.in_channels, config.base_channels);
        let cells = CellKind::ALL
            .iter()
            .map(|&kind| CellArchParams::new(&mut store, arch_rng, kind, config.blocks, arch_noise))
            .collect();
        let mut beta = vec![None; graph.vertices().len()];
        for v in graph.site_ids() {
            let n = graph.incoming(v).len();
            beta[v] = Some(store.add(
                format!("beta.v{v}"),
                ParamGroup::Beta,
                arch_vector(arch_rng, n, arch_noise),
            ));
        }
        let mut edge_cells = Vec::with_capacity(graph.edges().len());
        for (e, edge) in graph.edges().iter().enumerate() {
            let w = match CellKind::for_edge(edge.kind) {
                Some(kind) => Some(CellWeights::new(
                    &mut store,
                    weight_rng,
                    &format!("edge{e}.{}", kind.name()),
                    kind,
                    config.blocks,
                    plan.width(edge.from),
                    plan.width(edge.to),
                    config.k,
                )?),
                None => None,
            };
            edge_cells.push(w);
        }
        let heads = (0..graph.scales().min(graph.layers()))
            .map(|s| {
                let site = graph.site(config.layers - 1, s).expect("last layer holds every scale");
                let head = PointwiseParams::new(
                    &mut store,
                    weight_rng,
                    &format!("head.s{s}"),
                    plan.width(site),
                    config.num_classes,
                    true,
                );
                (site, s, head)
            })
            .collect();
        Ok(SupernetModel {
            layout: SupernetLayout {
                config,
                graph,
                plan,
                stem,
                cells,
                beta,
                edge_cells,
                heads,
            },
            store,
        })
    }

    pub fn config(&self) -> &SupernetConfig {
        &self.layout.config
    }

    pub fn graph(&self) -> &SupernetGraph {
        &self.layout.graph
    }

    /// Forward pass on a fresh context over this model's parameters.
    pub fn forward(&self, ctx: &mut Ctx<'_>, input: Var) -> Result<NetworkOutput> {
        self.layout.forward(ctx, input)
    }
}
