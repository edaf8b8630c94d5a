//! Two-step decoding: per-block argmax for the cell genotypes, then the
//! top-N_l highest-scoring paths through the β-weighted supernet.

mod arch;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use arch::{assemble_architecture, ArchFile, DecodedArch, Provenance, ARCH_FORMAT_VERSION};

use crate::error::{Error, Result};
use crate::graph::{topo_order, Dag, Path};
use crate::numerics::{softmax_vec, ParamGroup, ParamStore};
use crate::rng::{substream, Purpose};
use crate::relaxation::{CellArchParams, CellKind, OperatorKind, SupernetLayout};
use crate::supernet::{EdgeKind, SupernetGraph};

/// Discrete cell: block `i` applies `op` to input `input` (0 is the cell
/// input, `j > 0` the output of block `j - 1`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellGenotype {
    pub kind: CellKind,
    pub blocks: Vec<(usize, OperatorKind)>,
}

impl CellGenotype {
    pub fn validate(&self) -> Result<()> {
        for (i, &(input, op)) in self.blocks.iter().enumerate() {
            if input > i {
                return Err(Error::invalid(format!(
                    "{} cell block {i} reads input {input}, only 0..={i} exist",
                    self.kind.name()
                )));
            }
            if op == OperatorKind::Zero {
                return Err(Error::invalid(format!("{} cell block {i} uses the zero operator", self.kind.name())));
            }
        }
        Ok(())
    }
}

/// Picks, per block, the `(edge, operator)` maximizing
/// `softmax(p)_j * softmax(alpha_j)_o` with the zero operator excluded. Ties
/// go to the lower edge, then the earlier operator.
///
/// `alpha[i][j]` is indexed by [`OperatorKind::ALL`]; `p[i]` has `i + 1` entries.
pub fn decode_cell(kind: CellKind, alpha: &[Vec<Vec<f64>>], p: &[Vec<f64>]) -> Result<CellGenotype> {
    if alpha.len() != p.len() {
        return Err(Error::invalid("alpha and p cover different block counts"));
    }
    let mut blocks = Vec::with_capacity(p.len());
    for (i, (a_rows, p_row)) in alpha.iter().zip(p).enumerate() {
        if a_rows.len() != i + 1 || p_row.len() != i + 1 {
            return Err(Error::invalid(format!("block {i} must have {} incoming edges", i + 1)));
        }
        let edge_w = softmax_vec(p_row)?;
        let mut best: Option<(f64, usize, OperatorKind)> = None;
        for (j, a) in a_rows.iter().enumerate() {
            if a.len() != OperatorKind::ALL.len() {
                return Err(Error::invalid(format!("alpha of block {i} edge {j} has {} entries", a.len())));
            }
            let op_w = softmax_vec(a)?;
            for (o, op) in OperatorKind::ALL.iter().enumerate() {
                if *op == OperatorKind::Zero {
                    continue;
                }
                let score = edge_w[j] * op_w[o];
                if !score.is_finite() {
                    return Err(Error::NonFinite(format!("cell weight of block {i} edge {j}")));
                }
                if best.map_or(true, |(s, _, _)| score > s) {
                    best = Some((score, j, *op));
                }
            }
        }
        let (_, j, op) = best.expect("every block has a non-zero candidate");
        blocks.push((j, op));
    }
    Ok(CellGenotype { kind, blocks })
}

fn read_cell(store: &ParamStore, arch: &CellArchParams) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
    let alpha = arch
        .alpha
        .iter()
        .map(|row| row.iter().map(|&id| store.tensor(id).data().to_vec()).collect())
        .collect();
    let p = arch.p.iter().map(|&id| store.tensor(id).data().to_vec()).collect();
    (alpha, p)
}

/// Genotypes of all three cell kinds, in [`CellKind::ALL`] order.
pub fn decode_cells(layout: &SupernetLayout, store: &ParamStore) -> Result<Vec<CellGenotype>> {
    CellKind::ALL
        .iter()
        .map(|&kind| {
            let (alpha, p) = read_cell(store, layout.cell(kind));
            decode_cell(kind, &alpha, &p)
        })
        .collect()
}

/// A DAG with one score contribution per edge.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedDag {
    pub num_vertices: usize,
    pub edges: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
    pub source: usize,
    pub sink: usize,
}

impl Dag for WeightedDag {
    fn num_vertices(&self) -> usize {
        self.num_vertices
    }
    fn num_edges(&self) -> usize {
        self.edges.len()
    }
    fn endpoints(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }
    fn source(&self) -> usize {
        self.source
    }
    fn sink(&self) -> usize {
        self.sink
    }
}

impl WeightedDag {
    /// Sum of edge weights along `path`, accumulated from the source.
    pub fn score(&self, path: &Path) -> f64 {
        path.edges.iter().fold(0.0, |s, &e| s + self.weights[e])
    }
}

/// Edge weights from β: softmax within each site's incoming group, 1 on
/// terminal edges. `beta[v]` lists the raw scalars of vertex `v`'s incoming
/// edges in [`SupernetGraph::incoming`] order.
pub fn edge_weights_from_beta(g: &SupernetGraph, beta: &[Option<Vec<f64>>]) -> Result<WeightedDag> {
    let mut weights = vec![f64::NAN; g.edges().len()];
    for v in g.site_ids() {
        let incoming = g.incoming(v);
        let raw = beta
            .get(v)
            .and_then(|b| b.as_ref())
            .ok_or_else(|| Error::invalid(format!("no beta for {}", g.vertex(v).label())))?;
        if raw.len() != incoming.len() {
            return Err(Error::invalid(format!(
                "{} has {} incoming edges but {} beta values",
                g.vertex(v).label(),
                incoming.len(),
                raw.len()
            )));
        }
        if raw.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite(format!("beta of {}", g.vertex(v).label())));
        }
        for (&e, w) in incoming.iter().zip(softmax_vec(raw)?) {
            weights[e] = w;
        }
    }
    for (e, edge) in g.edges().iter().enumerate() {
        if edge.kind == EdgeKind::Terminal {
            weights[e] = 1.0;
        }
    }
    Ok(WeightedDag {
        num_vertices: g.vertices().len(),
        edges: g.edges().iter().map(|e| (e.from, e.to)).collect(),
        weights,
        source: g.input(),
        sink: g.output(),
    })
}

/// β values of every site, read from a parameter store.
pub fn beta_values(layout: &SupernetLayout, store: &ParamStore) -> Vec<Option<Vec<f64>>> {
    layout
        .beta
        .iter()
        .map(|b| b.map(|id| store.tensor(id).data().to_vec()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPath {
    pub vertices: Vec<usize>,
    pub edges: Vec<usize>,
    pub score: f64,
}

impl ScoredPath {
    pub fn path(&self) -> Path {
        Path {
            vertices: self.vertices.clone(),
            edges: self.edges.clone(),
        }
    }
}

/// Ranking of paths: higher score first, then the lexicographically smaller
/// vertex sequence, then the smaller edge sequence. `Greater` means better.
pub fn rank(a: &ScoredPath, b: &ScoredPath) -> Ordering {
    a.score
        .total_cmp(&b.score)
        .then_with(|| b.vertices.cmp(&a.vertices))
        .then_with(|| b.edges.cmp(&a.edges))
}

struct Ranked(ScoredPath);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        rank(&self.0, &other.0) == Ordering::Equal
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        rank(&self.0, &other.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopPaths {
    pub paths: Vec<ScoredPath>,
    /// Fewer than the requested number of paths exist.
    pub truncated: bool,
}

/// The `n` best source-to-sink paths under [`rank`].
///
/// k-best dynamic program over topological order: each vertex keeps its `n`
/// best prefixes, collected from its predecessors through a priority queue.
/// Exact because extending two prefixes by the same suffix preserves their
/// relative rank.
pub fn top_k_longest_paths(w: &WeightedDag, n: usize) -> Result<TopPaths> {
    if n == 0 {
        return Err(Error::invalid("N_l must be at least 1"));
    }
    if w.weights.len() != w.edges.len() {
        return Err(Error::invalid("one weight per edge required"));
    }
    let order = topo_order(w)?;
    let incoming = w.in_edges();
    let mut best: Vec<Vec<ScoredPath>> = vec![Vec::new(); w.num_vertices];
    best[w.source] = vec![ScoredPath {
        vertices: vec![w.source],
        edges: Vec::new(),
        score: 0.0,
    }];
    for &v in &order {
        if v == w.source {
            continue;
        }
        let mut heap = BinaryHeap::new();
        for &e in &incoming[v] {
            let u = w.edges[e].0;
            for prefix in &best[u] {
                let mut vertices = prefix.vertices.clone();
                vertices.push(v);
                let mut edges = prefix.edges.clone();
                edges.push(e);
                heap.push(Ranked(ScoredPath {
                    vertices,
                    edges,
                    score: prefix.score + w.weights[e],
                }));
            }
        }
        let mut kept = Vec::with_capacity(n.min(heap.len()));
        while kept.len() < n {
            match heap.pop() {
                Some(Ranked(p)) => kept.push(p),
                None => break,
            }
        }
        best[v] = kept;
    }
    let paths = std::mem::take(&mut best[w.sink]);
    Ok(TopPaths {
        truncated: paths.len() < n,
        paths,
    })
}

/// Full two-step decode of a relaxed supernet.
pub fn decode(layout: &SupernetLayout, store: &ParamStore, n_paths: usize) -> Result<(DecodedArch, TopPaths)> {
    let genotypes = decode_cells(layout, store)?;
    let weighted = edge_weights_from_beta(&layout.graph, &beta_values(layout, store))?;
    let top = top_k_longest_paths(&weighted, n_paths)?;
    let arch = assemble_architecture(&layout.config, &top.paths, &genotypes, &layout.graph)?;
    Ok((arch, top))
}

/// Decodes a random architecture from the same supernet: every α, p and β
/// scalar is redrawn from N(0, 1) on the baseline stream `index`.
pub fn random_decode(
    layout: &SupernetLayout,
    store: &ParamStore,
    n_paths: usize,
    seed: u64,
    index: u64,
) -> Result<(DecodedArch, TopPaths)> {
    let mut rng = substream(seed, Purpose::Baseline, index);
    let mut store = store.clone();
    for group in [ParamGroup::Alpha, ParamGroup::EdgeP, ParamGroup::Beta] {
        for id in store.ids_in(group) {
            for v in store.get_mut(id).tensor.data_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
    }
    decode(layout, &store, n_paths)
}

/// DOT rendering of the supernet with β edge weights and the selected paths
/// highlighted; genotypes are listed in comments.
pub fn arch_dot(arch: &DecodedArch, weights: Option<&WeightedDag>) -> String {
    let body = crate::supernet::to_dot(
        &arch.graph,
        weights.map(|w| w.weights.as_slice()),
        &arch.paths.iter().map(ScoredPath::path).collect::<Vec<_>>(),
    );
    let mut head = String::new();
    for g in &arch.genotypes {
        let blocks: Vec<String> = g.blocks.iter().map(|(i, op)| format!("({i}, {})", op.name())).collect();
        head.push_str(&format!("// {} cell: {}\n", g.kind.name(), blocks.join(" ")));
    }
    let (first, rest) = body.split_once('\n').expect("dot has a version line");
    format!("{first}\n{head}{rest}")
}
