use std::collections::BTreeSet;
use std::fs;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use super::{CellGenotype, ScoredPath};
use crate::error::{Error, Result};
use crate::relaxation::{channel_plan, CellKind, ChannelPlan, OperatorKind, SupernetConfig};
use crate::supernet::{build_supernet, EdgeKind, SupernetGraph};

pub const ARCH_FORMAT_VERSION: u32 = 1;

/// One cell instantiated at the head of a selected supernet edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellInstance {
    pub edge: usize,
    pub from: usize,
    pub vertex: usize,
    pub kind: CellKind,
}

/// The discrete network: selected paths, the three genotypes, and the
/// deduplicated cells those paths need.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedArch {
    pub config: SupernetConfig,
    pub graph: SupernetGraph,
    pub plan: ChannelPlan,
    pub paths: Vec<ScoredPath>,
    /// Genotypes in [`CellKind::ALL`] order.
    pub genotypes: Vec<CellGenotype>,
    /// Union of path edges, ascending.
    pub selected_edges: Vec<usize>,
    /// One entry per (vertex, kind), ordered by edge id.
    pub cell_instances: Vec<CellInstance>,
    /// Sites where more than one selected edge arrives; their inputs are summed.
    pub merge_points: Vec<usize>,
}

impl DecodedArch {
    pub fn genotype(&self, kind: CellKind) -> &CellGenotype {
        &self.genotypes[kind.index()]
    }

    /// Selected incoming edges of `v`, ascending.
    pub fn selected_incoming(&self, v: usize) -> Vec<usize> {
        self.graph
            .incoming(v)
            .iter()
            .copied()
            .filter(|e| self.selected_edges.binary_search(e).is_ok())
            .collect()
    }

    /// Sites used by at least one selected path, in topological order.
    pub fn active_sites(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .selected_edges
            .iter()
            .map(|&e| self.graph.edge(e).to)
            .filter(|&v| v != self.graph.output())
            .collect();
        set.into_iter().collect()
    }

    /// `(site, scale)` of every last-layer site feeding the output.
    pub fn active_heads(&self) -> Vec<(usize, usize)> {
        self.selected_incoming(self.graph.output())
            .into_iter()
            .map(|e| {
                let v = self.graph.edge(e).from;
                let (_, scale) = self.graph.vertex(v).site().expect("terminal edges start at sites");
                (v, scale.0)
            })
            .collect()
    }

    pub fn cell_instance_keys(&self) -> BTreeSet<(usize, CellKind)> {
        self.cell_instances.iter().map(|c| (c.vertex, c.kind)).collect()
    }
}

/// Builds the discrete network from selected paths. Duplicate paths and
/// shared vertices collapse onto one cell per (vertex, kind).
pub fn assemble_architecture(
    config: &SupernetConfig,
    paths: &[ScoredPath],
    genotypes: &[CellGenotype],
    g: &SupernetGraph,
) -> Result<DecodedArch> {
    config.validate()?;
    if g.layers() != config.layers || g.scales() != config.scales {
        return Err(Error::invalid("graph dimensions differ from the configuration"));
    }
    if paths.is_empty() {
        return Err(Error::InvalidPath("no paths selected".into()));
    }
    for p in paths {
        p.path().validate(g)?;
        if p.vertices.len() != config.layers + 2 {
            return Err(Error::InvalidPath(format!(
                "path has {} vertices, every complete path has {}",
                p.vertices.len(),
                config.layers + 2
            )));
        }
    }
    if genotypes.len() != CellKind::ALL.len() {
        return Err(Error::invalid(format!("expected 3 genotypes, got {}", genotypes.len())));
    }
    for (g_, kind) in genotypes.iter().zip(CellKind::ALL) {
        if g_.kind != kind {
            return Err(Error::invalid(format!("genotype order: found {} where {} belongs", g_.kind.name(), kind.name())));
        }
        if g_.blocks.len() != config.blocks {
            return Err(Error::invalid(format!(
                "{} genotype has {} blocks, configuration says {}",
                kind.name(),
                g_.blocks.len(),
                config.blocks
            )));
        }
        g_.validate()?;
    }
    let selected: BTreeSet<usize> = paths.iter().flat_map(|p| p.edges.iter().copied()).collect();
    let selected_edges: Vec<usize> = selected.into_iter().collect();
    let cell_instances = selected_edges
        .iter()
        .filter_map(|&e| {
            let edge = g.edge(e);
            CellKind::for_edge(edge.kind).map(|kind| CellInstance {
                edge: e,
                from: edge.from,
                vertex: edge.to,
                kind,
            })
        })
        .collect();
    let mut arrivals = vec![0usize; g.vertices().len()];
    for &e in &selected_edges {
        arrivals[g.edge(e).to] += 1;
    }
    let merge_points = g.site_ids().filter(|&v| arrivals[v] > 1).collect();
    Ok(DecodedArch {
        config: config.clone(),
        graph: g.clone(),
        plan: channel_plan(g, config.base_channels, config.k)?,
        paths: paths.to_vec(),
        genotypes: genotypes.to_vec(),
        selected_edges,
        cell_instances,
        merge_points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub checkpoint_digest: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenotypeEntry {
    pub kind: String,
    pub inputs: Vec<usize>,
    pub ops: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathEntry {
    pub score: f64,
    pub vertices: Vec<usize>,
    pub edges: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellEntry {
    pub vertex: usize,
    pub kind: String,
    pub edge: usize,
}

/// Text form of a [`DecodedArch`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchFile {
    pub format_version: u32,
    pub paths_requested: usize,
    /// Fewer paths than requested existed.
    pub truncated: bool,
    /// Per-vertex channel widths.
    pub widths: Vec<usize>,
    pub supernet: SupernetConfig,
    pub provenance: Provenance,
    pub genotypes: Vec<GenotypeEntry>,
    pub paths: Vec<PathEntry>,
    pub cells: Vec<CellEntry>,
}

impl ArchFile {
    pub fn from_arch(arch: &DecodedArch, requested: usize, truncated: bool, provenance: Provenance) -> ArchFile {
        ArchFile {
            format_version: ARCH_FORMAT_VERSION,
            paths_requested: requested,
            truncated,
            widths: arch.plan.widths.clone(),
            supernet: arch.config.clone(),
            provenance,
            genotypes: arch
                .genotypes
                .iter()
                .map(|g| GenotypeEntry {
                    kind: g.kind.name().into(),
                    inputs: g.blocks.iter().map(|b| b.0).collect(),
                    ops: g.blocks.iter().map(|b| b.1.name().into()).collect(),
                })
                .collect(),
            paths: arch
                .paths
                .iter()
                .map(|p| PathEntry {
                    score: p.score,
                    vertices: p.vertices.clone(),
                    edges: p.edges.clone(),
                })
                .collect(),
            cells: arch
                .cell_instances
                .iter()
                .map(|c| CellEntry {
                    vertex: c.vertex,
                    kind: c.kind.name().into(),
                    edge: c.edge,
                })
                .collect(),
        }
    }

    /// Rebuilds the architecture and re-checks every invariant, including
    /// that the stored widths and cells agree with the rebuilt ones.
    pub fn to_arch(&self) -> Result<DecodedArch> {
        if self.format_version != ARCH_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                what: "architecture file",
                found: self.format_version,
                expected: ARCH_FORMAT_VERSION,
            });
        }
        let g = build_supernet(self.supernet.layers, self.supernet.scales)?;
        let genotypes = self
            .genotypes
            .iter()
            .map(|e| {
                let kind = CellKind::from_name(&e.kind)
                    .ok_or_else(|| Error::format("architecture file", format!("unknown cell kind {}", e.kind)))?;
                if e.inputs.len() != e.ops.len() {
                    return Err(Error::format("architecture file", format!("{} inputs and ops differ in length", e.kind)));
                }
                let blocks = e
                    .inputs
                    .iter()
                    .zip(&e.ops)
                    .map(|(&i, o)| {
                        OperatorKind::from_name(o)
                            .map(|op| (i, op))
                            .ok_or_else(|| Error::format("architecture file", format!("unknown operator {o}")))
                    })
                    .collect::<Result<_>>()?;
                Ok(CellGenotype { kind, blocks })
            })
            .collect::<Result<Vec<_>>>()?;
        let paths: Vec<ScoredPath> = self
            .paths
            .iter()
            .map(|p| ScoredPath {
                vertices: p.vertices.clone(),
                edges: p.edges.clone(),
                score: p.score,
            })
            .collect();
        let arch = assemble_architecture(&self.supernet, &paths, &genotypes, &g)?;
        if arch.plan.widths != self.widths {
            return Err(Error::format("architecture file", "widths disagree with the channel plan"));
        }
        let cells: Vec<CellEntry> = ArchFile::from_arch(&arch, self.paths_requested, self.truncated, self.provenance.clone()).cells;
        if cells != self.cells {
            return Err(Error::format("architecture file", "cell list disagrees with the selected paths"));
        }
        if self.truncated != (self.paths.len() < self.paths_requested) {
            return Err(Error::format("architecture file", "truncated flag disagrees with the path count"));
        }
        for p in &arch.paths {
            let terminal = *p.edges.last().expect("validated non-empty");
            debug_assert_eq!(g.edge(terminal).kind, EdgeKind::Terminal);
        }
        Ok(arch)
    }

    pub fn to_toml(&self) -> Result<String> {
        let body = toml::to_string(self).map_err(|e| Error::format("architecture file", e.to_string()))?;
        Ok(format!("# msnas architecture v{ARCH_FORMAT_VERSION}\n{body}"))
    }

    pub fn from_toml(text: &str) -> Result<ArchFile> {
        let value: toml::Value = text
            .parse()
            .map_err(|e: toml::de::Error| Error::format("architecture file", e.to_string()))?;
        let version = value.get("format_version").and_then(|v| v.as_integer()).unwrap_or(-1);
        if version != ARCH_FORMAT_VERSION as i64 {
            return Err(Error::FormatVersion {
                what: "architecture file",
                found: version.max(0) as u32,
                expected: ARCH_FORMAT_VERSION,
            });
        }
        toml::from_str(text).map_err(|e| Error::format("architecture file", e.to_string()))
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &FsPath) -> Result<ArchFile> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ArchFile::from_toml(&text)
    }
}
