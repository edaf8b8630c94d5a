//! Generic single-source, single-sink DAG utilities.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of paths [`enumerate_paths`] will materialize.
pub const DEFAULT_PATH_CAP: usize = 10_000;

/// Read-only view of a directed multigraph with a distinguished source and sink.
pub trait Dag {
    fn num_vertices(&self) -> usize;
    fn num_edges(&self) -> usize;
    /// `(from, to)` of edge `e`.
    fn endpoints(&self, e: usize) -> (usize, usize);
    fn source(&self) -> usize;
    fn sink(&self) -> usize;

    /// Outgoing edge ids per vertex, in edge-id order.
    fn out_edges(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_vertices()];
        for e in 0..self.num_edges() {
            out[self.endpoints(e).0].push(e);
        }
        out
    }

    /// Incoming edge ids per vertex, in edge-id order.
    fn in_edges(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.num_vertices()];
        for e in 0..self.num_edges() {
            inc[self.endpoints(e).1].push(e);
        }
        inc
    }
}

/// A source-to-sink route, stored as both its vertices and its edges.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Path {
    pub vertices: Vec<usize>,
    pub edges: Vec<usize>,
}

impl Path {
    pub fn from_edges(dag: &impl Dag, edges: Vec<usize>) -> Result<Path> {
        let first = *edges
            .first()
            .ok_or_else(|| Error::InvalidPath("empty path".into()))?;
        let mut vertices = vec![dag.endpoints(first).0];
        for &e in &edges {
            if e >= dag.num_edges() {
                return Err(Error::InvalidPath(format!("edge {e} does not exist")));
            }
            let (from, to) = dag.endpoints(e);
            if from != *vertices.last().unwrap() {
                return Err(Error::InvalidPath(format!(
                    "edge {e} starts at {from}, path is at {}",
                    vertices.last().unwrap()
                )));
            }
            vertices.push(to);
        }
        Ok(Path { vertices, edges })
    }

    /// Checks that the path runs from the source to the sink along existing edges.
    pub fn validate(&self, dag: &impl Dag) -> Result<()> {
        let rebuilt = Path::from_edges(dag, self.edges.clone())?;
        if rebuilt.vertices != self.vertices {
            return Err(Error::InvalidPath("vertex list does not follow the edges".into()));
        }
        if self.vertices.first() != Some(&dag.source()) || self.vertices.last() != Some(&dag.sink()) {
            return Err(Error::InvalidPath("path does not join source to sink".into()));
        }
        Ok(())
    }
}

/// Kahn's algorithm, always releasing the smallest ready vertex id first.
pub fn topo_order(dag: &impl Dag) -> Result<Vec<usize>> {
    let n = dag.num_vertices();
    let mut indeg = vec![0usize; n];
    for e in 0..dag.num_edges() {
        indeg[dag.endpoints(e).1] += 1;
    }
    let out = dag.out_edges();
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&v| indeg[v] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(v)) = ready.pop() {
        order.push(v);
        for &e in &out[v] {
            let to = dag.endpoints(e).1;
            indeg[to] -= 1;
            if indeg[to] == 0 {
                ready.push(Reverse(to));
            }
        }
    }
    if order.len() != n {
        return Err(Error::Cycle);
    }
    Ok(order)
}

/// Exact number of distinct source-to-sink edge sequences.
pub fn count_paths(dag: &impl Dag) -> Result<BigUint> {
    let order = topo_order(dag)?;
    let inc = dag.in_edges();
    let mut ways = vec![BigUint::default(); dag.num_vertices()];
    ways[dag.source()] = BigUint::from(1u8);
    for &v in &order {
        if v == dag.source() {
            continue;
        }
        let mut total = BigUint::default();
        for &e in &inc[v] {
            total += &ways[dag.endpoints(e).0];
        }
        ways[v] = total;
    }
    Ok(ways[dag.sink()].clone())
}

/// Every source-to-sink path in depth-first, edge-id order. Fails when the
/// path count exceeds `cap`.
pub fn enumerate_paths(dag: &impl Dag, cap: usize) -> Result<Vec<Path>> {
    let count = count_paths(dag)?;
    if count > BigUint::from(cap) {
        return Err(Error::TooManyPaths {
            count: count.to_string(),
            cap,
        });
    }
    let out = dag.out_edges();
    let mut paths = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    fn walk(
        dag: &impl Dag,
        out: &[Vec<usize>],
        v: usize,
        stack: &mut Vec<usize>,
        paths: &mut Vec<Path>,
    ) {
        if v == dag.sink() {
            let mut vertices = vec![dag.source()];
            vertices.extend(stack.iter().map(|&e| dag.endpoints(e).1));
            paths.push(Path {
                vertices,
                edges: stack.clone(),
            });
            return;
        }
        for &e in &out[v] {
            stack.push(e);
            walk(dag, out, dag.endpoints(e).1, stack, paths);
            stack.pop();
        }
    }
    walk(dag, &out, dag.source(), &mut stack, &mut paths);
    Ok(paths)
}


#[cfg(test)]
mod tests {
    use super::fixtures::EdgeList;
    use super::*;

    fn diamond() -> EdgeList {
        EdgeList {
            n: 4,
            edges: vec![(0, 1), (0, 2), (1, 3), (2, 3)],
            source: 0,
            sink: 3,
        }
    }

    #[test]
    fn chain_has_one_path() {
        let g = EdgeList {
            n: 5,
            edges: (0..4).map(|i| (i, i + 1)).collect(),
            source: 0,
            sink: 4,
        };
        assert_eq!(count_paths(&g).unwrap(), BigUint::from(1u8));
        assert_eq!(enumerate_paths(&g, 10).unwrap().len(), 1);
    }

    #[test]
    fn diamond_has_two_paths() {
        let g = diamond();
        let paths = enumerate_paths(&g, 10).unwrap();
        assert_eq!(paths.len(), 2);
        assert_eq!(paths[0].vertices, vec![0, 1, 3]);
        assert_eq!(paths[1].vertices, vec![0, 2, 3]);
        for p in &paths {
            p.validate(&g).unwrap();
        }
    }

    #[test]
    fn cycle_is_rejected() {
        let g = EdgeList {
            n: 3,
            edges: vec![(0, 1), (1, 2), (2, 1)],
            source: 0,
            sink: 2,
        };
        assert!(matches!(count_paths(&g), Err(Error::Cycle)));
        assert!(matches!(topo_order(&g), Err(Error::Cycle)));
    }

    #[test]
    fn cap_exceeded_names_count() {
        let err = enumerate_paths(&diamond(), 1).unwrap_err();
        assert!(err.to_string().contains("2 paths"));
    }

    #[test]
    fn parallel_edges_are_distinct_paths() {
        let g = EdgeList {
            n: 2,
            edges: vec![(0, 1), (0, 1)],
            source: 0,
            sink: 1,
        };
        assert_eq!(count_paths(&g).unwrap(), BigUint::from(2u8));
    }

    #[test]
    fn broken_path_is_invalid() {
        let g = diamond();
        assert!(Path::from_edges(&g, vec![0, 3]).is_err());
        let p = Path {
            vertices: vec![0, 1],
            edges: vec![0],
        };
        assert!(p.validate(&g).is_err());
    }
}
