//! Independent oracles shared by integration and acceptance tests.
#![allow(dead_code)]

use std::cmp::Ordering;

use msnas_core::decode::{ScoredPath, WeightedDag};
use msnas_core::supernet::SupernetGraph;
use rand::Rng;

/// Random DAG on `2..=max_vertices` vertices, edges only forward, parallel
/// edges allowed. Weights come from a small grid so that ties are common.
pub fn random_dag(rng: &mut impl Rng, max_vertices: usize) -> WeightedDag {
    let n = rng.gen_range(2..=max_vertices);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(0.45) {
                edges.push((u, v));
                if rng.gen_bool(0.1) {
                    edges.push((u, v));
                }
            }
        }
    }
    let weights = edges
        .iter()
        .map(|_| {
            if rng.gen_bool(0.6) {
                [0.0, 0.25, 0.5, 1.0][rng.gen_range(0..4)]
            } else {
                rng.gen_range(0.0..1.0)
            }
        })
        .collect();
    WeightedDag {
        num_vertices: n,
        edges,
        weights,
        source: 0,
        sink: n - 1,
    }
}

/// Every source-to-sink path by depth-first search, scores accumulated from
/// the source.
pub fn all_paths(w: &WeightedDag) -> Vec<ScoredPath> {
    fn dfs(w: &WeightedDag, v: usize, vs: &mut Vec<usize>, es: &mut Vec<usize>, score: f64, out: &mut Vec<ScoredPath>) {
        if v == w.sink {
            out.push(ScoredPath {
                vertices: vs.clone(),
                edges: es.clone(),
                score,
            });
            return;
        }
        for (e, &(a, b)) in w.edges.iter().enumerate() {
            if a == v {
                vs.push(b);
                es.push(e);
                dfs(w, b, vs, es, score + w.weights[e], out);
                vs.pop();
                es.pop();
            }
        }
    }
    let mut out = Vec::new();
    dfs(w, w.source, &mut vec![w.source], &mut Vec::new(), 0.0, &mut out);
    out
}

/// Score descending, then vertex sequence ascending, then edge sequence ascending.
pub fn oracle_order(a: &ScoredPath, b: &ScoredPath) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap()
        .then_with(|| a.vertices.cmp(&b.vertices))
        .then_with(|| a.edges.cmp(&b.edges))
}

pub fn brute_force_top(w: &WeightedDag, n: usize) -> Vec<ScoredPath> {
    let mut all = all_paths(w);
    all.sort_by(oracle_order);
    all.truncate(n);
    all
}

/// Path count of a supernet by walking edges from the input.
pub fn supernet_paths_by_walk(g: &SupernetGraph) -> u128 {
    fn walk(g: &SupernetGraph, v: usize, memo: &mut Vec<Option<u128>>) -> u128 {
        if v == g.output() {
            return 1;
        }
        if let Some(c) = memo[v] {
            return c;
        }
        let c = g
            .edges()
            .iter()
            .filter(|e| e.from == v)
            .map(|e| walk(g, e.to, memo))
            .sum();
        memo[v] = Some(c);
        c
    }
    walk(g, g.input(), &mut vec![None; g.vertices().len()])
}

/// Per-class Dice and IoU computed from explicit pixel sets.
pub fn set_overlaps(pred: &[u8], gt: &[u8], class: u8) -> (Option<f64>, Option<f64>) {
    let p: Vec<usize> = (0..pred.len()).filter(|&i| pred[i] == class).collect();
    let g: Vec<usize> = (0..gt.len()).filter(|&i| gt[i] == class).collect();
    let inter = p.iter().filter(|i| g.contains(i)).count() as f64;
    let union = (p.len() + g.len()) as f64 - inter;
    if p.is_empty() && g.is_empty() {
        return (None, None);
    }
    (Some(2.0 * inter / (p.len() + g.len()) as f64), Some(inter / union))
}

/// A supernet with random α, p and β, wide enough for the β draws to matter.
pub fn random_model(cfg: msnas_core::relaxation::SupernetConfig, seed: u64) -> msnas_core::relaxation::SupernetModel {
    use msnas_core::numerics::ParamGroup;
    use rand::SeedableRng;
    let mut w = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut model = msnas_core::relaxation::SupernetModel::new(cfg, &mut w, &mut a, 1.0).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
    for id in model.store.ids_in(ParamGroup::Beta) {
        for v in model.store.get_mut(id).tensor.data_mut() {
            *v = rng.gen_range(-3.0..3.0);
        }
    }
    model
}
