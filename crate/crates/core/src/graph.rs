//! Directed graphs, reachability, topological order, and DAG generators.
//!
//! Edge direction convention, used consistently across the crate: an edge
//! `j -> i` means `j` is a parent of `i`. Adjacency is stored row-per-parent,
//! so `has_edge(j, i)` reads slot `j * p + i`.

use std::collections::BinaryHeap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph contains a directed cycle")]
    CyclicGraph,
    #[error("requested {requested} edges but at most {max} are possible")]
    InfeasibleEdgeCount { requested: usize, max: usize },
    #[error("node {node} out of range for a graph on {p} nodes")]
    NodeOutOfRange { node: usize, p: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Directed graph on `p` nodes, intended to stay acyclic.
///
/// The type itself does not enforce acyclicity; generators produce DAGs by
/// construction and the learner repairs cycles before returning a graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DagGraph {
    p: usize,
    adj: Vec<bool>,
}

impl DagGraph {
    pub fn new(p: usize) -> Self {
        DagGraph { p, adj: vec![false; p * p] }
    }

    pub fn from_edges(p: usize, edges: &[(usize, usize)]) -> Self {
        let mut g = DagGraph::new(p);
        for &(j, i) in edges {
            g.add_edge(j, i);
        }
        g
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Adds edge `j -> i`. Self-loops and out-of-range nodes are programming
    /// errors, not data errors.
    pub fn add_edge(&mut self, j: usize, i: usize) {
        assert!(j < self.p && i < self.p && j != i, "invalid edge {j} -> {i}");
        self.adj[j * self.p + i] = true;
    }

    pub fn remove_edge(&mut self, j: usize, i: usize) {
        assert!(j < self.p && i < self.p);
        self.adj[j * self.p + i] = false;
    }

    pub fn has_edge(&self, j: usize, i: usize) -> bool {
        self.adj[j * self.p + i]
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().filter(|&&b| b).count()
    }

    /// Edges as `(parent, child)` pairs in ascending `(parent, child)` order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.p {
            for i in 0..self.p {
                if self.adj[j * self.p + i] {
                    out.push((j, i));
                }
            }
        }
        out
    }

    pub fn parents_of(&self, i: usize) -> Vec<usize> {
        (0..self.p).filter(|&j| self.adj[j * self.p + i]).collect()
    }

    pub fn children_of(&self, j: usize) -> Vec<usize> {
        (0..self.p).filter(|&i| self.adj[j * self.p + i]).collect()
    }

    pub fn in_degree(&self, i: usize) -> usize {
        (0..self.p).filter(|&j| self.adj[j * self.p + i]).count()
    }
}

/// Boolean transitive closure: `reaches(i, j)` iff a directed path of length
/// at least one leads from `i` to `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathMatrix {
    p: usize,
    reach: Vec<bool>,
}

impl PathMatrix {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn reaches(&self, i: usize, j: usize) -> bool {
        self.reach[i * self.p + j]
    }

    pub fn empty(p: usize) -> Self {
        PathMatrix { p, reach: vec![false; p * p] }
    }
}

/// Transitive closure by breadth-first search from every node.
pub fn path_matrix(g: &DagGraph) -> PathMatrix {
    let p = g.p;
    let mut reach = vec![false; p * p];
    let mut queue = Vec::with_capacity(p);
    for s in 0..p {
        queue.clear();
        for t in 0..p {
            if g.adj[s * p + t] && !reach[s * p + t] {
                reach[s * p + t] = true;
                queue.push(t);
            }
        }
        let mut head = 0;
        while head < queue.len() {
            let v = queue[head];
            head += 1;
            for t in 0..p {
                if g.adj[v * p + t] && !reach[s * p + t] {
                    reach[s * p + t] = true;
                    queue.push(t);
                }
            }
        }
    }
    PathMatrix { p, reach }
}

/// True iff the graph has no directed cycle (equivalently, no node reaches
/// itself in the transitive closure).
pub fn is_dag(g: &DagGraph) -> bool {
    topo_sort(g).is_ok()
}

/// Topological order with a deterministic tie-break: among sources available
/// at the same time, the smallest index comes first.
pub fn topo_sort(g: &DagGraph) -> Result<Vec<usize>, GraphError> {
    let p = g.p;
    let mut indeg: Vec<usize> = (0..p).map(|i| g.in_degree(i)).collect();
    let mut heap: BinaryHeap<std::cmp::Reverse<usize>> = (0..p)
        .filter(|&i| indeg[i] == 0)
        .map(std::cmp::Reverse)
        .collect();
    let mut order = Vec::with_capacity(p);
    while let Some(std::cmp::Reverse(v)) = heap.pop() {
        order.push(v);
        for t in 0..p {
            if g.adj[v * p + t] {
                indeg[t] -= 1;
                if indeg[t] == 0 {
                    heap.push(std::cmp::Reverse(t));
                }
            }
        }
    }
    if order.len() == p {
        Ok(order)
    } else {
        Err(GraphError::CyclicGraph)
    }
}

/// `k` distinct values drawn uniformly without replacement from `0..pool`.
fn sample_distinct(pool: usize, k: usize, rng: &mut ChaCha20Rng) -> Vec<usize> {
    debug_assert!(k <= pool);
    let mut items: Vec<usize> = (0..pool).collect();
    for t in 0..k {
        let s = rng.gen_range(t..pool);
        items.swap(t, s);
    }
    items.truncate(k);
    items
}

fn bipartite_split(p: usize) -> (usize, usize) {
    let upper = ((0.2 * p as f64).round() as usize).clamp(1, p - 1);
    (upper, p - upper)
}

/// Two-layer DAG: roughly 20% of nodes form an upper layer, edges run only
/// upper -> lower, and the edge count is `p` (clamped down when the bipartite
/// capacity is smaller, which only happens for very small `p`).
///
/// Upper nodes take the highest indices, so children come before their
/// parents in index order.
pub fn gen_bipartite(p: usize, seed: u64) -> DagGraph {
    assert!(p >= 2, "need at least two nodes");
    let (upper, lower) = bipartite_split(p);
    let s0 = p.min(upper * lower);
    gen_bipartite_exact(p, s0, seed).expect("clamped edge count is feasible")
}

/// Same layout as [`gen_bipartite`] but with a caller-chosen edge count,
/// rejected when it exceeds the upper-by-lower capacity.
pub fn gen_bipartite_exact(p: usize, s0: usize, seed: u64) -> Result<DagGraph, GraphError> {
    assert!(p >= 2, "need at least two nodes");
    let (upper, lower) = bipartite_split(p);
    let max = upper * lower;
    if s0 > max {
        return Err(GraphError::InfeasibleEdgeCount { requested: s0, max });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut g = DagGraph::new(p);
    for idx in sample_distinct(max, s0, &mut rng) {
        let j = lower + idx / lower;
        let i = idx % lower;
        g.add_edge(j, i);
    }
    Ok(g)
}

/// Growing-attachment DAG: nodes arrive one at a time and each new node
/// links to one existing node chosen with probability proportional to
/// `(degree + 1)^power`; edges point from the earlier node to the later one,
/// so the result is acyclic with exactly `p - 1` edges. Negative powers
/// spread degree evenly; positive powers concentrate it on hubs.
pub fn gen_scale_free(p: usize, power: f64, seed: u64) -> DagGraph {
    assert!(p >= 2, "need at least two nodes");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut g = DagGraph::new(p);
    let mut degree = vec![0usize; p];
    for t in 1..p {
        let weights: Vec<f64> = (0..t).map(|k| ((degree[k] + 1) as f64).powf(power)).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut k = t - 1;
        for (cand, &w) in weights.iter().enumerate() {
            if u < w {
                k = cand;
                break;
            }
            u -= w;
        }
        g.add_edge(k, t);
        degree[k] += 1;
        degree[t] += 1;
    }
    g
}

/// Uniform random DAG: a uniformly random total order on the nodes, then
/// `s0` distinct edges drawn uniformly among the order-respecting pairs.
pub fn gen_random_dag(p: usize, s0: usize, seed: u64) -> Result<DagGraph, GraphError> {
    assert!(p >= 2, "need at least two nodes");
    let max = p * (p - 1) / 2;
    if s0 > max {
        return Err(GraphError::InfeasibleEdgeCount { requested: s0, max });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(&mut rng);
    let mut g = DagGraph::new(p);
    for idx in sample_distinct(max, s0, &mut rng) {
        let (a, b) = unrank_pair(idx, p);
        g.add_edge(order[a], order[b]);
    }
    Ok(g)
}

/// Decodes a linear index into the `a < b` pair it names, enumerating pairs
/// row by row: (0,1), (0,2), ..., (0,p-1), (1,2), ...
fn unrank_pair(mut idx: usize, p: usize) -> (usize, usize) {
    for a in 0..p {
        let row = p - 1 - a;
        if idx < row {
            return (a, a + 1 + idx);
        }
        idx -= row;
    }
    unreachable!("index out of range for pair enumeration")
}

/// Plain-text edge list: a header line `p <node count>` followed by one
/// `j i` line per edge `j -> i`, nodes 0-based.
pub fn format_edge_list(g: &DagGraph) -> String {
    let mut out = format!("p {}\n", g.p);
    for (j, i) in g.edges() {
        out.push_str(&format!("{j} {i}\n"));
    }
    out
}

pub fn parse_edge_list(text: &str) -> Result<DagGraph, GraphError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| GraphError::Parse { line: 1, msg: "empty input".into() })?;
    let mut toks = header.split_whitespace();
    let p = match (toks.next(), toks.next(), toks.next()) {
        (Some("p"), Some(count), None) => count.parse::<usize>().map_err(|_| GraphError::Parse {
            line: 1,
            msg: format!("invalid node count '{count}'"),
        })?,
        _ => {
            return Err(GraphError::Parse {
                line: 1,
                msg: format!("expected header 'p <count>', got '{header}'"),
            })
        }
    };
    let mut g = DagGraph::new(p);
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(GraphError::Parse {
                line: lineno,
                msg: format!("expected 'j i', got '{line}'"),
            });
        }
        let parse = |s: &str| {
            s.parse::<usize>().map_err(|_| GraphError::Parse {
                line: lineno,
                msg: format!("invalid node index '{s}'"),
            })
        };
        let j = parse(toks[0])?;
        let i = parse(toks[1])?;
        for node in [j, i] {
            if node >= p {
                return Err(GraphError::NodeOutOfRange { node, p });
            }
        }
        if j == i {
            return Err(GraphError::Parse {
                line: lineno,
                msg: format!("self-loop {j} -> {i}"),
            });
        }
        g.add_edge(j, i);
    }
    Ok(g)
}

pub fn write_edge_list(g: &DagGraph, path: &Path) -> Result<(), GraphError> {
    std::fs::write(path, format_edge_list(g))?;
    Ok(())
}

pub fn read_edge_list(path: &Path) -> Result<DagGraph, GraphError> {
    parse_edge_list(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Reference closure: repeated boolean matrix multiplication.
    fn closure_by_matrix_power(g: &DagGraph) -> Vec<bool> {
        let p = g.p();
        let adj: Vec<bool> = (0..p * p).map(|k| g.adj[k]).collect();
        let mut reach = adj.clone();
        for _ in 0..p {
            let mut next = reach.clone();
            for i in 0..p {
                for k in 0..p {
                    if reach[i * p + k] {
                        for j in 0..p {
                            if adj[k * p + j] {
                                next[i * p + j] = true;
                            }
                        }
                    }
                }
            }
            reach = next;
        }
        reach
    }

    fn graph_from_bits(p: usize, bits: &[bool]) -> DagGraph {
        let mut g = DagGraph::new(p);
        for j in 0..p {
            for i in 0..p {
                if j != i && bits[j * p + i] {
                    g.add_edge(j, i);
                }
            }
        }
        g
    }

    #[test]
    fn closure_of_chain() {
        let g = DagGraph::from_edges(3, &[(0, 1), (1, 2)]);
        let pm = path_matrix(&g);
        assert!(pm.reaches(0, 1) && pm.reaches(0, 2) && pm.reaches(1, 2));
        assert!(!pm.reaches(1, 0) && !pm.reaches(2, 0) && !pm.reaches(0, 0));
    }

    #[test]
    fn closure_of_two_cycle() {
        let g = DagGraph::from_edges(2, &[(0, 1), (1, 0)]);
        let pm = path_matrix(&g);
        for i in 0..2 {
            for j in 0..2 {
                assert!(pm.reaches(i, j));
            }
        }
        assert!(!is_dag(&g));
    }

    #[test]
    fn dag_detection_matches_closure_diagonal() {
        let mut seedable = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..200 {
            let p = seedable.gen_range(1..=6);
            let bits: Vec<bool> = (0..p * p).map(|_| seedable.gen_bool(0.3)).collect();
            let g = graph_from_bits(p, &bits);
            let closure = closure_by_matrix_power(&g);
            let any_self = (0..p).any(|i| closure[i * p + i]);
            assert_eq!(is_dag(&g), !any_self);
        }
    }

    #[test]
    fn topo_sort_prefers_small_indices() {
        let g = DagGraph::from_edges(3, &[(2, 0), (2, 1)]);
        assert_eq!(topo_sort(&g).unwrap(), vec![2, 0, 1]);
    }

    #[test]
    fn topo_sort_rejects_cycle() {
        let g = DagGraph::from_edges(3, &[(0, 1), (1, 2), (2, 0)]);
        assert!(matches!(topo_sort(&g), Err(GraphError::CyclicGraph)));
    }

    #[test]
    fn topo_sort_respects_edges() {
        for seed in 0..20 {
            let g = gen_random_dag(12, 20, seed).unwrap();
            let order = topo_sort(&g).unwrap();
            let mut pos = vec![0; 12];
            for (k, &v) in order.iter().enumerate() {
                pos[v] = k;
            }
            for (j, i) in g.edges() {
                assert!(pos[j] < pos[i], "edge {j}->{i} violates order");
            }
        }
    }

    #[test]
    fn bipartite_small_p_clamps_edge_count() {
        let g = gen_bipartite(5, 1);
        assert_eq!(g.edge_count(), 4);
        assert!(matches!(
            gen_bipartite_exact(5, 5, 1),
            Err(GraphError::InfeasibleEdgeCount { requested: 5, max: 4 })
        ));
    }

    #[test]
    fn bipartite_layout_at_p50() {
        let g = gen_bipartite(50, 3);
        assert_eq!(g.edge_count(), 50);
        for (j, i) in g.edges() {
            assert!(j >= 40, "parent {j} must be an upper node");
            assert!(i < 40, "child {i} must be a lower node");
        }
        assert!(is_dag(&g));
    }

    #[test]
    fn scale_free_smallest_case() {
        let g = gen_scale_free(2, -3.0, 0);
        assert_eq!(g.edges(), vec![(0, 1)]);
    }

    #[test]
    fn scale_free_edge_count_and_acyclicity() {
        for seed in 0..10 {
            let g = gen_scale_free(40, -3.0, seed);
            assert_eq!(g.edge_count(), 39);
            assert!(is_dag(&g));
        }
    }

    #[test]
    fn attachment_power_controls_degree_concentration() {
        let max_degree = |g: &DagGraph| {
            (0..g.p())
                .map(|v| g.in_degree(v) + g.children_of(v).len())
                .max()
                .unwrap()
        };
        let (mut hub_tail, mut flat_tail) = (0usize, 0usize);
        for seed in 0..200 {
            hub_tail += max_degree(&gen_scale_free(100, 1.0, seed));
            flat_tail += max_degree(&gen_scale_free(100, -3.0, seed));
        }
        assert!(
            hub_tail as f64 > 1.5 * flat_tail as f64,
            "positive power should grow hubs: {hub_tail} vs {flat_tail}"
        );
    }

    #[test]
    fn random_dag_full_density_is_complete_order() {
        let g = gen_random_dag(3, 3, 11).unwrap();
        assert_eq!(g.edge_count(), 3);
        assert!(is_dag(&g));
        let order = topo_sort(&g).unwrap();
        for a in 0..3 {
            for b in (a + 1)..3 {
                assert!(g.has_edge(order[a], order[b]));
            }
        }
    }

    #[test]
    fn random_dag_rejects_overdense_request() {
        assert!(matches!(
            gen_random_dag(4, 7, 0),
            Err(GraphError::InfeasibleEdgeCount { requested: 7, max: 6 })
        ));
    }

    #[test]
    fn random_dag_edge_count_and_acyclicity() {
        for seed in 0..20 {
            let g = gen_random_dag(30, 30, seed).unwrap();
            assert_eq!(g.edge_count(), 30);
            assert!(is_dag(&g));
        }
    }

    #[test]
    fn generators_are_deterministic_in_seed() {
        assert_eq!(gen_bipartite(50, 9), gen_bipartite(50, 9));
        assert_ne!(gen_bipartite(50, 9), gen_bipartite(50, 10));
        assert_eq!(gen_scale_free(30, -3.0, 4), gen_scale_free(30, -3.0, 4));
        assert_ne!(gen_scale_free(30, -3.0, 4), gen_scale_free(30, -3.0, 5));
        assert_eq!(gen_random_dag(20, 25, 2).unwrap(), gen_random_dag(20, 25, 2).unwrap());
        assert_ne!(gen_random_dag(20, 25, 2).unwrap(), gen_random_dag(20, 25, 3).unwrap());
    }

    #[test]
    fn edge_list_round_trip_chain() {
        let g = DagGraph::from_edges(3, &[(0, 1), (1, 2)]);
        let text = format_edge_list(&g);
        assert_eq!(text, "p 3\n0 1\n1 2\n");
        assert_eq!(parse_edge_list(&text).unwrap(), g);
    }

    #[test]
    fn edge_list_reports_out_of_range_node() {
        let err = parse_edge_list("p 3\n0 5\n").unwrap_err();
        assert!(matches!(err, GraphError::NodeOutOfRange { node: 5, p: 3 }));
    }

    #[test]
    fn edge_list_reports_line_numbers() {
        let err = parse_edge_list("p 3\n0 1\n0 one\n").unwrap_err();
        match err {
            GraphError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn edge_list_rejects_bad_header() {
        assert!(matches!(parse_edge_list("3\n0 1\n"), Err(GraphError::Parse { line: 1, .. })));
    }

    #[test]
    fn edge_list_file_round_trip() {
        let dir = std::env::temp_dir().join(format!("svrcd-edges-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("g.edges");
        let g = gen_random_dag(10, 15, 1).unwrap();
        write_edge_list(&g, &path).unwrap();
        assert_eq!(read_edge_list(&path).unwrap(), g);
        std::fs::remove_dir_all(&dir).ok();
    }

    proptest! {
        #[test]
        fn closure_matches_matrix_power(p in 1usize..=6, seed in 0u64..10_000) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let bits: Vec<bool> = (0..p * p).map(|_| rng.gen_bool(0.35)).collect();
            let g = graph_from_bits(p, &bits);
            let pm = path_matrix(&g);
            let reference = closure_by_matrix_power(&g);
            for i in 0..p {
                for j in 0..p {
                    prop_assert_eq!(pm.reaches(i, j), reference[i * p + j]);
                }
            }
        }

        #[test]
        fn edge_list_round_trip_random(p in 2usize..12, seed in 0u64..1000) {
            let max = p * (p - 1) / 2;
            let g = gen_random_dag(p, max.min(p + 3), seed).unwrap();
            prop_assert_eq!(parse_edge_list(&format_edge_list(&g)).unwrap(), g);
        }
    }
}
