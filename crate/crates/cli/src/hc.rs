//! Greedy hill-climbing baseline over BIC-scored multinomial families.
//!
//! The score is decomposable: each child contributes the log-likelihood of
//! its conditional frequency table given its parent set, minus a BIC
//! complexity charge of `0.5 * ln(n)` per free parameter. Moves are single
//! edge additions, deletions, and reversals; only acyclicity-preserving
//! moves are considered, so every output is a DAG by construction.

use svrcd::graph::DagGraph;
use svrcd::model::Dataset;

/// Minimum score gain for a move to count as an improvement. Guards against
/// cycling on floating-point ties.
const MIN_GAIN: f64 = 1e-9;

/// Log-likelihood of child `i`'s observed levels given the maximum-likelihood
/// conditional table over `parents`, minus the BIC penalty.
fn family_score(d: &Dataset, i: usize, parents: &[usize]) -> f64 {
    let spec = d.spec();
    let levels_i = spec.levels(i);
    let mut configs = 1usize;
    for &j in parents {
        configs *= spec.levels(j);
    }
    let mut counts = vec![0f64; configs * levels_i];
    for h in 0..d.n() {
        let mut cfg = 0usize;
        for &j in parents {
            cfg = cfg * spec.levels(j) + d.value(h, j) as usize;
        }
        counts[cfg * levels_i + d.value(h, i) as usize] += 1.0;
    }
    let mut ll = 0.0;
    for cfg in 0..configs {
        let cell = &counts[cfg * levels_i..(cfg + 1) * levels_i];
        let total: f64 = cell.iter().sum();
        if total == 0.0 {
            continue;
        }
        for &c in cell {
            if c > 0.0 {
                ll += c * (c / total).ln();
            }
        }
    }
    let df = ((levels_i - 1) * configs) as f64;
    ll - 0.5 * (d.n() as f64).ln() * df
}

/// Would adding edge `j -> i` close a cycle? True when `i` already reaches
/// `j` through directed paths of `g`.
fn creates_cycle(g: &DagGraph, j: usize, i: usize) -> bool {
    // Iterative DFS from i; cheap enough at baseline scales.
    let p = g.p();
    let mut seen = vec![false; p];
    let mut stack = vec![i];
    while let Some(v) = stack.pop() {
        if v == j {
            return true;
        }
        if seen[v] {
            continue;
        }
        seen[v] = true;
        for c in g.children_of(v) {
            if !seen[c] {
                stack.push(c);
            }
        }
    }
    false
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Move {
    Add(usize, usize),
    Delete(usize, usize),
    Reverse(usize, usize),
}

/// Greedy structure search: repeatedly applies the best-improving single-edge
/// move until none improves the BIC score. Deterministic: moves are scanned
/// in lexicographic order and ties keep the first candidate.
pub fn hc_baseline(d: &Dataset, max_parents: usize) -> DagGraph {
    let p = d.p();
    let mut g = DagGraph::new(p);
    let mut fam: Vec<f64> = (0..p).map(|i| family_score(d, i, &[])).collect();

    // Safety cap; the strictly increasing score already forces termination.
    let max_moves = p * p + 100;
    for _ in 0..max_moves {
        let mut best: Option<(f64, Move)> = None;
        let consider = |gain: f64, mv: Move, best: &mut Option<(f64, Move)>| {
            if gain > MIN_GAIN && best.map_or(true, |(bg, _)| gain > bg) {
                *best = Some((gain, mv));
            }
        };
        for j in 0..p {
            for i in 0..p {
                if i == j {
                    continue;
                }
                if !g.has_edge(j, i) {
                    if g.in_degree(i) < max_parents && !creates_cycle(&g, j, i) {
                        let mut ps = g.parents_of(i);
                        ps.push(j);
                        ps.sort_unstable();
                        let gain = family_score(d, i, &ps) - fam[i];
                        consider(gain, Move::Add(j, i), &mut best);
                    }
                } else {
                    let ps: Vec<usize> =
                        g.parents_of(i).into_iter().filter(|&k| k != j).collect();
                    let del_gain = family_score(d, i, &ps) - fam[i];
                    consider(del_gain, Move::Delete(j, i), &mut best);

                    // Reversal = delete j->i, add i->j; needs the cycle check
                    // on the graph without the original edge.
                    if g.in_degree(j) < max_parents {
                        let mut h = g.clone();
                        h.remove_edge(j, i);
                        if !creates_cycle(&h, i, j) {
                            let mut pj = g.parents_of(j);
                            pj.push(i);
                            pj.sort_unstable();
                            let gain = del_gain + family_score(d, j, &pj) - fam[j];
                            consider(gain, Move::Reverse(j, i), &mut best);
                        }
                    }
                }
            }
        }
        let Some((_, mv)) = best else { break };
        match mv {
            Move::Add(j, i) => g.add_edge(j, i),
            Move::Delete(j, i) => g.remove_edge(j, i),
            Move::Reverse(j, i) => {
                g.remove_edge(j, i);
                g.add_edge(i, j);
            }
        }
        match mv {
            Move::Add(j, i) | Move::Delete(j, i) | Move::Reverse(j, i) => {
                fam[i] = family_score(d, i, &g.parents_of(i));
                fam[j] = family_score(d, j, &g.parents_of(j));
            }
        }
    }
    debug_assert!(svrcd::graph::is_dag(&g));
    g
}

/// Convenience used by tests: total BIC score of a graph.
#[cfg(test)]
fn total_score(d: &Dataset, g: &DagGraph) -> f64 {
    (0..d.p()).map(|i| family_score(d, i, &g.parents_of(i))).sum()
}
