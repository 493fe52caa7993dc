#![allow(dead_code)]

use gmcf::model::{Atom, MixingMeasure};
use rand::Rng;

/// Minimum of the transport objective over all basic feasible solutions, found by enumerating
/// every spanning tree of the m x n bipartite cell graph.
pub fn transport_vertex_enumeration(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> f64 {
    let (m, n) = (supply.len(), demand.len());
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let size = m + n - 1;
    let mut best = f64::INFINITY;
    let mut pick: Vec<usize> = (0..size).collect();
    loop {
        let chosen: Vec<(usize, usize)> = pick.iter().map(|&k| cells[k]).collect();
        if let Some(x) = solve_tree(&chosen, supply, demand) {
            if x.iter().all(|&(_, v)| v >= -1e-12) {
                let obj: f64 = x.iter().map(|&((i, j), v)| v * cost[i][j]).sum();
                best = best.min(obj);
            }
        }
        // advance to the next combination in lexicographic order
        let total = cells.len();
        let mut i = size;
        while i > 0 && pick[i - 1] == total - size + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return best;
        }
        pick[i - 1] += 1;
        for t in i..size {
            pick[t] = pick[t - 1] + 1;
        }
    }
}

// Allocations on a spanning tree by repeatedly peeling leaves; None if the cells contain a cycle.
fn solve_tree(
    cells: &[(usize, usize)],
    supply: &[f64],
    demand: &[f64],
) -> Option<Vec<((usize, usize), f64)>> {
    let (m, n) = (supply.len(), demand.len());
    let mut rem: Vec<f64> = supply.iter().chain(demand).copied().collect();
    let mut alive = vec![true; cells.len()];
    let mut out = Vec::new();
    for _ in 0..cells.len() {
        let mut deg = vec![0usize; m + n];
        for (k, &(i, j)) in cells.iter().enumerate() {
            if alive[k] {
                deg[i] += 1;
                deg[m + j] += 1;
            }
        }
        let leaf = (0..m + n).find(|&v| deg[v] == 1)?;
        let k = (0..cells.len())
            .find(|&k| alive[k] && (cells[k].0 == leaf || m + cells[k].1 == leaf))
            .unwrap();
        let (i, j) = cells[k];
        let other = if i == leaf { m + j } else { i };
        let v = rem[leaf];
        rem[leaf] = 0.0;
        rem[other] -= v;
        alive[k] = false;
        out.push(((i, j), v));
    }
    Some(out)
}

pub fn random_weights<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    if rng.random_bool(0.2) {
        return vec![1.0 / k as f64; k];
    }
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|v| v / s).collect();
    let head: f64 = w[..k - 1].iter().sum();
    w[k - 1] = 1.0 - head;
    w
}

pub fn random_measure<R: Rng>(rng: &mut R, k: usize, q1: usize, q2: usize, lo: f64, hi: f64) -> MixingMeasure {
    let w = random_weights(rng, k);
    MixingMeasure::new(
        w.into_iter()
            .map(|wi| {
                Atom::new(
                    (0..q1).map(|_| rng.random_range(lo..hi)).collect(),
                    (0..q2).map(|_| rng.random_range(lo..hi)).collect(),
                    wi,
                )
            })
            .collect(),
    )
    .unwrap()
}

/// True when |a - b| <= tol * max(|a|, |b|, floor).
pub fn rel_close(a: f64, b: f64, tol: f64, floor: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(floor)
}

/// All multi-indices (alpha, beta) with the given total order.
pub fn orders(q1: usize, q2: usize, total: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    fn rec(d: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == d - 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for v in 0..=left {
            cur.push(v);
            rec(d, left - v, cur, out);
            cur.pop();
        }
    }
    let mut all = Vec::new();
    rec(q1 + q2, total, &mut Vec::new(), &mut all);
    all.into_iter().map(|v| (v[..q1].to_vec(), v[q1..].to_vec())).collect()
}
