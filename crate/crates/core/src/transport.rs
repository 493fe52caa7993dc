//! The semi-metric d_kappa, the generalized transportation distance between mixing measures,
//! the assignment-based surrogate D_kappa, and per-coordinate atom matching.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::model::MixingMeasure;

/// Per-coordinate orders, theta1 coordinates first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct KappaVector {
    orders: Vec<u32>,
    max_order: u32,
}

impl KappaVector {
    pub fn new(orders: Vec<u32>) -> Result<Self> {
        if orders.is_empty() {
            return validation("kappa must have at least one entry");
        }
        if orders.contains(&0) {
            return validation("every kappa entry must be at least 1");
        }
        let max_order = *orders.iter().max().unwrap();
        Ok(Self { orders, max_order })
    }

    /// All entries equal to `r`.
    pub fn uniform(r: u32, len: usize) -> Result<Self> {
        Self::new(vec![r; len])
    }

    pub fn orders(&self) -> &[u32] {
        &self.orders
    }

    pub fn len(&self) -> usize {
        self.orders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }

    /// ||kappa||_inf
    pub fn max_order(&self) -> u32 {
        self.max_order
    }

    /// Componentwise `self <= other`.
    pub fn dominated_by(&self, other: &KappaVector) -> bool {
        self.len() == other.len() && self.orders.iter().zip(&other.orders).all(|(a, b)| a <= b)
    }

    /// Componentwise `self <= other` with strict inequality somewhere.
    pub fn strictly_dominated_by(&self, other: &KappaVector) -> bool {
        self.dominated_by(other) && self != other
    }

    /// d_kappa(a, b)^{||kappa||_inf} = sum_i |a_i - b_i|^{kappa_i}.
    pub fn cost(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.orders)
            .map(|((x, y), &k)| (x - y).abs().powi(k as i32))
            .sum()
    }
}

impl TryFrom<Vec<u32>> for KappaVector {
    type Error = Error;

    fn try_from(v: Vec<u32>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<KappaVector> for Vec<u32> {
    fn from(k: KappaVector) -> Self {
        k.orders
    }
}

impl FromStr for KappaVector {
    type Err = Error;

    /// Parses a comma-separated list such as `2,2,1`.
    fn from_str(s: &str) -> Result<Self> {
        let orders = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::Validation(format!("bad kappa entry '{t}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(orders)
    }
}

impl fmt::Display for KappaVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.orders.iter().map(u32::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// d_kappa(a, b) = (sum_i |a_i - b_i|^{kappa_i})^{1/||kappa||_inf}.
pub fn d_kappa(kappa: &KappaVector, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != kappa.len() || b.len() != kappa.len() {
        return validation(format!(
            "d_kappa needs vectors of length {}, got {} and {}",
            kappa.len(),
            a.len(),
            b.len()
        ));
    }
    Ok(kappa.cost(a, b).powf(1.0 / kappa.max_order() as f64))
}

/// Transport plan; rows follow the atoms of G, columns the atoms of G0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub q: Vec<Vec<f64>>,
}

impl Coupling {
    pub fn row_sums(&self) -> Vec<f64> {
        self.q.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let n = self.q.first().map_or(0, Vec::len);
        (0..n).map(|j| self.q.iter().map(|r| r[j]).sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportResult {
    /// W_kappa(G, G0)
    pub distance: f64,
    /// W_kappa^{||kappa||_inf}, the optimal transport cost
    pub objective: f64,
    pub coupling: Coupling,
}

fn check_measures(kappa: &KappaVector, g: &MixingMeasure, g0: &MixingMeasure) -> Result<()> {
    for (name, m) in [("G", g), ("G0", g0)] {
        let a = &m.atoms()[0];
        if a.theta1.len() + a.theta2.len() != kappa.len() {
            return validation(format!(
                "{name} has parameter dimension {}, kappa has length {}",
                a.theta1.len() + a.theta2.len(),
                kappa.len()
            ));
        }
        let total: f64 = m.weights().iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return validation(format!("{name} weights sum to {total}"));
        }
    }
    Ok(())
}

/// Exact optimal transport between two mixing measures under the ground cost d_kappa^{||kappa||_inf}.
pub fn wasserstein_kappa(
    kappa: &KappaVector,
    g: &MixingMeasure,
    g0: &MixingMeasure,
) -> Result<TransportResult> {
    check_measures(kappa, g, g0)?;
    let (ea, eb) = (g.etas(), g0.etas());
    let cost: Vec<Vec<f64>> = ea
        .iter()
        .map(|a| eb.iter().map(|b| kappa.cost(a, b)).collect())
        .collect();
    let (q, objective) = transport_simplex(&g.weights(), &g0.weights(), &cost)?;
    let objective = objective.max(0.0);
    Ok(TransportResult {
        distance: objective.powf(1.0 / kappa.max_order() as f64),
        objective,
        coupling: Coupling { q },
    })
}

/// Solves the balanced transportation problem min sum c_ij q_ij by the transportation simplex
/// (north-west corner start, MODI potentials, Bland's entering/leaving rule).
pub fn transport_simplex(
    supply: &[f64],
    demand: &[f64],
    cost: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, f64)> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return validation("transport problem needs nonempty marginals");
    }
    if cost.len() != m || cost.iter().any(|r| r.len() != n) {
        return validation("cost matrix shape does not match marginals");
    }
    if supply.iter().chain(demand).any(|v| !(*v >= 0.0)) {
        return validation("marginals must be nonnegative");
    }
    let (ts, td): (f64, f64) = (supply.iter().sum(), demand.iter().sum());
    if (ts - td).abs() > 1e-10 * ts.max(1.0) {
        return validation(format!("infeasible marginals: totals {ts} and {td}"));
    }

    let mut x = vec![vec![0.0; n]; m];
    let mut basic = vec![vec![false; n]; m];
    {
        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        d[n - 1] += ts - td;
        let (mut i, mut j) = (0, 0);
        loop {
            let a = s[i].min(d[j]).max(0.0);
            x[i][j] = a;
            basic[i][j] = true;
            s[i] -= a;
            d[j] -= a;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (i < m - 1 && s[i] <= d[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    let scale = cost
        .iter()
        .flatten()
        .fold(0.0f64, |acc, c| acc.max(c.abs()))
        .max(1e-300);
    let eps = 1e-13 * scale;
    let max_pivots = 50 * (m + n) * (m * n + 1);
    for _ in 0..max_pivots {
        let (u, v) = potentials(&basic, cost);
        let entering = (0..m)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .find(|&(i, j)| !basic[i][j] && cost[i][j] - u[i] - v[j] < -eps);
        let Some((ei, ej)) = entering else {
            let obj = (0..m)
                .map(|i| (0..n).map(|j| x[i][j] * cost[i][j]).sum::<f64>())
                .sum();
            return Ok((x, obj));
        };
        let path = tree_path(&basic, ei, ej);
        // path alternates -, +, -, ... starting from the cell sharing row ei
        let (mut theta, mut leave) = (f64::INFINITY, None);
        for (k, &(i, j)) in path.iter().enumerate() {
            if k % 2 == 0 && (x[i][j] < theta || (x[i][j] == theta && Some((i, j)) < leave)) {
                theta = x[i][j];
                leave = Some((i, j));
            }
        }
        let (li, lj) = leave.expect("a cycle always contains a decreasing cell");
        for (k, &(i, j)) in path.iter().enumerate() {
            if k % 2 == 0 {
                x[i][j] = (x[i][j] - theta).max(0.0);
            } else {
                x[i][j] += theta;
            }
        }
        x[ei][ej] = theta;
        basic[ei][ej] = true;
        basic[li][lj] = false;
        x[li][lj] = 0.0;
    }
    Err(Error::Domain("transport simplex did not terminate".into()))
}

// Dual potentials with u_0 = 0 on the spanning tree of basic cells.
fn potentials(basic: &[Vec<bool>], cost: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let (m, n) = (basic.len(), basic[0].len());
    let mut u = vec![f64::NAN; m];
    let mut v = vec![f64::NAN; n];
    u[0] = 0.0;
    // nodes: rows 0..m, columns m..m+n
    let mut queue = VecDeque::from([0usize]);
    while let Some(node) = queue.pop_front() {
        if node < m {
            let i = node;
            for j in 0..n {
                if basic[i][j] && v[j].is_nan() {
                    v[j] = cost[i][j] - u[i];
                    queue.push_back(m + j);
                }
            }
        } else {
            let j = node - m;
            for i in 0..m {
                if basic[i][j] && u[i].is_nan() {
                    u[i] = cost[i][j] - v[j];
                    queue.push_back(i);
                }
            }
        }
    }
    (u, v)
}

// Basic cells on the tree path from column node `ej` back to row node `ei`, ordered so that the
// first cell lies in column ej (it loses mass when (ei, ej) enters).
fn tree_path(basic: &[Vec<bool>], ei: usize, ej: usize) -> Vec<(usize, usize)> {
    let (m, n) = (basic.len(), basic[0].len());
    let mut parent = vec![usize::MAX; m + n];
    let start = m + ej;
    parent[start] = start;
    let mut queue = VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == ei {
            break;
        }
        let nbrs: Vec<usize> = if node < m {
            (0..n).filter(|&j| basic[node][j]).map(|j| m + j).collect()
        } else {
            (0..m).filter(|&i| basic[i][node - m]).collect()
        };
        for nb in nbrs {
            if parent[nb] == usize::MAX {
                parent[nb] = node;
                queue.push_back(nb);
            }
        }
    }
    // walk back from ei to ej, then reverse so the path starts at column ej
    let mut cells = Vec::new();
    let mut node = ei;
    while node != start {
        let p = parent[node];
        let cell = if node < m { (node, p - m) } else { (p, node - m) };
        cells.push(cell);
        node = p;
    }
    cells.reverse();
    cells
}

/// Sum_i sum_{j -> i} p_j d_kappa^{||kappa||_inf}(eta_j, eta_i^0) + sum_i |sum_{j -> i} p_j - pi_i^0|,
/// where `assignment[j]` names the atom of `g0` that atom j of `g_n` is attached to.
pub fn d_kappa_surrogate(
    kappa: &KappaVector,
    g_n: &MixingMeasure,
    g0: &MixingMeasure,
    assignment: &[usize],
) -> Result<f64> {
    check_measures(kappa, g_n, g0)?;
    if assignment.len() != g_n.len() {
        return validation("assignment must name a true atom for every atom of G_n");
    }
    if let Some(bad) = assignment.iter().find(|&&i| i >= g0.len()) {
        return validation(format!("assignment refers to missing true atom {bad}"));
    }
    let true_etas = g0.etas();
    let mut mass = vec![0.0; g0.len()];
    let mut total = 0.0;
    for (atom, &i) in g_n.atoms().iter().zip(assignment) {
        total += atom.weight * kappa.cost(&atom.eta(), &true_etas[i]);
        mass[i] += atom.weight;
    }
    total += mass
        .iter()
        .zip(g0.atoms())
        .map(|(m, a)| (m - a.weight).abs())
        .sum::<f64>();
    Ok(total)
}

/// Errors for one true atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomMatchRow {
    pub true_atom: usize,
    /// Fitted atoms whose heaviest coupling column is this true atom.
    pub fitted_atoms: Vec<usize>,
    /// Coupling-mass weighted mean |fitted - true| per coordinate (theta1 then theta2).
    pub coord_errors: Vec<f64>,
    /// |sum of fitted weights attached - true weight|.
    pub weight_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomMatchReport {
    pub rows: Vec<AtomMatchRow>,
    pub transport: TransportResult,
}

impl AtomMatchReport {
    /// Per coordinate, the largest error over true atoms.
    pub fn max_coord_errors(&self) -> Vec<f64> {
        let d = self.rows[0].coord_errors.len();
        (0..d)
            .map(|c| self.rows.iter().map(|r| r.coord_errors[c]).fold(0.0, f64::max))
            .collect()
    }
}

/// Attaches each fitted atom to the true atom receiving most of its mass in the optimal coupling
/// and reports per-coordinate errors for every true atom.
pub fn atom_match_report(
    kappa: &KappaVector,
    g_hat: &MixingMeasure,
    g0: &MixingMeasure,
) -> Result<AtomMatchReport> {
    let transport = wasserstein_kappa(kappa, g_hat, g0)?;
    let q = &transport.coupling.q;
    let (fit_etas, true_etas) = (g_hat.etas(), g0.etas());
    let owner: Vec<usize> = q
        .iter()
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    let rows = (0..g0.len())
        .map(|j| {
            let fitted: Vec<usize> = (0..g_hat.len()).filter(|&i| owner[i] == j).collect();
            let mass: f64 = fitted.iter().map(|&i| q[i][j]).sum();
            let used: Vec<(usize, f64)> = if mass > 0.0 {
                fitted.iter().map(|&i| (i, q[i][j] / mass)).collect()
            } else {
                // nothing attached: fall back to the heaviest row of this column
                let mut best = 0;
                for i in 0..g_hat.len() {
                    if q[i][j] > q[best][j] {
                        best = i;
                    }
                }
                vec![(best, 1.0)]
            };
            let coord_errors = (0..kappa.len())
                .map(|c| {
                    used.iter()
                        .map(|&(i, w)| w * (fit_etas[i][c] - true_etas[j][c]).abs())
                        .sum()
                })
                .collect();
            let attached: f64 = fitted.iter().map(|&i| g_hat.atoms()[i].weight).sum();
            AtomMatchRow {
                true_atom: j,
                fitted_atoms: fitted,
                coord_errors,
                weight_error: (attached - g0.atoms()[j].weight).abs(),
            }
        })
        .collect();
    Ok(AtomMatchReport { rows, transport })
}
