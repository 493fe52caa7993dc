use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lm::{minimize, LmOptions};
use crate::derive_seed;
use crate::error::{validation, Result};

/// The system sum_j sum_{n1 + 2 n2 = alpha} c_j^2 a_j^n1 b_j^n2 / (n1! n2!) = 0, alpha = 1..=r,
/// in s unknown triples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolySystemInstance {
    pub s: usize,
    pub r: usize,
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Residual vector (one entry per alpha = 1..=r).
pub fn poly_system_residual(inst: PolySystemInstance, a: &[f64], b: &[f64], c: &[f64]) -> Result<Vec<f64>> {
    if inst.s == 0 || inst.r == 0 {
        return validation("s and r must be positive");
    }
    if a.len() != inst.s || b.len() != inst.s || c.len() != inst.s {
        return validation(format!("a, b, c must all have length {}", inst.s));
    }
    Ok(residual_unchecked(inst.r, a, b, c))
}

fn residual_unchecked(r: usize, a: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
    (1..=r)
        .map(|alpha| {
            let mut total = 0.0;
            for j in 0..a.len() {
                let mut t = 0.0;
                for n2 in 0..=alpha / 2 {
                    let n1 = alpha - 2 * n2;
                    t += a[j].powi(n1 as i32) * b[j].powi(n2 as i32) / (factorial(n1) * factorial(n2));
                }
                total += c[j] * c[j] * t;
            }
            total
        })
        .collect()
}

// Residuals are made invariant under the two scalings of the system: c -> mu c multiplies every
// equation by mu^2, and (a, b) -> (lambda a, lambda^2 b) multiplies equation alpha by lambda^alpha.
// Equation alpha is divided by sum_j c_j^2 * M^{alpha/2} with M the c^2-weighted mean of
// a_j^2 + |b_j|. Without this the search can shrink residuals toward zero by moving the weight
// off the normalized triple, which approaches the trivial solution rather than solving the system.
pub(crate) fn scaled_residual(r: usize, a: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
    let c2: f64 = c.iter().map(|v| v * v).sum();
    let m = (0..a.len()).map(|j| c[j] * c[j] * (a[j] * a[j] + b[j].abs())).sum::<f64>() / c2;
    residual_unchecked(r, a, b, c)
        .into_iter()
        .enumerate()
        .map(|(k, v)| v / (c2 * m.powf(0.5 * (k + 1) as f64)))
        .collect()
}

/// Search effort for the multi-start solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub starts: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Largest r tried before giving up.
    pub max_r: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self {
            starts: 200,
            max_iters: 300,
            seed: 0,
            max_r: 12,
        }
    }
}

/// Residual norm below which a point counts as a solution.
pub const SOLVED_TOL: f64 = 1e-10;
/// Best residual norm above which the order counts as unsolvable.
pub const UNSOLVED_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub r: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    /// Norm of the scale-invariant residual vector (see `scaled_residual`).
    pub residual_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SearchStatus {
    /// Every order below the reported value was solved and the value itself resisted all starts.
    Determined,
    /// Some order ended between the two thresholds, or max_r was reached.
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbarResult {
    pub s: usize,
    /// Smallest order without a nontrivial solution, when determined.
    pub value: Option<usize>,
    pub status: SearchStatus,
    /// Solutions for every solvable order, ascending in r.
    pub certificates: Vec<Certificate>,
    /// Best point found at the first order that was not solved.
    pub best_unsolved: Option<Certificate>,
    /// (r, best residual norm) for every order tried.
    pub best_residuals: Vec<(usize, f64)>,
    pub starts_per_order: usize,
}

impl RbarResult {
    pub fn certificate(&self, r: usize) -> Option<&Certificate> {
        self.certificates.iter().find(|c| c.r == r)
    }
}

const A_BOUND: f64 = 1.0;
const B_BOUND: f64 = 10.0;
const C_MIN: f64 = 0.05;

// variables: a_1..a_{s-1} (a_0 = 1), b_0..b_{s-1}, c_0..c_{s-1}
fn unpack(s: usize, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut a = vec![1.0];
    a.extend_from_slice(&x[..s - 1]);
    (a, x[s - 1..2 * s - 1].to_vec(), x[2 * s - 1..].to_vec())
}

/// Best nontrivial solution found for order r, normalized by a_0 = 1 = ||a||_inf and c_j in [0.05, 1];
/// the score is the norm of the scale-invariant residual.
pub fn solve_poly_system(s: usize, r: usize, budget: &SearchBudget) -> Certificate {
    let n = 3 * s - 1;
    let mut lo = vec![-A_BOUND; s - 1];
    lo.extend(std::iter::repeat_n(-B_BOUND, s));
    lo.extend(std::iter::repeat_n(C_MIN, s));
    let mut hi = vec![A_BOUND; s - 1];
    hi.extend(std::iter::repeat_n(B_BOUND, s));
    hi.extend(std::iter::repeat_n(1.0, s));
    let opts = LmOptions {
        max_iters: budget.max_iters,
        target: 1e-14,
    };
    let runs: Vec<(f64, Vec<f64>)> = (0..budget.starts)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(budget.seed, &[s as u64, r as u64, k as u64]));
            let mut x0: Vec<f64> = (0..n).map(|i| rng.random_range(lo[i]..=hi[i])).collect();
            if k % 2 == 1 {
                // b near -a^2/2 for half the starts, with the b range narrowed
                let (a, _, _) = unpack(s, &x0);
                for j in 0..s {
                    x0[s - 1 + j] = -0.5 * a[j] * a[j] + rng.random_range(-0.5..0.5);
                }
            }
            let out = minimize(
                |x| {
                    let (a, b, c) = unpack(s, x);
                    scaled_residual(r, &a, &b, &c)
                },
                x0,
                &lo,
                &hi,
                &opts,
            );
            (out.norm, out.x)
        })
        .collect();
    let (norm, x) = runs
        .into_iter()
        .reduce(|best, cur| if cur.0 < best.0 { cur } else { best })
        .expect("at least one start");
    let (a, b, c) = unpack(s, &x);
    Certificate {
        r,
        a,
        b,
        c,
        residual_norm: norm,
    }
}

/// r_bar(s): the smallest r for which the system has no nontrivial solution, by multi-start search.
pub fn rbar(s: usize, budget: &SearchBudget) -> Result<RbarResult> {
    if !(2..=4).contains(&s) {
        return validation(format!("rbar supports 2 <= s <= 4, got {s}"));
    }
    if budget.starts == 0 || budget.max_iters == 0 || budget.max_r == 0 {
        return validation("search budget must be positive");
    }
    let mut certificates = Vec::new();
    let mut best_residuals = Vec::new();
    for r in 1..=budget.max_r {
        let cert = solve_poly_system(s, r, budget);
        best_residuals.push((r, cert.residual_norm));
        if cert.residual_norm < SOLVED_TOL {
            certificates.push(cert);
            continue;
        }
        let determined = cert.residual_norm > UNSOLVED_TOL;
        return Ok(RbarResult {
            s,
            value: determined.then_some(r),
            status: if determined {
                SearchStatus::Determined
            } else {
                SearchStatus::Indeterminate
            },
            certificates,
            best_unsolved: Some(cert),
            best_residuals,
            starts_per_order: budget.starts,
        });
    }
    Ok(RbarResult {
        s,
        value: None,
        status: SearchStatus::Indeterminate,
        certificates,
        best_unsolved: None,
        best_residuals,
        starts_per_order: budget.starts,
    })
}
