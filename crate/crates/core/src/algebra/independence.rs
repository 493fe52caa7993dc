use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::model::{h1_partial, h2sq_partial, ExpertPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Independent,
    Dependent,
}

/// A vanishing linear combination of the probed functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceWitness {
    /// One coefficient per entry of `IndependenceReport::functions` (zero for dropped ones),
    /// scaled so the largest magnitude is 1.
    pub coefficients: Vec<f64>,
    /// max_x |sum_i coefficient_i * function_i(x)| over the probe points.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub verdict: Verdict,
    /// Labels of the probed functions, products of mean partials first.
    pub functions: Vec<String>,
    /// Functions that vanish identically on the probes and were left out.
    pub dropped: Vec<String>,
    /// Singular values of the column-normalized probe matrix, largest first.
    pub singular_values: Vec<f64>,
    pub witnesses: Vec<DependenceWitness>,
}

type Column = Box<dyn Fn(f64) -> f64>;

fn probe_functions(pair: &ExpertPair, th1: &[f64], th2: &[f64]) -> Vec<(String, Column)> {
    let (q1, q2) = (pair.q1(), pair.q2());
    let unit = |len: usize, i: usize| {
        let mut e = vec![0; len];
        e[i] = 1;
        e
    };
    let mut out: Vec<(String, Column)> = Vec::new();
    for u in 0..q1 {
        for v in u..q1 {
            let (p, t) = (pair.clone(), th1.to_vec());
            let (eu, ev) = (unit(q1, u), unit(q1, v));
            out.push((
                format!("dh1/dtheta1[{}] * dh1/dtheta1[{}]", u + 1, v + 1),
                Box::new(move |x| {
                    h1_partial(&p, x, &t, &eu).unwrap() * h1_partial(&p, x, &t, &ev).unwrap()
                }),
            ));
        }
    }
    for i in 0..q2 {
        let (p, t) = (pair.clone(), th2.to_vec());
        let ei = unit(q2, i);
        out.push((
            format!("dh2^2/dtheta2[{}]", i + 1),
            Box::new(move |x| h2sq_partial(&p, x, &t, &ei).unwrap()),
        ));
    }
    out
}

/// Number of functions probed for a pair: q1 (q1 + 1) / 2 products plus q2.
pub fn independence_basis_size(pair: &ExpertPair) -> usize {
    pair.q1() * (pair.q1() + 1) / 2 + pair.q2()
}

/// Numerical check of linear independence over X of
/// {dh1/dtheta1^(u) * dh1/dtheta1^(v) (u <= v), dh2^2/dtheta2^(i)} at the given parameters.
pub fn independence_check(
    pair: &ExpertPair,
    theta1: &[f64],
    theta2: &[f64],
    support: (f64, f64),
    n_probes: usize,
    tol: f64,
    seed: u64,
) -> Result<IndependenceReport> {
    if theta1.len() != pair.q1() || theta2.len() != pair.q2() {
        return validation("parameter lengths do not match the expert family");
    }
    let basis = independence_basis_size(pair);
    if n_probes < 3 * basis {
        return validation(format!(
            "need at least {} probes for {} functions, got {n_probes}",
            3 * basis,
            basis
        ));
    }
    if !(support.0 < support.1) || !(tol > 0.0) {
        return validation("support must be a nonempty interval and tol positive");
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..n_probes).map(|_| rng.random_range(support.0..=support.1)).collect();
    let funcs = probe_functions(pair, theta1, theta2);
    let values: Vec<Vec<f64>> = funcs.iter().map(|(_, f)| xs.iter().map(|&x| f(x)).collect()).collect();

    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (i, col) in values.iter().enumerate() {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-13 * (n_probes as f64).sqrt() {
            dropped.push(funcs[i].0.clone());
        } else {
            kept.push((i, norm));
        }
    }
    let labels: Vec<String> = funcs.iter().map(|(l, _)| l.clone()).collect();
    if kept.is_empty() {
        return Ok(IndependenceReport {
            verdict: Verdict::Independent,
            functions: labels,
            dropped,
            singular_values: vec![],
            witnesses: vec![],
        });
    }
    let m = DMatrix::from_fn(n_probes, kept.len(), |r, c| {
        let (i, norm) = kept[c];
        values[i][r] / norm
    });
    let svd = m.clone().svd(false, true);
    let mut order: Vec<usize> = (0..kept.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut witnesses = Vec::new();
    for &k in &order {
        if svd.singular_values[k] > tol * sv[0] {
            continue;
        }
        let mut coef = vec![0.0; funcs.len()];
        for (c, &(i, norm)) in kept.iter().enumerate() {
            coef[i] = v_t[(k, c)] / norm;
        }
        let scale = coef.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        coef.iter_mut().for_each(|v| *v /= scale);
        let residual = (0..n_probes)
            .map(|r| coef.iter().zip(&values).map(|(c, col)| c * col[r]).sum::<f64>().abs())
            .fold(0.0, f64::max);
        witnesses.push(DependenceWitness {
            coefficients: coef,
            residual,
        });
    }
    Ok(IndependenceReport {
        verdict: if witnesses.is_empty() {
            Verdict::Independent
        } else {
            Verdict::Dependent
        },
        functions: labels,
        dropped,
        singular_values: sv,
        witnesses,
    })
}
