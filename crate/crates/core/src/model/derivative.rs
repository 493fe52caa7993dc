//! Exact theta-partials of the Gaussian kernel composed with expert functions.
//!
//! Every partial is reduced to the basis `d^l f / d h1^l` using the heat equation
//! `df/d(h2^2) = 1/2 d^2 f/d h1^2`, and each basis element has the closed form
//! `sigma^-l He_l((y - mu) / sigma) f`.

use std::collections::BTreeMap;

use super::{normal_pdf, ExpertPair, Family};
use crate::error::{validation, Error, Result};

/// Probabilists' Hermite polynomial He_n(z).
pub fn hermite_he(n: usize, z: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, z);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let next = z * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// d^l/d mu^l of N(y; mu, var).
pub fn gaussian_h1_derivative(l: usize, y: f64, mu: f64, var: f64) -> f64 {
    let sigma = var.sqrt();
    let z = (y - mu) / sigma;
    hermite_he(l, z) * normal_pdf(y, mu, var) / sigma.powi(l as i32)
}

fn check_order(len: usize, want: usize, what: &str) -> Result<()> {
    if len != want {
        return validation(format!("{what} multi-index has length {len}, expected {want}"));
    }
    Ok(())
}

// d^{(k)}/du^k of u^2
fn square_derivative(k: usize, u: f64) -> f64 {
    match k {
        0 => u * u,
        1 => 2.0 * u,
        2 => 2.0,
        _ => 0.0,
    }
}

/// Exact partial of h1 with respect to theta1 (all catalog entries are polynomial).
pub fn h1_partial(pair: &ExpertPair, x: f64, th1: &[f64], order: &[usize]) -> Result<f64> {
    check_order(th1.len(), pair.q1(), "theta1")?;
    check_order(order.len(), pair.q1(), "order")?;
    Ok(h1_partial_raw(pair.family, x, th1, order))
}

fn h1_partial_raw(fam: Family, x: f64, th1: &[f64], order: &[usize]) -> f64 {
    match fam {
        Family::LinConst | Family::LinX2 | Family::LinOffset => match (order[0], order[1]) {
            (0, 0) => th1[0] + th1[1] * x,
            (1, 0) => 1.0,
            (0, 1) => x,
            _ => 0.0,
        },
        Family::SlopeConst => match order[0] {
            0 => th1[0] * x,
            1 => x,
            _ => 0.0,
        },
        Family::PowmLinx | Family::QuadConst => {
            let (i, j) = (order[0], order[1]);
            x.powi(j as i32) * square_derivative(i + j, th1[0] + th1[1] * x)
        }
    }
}

/// Exact partial of h2^2 with respect to theta2.
pub fn h2sq_partial(pair: &ExpertPair, x: f64, th2: &[f64], order: &[usize]) -> Result<f64> {
    check_order(th2.len(), pair.q2(), "theta2")?;
    check_order(order.len(), pair.q2(), "order")?;
    Ok(h2sq_partial_raw(pair.family, x, th2, order))
}

fn h2sq_partial_raw(fam: Family, x: f64, th2: &[f64], order: &[usize]) -> f64 {
    let total: usize = order.iter().sum();
    if total == 0 {
        return match fam {
            Family::LinConst | Family::SlopeConst | Family::QuadConst => th2[0],
            Family::LinX2 => th2[0] * x * x,
            Family::LinOffset => th2[0] + th2[1] * x * x,
            Family::PowmLinx => th2[0] * x,
        };
    }
    if total > 1 {
        return 0.0;
    }
    match fam {
        Family::LinConst | Family::SlopeConst | Family::QuadConst => 1.0,
        Family::LinX2 => x * x,
        Family::PowmLinx => x,
        Family::LinOffset => {
            if order[0] == 1 {
                1.0
            } else {
                x * x
            }
        }
    }
}

// True when the partial of the given total order vanishes identically in (x, theta).
fn h1_vanishes(fam: Family, total: usize) -> bool {
    total > if fam.linear_mean() { 1 } else { 2 }
}

/// Largest total order supported by `density_theta_partial`; `None` means unlimited.
pub fn theta_partial_capability(fam: Family) -> Option<usize> {
    if fam.linear_mean() {
        None
    } else {
        Some(4)
    }
}

type Factor = Vec<u8>;

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
struct TermKey {
    h1: Vec<Factor>,
    h2: Vec<Factor>,
    p: usize,
    q: usize,
}

// Symbolic chain rule: sum of coef * prod(h1 partials) * prod(h2sq partials) * d^{p+q}f/dh1^p d(h2^2)^q
fn chain_rule_terms(fam: Family, vars: &[usize]) -> BTreeMap<TermKey, f64> {
    let (q1, q2) = (fam.q1(), fam.q2());
    let mut terms = BTreeMap::new();
    terms.insert(
        TermKey {
            h1: vec![],
            h2: vec![],
            p: 0,
            q: 0,
        },
        1.0,
    );
    for &v in vars {
        let mut next: BTreeMap<TermKey, f64> = BTreeMap::new();
        let mut push = |mut key: TermKey, c: f64| {
            key.h1.sort();
            key.h2.sort();
            *next.entry(key).or_insert(0.0) += c;
        };
        for (key, &c) in &terms {
            if v < q1 {
                let mut e = vec![0u8; q1];
                e[v] = 1;
                let mut k = key.clone();
                k.h1.push(e);
                k.p += 1;
                push(k, c);
                for i in 0..key.h1.len() {
                    let mut k = key.clone();
                    k.h1[i][v] += 1;
                    let total: usize = k.h1[i].iter().map(|&o| o as usize).sum();
                    if !h1_vanishes(fam, total) {
                        push(k, c);
                    }
                }
            } else {
                let w = v - q1;
                let mut e = vec![0u8; q2];
                e[w] = 1;
                let mut k = key.clone();
                k.h2.push(e);
                k.q += 1;
                push(k, c);
                // every h2^2 in the catalog is affine in theta2, so its partials stop at order 1
            }
        }
        terms = next;
    }
    terms
}

fn flatten(alpha: &[usize], beta: &[usize], q1: usize) -> Vec<usize> {
    let mut vars = Vec::new();
    for (i, &a) in alpha.iter().enumerate() {
        vars.extend(std::iter::repeat_n(i, a));
    }
    for (j, &b) in beta.iter().enumerate() {
        vars.extend(std::iter::repeat_n(q1 + j, b));
    }
    vars
}

/// Coefficients `c_l` with `d^{|alpha|+|beta|} f / d theta1^alpha d theta2^beta = sum_l c_l d^l f / d h1^l`,
/// evaluated at covariate `x`. The coefficients do not depend on y.
pub fn density_theta_expansion(
    pair: &ExpertPair,
    th1: &[f64],
    th2: &[f64],
    x: f64,
    alpha: &[usize],
    beta: &[usize],
) -> Result<Vec<f64>> {
    let fam = pair.family;
    check_order(th1.len(), pair.q1(), "theta1")?;
    check_order(th2.len(), pair.q2(), "theta2")?;
    check_order(alpha.len(), pair.q1(), "alpha")?;
    check_order(beta.len(), pair.q2(), "beta")?;
    let total: usize = alpha.iter().chain(beta).sum();
    if let Some(cap) = theta_partial_capability(fam) {
        if total > cap {
            return Err(Error::Capability(format!(
                "{fam} supports density partials up to total order {cap}, requested {total}"
            )));
        }
    }
    let vars = flatten(alpha, beta, pair.q1());
    let mut coeffs = vec![0.0; 2 * total + 1];
    for (key, c) in chain_rule_terms(fam, &vars) {
        let mut v = c * 0.5f64.powi(key.q as i32);
        for m in &key.h1 {
            let m: Vec<usize> = m.iter().map(|&o| o as usize).collect();
            v *= h1_partial_raw(fam, x, th1, &m);
        }
        for m in &key.h2 {
            let m: Vec<usize> = m.iter().map(|&o| o as usize).collect();
            v *= h2sq_partial_raw(fam, x, th2, &m);
        }
        coeffs[key.p + 2 * key.q] += v;
    }
    while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
        coeffs.pop();
    }
    Ok(coeffs)
}

/// `d^{|alpha|+|beta|} f(y | h1(x, theta1), h2^2(x, theta2)) / d theta1^alpha d theta2^beta`.
pub fn density_theta_partial(
    pair: &ExpertPair,
    th1: &[f64],
    th2: &[f64],
    x: f64,
    y: f64,
    alpha: &[usize],
    beta: &[usize],
) -> Result<f64> {
    let coeffs = density_theta_expansion(pair, th1, th2, x, alpha, beta)?;
    let mu = pair.mean(x, th1);
    let var = pair.variance(x, th2);
    if !(var > 0.0) {
        return Err(Error::Domain(format!("h2^2 = {var} is not positive at x = {x}")));
    }
    let sigma = var.sqrt();
    let z = (y - mu) / sigma;
    let f = normal_pdf(y, mu, var);
    // evaluate sum c_l He_l(z) sigma^-l with the Hermite recurrence
    let (mut prev, mut cur) = (0.0, 1.0);
    let mut acc = 0.0;
    let mut scale = 1.0;
    for (l, c) in coeffs.iter().enumerate() {
        if l > 0 {
            let next = z * cur - (l - 1) as f64 * prev;
            prev = cur;
            cur = next;
            scale /= sigma;
        }
        acc += c * cur * scale;
    }
    Ok(acc * f)
}
