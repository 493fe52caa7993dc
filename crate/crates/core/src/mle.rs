//! Maximum-likelihood fitting of over-specified mixtures by multi-start EM.

use nalgebra::{Matrix2, Vector2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{validation, Error, Result};
use crate::model::{normal_logpdf, Atom, CovariatePrior, Dataset, ExpertPair, Family, MixingMeasure};

const NEWTON_STEPS: usize = 5;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const MAX_HALVINGS: usize = 20;
const WINDOW: usize = 5;
/// A component whose total responsibility falls below this is treated as empty.
const EMPTY_MASS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub k: usize,
    pub weight_floor: f64,
    pub n_starts: usize,
    pub max_iters: usize,
    pub loglik_tol: f64,
    pub seed: u64,
}

impl FitConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            weight_floor: 0.0,
            n_starts: 20,
            max_iters: 2000,
            loglik_tol: 1e-8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n_starts == 0 || self.max_iters == 0 {
            return validation("k, n_starts and max_iters must be positive");
        }
        if !(self.weight_floor >= 0.0) || self.weight_floor * self.k as f64 > 1.0 {
            return validation(format!(
                "weight floor {} is infeasible for k = {}",
                self.weight_floor, self.k
            ));
        }
        if !(self.loglik_tol > 0.0) {
            return validation("loglik_tol must be positive");
        }
        Ok(())
    }
}

/// Outcome of one EM run from a given initial measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmRun {
    pub g: MixingMeasure,
    pub loglik: f64,
    pub iters: usize,
    pub converged: bool,
    /// Log-likelihood at the start of every iteration, then at the returned measure.
    pub loglik_trace: Vec<f64>,
    /// Empty components that were re-seeded.
    pub restarts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub start: usize,
    pub loglik: f64,
    pub iters: usize,
    pub converged: bool,
    pub restarts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub g_hat: MixingMeasure,
    pub loglik: f64,
    pub iters: usize,
    pub converged: bool,
    /// Trace of the winning start.
    pub loglik_trace: Vec<f64>,
    pub best_start: usize,
    pub restarts: usize,
    pub starts: Vec<StartSummary>,
    pub seed: u64,
}

/// sum_i log g_G(y_i | x_i).
pub fn loglik(pair: &ExpertPair, g: &MixingMeasure, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return validation("dataset is empty");
    }
    pair.validate_measure(g)?;
    Ok(loglik_unchecked(pair, g, data))
}

fn loglik_unchecked(pair: &ExpertPair, g: &MixingMeasure, data: &Dataset) -> f64 {
    let logw: Vec<f64> = g.atoms().iter().map(|a| a.weight.ln()).collect();
    let mut buf = vec![0.0; g.len()];
    data.xs
        .iter()
        .zip(&data.ys)
        .map(|(&x, &y)| {
            for (j, a) in g.atoms().iter().enumerate() {
                buf[j] = logw[j] + normal_logpdf(y, pair.mean(x, &a.theta1), pair.variance(x, &a.theta2));
            }
            log_sum_exp(&buf)
        })
        .sum()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

fn check_data(pair: &ExpertPair, data: &Dataset, k: usize) -> Result<()> {
    if data.len() < k.max(1) {
        return validation(format!("need at least {} observations, got {}", k.max(1), data.len()));
    }
    if data.xs.iter().chain(&data.ys).any(|v| !v.is_finite()) {
        return validation("dataset contains non-finite values");
    }
    let floor: Vec<f64> = pair.theta2_box().iter().map(|b| b[0]).collect();
    if let Some(x) = data.xs.iter().find(|&&x| !(pair.variance(x, &floor) > 0.0)) {
        return Err(Error::Domain(format!(
            "{} has zero variance at covariate {x}",
            pair.family
        )));
    }
    Ok(())
}

/// Expected complete-data log-likelihood of one component under responsibilities `w`.
fn q_component(pair: &ExpertPair, data: &Dataset, w: &[f64], th1: &[f64], th2: &[f64]) -> f64 {
    data.xs
        .iter()
        .zip(&data.ys)
        .zip(w)
        .filter(|(_, &wi)| wi > 0.0)
        .map(|((&x, &y), &wi)| wi * normal_logpdf(y, pair.mean(x, th1), pair.variance(x, th2)))
        .sum()
}

fn q_weights(mass: &[f64], pi: &[f64]) -> f64 {
    mass.iter().zip(pi).filter(|(m, _)| **m > 0.0).map(|(m, p)| m * p.ln()).sum()
}

/// Euclidean projection onto {pi >= floor, sum pi = 1}.
fn project_simplex_floor(v: &[f64], floor: f64) -> Vec<f64> {
    let mut s: Vec<f64> = v.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    // pi_j = max(floor, v_j - tau); find tau with sum = 1
    let k = v.len();
    let mut tau = 0.0;
    for m in 1..=k {
        let t = (s[..m].iter().sum::<f64>() + (k - m) as f64 * floor - 1.0) / m as f64;
        if m == k || s[m] - t <= floor {
            tau = t;
            break;
        }
    }
    v.iter().map(|x| (x - tau).max(floor)).collect()
}

/// Maximizer of sum_j mass_j log pi_j over {pi >= floor, sum pi = 1}.
fn kkt_weights(mass: &[f64], floor: f64) -> Vec<f64> {
    let k = mass.len();
    let mut clamped = vec![false; k];
    loop {
        let free_mass: f64 = (0..k).filter(|&j| !clamped[j]).map(|j| mass[j]).sum();
        let n_clamped = clamped.iter().filter(|c| **c).count();
        let budget = 1.0 - floor * n_clamped as f64;
        let mut changed = false;
        for j in 0..k {
            if !clamped[j] && mass[j] * budget < floor * free_mass {
                clamped[j] = true;
                changed = true;
            }
        }
        if !changed {
            return (0..k)
                .map(|j| if clamped[j] || free_mass <= 0.0 { floor } else { mass[j] * budget / free_mass })
                .collect();
        }
    }
}

fn update_weights(mass: &[f64], old: &[f64], floor: f64) -> Vec<f64> {
    let total: f64 = mass.iter().sum();
    let raw: Vec<f64> = mass.iter().map(|m| m / total).collect();
    if floor <= 0.0 {
        return raw;
    }
    let proj = project_simplex_floor(&raw, floor);
    if q_weights(mass, &proj) >= q_weights(mass, old) {
        proj
    } else {
        kkt_weights(mass, floor)
    }
}

/// Mean features for families whose mean is linear in theta1.
fn linear_features(family: Family, x: f64) -> [f64; 2] {
    match family {
        Family::SlopeConst => [x, 0.0],
        _ => [1.0, x],
    }
}

/// Largest step along old -> target that stays inside the box.
fn clip_to_box(old: &[f64], target: &[f64], bx: &[[f64; 2]]) -> Vec<f64> {
    let mut t: f64 = 1.0;
    for ((o, n), [lo, hi]) in old.iter().zip(target).zip(bx) {
        let d = n - o;
        if d > 0.0 && *n > *hi {
            t = t.min((hi - o) / d);
        } else if d < 0.0 && *n < *lo {
            t = t.min((lo - o) / d);
        }
    }
    old.iter()
        .zip(target)
        .zip(bx)
        .map(|((o, n), [lo, hi])| (o + t.max(0.0) * (n - o)).clamp(*lo, *hi))
        .collect()
}

fn solve_small(q: usize, a: &Matrix2<f64>, b: &Vector2<f64>) -> Option<Vec<f64>> {
    if q == 1 {
        return (a[(0, 0)] > 0.0).then(|| vec![b[0] / a[(0, 0)]]);
    }
    a.cholesky().map(|c| {
        let s = c.solve(b);
        vec![s[0], s[1]]
    })
}

/// Exact conditional maximizer of the component objective over a linear mean, moved back
/// into the box along the segment from the current value.
fn wls_mean(pair: &ExpertPair, data: &Dataset, w: &[f64], th1: &[f64], th2: &[f64]) -> Option<Vec<f64>> {
    let q = pair.q1();
    let mut a = Matrix2::zeros();
    let mut b = Vector2::zeros();
    for ((&x, &y), &wi) in data.xs.iter().zip(&data.ys).zip(w) {
        let s = wi / pair.variance(x, th2);
        let f = linear_features(pair.family, x);
        for u in 0..q {
            b[u] += s * f[u] * y;
            for v in 0..q {
                a[(u, v)] += s * f[u] * f[v];
            }
        }
    }
    let sol = solve_small(q, &a, &b)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(clip_to_box(th1, &sol, pair.theta1_box()))
}

/// Damped Gauss-Newton ascent on the component objective over a nonlinear mean.
fn newton_mean(pair: &ExpertPair, data: &Dataset, w: &[f64], th1: &[f64], th2: &[f64], steps: usize) -> Vec<f64> {
    let bx = pair.theta1_box();
    let mut cur = th1.to_vec();
    let mut q_cur = q_component(pair, data, w, &cur, th2);
    for _ in 0..steps {
        let mut a = Matrix2::zeros();
        let mut b = Vector2::zeros();
        for ((&x, &y), &wi) in data.xs.iter().zip(&data.ys).zip(w) {
            let s = wi / pair.variance(x, th2);
            let u = cur[0] + cur[1] * x;
            let e = y - u * u;
            let j = [2.0 * u, 2.0 * u * x];
            for r in 0..2 {
                b[r] += s * j[r] * e;
                for c in 0..2 {
                    a[(r, c)] += s * j[r] * j[c];
                }
            }
        }
        let ridge = 1e-10 * (a[(0, 0)] + a[(1, 1)]) + 1e-300;
        a[(0, 0)] += ridge;
        a[(1, 1)] += ridge;
        let Some(step) = solve_small(2, &a, &b) else { break };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = (0..2).map(|r| (cur[r] + t * step[r]).clamp(bx[r][0], bx[r][1])).collect();
            let q_new = q_component(pair, data, w, &trial, th2);
            if q_new >= q_cur {
                moved = trial != cur;
                cur = trial;
                q_cur = q_new;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    cur
}

/// Theta2 update given the new mean. Closed form where the variance is a single scale
/// parameter; Fisher scoring for the two-parameter offset family.
fn update_variance(pair: &ExpertPair, data: &Dataset, w: &[f64], th1: &[f64], th2: &[f64]) -> Vec<f64> {
    let bx = pair.theta2_box();
    let mass: f64 = w.iter().sum();
    let scaled = |pow: i32| {
        data.xs
            .iter()
            .zip(&data.ys)
            .zip(w)
            .map(|((&x, &y), &wi)| {
                let e = y - pair.mean(x, th1);
                wi * e * e / x.powi(pow)
            })
            .sum::<f64>()
            / mass
    };
    match pair.family {
        Family::LinConst | Family::SlopeConst | Family::QuadConst => vec![scaled(0).clamp(bx[0][0], bx[0][1])],
        Family::LinX2 => vec![scaled(2).clamp(bx[0][0], bx[0][1])],
        Family::PowmLinx => vec![scaled(1).clamp(bx[0][0], bx[0][1])],
        Family::LinOffset => scoring_offset(pair, data, w, th1, th2),
    }
}

fn scoring_offset(pair: &ExpertPair, data: &Dataset, w: &[f64], th1: &[f64], th2: &[f64]) -> Vec<f64> {
    let bx = pair.theta2_box();
    let mut cur = th2.to_vec();
    let mut q_cur = q_component(pair, data, w, th1, &cur);
    for _ in 0..NEWTON_STEPS {
        let mut info = Matrix2::zeros();
        let mut grad = Vector2::zeros();
        for ((&x, &y), &wi) in data.xs.iter().zip(&data.ys).zip(w) {
            let v = pair.variance(x, &cur);
            let e = y - pair.mean(x, th1);
            let dv = [1.0, x * x];
            let g = 0.5 * wi * (e * e / (v * v) - 1.0 / v);
            let h = 0.5 * wi / (v * v);
            for r in 0..2 {
                grad[r] += g * dv[r];
                for c in 0..2 {
                    info[(r, c)] += h * dv[r] * dv[c];
                }
            }
        }
        let ridge = 1e-10 * (info[(0, 0)] + info[(1, 1)]) + 1e-300;
        info[(0, 0)] += ridge;
        info[(1, 1)] += ridge;
        let Some(step) = solve_small(2, &info, &grad) else { break };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = (0..2).map(|r| (cur[r] + t * step[r]).clamp(bx[r][0], bx[r][1])).collect();
            let q_new = q_component(pair, data, w, th1, &trial);
            if q_new >= q_cur {
                moved = trial != cur;
                cur = trial;
                q_cur = q_new;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    cur
}

/// Mean parameters putting h1(x, .) through y, starting from `th1`.
fn through_point(pair: &ExpertPair, th1: &[f64], x: f64, y: f64) -> Vec<f64> {
    let mut t = th1.to_vec();
    match pair.family {
        Family::LinConst | Family::LinX2 | Family::LinOffset => t[0] = y - t[1] * x,
        Family::SlopeConst => {
            if x != 0.0 {
                t[0] = y / x;
            }
        }
        Family::PowmLinx | Family::QuadConst => t[0] = y.max(0.0).sqrt() - t[1] * x,
    }
    for (v, [lo, hi]) in t.iter_mut().zip(pair.theta1_box()) {
        *v = v.clamp(*lo, *hi);
    }
    t
}

fn weights_valid(pi: &[f64], floor: f64) -> bool {
    pi.iter().all(|&p| p >= floor && p >= 0.0) && (pi.iter().sum::<f64>() - 1.0).abs() <= 1e-12
}

fn normalize_weights(pi: &mut [f64], floor: f64) {
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= s);
    if floor > 0.0 && pi.iter().any(|&p| p < floor) {
        let v = project_simplex_floor(pi, floor);
        pi.copy_from_slice(&v);
    }
}

fn build_measure(th1: &[Vec<f64>], th2: &[Vec<f64>], pi: &[f64]) -> MixingMeasure {
    let atoms = (0..pi.len())
        .map(|j| Atom::new(th1[j].clone(), th2[j].clone(), pi[j]))
        .collect();
    MixingMeasure::new(atoms).expect("EM iterates stay on the weight simplex")
}

/// One EM run from `init`. Every M-step is an exact conditional maximizer (weights, linear
/// means, scale variances) or an ascent step accepted only if the expected complete-data
/// log-likelihood does not decrease, so the trace is nondecreasing up to rounding.
pub fn em_run(pair: &ExpertPair, data: &Dataset, init: &MixingMeasure, config: &FitConfig) -> Result<EmRun> {
    config.validate()?;
    pair.validate_measure(init)?;
    check_data(pair, data, init.len())?;
    let k = init.len();
    let n = data.len();
    let floor = config.weight_floor;
    let mut th1: Vec<Vec<f64>> = init.atoms().iter().map(|a| a.theta1.clone()).collect();
    let mut th2: Vec<Vec<f64>> = init.atoms().iter().map(|a| a.theta2.clone()).collect();
    let mut pi = init.weights();
    if !weights_valid(&pi, floor) {
        normalize_weights(&mut pi, floor);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(config.seed, &[0x7265_7365_6564]));
    let mut resp = vec![vec![0.0; n]; k];
    let mut trace = Vec::new();
    let mut restarts = 0;
    let mut converged = false;
    let mut iters = 0;
    let mut buf = vec![0.0; k];

    let e_step = |th1: &[Vec<f64>], th2: &[Vec<f64>], pi: &[f64], resp: &mut [Vec<f64>], buf: &mut [f64]| {
        let logw: Vec<f64> = pi.iter().map(|p| p.ln()).collect();
        // constant variances: hoist the log out of the loop
        let fixed: Vec<(f64, f64)> = (0..k)
            .map(|j| {
                let v = pair.variance(0.0, &th2[j]);
                (1.0 / v, logw[j] - 0.5 * v.ln() - LN_SQRT_2PI)
            })
            .collect();
        let constant = pair.family.constant_variance();
        let mut ll = 0.0;
        for i in 0..n {
            let (x, y) = (data.xs[i], data.ys[i]);
            for j in 0..k {
                let d = y - pair.mean(x, &th1[j]);
                buf[j] = if constant {
                    fixed[j].1 - 0.5 * d * d * fixed[j].0
                } else {
                    logw[j] + normal_logpdf(y, pair.mean(x, &th1[j]), pair.variance(x, &th2[j]))
                };
            }
            let m = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..k {
                let e = (buf[j] - m).exp();
                resp[j][i] = e;
                total += e;
            }
            ll += m + total.ln();
            let inv = 1.0 / total;
            for r in resp.iter_mut() {
                r[i] *= inv;
            }
        }
        ll
    };

    let mut ll = e_step(&th1, &th2, &pi, &mut resp, &mut buf);
    while iters < config.max_iters {
        trace.push(ll);
        let t = trace.len() - 1;
        if t >= WINDOW && (trace[t] - trace[t - WINDOW]).abs() <= config.loglik_tol * trace[t].abs() {
            converged = true;
            break;
        }
        iters += 1;

        let mass: Vec<f64> = resp.iter().map(|r| r.iter().sum()).collect();
        pi = update_weights(&mass, &pi, floor);
        for j in 0..k {
            if mass[j] < EMPTY_MASS {
                continue;
            }
            let w = &resp[j];
            th1[j] = if pair.family.linear_mean() {
                wls_mean(pair, data, w, &th1[j], &th2[j]).unwrap_or_else(|| th1[j].clone())
            } else {
                newton_mean(pair, data, w, &th1[j], &th2[j], NEWTON_STEPS)
            };
            th2[j] = update_variance(pair, data, w, &th1[j], &th2[j]);
        }
        ll = e_step(&th1, &th2, &pi, &mut resp, &mut buf);

        if let Some(j) = (0..k).find(|&j| resp[j].iter().sum::<f64>() < EMPTY_MASS) {
            // re-seed the empty component through a random observation, keeping it only if the
            // likelihood does not drop
            let i = rng.random_range(0..n);
            let (mut t1, mut t2, mut p) = (th1.clone(), th2.clone(), pi.clone());
            t1[j] = through_point(pair, &th1[j], data.xs[i], data.ys[i]);
            let heavy = (0..k).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0);
            let share = (p[heavy] * 0.5).min(1.0 / (2 * k) as f64);
            p[heavy] -= share;
            p[j] += share;
            normalize_weights(&mut p, floor);
            t2[j] = t2[heavy].clone();
            let mut r2 = resp.clone();
            let ll2 = e_step(&t1, &t2, &p, &mut r2, &mut buf);
            if ll2 >= ll {
                (th1, th2, pi, resp, ll) = (t1, t2, p, r2, ll2);
                restarts += 1;
            }
        }
    }
    if !converged {
        trace.push(ll);
    }
    Ok(EmRun {
        g: build_measure(&th1, &th2, &pi),
        loglik: ll,
        iters,
        converged,
        loglik_trace: trace,
        restarts,
    })
}

/// Unweighted Gauss-Newton fit of a nonlinear mean, used to seed starts.
fn ls_nonlinear(pair: &ExpertPair, sub: &Dataset) -> Vec<f64> {
    let w = vec![1.0; sub.len()];
    let ybar = sub.ys.iter().sum::<f64>() / sub.len() as f64;
    let th2 = vec![1.0; pair.q2()];
    let mut best = vec![ybar.max(1e-2).sqrt(), 0.0];
    let mut best_q = f64::NEG_INFINITY;
    for start in [[ybar.max(1e-2).sqrt(), 0.0], [0.0, ybar.max(1e-2).sqrt()], [-ybar.max(1e-2).sqrt(), 0.5]] {
        let mut s = start.to_vec();
        pair.project(&mut s, &mut th2.clone());
        let fit = newton_mean(pair, sub, &w, &s, &th2, 50);
        let q = q_component(pair, sub, &w, &fit, &th2);
        if q > best_q {
            best_q = q;
            best = fit;
        }
    }
    best
}

fn ls_linear(pair: &ExpertPair, sub: &Dataset) -> Vec<f64> {
    let q = pair.q1();
    let mut a = Matrix2::zeros();
    let mut b = Vector2::zeros();
    for (&x, &y) in sub.xs.iter().zip(&sub.ys) {
        let f = linear_features(pair.family, x);
        for u in 0..q {
            b[u] += f[u] * y;
            for v in 0..q {
                a[(u, v)] += f[u] * f[v];
            }
        }
    }
    for u in 0..q {
        a[(u, u)] += 1e-9;
    }
    solve_small(q, &a, &b).unwrap_or_else(|| vec![0.0; q])
}

/// Initial measure: per component, a least-squares fit on a small random subsample, with
/// its mean parameters jittered; variances from residual moments on the full data; uniform
/// weights. Everything is clamped into the parameter box.
pub fn multistart_init(pair: &ExpertPair, data: &Dataset, k: usize, seed: u64) -> Result<MixingMeasure> {
    if k == 0 {
        return validation("k must be positive");
    }
    check_data(pair, data, k)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = data.len();
    let m = n.min(10.max(4 * pair.q1() + 2));
    let mut atoms = Vec::with_capacity(k);
    for _ in 0..k {
        let idx = index::sample(&mut rng, n, m);
        let sub = Dataset {
            xs: idx.iter().map(|i| data.xs[i]).collect(),
            ys: idx.iter().map(|i| data.ys[i]).collect(),
            seed,
        };
        let mut th1 = if pair.family.linear_mean() {
            ls_linear(pair, &sub)
        } else {
            ls_nonlinear(pair, &sub)
        };
        let resid: Vec<(f64, f64)> = data.xs.iter().zip(&data.ys).map(|(&x, &y)| (x, y - pair.mean(x, &th1))).collect();
        let msq = resid.iter().map(|(_, e)| e * e).sum::<f64>() / n as f64;
        let jitter = 0.1 * msq.sqrt();
        for v in th1.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += jitter * z;
        }
        let moment = |pow: i32| resid.iter().map(|(x, e)| e * e / x.powi(pow)).sum::<f64>() / n as f64;
        let mut th2 = match pair.family {
            Family::LinConst | Family::SlopeConst | Family::QuadConst => vec![moment(0)],
            Family::LinX2 => vec![moment(2)],
            Family::PowmLinx => vec![moment(1)],
            Family::LinOffset => {
                let x2 = data.xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
                vec![0.5 * msq, 0.5 * msq / x2.max(1e-12)]
            }
        };
        th2.iter_mut().for_each(|v| {
            if !v.is_finite() {
                *v = 1.0;
            }
        });
        pair.project(&mut th1, &mut th2);
        atoms.push(Atom::new(th1, th2, 1.0 / k as f64));
    }
    MixingMeasure::new(atoms)
}

/// Multi-start EM. Starts run in parallel and the result with the highest terminal
/// log-likelihood wins, ties going to the lowest start index.
pub fn em_fit(pair: &ExpertPair, prior: &CovariatePrior, data: &Dataset, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    prior.validate()?;
    data.check_support(prior)?;
    check_data(pair, data, config.k)?;
    let runs: Vec<Result<EmRun>> = (0..config.n_starts)
        .into_par_iter()
        .map(|s| {
            let seed = derive_seed(config.seed, &[s as u64]);
            let init = multistart_init(pair, data, config.k, seed)?;
            let cfg = FitConfig { seed, ..config.clone() };
            em_run(pair, data, &init, &cfg)
        })
        .collect();
    let runs: Vec<EmRun> = runs.into_iter().collect::<Result<_>>()?;
    let mut best = 0;
    for (s, r) in runs.iter().enumerate() {
        if r.loglik > runs[best].loglik {
            best = s;
        }
    }
    let starts = runs
        .iter()
        .enumerate()
        .map(|(s, r)| StartSummary {
            start: s,
            loglik: r.loglik,
            iters: r.iters,
            converged: r.converged,
            restarts: r.restarts,
        })
        .collect();
    let restarts = runs.iter().map(|r| r.restarts).sum();
    let win = runs.into_iter().nth(best).expect("n_starts is positive");
    Ok(FitResult {
        g_hat: win.g,
        loglik: win.loglik,
        iters: win.iters,
        converged: win.converged,
        loglik_trace: win.loglik_trace,
        best_start: best,
        restarts,
        starts,
        seed: config.seed,
    })
}
