//! Hellinger and total-variation distances between GMCF joint densities by tensor
//! Gauss-Legendre quadrature, plus transport-normalized ratio profiles.

use gauss_quad::GaussLegendre;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::model::{CovariatePrior, ExpertPair, MixingMeasure};
use crate::transport::{wasserstein_kappa, KappaVector};

/// Tensor quadrature resolution and acceptance tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub x_nodes: usize,
    pub y_nodes: usize,
    /// Half-width of each component's Y window in units of the largest standard deviation.
    pub sigma_width: f64,
    /// Node-doubling error estimates above this raise the accuracy warning.
    pub tolerance: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            x_nodes: 64,
            y_nodes: 400,
            sigma_width: 8.0,
            tolerance: 1e-8,
        }
    }
}

impl QuadratureSpec {
    pub fn scaled(&self, factor: usize) -> Self {
        Self {
            x_nodes: self.x_nodes * factor,
            y_nodes: self.y_nodes * factor,
            ..*self
        }
    }

    fn validate(&self) -> Result<()> {
        if self.x_nodes < 2 || self.y_nodes < 2 || !(self.sigma_width > 0.0) || !(self.tolerance > 0.0) {
            return validation("quadrature needs at least 2 nodes per axis and positive width/tolerance");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceResult {
    pub value: f64,
    /// |value at the requested grid - value at the doubled grid|, on the distance scale.
    pub error_estimate: f64,
    /// Set when `error_estimate` exceeds the requested tolerance.
    pub accuracy_warning: bool,
}

fn rule(n: usize) -> Result<GaussLegendre> {
    GaussLegendre::new(n).map_err(|e| Error::Validation(format!("Gauss-Legendre rule: {e}")))
}

// Disjoint Y intervals covering every component window at covariate x.
fn y_windows(pair: &ExpertPair, gs: [&MixingMeasure; 2], x: f64, width: f64) -> Vec<(f64, f64)> {
    let mut sd_max: f64 = 0.0;
    let mut means = Vec::new();
    for g in gs {
        for a in g.atoms() {
            sd_max = sd_max.max(pair.variance(x, &a.theta2).sqrt());
            means.push(pair.mean(x, &a.theta1));
        }
    }
    means.sort_by(f64::total_cmp);
    let half = width * sd_max;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for m in means {
        match out.last_mut() {
            Some(last) if m - half <= last.1 => last.1 = m + half,
            _ => out.push((m - half, m + half)),
        }
    }
    out
}

// Integrates `kernel(g_a(y|x), g_b(y|x))` against fbar(x) dx dy.
fn integrate_pair(
    pair: &ExpertPair,
    prior: &CovariatePrior,
    g_a: &MixingMeasure,
    g_b: &MixingMeasure,
    spec: &QuadratureSpec,
    kernel: fn(f64, f64) -> f64,
) -> Result<f64> {
    let xr = rule(spec.x_nodes)?;
    let yr = rule(spec.y_nodes)?;
    let (lo, hi) = prior.support();
    let (xc, xh) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    let per_x: Vec<f64> = xr
        .as_node_weight_pairs()
        .par_iter()
        .map(|&(t, wx)| {
            let x = xc + xh * t;
            let mut inner = 0.0;
            for (ylo, yhi) in y_windows(pair, [g_a, g_b], x, spec.sigma_width) {
                inner += yr.integrate(ylo, yhi, |y| {
                    kernel(pair.mixture_density(g_a, x, y), pair.mixture_density(g_b, x, y))
                });
            }
            wx * xh * prior.density(x) * inner
        })
        .collect();
    Ok(per_x.iter().sum())
}

fn check_inputs(
    pair: &ExpertPair,
    prior: &CovariatePrior,
    g_a: &MixingMeasure,
    g_b: &MixingMeasure,
    spec: &QuadratureSpec,
) -> Result<()> {
    spec.validate()?;
    prior.validate()?;
    pair.validate_measure(g_a)?;
    pair.validate_measure(g_b)
}

fn hellinger_kernel(a: f64, b: f64) -> f64 {
    let s = a.sqrt() + b.sqrt();
    if s == 0.0 {
        0.0
    } else {
        let d = (a - b) / s;
        d * d
    }
}

fn tv_kernel(a: f64, b: f64) -> f64 {
    (a - b).abs()
}

fn with_doubling(
    spec: &QuadratureSpec,
    eval: impl Fn(&QuadratureSpec) -> Result<f64>,
) -> Result<DivergenceResult> {
    let coarse = eval(spec)?;
    let fine = eval(&spec.scaled(2))?;
    let error_estimate = (coarse - fine).abs();
    Ok(DivergenceResult {
        value: coarse,
        error_estimate,
        accuracy_warning: error_estimate > spec.tolerance,
    })
}

/// Squared Hellinger distance h^2 = 1/2 int (sqrt p_a - sqrt p_b)^2, single grid, no error estimate.
pub fn hellinger_sq_raw(
    pair: &ExpertPair,
    prior: &CovariatePrior,
    g_a: &MixingMeasure,
    g_b: &MixingMeasure,
    spec: &QuadratureSpec,
) -> Result<f64> {
    check_inputs(pair, prior, g_a, g_b, spec)?;
    Ok(0.5 * integrate_pair(pair, prior, g_a, g_b, spec, hellinger_kernel)?)
}

/// Hellinger distance h(p_{G_a}, p_{G_b}) with h^2 = 1/2 int (sqrt p_a - sqrt p_b)^2.
pub fn hellinger(
    pair: &ExpertPair,
    prior: &CovariatePrior,
    g_a: &MixingMeasure,
    g_b: &MixingMeasure,
    spec: &QuadratureSpec,
) -> Result<DivergenceResult> {
    with_doubling(spec, |s| {
        Ok(hellinger_sq_raw(pair, prior, g_a, g_b, s)?.max(0.0).sqrt())
    })
}

/// Total variation V = 1/2 int |p_a - p_b|.
pub fn total_variation(
    pair: &ExpertPair,
    prior: &CovariatePrior,
    g_a: &MixingMeasure,
    g_b: &MixingMeasure,
    spec: &QuadratureSpec,
) -> Result<DivergenceResult> {
    check_inputs(pair, prior, g_a, g_b, spec)?;
    with_doubling(spec, |s| {
        Ok(0.5 * integrate_pair(pair, prior, g_a, g_b, s, tv_kernel)?)
    })
}

/// Importance-sampling estimate of h^2 with proposal (p_a + p_b)/2. Returns (estimate, standard error).
pub fn hellinger_sq_monte_carlo(
    pair: &ExpertPair,
    prior: &CovariatePrior,
    g_a: &MixingMeasure,
    g_b: &MixingMeasure,
    draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if draws < 2 {
        return validation("Monte Carlo needs at least two draws");
    }
    pair.validate_measure(g_a)?;
    pair.validate_measure(g_b)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let pick_a = WeightedIndex::new(g_a.weights()).map_err(|e| Error::Validation(e.to_string()))?;
    let pick_b = WeightedIndex::new(g_b.weights()).map_err(|e| Error::Validation(e.to_string()))?;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..draws {
        let x = prior.sample(&mut rng);
        let atom = if rand::Rng::random_bool(&mut rng, 0.5) {
            &g_a.atoms()[pick_a.sample(&mut rng)]
        } else {
            &g_b.atoms()[pick_b.sample(&mut rng)]
        };
        let z: f64 = StandardNormal.sample(&mut rng);
        let y = pair.mean(x, &atom.theta1) + pair.variance(x, &atom.theta2).sqrt() * z;
        let (a, b) = (pair.mixture_density(g_a, x, y), pair.mixture_density(g_b, x, y));
        // fbar(x) cancels between the integrand and the proposal
        let v = 0.5 * hellinger_kernel(a, b) / (0.5 * (a + b));
        sum += v;
        sum_sq += v * v;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub index: usize,
    pub h: f64,
    /// W_kappa(G_n, G0)
    pub w_kappa: f64,
    /// h / W_kappa^{||kappa||_inf}; `None` when the transport distance vanishes.
    pub ratio: Option<f64>,
    pub excluded: bool,
    pub accuracy_warning: bool,
}

/// h(p_{G_n}, p_{G0}) / W_kappa^{||kappa||_inf}(G_n, G0) along a sequence of measures.
pub fn ratio_profile(
    pair: &ExpertPair,
    prior: &CovariatePrior,
    g_seq: &[MixingMeasure],
    g0: &MixingMeasure,
    kappa: &KappaVector,
    spec: &QuadratureSpec,
) -> Result<Vec<RatioPoint>> {
    if g_seq.is_empty() {
        return validation("ratio profile needs a nonempty sequence");
    }
    g_seq
        .iter()
        .enumerate()
        .map(|(index, g)| {
            let w = wasserstein_kappa(kappa, g, g0)?;
            let h = hellinger(pair, prior, g, g0, spec)?;
            let excluded = w.objective == 0.0;
            Ok(RatioPoint {
                index,
                h: h.value,
                w_kappa: w.distance,
                ratio: (!excluded).then(|| h.value / w.objective),
                excluded,
                accuracy_warning: h.accuracy_warning,
            })
        })
        .collect()
}
