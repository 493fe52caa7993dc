use serde::{Deserialize, Serialize};

use super::Scenario;
use crate::algebra::Certificate;
use crate::divergence::{ratio_profile, QuadratureSpec};
use crate::error::{validation, Error, Result};
use crate::model::{Atom, ExpertPair, MixingMeasure};
use crate::transport::KappaVector;

/// Perturbation families around the first true atom. Coordinates index the stacked
/// (theta1, theta2) vector from 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WitnessKind {
    /// Two atoms at eta0 -/+ (1, ..., 1)/n, each carrying half the weight.
    SplitSymmetric,
    /// Two atoms differing from eta0 only in `coord`, by -/+ 1/n.
    CoordSplit { coord: usize },
    /// s atoms from a nontrivial solution (a*, b*, c*) of the order-r system:
    /// mean coordinate + a*_j / n, variance coordinate + 2 b*_j / n^2, weight pi0 c*_j^2 / sum c*^2.
    Polysol { mean_coord: usize, var_coord: usize },
}

fn split(g0: &MixingMeasure, news: Vec<(Vec<f64>, f64)>, q1: usize) -> Result<MixingMeasure> {
    let mut atoms: Vec<Atom> = news
        .into_iter()
        .map(|(eta, w)| Atom::new(eta[..q1].to_vec(), eta[q1..].to_vec(), w))
        .collect();
    atoms.extend(g0.atoms()[1..].iter().cloned());
    MixingMeasure::new(atoms)
}

/// G_n for the chosen construction. The first atom of `g0` is the one perturbed.
pub fn witness_sequence(
    kind: &WitnessKind,
    n: usize,
    pair: &ExpertPair,
    g0: &MixingMeasure,
    certificate: Option<&Certificate>,
) -> Result<MixingMeasure> {
    if n < 2 {
        return validation("witness sequences need n >= 2");
    }
    pair.validate_measure(g0)?;
    let d = pair.dim();
    let eta0 = g0.atoms()[0].eta();
    let pi0 = g0.atoms()[0].weight;
    let h = 1.0 / n as f64;
    let gn = match kind {
        WitnessKind::SplitSymmetric => {
            let lo = eta0.iter().map(|v| v - h).collect();
            let hi = eta0.iter().map(|v| v + h).collect();
            split(g0, vec![(lo, pi0 / 2.0), (hi, pi0 / 2.0)], pair.q1())?
        }
        WitnessKind::CoordSplit { coord } => {
            if *coord >= d {
                return validation(format!("coordinate {coord} out of range for dimension {d}"));
            }
            let (mut lo, mut hi) = (eta0.clone(), eta0.clone());
            lo[*coord] -= h;
            hi[*coord] += h;
            split(g0, vec![(lo, pi0 / 2.0), (hi, pi0 / 2.0)], pair.q1())?
        }
        WitnessKind::Polysol { mean_coord, var_coord } => {
            if *mean_coord >= pair.q1() || *var_coord < pair.q1() || *var_coord >= d {
                return validation("POLYSOL needs a theta1 mean coordinate and a theta2 variance coordinate");
            }
            let cert = certificate.ok_or_else(|| {
                Error::Dependency(
                    "POLYSOL needs a solution certificate from rbar at r = rbar - 1".to_string(),
                )
            })?;
            let c2: f64 = cert.c.iter().map(|c| c * c).sum();
            let news = (0..cert.a.len())
                .map(|j| {
                    let mut eta = eta0.clone();
                    eta[*mean_coord] += cert.a[j] * h;
                    eta[*var_coord] += 2.0 * cert.b[j] * h * h;
                    (eta, pi0 * cert.c[j] * cert.c[j] / c2)
                })
                .collect();
            split(g0, news, pair.q1())?
        }
    };
    pair.validate_measure(&gn)?;
    Ok(gn)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// Residual perturbation sums that the construction is built to cancel.
///
/// Split kinds: per coordinate, sum_j pi_j (eta_j - eta0). POLYSOL: for l = 1..=max_order,
/// sum over alpha1 + 2 alpha2 = l of sum_j pi_j dm_j^alpha1 (dv_j / 2)^alpha2 / (alpha1! alpha2!).
/// The halving of the variance step comes from d f / d h2^2 = (1/2) d^2 f / d h1^2.
pub fn witness_cancellation(
    kind: &WitnessKind,
    pair: &ExpertPair,
    g0: &MixingMeasure,
    gn: &MixingMeasure,
    max_order: usize,
) -> Result<Vec<f64>> {
    let extra = gn.len() + 1 - g0.len();
    if gn.len() < g0.len() {
        return validation("G_n has fewer atoms than G_0");
    }
    let eta0 = g0.atoms()[0].eta();
    let news: Vec<(Vec<f64>, f64)> = gn.atoms()[..extra]
        .iter()
        .map(|a| (a.eta().iter().zip(&eta0).map(|(x, y)| x - y).collect(), a.weight))
        .collect();
    Ok(match kind {
        WitnessKind::SplitSymmetric | WitnessKind::CoordSplit { .. } => (0..pair.dim())
            .map(|c| news.iter().map(|(d, w)| w * d[c]).sum())
            .collect(),
        WitnessKind::Polysol { mean_coord, var_coord } => (1..=max_order)
            .map(|l| {
                let mut total = 0.0;
                for a2 in 0..=l / 2 {
                    let a1 = l - 2 * a2;
                    let fac = factorial(a1) * factorial(a2);
                    for (d, w) in &news {
                        total += w * d[*mean_coord].powi(a1 as i32) * (0.5 * d[*var_coord]).powi(a2 as i32) / fac;
                    }
                }
                total
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessRow {
    pub n: usize,
    pub h: f64,
    pub w_kappa: f64,
    /// h / W^{||kappa'||_inf}
    pub ratio: Option<f64>,
    pub accuracy_warning: bool,
    /// Largest absolute cancellation sum for this G_n.
    pub max_cancellation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    pub scenario: String,
    pub kind: WitnessKind,
    pub kappa_prime: KappaVector,
    pub rows: Vec<WitnessRow>,
    /// The last three ratios strictly decrease.
    pub monotone_decreasing: bool,
    pub flags: Vec<String>,
}

fn last_three_decreasing(rows: &[WitnessRow]) -> bool {
    rows.len() >= 3
        && rows[rows.len() - 3..]
            .windows(2)
            .all(|w| matches!((w[0].ratio, w[1].ratio), (Some(a), Some(b)) if b < a))
}

/// Ratio profile of a witness sequence under a transport order strictly below the scenario's.
pub fn run_witness_experiment(
    sc: &Scenario,
    kind: &WitnessKind,
    kappa_prime: &KappaVector,
    n_grid: &[usize],
    certificate: Option<&Certificate>,
    spec: &QuadratureSpec,
) -> Result<WitnessReport> {
    if !kappa_prime.strictly_dominated_by(&sc.kappa) {
        return validation(format!(
            "kappa' = {kappa_prime} must be strictly below the scenario's kappa = {}",
            sc.kappa
        ));
    }
    let order = certificate.map_or(1, |c| c.r);
    let seq: Vec<MixingMeasure> = n_grid
        .iter()
        .map(|&n| witness_sequence(kind, n, &sc.pair, &sc.g0, certificate))
        .collect::<Result<_>>()?;
    let profile = ratio_profile(&sc.pair, &sc.prior, &seq, &sc.g0, kappa_prime, spec)?;
    let rows: Vec<WitnessRow> = n_grid
        .iter()
        .zip(&seq)
        .zip(profile)
        .map(|((&n, gn), p)| {
            let canc = witness_cancellation(kind, &sc.pair, &sc.g0, gn, order)?;
            Ok(WitnessRow {
                n,
                h: p.h,
                w_kappa: p.w_kappa,
                ratio: p.ratio,
                accuracy_warning: p.accuracy_warning,
                max_cancellation: canc.iter().fold(0.0, |m, v| m.max(v.abs())),
            })
        })
        .collect::<Result<_>>()?;
    let monotone = last_three_decreasing(&rows);
    let mut flags = Vec::new();
    if monotone {
        flags.push("MONOTONE_DECREASING".to_string());
    }
    if rows.iter().any(|r| r.accuracy_warning) {
        flags.push("ACCURACY_WARNING".to_string());
    }
    Ok(WitnessReport {
        scenario: sc.name.clone(),
        kind: kind.clone(),
        kappa_prime: kappa_prime.clone(),
        rows,
        monotone_decreasing: monotone,
        flags,
    })
}

/// A generic two-atom split of the first true atom: weights p pi0 and (1 - p) pi0 at
/// eta0 + (1 - p) d / n and eta0 - p d / n. First moments cancel; nothing else is tuned.
pub fn generic_split_sequence(
    n: usize,
    pair: &ExpertPair,
    g0: &MixingMeasure,
    direction: &[f64],
    p: f64,
) -> Result<MixingMeasure> {
    if n < 1 || direction.len() != pair.dim() || !(p > 0.0 && p < 1.0) {
        return validation("generic split needs n >= 1, a full-length direction and p in (0, 1)");
    }
    let eta0 = g0.atoms()[0].eta();
    let pi0 = g0.atoms()[0].weight;
    let h = 1.0 / n as f64;
    let a = eta0.iter().zip(direction).map(|(e, d)| e + (1.0 - p) * d * h).collect();
    let b = eta0.iter().zip(direction).map(|(e, d)| e - p * d * h).collect();
    let gn = split(g0, vec![(a, p * pi0), (b, (1.0 - p) * pi0)], pair.q1())?;
    pair.validate_measure(&gn)?;
    Ok(gn)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub scenario: String,
    pub kappa: KappaVector,
    pub rows: Vec<WitnessRow>,
    /// min ratio / max ratio over the grid.
    pub min_over_max: f64,
}

/// Ratio h / W^{||kappa||_inf} under the scenario's own kappa along a generic split.
pub fn bounded_below_probe(
    sc: &Scenario,
    n_grid: &[usize],
    direction: &[f64],
    p: f64,
    spec: &QuadratureSpec,
) -> Result<ProbeReport> {
    let seq: Vec<MixingMeasure> = n_grid
        .iter()
        .map(|&n| generic_split_sequence(n, &sc.pair, &sc.g0, direction, p))
        .collect::<Result<_>>()?;
    let profile = ratio_profile(&sc.pair, &sc.prior, &seq, &sc.g0, &sc.kappa, spec)?;
    let rows: Vec<WitnessRow> = n_grid
        .iter()
        .zip(profile)
        .map(|(&n, p)| WitnessRow {
            n,
            h: p.h,
            w_kappa: p.w_kappa,
            ratio: p.ratio,
            accuracy_warning: p.accuracy_warning,
            max_cancellation: 0.0,
        })
        .collect();
    let ratios: Vec<f64> = rows.iter().filter_map(|r| r.ratio).collect();
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ProbeReport {
        scenario: sc.name.clone(),
        kappa: sc.kappa.clone(),
        rows,
        min_over_max: if ratios.is_empty() { f64::NAN } else { min / max },
    })
}
