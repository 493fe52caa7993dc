//! Scenario-driven Monte Carlo rate experiments and witness-sequence probes.

mod witness;

pub use witness::{
    bounded_below_probe, generic_split_sequence, run_witness_experiment, witness_cancellation,
    witness_sequence, ProbeReport, WitnessKind, WitnessReport, WitnessRow,
};

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};

use crate::derive_seed;
use crate::divergence::{hellinger, QuadratureSpec};
use crate::error::{validation, Error, Result};
use crate::mle::{em_fit, FitConfig};
use crate::model::{sample, CovariatePrior, ExpertPair, Family, MixingMeasure};
use crate::transport::{atom_match_report, wasserstein_kappa, KappaVector};

/// r_bar(2), the order governing one extra fitted component. Checked against the search in tests.
pub const RBAR_S2: u32 = 4;
/// Bracket on r_tilde(theta, 2) for the THM48 truth, also checked against the search.
pub const RTILDE_S2_BRACKET: (u32, u32) = (3, 4);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub pair: ExpertPair,
    pub prior: CovariatePrior,
    pub g0: MixingMeasure,
    pub fit_k: usize,
    pub kappa: KappaVector,
    /// Extra transport orders reported alongside `kappa`.
    pub alt_kappas: Vec<KappaVector>,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub fit: FitConfig,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        self.pair.validate_measure(&self.g0)?;
        self.fit.validate()?;
        if self.fit_k < self.g0.len() {
            return validation(format!(
                "fit_k = {} is below the {} true atoms",
                self.fit_k,
                self.g0.len()
            ));
        }
        if self.fit.k != self.fit_k {
            return validation("fit.k must equal fit_k");
        }
        for k in std::iter::once(&self.kappa).chain(&self.alt_kappas) {
            if k.len() != self.pair.dim() {
                return validation(format!("kappa {k} does not match parameter dimension {}", self.pair.dim()));
            }
        }
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return validation("n_grid must be nonempty and strictly increasing");
        }
        if self.n_grid[0] < self.fit_k || self.replicates == 0 {
            return validation("sample sizes must be at least fit_k and replicates positive");
        }
        Ok(())
    }
}

const DEFAULT_GRID: [usize; 6] = [500, 1000, 2000, 4000, 8000, 16000];

fn rate_fit(k: usize, floor: f64) -> FitConfig {
    FitConfig {
        weight_floor: floor,
        n_starts: 4,
        ..FitConfig::new(k)
    }
}

fn kappa(v: &[u32]) -> KappaVector {
    KappaVector::new(v.to_vec()).expect("builtin kappa vectors are valid")
}

#[allow(clippy::too_many_arguments)]
fn scenario(
    name: &str,
    description: &str,
    family: Family,
    prior: CovariatePrior,
    theta1: Vec<f64>,
    theta2: Vec<f64>,
    kap: KappaVector,
    alt: Vec<KappaVector>,
    floor: f64,
) -> Scenario {
    Scenario {
        name: name.to_string(),
        description: description.to_string(),
        pair: ExpertPair::with_default_domain(family),
        prior,
        g0: MixingMeasure::single(theta1, theta2),
        fit_k: 2,
        kappa: kap,
        alt_kappas: alt,
        n_grid: DEFAULT_GRID.to_vec(),
        replicates: 20,
        fit: rate_fit(2, floor),
        seed: 20_240,
    }
}

/// One scenario per rate regime, each with a single true atom fitted by two components.
pub fn builtin_scenarios() -> Vec<Scenario> {
    let unit = CovariatePrior::uniform(0.0, 1.0).expect("valid prior");
    let shifted = CovariatePrior::uniform(0.1, 1.1).expect("valid prior");
    let r = RBAR_S2;
    let half = r.div_ceil(2);
    let (lo, hi) = RTILDE_S2_BRACKET;
    vec![
        scenario(
            "THM32_INDEP",
            "Algebraically independent experts h1 = theta X, h2^2 = theta2; truth (1, 1).",
            Family::SlopeConst,
            unit,
            vec![1.0],
            vec![1.0],
            kappa(&[2, 2]),
            vec![],
            0.0,
        ),
        scenario(
            "THM42_LINCONST",
            "Linear mean with constant variance; truth (0, 1, 1) gives the same law as THM32_INDEP.",
            Family::LinConst,
            unit,
            vec![0.0, 1.0],
            vec![1.0],
            kappa(&[r, 2, half]),
            vec![],
            0.05,
        ),
        scenario(
            "THM43_LINX2",
            "Linear mean with variance theta2 X^2 on [0.1, 1.1]; truth (0, 1, 1).",
            Family::LinX2,
            shifted,
            vec![0.0, 1.0],
            vec![1.0],
            kappa(&[2, r, half]),
            vec![],
            0.05,
        ),
        scenario(
            "THM44_OFFSET",
            "Linear mean with variance theta2' + theta2'' X^2 on [0.1, 1.1]; truth (0, 1, 0.5, 0.5).",
            Family::LinOffset,
            shifted,
            vec![0.0, 1.0],
            vec![0.5, 0.5],
            kappa(&[r, r, half, half]),
            vec![],
            0.05,
        ),
        scenario(
            "THM46_NONLIN_I",
            "Quadratic mean (a + bX)^2 with b != 0 in the truth (1, 1, 1).",
            Family::QuadConst,
            unit,
            vec![1.0, 1.0],
            vec![1.0],
            kappa(&[2, 2, 2]),
            vec![],
            0.05,
        ),
        scenario(
            "THM48_NONLIN_II",
            "Quadratic mean (a + bX)^2 with a != 0, b = 0 in the truth (1, 0, 1); reported under both ends of the r_tilde bracket.",
            Family::QuadConst,
            unit,
            vec![1.0, 0.0],
            vec![1.0],
            kappa(&[hi, 2, hi.div_ceil(2)]),
            vec![kappa(&[lo, 2, lo.div_ceil(2)])],
            0.05,
        ),
    ]
}

pub fn find_scenario(name: &str) -> Result<Scenario> {
    builtin_scenarios()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::Validation(format!("unknown scenario '{name}'")))
}

/// One fitted replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub n: usize,
    pub replicate: usize,
    pub w_kappa: f64,
    /// W under each of the scenario's alternative kappa vectors.
    pub alt_w_kappa: Vec<f64>,
    pub hellinger: f64,
    /// Per coordinate, the largest matched error over true atoms.
    pub coord_errors: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub std_error: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub fitted: usize,
    pub excluded: usize,
    pub median_w: f64,
    pub lower_quartile_w: f64,
    pub upper_quartile_w: f64,
    pub median_alt_w: Vec<f64>,
    pub median_coord_errors: Vec<f64>,
    pub median_hellinger: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub scenario: String,
    pub seed: u64,
    pub kappa: KappaVector,
    pub alt_kappas: Vec<KappaVector>,
    pub rows: Vec<RateRow>,
    /// Slope of log median W against log n; `None` with a flag when it cannot be fitted.
    pub slope: Option<SlopeFit>,
    pub alt_slopes: Vec<Option<SlopeFit>>,
    pub coord_slopes: Vec<Option<SlopeFit>>,
    pub hellinger_slope: Option<SlopeFit>,
    pub flags: Vec<String>,
    pub exclusions: usize,
    pub exclusion_reasons: Vec<String>,
    /// Fits are multi-start EM local maxima, not certified global maximizers.
    pub estimator: String,
    pub records: Vec<ReplicateRecord>,
}

impl RateReport {
    /// Flat per-replicate table: n, replicate, w_kappa, hellinger, coordinate errors, alternatives.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let d = self.kappa.len();
        let mut header = vec!["n".to_string(), "replicate".into(), "w_kappa".into(), "hellinger".into()];
        header.extend((0..d).map(|c| format!("coord_error_{}", c + 1)));
        header.extend(self.alt_kappas.iter().map(|k| format!("w_kappa[{k}]")));
        header.extend(["loglik".to_string(), "converged".into()]);
        wr.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.n.to_string(), r.replicate.to_string(), r.w_kappa.to_string(), r.hellinger.to_string()];
            row.extend(r.coord_errors.iter().map(|v| v.to_string()));
            row.extend(r.alt_w_kappa.iter().map(|v| v.to_string()));
            row.extend([r.loglik.to_string(), r.converged.to_string()]);
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Ordinary least squares of y on x with the usual slope standard error.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Option<SlopeFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let std_error = if n > 2 {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (rss / (n - 2) as f64 / sxx).sqrt()
    } else {
        f64::NAN
    };
    slope.is_finite().then_some(SlopeFit { slope, std_error, intercept })
}

fn log_log_slope(ns: &[usize], values: &[f64]) -> Option<SlopeFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = ns
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(n, v)| ((*n as f64).ln(), v.ln()))
        .unzip();
    ols_slope(&x, &y)
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    Data::new(v.to_vec()).median()
}

fn quartiles(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut d = Data::new(v.to_vec());
    (d.lower_quartile(), d.upper_quartile())
}

fn run_replicate(sc: &Scenario, n: usize, rep: usize, spec: &QuadratureSpec) -> Result<ReplicateRecord> {
    let data_seed = derive_seed(sc.seed, &[n as u64, rep as u64]);
    let data = sample(&sc.pair, &sc.prior, &sc.g0, n, data_seed)?;
    let cfg = FitConfig {
        seed: derive_seed(data_seed, &[1]),
        ..sc.fit.clone()
    };
    let fit = em_fit(&sc.pair, &sc.prior, &data, &cfg)?;
    let report = atom_match_report(&sc.kappa, &fit.g_hat, &sc.g0)?;
    let alt_w_kappa = sc
        .alt_kappas
        .iter()
        .map(|k| wasserstein_kappa(k, &fit.g_hat, &sc.g0).map(|t| t.distance))
        .collect::<Result<_>>()?;
    let h = hellinger(&sc.pair, &sc.prior, &fit.g_hat, &sc.g0, spec)?;
    Ok(ReplicateRecord {
        n,
        replicate: rep,
        w_kappa: report.transport.distance,
        alt_w_kappa,
        hellinger: h.value,
        coord_errors: report.max_coord_errors(),
        loglik: fit.loglik,
        converged: fit.converged,
    })
}

/// Samples, fits and scores every (n, replicate) cell, then aggregates medians and log-log slopes.
/// Cells run in parallel; each derives its seeds from the scenario seed and its indices, so the
/// report does not depend on scheduling.
pub fn run_rate_experiment(sc: &Scenario) -> Result<RateReport> {
    sc.validate()?;
    let spec = QuadratureSpec::default();
    let cells: Vec<(usize, usize)> = sc
        .n_grid
        .iter()
        .flat_map(|&n| (0..sc.replicates).map(move |r| (n, r)))
        .collect();
    let outcomes: Vec<Result<ReplicateRecord>> = cells
        .par_iter()
        .map(|&(n, r)| run_replicate(sc, n, r, &spec))
        .collect();

    let mut records = Vec::new();
    let mut exclusion_reasons = Vec::new();
    let mut excluded_at = vec![0usize; sc.n_grid.len()];
    for ((n, r), out) in cells.iter().zip(outcomes) {
        match out {
            Ok(rec) => records.push(rec),
            Err(e) => {
                let i = sc.n_grid.iter().position(|m| m == n).expect("cell n is on the grid");
                excluded_at[i] += 1;
                exclusion_reasons.push(format!("n = {n}, replicate {r}: {e}"));
            }
        }
    }

    let d = sc.kappa.len();
    let rows: Vec<RateRow> = sc
        .n_grid
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let at: Vec<&ReplicateRecord> = records.iter().filter(|r| r.n == n).collect();
            let w: Vec<f64> = at.iter().map(|r| r.w_kappa).collect();
            let (q1, q3) = quartiles(&w);
            RateRow {
                n,
                fitted: at.len(),
                excluded: excluded_at[i],
                median_w: median(&w),
                lower_quartile_w: q1,
                upper_quartile_w: q3,
                median_alt_w: (0..sc.alt_kappas.len())
                    .map(|a| median(&at.iter().map(|r| r.alt_w_kappa[a]).collect::<Vec<_>>()))
                    .collect(),
                median_coord_errors: (0..d)
                    .map(|c| median(&at.iter().map(|r| r.coord_errors[c]).collect::<Vec<_>>()))
                    .collect(),
                median_hellinger: median(&at.iter().map(|r| r.hellinger).collect::<Vec<_>>()),
            }
        })
        .collect();

    let ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    let series = |f: &dyn Fn(&RateRow) -> f64| log_log_slope(&ns, &rows.iter().map(f).collect::<Vec<_>>());
    let mut flags = Vec::new();
    if sc.n_grid.len() < 2 {
        flags.push("SINGLE_N_NO_SLOPE".to_string());
    }
    let slope = series(&|r| r.median_w);
    if slope.is_none() && sc.n_grid.len() >= 2 {
        flags.push("SLOPE_UNAVAILABLE".to_string());
    }
    Ok(RateReport {
        scenario: sc.name.clone(),
        seed: sc.seed,
        kappa: sc.kappa.clone(),
        alt_kappas: sc.alt_kappas.clone(),
        slope,
        alt_slopes: (0..sc.alt_kappas.len()).map(|a| series(&|r| r.median_alt_w[a])).collect(),
        coord_slopes: (0..d).map(|c| series(&|r| r.median_coord_errors[c])).collect(),
        hellinger_slope: series(&|r| r.median_hellinger),
        rows,
        flags,
        exclusions: excluded_at.iter().sum(),
        exclusion_reasons,
        estimator: "multi-start EM (local maximum of the likelihood)".to_string(),
        records,
    })
}
