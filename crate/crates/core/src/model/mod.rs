//! Expert families, mixing measures, GMCF densities and sampling.

mod derivative;
mod prior;

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

pub use derivative::{
    density_theta_expansion, density_theta_partial, gaussian_h1_derivative, h1_partial,
    h2sq_partial, hermite_he, theta_partial_capability,
};
pub use prior::CovariatePrior;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Catalog of expert families. X is scalar throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// h1 = a + bX, h2^2 = t
    #[serde(rename = "LIN_CONST")]
    LinConst,
    /// h1 = a + bX, h2^2 = t X^2
    #[serde(rename = "LIN_X2")]
    LinX2,
    /// h1 = a + bX, h2^2 = t1 + t2 X^2
    #[serde(rename = "LIN_OFFSET")]
    LinOffset,
    /// h1 = a X, h2^2 = t
    #[serde(rename = "SLOPE_CONST")]
    SlopeConst,
    /// h1 = (a + bX)^2, h2^2 = t X
    #[serde(rename = "POWM_LINX")]
    PowmLinx,
    /// h1 = (a + bX)^2, h2^2 = t
    #[serde(rename = "QUAD_CONST")]
    QuadConst,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::LinConst,
        Family::LinX2,
        Family::LinOffset,
        Family::SlopeConst,
        Family::PowmLinx,
        Family::QuadConst,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::LinConst => "LIN_CONST",
            Family::LinX2 => "LIN_X2",
            Family::LinOffset => "LIN_OFFSET",
            Family::SlopeConst => "SLOPE_CONST",
            Family::PowmLinx => "POWM_LINX",
            Family::QuadConst => "QUAD_CONST",
        }
    }

    pub fn q1(self) -> usize {
        match self {
            Family::SlopeConst => 1,
            _ => 2,
        }
    }

    pub fn q2(self) -> usize {
        match self {
            Family::LinOffset => 2,
            _ => 1,
        }
    }

    /// True when h1 is affine in theta1.
    pub fn linear_mean(self) -> bool {
        !matches!(self, Family::PowmLinx | Family::QuadConst)
    }

    /// True when h2^2 does not depend on X, so the variance M-step has a closed form.
    pub fn constant_variance(self) -> bool {
        matches!(
            self,
            Family::LinConst | Family::SlopeConst | Family::QuadConst
        )
    }

    /// Default parameter box: theta1 coordinates in [-5, 5], theta2 coordinates in [0.05, 5].
    pub fn default_domain(self) -> Vec<[f64; 2]> {
        let mut d = vec![[-5.0, 5.0]; self.q1()];
        d.extend(std::iter::repeat_n([0.05, 5.0], self.q2()));
        d
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|fam| fam.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Validation(format!("unknown expert family '{s}'")))
    }
}

/// An expert family together with its compact parameter box (theta1 coordinates first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPair")]
pub struct ExpertPair {
    pub family: Family,
    domain: Vec<[f64; 2]>,
}

#[derive(Deserialize)]
struct RawPair {
    family: Family,
    domain: Vec<[f64; 2]>,
}

impl TryFrom<RawPair> for ExpertPair {
    type Error = Error;

    fn try_from(raw: RawPair) -> Result<Self> {
        Self::new(raw.family, raw.domain)
    }
}

impl ExpertPair {
    pub fn new(family: Family, domain: Vec<[f64; 2]>) -> Result<Self> {
        let want = family.q1() + family.q2();
        if domain.len() != want {
            return validation(format!(
                "{family} needs {want} domain intervals, got {}",
                domain.len()
            ));
        }
        for (i, [lo, hi]) in domain.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return validation(format!("domain interval {i} is not a finite [lo, hi]"));
            }
        }
        for [lo, _] in &domain[family.q1()..] {
            if *lo <= 0.0 {
                return validation("theta2 intervals must be strictly positive");
            }
        }
        Ok(Self { family, domain })
    }

    pub fn with_default_domain(family: Family) -> Self {
        Self {
            family,
            domain: family.default_domain(),
        }
    }

    pub fn q1(&self) -> usize {
        self.family.q1()
    }

    pub fn q2(&self) -> usize {
        self.family.q2()
    }

    pub fn dim(&self) -> usize {
        self.q1() + self.q2()
    }

    pub fn domain(&self) -> &[[f64; 2]] {
        &self.domain
    }

    pub fn theta1_box(&self) -> &[[f64; 2]] {
        &self.domain[..self.q1()]
    }

    pub fn theta2_box(&self) -> &[[f64; 2]] {
        &self.domain[self.q1()..]
    }

    /// Mean expert h1(x, theta1).
    #[inline]
    pub fn mean(&self, x: f64, th1: &[f64]) -> f64 {
        match self.family {
            Family::LinConst | Family::LinX2 | Family::LinOffset => th1[0] + th1[1] * x,
            Family::SlopeConst => th1[0] * x,
            Family::PowmLinx | Family::QuadConst => {
                let u = th1[0] + th1[1] * x;
                u * u
            }
        }
    }

    /// Variance expert h2^2(x, theta2).
    #[inline]
    pub fn variance(&self, x: f64, th2: &[f64]) -> f64 {
        match self.family {
            Family::LinConst | Family::SlopeConst | Family::QuadConst => th2[0],
            Family::LinX2 => th2[0] * x * x,
            Family::LinOffset => th2[0] + th2[1] * x * x,
            Family::PowmLinx => th2[0] * x,
        }
    }

    pub fn contains(&self, th1: &[f64], th2: &[f64]) -> bool {
        th1.len() == self.q1()
            && th2.len() == self.q2()
            && th1
                .iter()
                .chain(th2)
                .zip(&self.domain)
                .all(|(v, [lo, hi])| *v >= *lo && *v <= *hi)
    }

    /// Clamp parameters into the box.
    pub fn project(&self, th1: &mut [f64], th2: &mut [f64]) {
        for (v, [lo, hi]) in th1.iter_mut().chain(th2.iter_mut()).zip(&self.domain) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn validate_measure(&self, g: &MixingMeasure) -> Result<()> {
        for (i, a) in g.atoms().iter().enumerate() {
            if a.theta1.len() != self.q1() || a.theta2.len() != self.q2() {
                return validation(format!(
                    "atom {i} has dimensions ({}, {}), {} expects ({}, {})",
                    a.theta1.len(),
                    a.theta2.len(),
                    self.family,
                    self.q1(),
                    self.q2()
                ));
            }
            if !self.contains(&a.theta1, &a.theta2) {
                return validation(format!("atom {i} lies outside the parameter box"));
            }
        }
        Ok(())
    }

    /// Mixture density without validation; callers guarantee dimensions.
    #[inline]
    pub fn mixture_density(&self, g: &MixingMeasure, x: f64, y: f64) -> f64 {
        g.atoms()
            .iter()
            .map(|a| a.weight * normal_pdf(y, self.mean(x, &a.theta1), self.variance(x, &a.theta2)))
            .sum()
    }
}

/// One support point of a mixing measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    pub weight: f64,
}

impl Atom {
    pub fn new(theta1: Vec<f64>, theta2: Vec<f64>, weight: f64) -> Self {
        Self {
            theta1,
            theta2,
            weight,
        }
    }

    /// theta1 followed by theta2.
    pub fn eta(&self) -> Vec<f64> {
        self.theta1.iter().chain(&self.theta2).copied().collect()
    }
}

/// Discrete mixing measure G = sum_i pi_i delta_{(theta1_i, theta2_i)}.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingMeasure {
    atoms: Vec<Atom>,
}

impl MixingMeasure {
    pub const WEIGHT_TOL: f64 = 1e-12;

    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return validation("a mixing measure needs at least one atom");
        }
        let (q1, q2) = (atoms[0].theta1.len(), atoms[0].theta2.len());
        let mut total = 0.0;
        for (i, a) in atoms.iter().enumerate() {
            if a.theta1.len() != q1 || a.theta2.len() != q2 {
                return validation(format!("atom {i} has inconsistent dimensions"));
            }
            if !(a.weight >= 0.0) || !a.weight.is_finite() {
                return validation(format!("atom {i} has invalid weight {}", a.weight));
            }
            if a.theta1.iter().chain(&a.theta2).any(|v| !v.is_finite()) {
                return validation(format!("atom {i} has a non-finite parameter"));
            }
            total += a.weight;
        }
        if (total - 1.0).abs() > Self::WEIGHT_TOL {
            return validation(format!("weights sum to {total}, not 1"));
        }
        Ok(Self { atoms })
    }

    pub fn single(theta1: Vec<f64>, theta2: Vec<f64>) -> Self {
        Self {
            atoms: vec![Atom::new(theta1, theta2, 1.0)],
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.weight).collect()
    }

    pub fn etas(&self) -> Vec<Vec<f64>> {
        self.atoms.iter().map(Atom::eta).collect()
    }
}

impl<'de> Deserialize<'de> for MixingMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            atoms: Vec<Atom>,
        }
        let raw = Raw::deserialize(d)?;
        MixingMeasure::new(raw.atoms).map_err(serde::de::Error::custom)
    }
}

/// JSON document `{"family", "domain", "atoms"}` pairing a measure with its expert family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureDoc {
    pub family: Family,
    pub domain: Vec<[f64; 2]>,
    pub atoms: Vec<Atom>,
}

impl MeasureDoc {
    pub fn new(pair: &ExpertPair, g: &MixingMeasure) -> Self {
        Self {
            family: pair.family,
            domain: pair.domain().to_vec(),
            atoms: g.atoms().to_vec(),
        }
    }

    pub fn into_parts(self) -> Result<(ExpertPair, MixingMeasure)> {
        let pair = ExpertPair::new(self.family, self.domain)?;
        let g = MixingMeasure::new(self.atoms)?;
        pair.validate_measure(&g)?;
        Ok((pair, g))
    }

    pub fn from_json(s: &str) -> Result<(ExpertPair, MixingMeasure)> {
        serde_json::from_str::<MeasureDoc>(s)?.into_parts()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<(ExpertPair, MixingMeasure)> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("measure documents always serialize")
    }
}

/// Paired covariates and responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Row {
    x: f64,
    y: f64,
}

impl Dataset {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, seed: u64) -> Result<Self> {
        if xs.len() != ys.len() {
            return validation("xs and ys differ in length");
        }
        Ok(Self { xs, ys, seed })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn check_support(&self, prior: &CovariatePrior) -> Result<()> {
        let (lo, hi) = prior.support();
        match self.xs.iter().position(|x| *x < lo || *x > hi) {
            Some(i) => validation(format!("covariate {i} lies outside [{lo}, {hi}]")),
            None => Ok(()),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for (&x, &y) in self.xs.iter().zip(&self.ys) {
            wr.serialize(Row { x, y })?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads an `x,y` CSV. The file carries no seed, so the caller supplies one.
    pub fn read_csv<R: Read>(r: R, seed: u64) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for row in rd.deserialize::<Row>() {
            let row = row?;
            xs.push(row.x);
            ys.push(row.y);
        }
        Self::new(xs, ys, seed)
    }
}

#[inline]
pub(crate) fn normal_pdf(y: f64, mu: f64, var: f64) -> f64 {
    let d = y - mu;
    (-0.5 * d * d / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

#[inline]
pub(crate) fn normal_logpdf(y: f64, mu: f64, var: f64) -> f64 {
    let d = y - mu;
    -0.5 * d * d / var - 0.5 * var.ln() - LN_SQRT_2PI
}

/// N(y; mu, sigma2).
pub fn gaussian_density(y: f64, mu: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::Domain(format!("variance must be positive, got {sigma2}")));
    }
    Ok(normal_pdf(y, mu, sigma2))
}

/// g_G(y | x) = sum_i pi_i N(y; h1(x, theta1_i), h2^2(x, theta2_i)).
pub fn conditional_density(pair: &ExpertPair, g: &MixingMeasure, x: f64, y: f64) -> Result<f64> {
    pair.validate_measure(g)?;
    Ok(pair.mixture_density(g, x, y))
}

/// p_G(x, y) = g_G(y | x) fbar(x); zero outside the covariate support.
pub fn joint_density(
    pair: &ExpertPair,
    prior: &CovariatePrior,
    g: &MixingMeasure,
    x: f64,
    y: f64,
) -> Result<f64> {
    let fx = prior.density(x);
    if fx == 0.0 {
        pair.validate_measure(g)?;
        return Ok(0.0);
    }
    Ok(conditional_density(pair, g, x, y)? * fx)
}

/// Draws n i.i.d. pairs from the joint model. Deterministic in `seed`.
pub fn sample(
    pair: &ExpertPair,
    prior: &CovariatePrior,
    g: &MixingMeasure,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return validation("sample size must be at least 1");
    }
    pair.validate_measure(g)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let pick = WeightedIndex::new(g.weights())
        .map_err(|e| Error::Validation(format!("bad weights: {e}")))?;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = prior.sample(&mut rng);
        let a = &g.atoms()[pick.sample(&mut rng)];
        let z: f64 = StandardNormal.sample(&mut rng);
        xs.push(x);
        ys.push(pair.mean(x, &a.theta1) + pair.variance(x, &a.theta2).sqrt() * z);
    }
    Ok(Dataset { xs, ys, seed })
}
