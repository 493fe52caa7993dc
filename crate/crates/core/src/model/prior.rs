use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{validation, Result};

/// Covariate density fbar on a compact interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CovariatePrior {
    Uniform { a: f64, b: f64 },
    TruncatedGaussian { mu: f64, sigma: f64, a: f64, b: f64 },
}

impl CovariatePrior {
    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        let p = CovariatePrior::Uniform { a, b };
        p.validate()?;
        Ok(p)
    }

    pub fn truncated_gaussian(mu: f64, sigma: f64, a: f64, b: f64) -> Result<Self> {
        let p = CovariatePrior::TruncatedGaussian { mu, sigma, a, b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.support();
        if !(a.is_finite() && b.is_finite() && a < b) {
            return validation(format!("covariate support [{a}, {b}] is not a compact interval"));
        }
        if let CovariatePrior::TruncatedGaussian { mu, sigma, .. } = *self {
            if !(sigma > 0.0 && mu.is_finite()) {
                return validation("truncated Gaussian needs finite mu and sigma > 0");
            }
            if self.mass() < 1e-12 {
                return validation("truncation interval carries no Gaussian mass");
            }
        }
        Ok(())
    }

    pub fn support(&self) -> (f64, f64) {
        match *self {
            CovariatePrior::Uniform { a, b } | CovariatePrior::TruncatedGaussian { a, b, .. } => {
                (a, b)
            }
        }
    }

    fn normal(&self) -> Option<Normal> {
        match *self {
            CovariatePrior::TruncatedGaussian { mu, sigma, .. } => Normal::new(mu, sigma).ok(),
            CovariatePrior::Uniform { .. } => None,
        }
    }

    fn mass(&self) -> f64 {
        let (a, b) = self.support();
        self.normal().map_or(1.0, |n| n.cdf(b) - n.cdf(a))
    }

    pub fn density(&self, x: f64) -> f64 {
        let (a, b) = self.support();
        if x < a || x > b {
            return 0.0;
        }
        match self.normal() {
            None => 1.0 / (b - a),
            Some(n) => n.pdf(x) / self.mass(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (a, b) = self.support();
        match self.normal() {
            None => rng.random_range(a..=b),
            Some(n) => {
                let (lo, hi) = (n.cdf(a), n.cdf(b));
                let u = lo + (hi - lo) * rng.random::<f64>();
                n.inverse_cdf(u).clamp(a, b)
            }
        }
    }
}
