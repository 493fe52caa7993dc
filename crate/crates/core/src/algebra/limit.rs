use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lm::{minimize, LmOptions};
use super::polysys::{factorial, rbar, RbarResult, SearchBudget, SearchStatus};
use super::ppoly::{p_polynomials, PPolyTable};
use crate::derive_seed;
use crate::error::{validation, Error, Result};

/// Coefficient of sum_i c_i a_i^g1 b_i^g2 in the l-th numerator, for l = 1..=2r:
/// sum over admissible u of P_u^(g1)(theta) / (2^g2 g1! g2!), where
/// ceil(g1 / 2) + u + 2 g2 = l and g1 + g2 <= r.
pub fn limit_system_coefficients(
    theta: f64,
    r: usize,
    table: &PPolyTable,
) -> Result<Vec<Vec<(usize, usize, f64)>>> {
    if r == 0 {
        return validation("r must be positive");
    }
    if table.gamma_max() < r {
        return validation(format!(
            "P-polynomial table covers gamma <= {}, need {r}",
            table.gamma_max()
        ));
    }
    let mut out = vec![Vec::new(); 2 * r];
    for g1 in 0..=r {
        for g2 in 0..=r - g1 {
            if g1 + g2 == 0 {
                continue;
            }
            let scale = 1.0 / (2f64.powi(g2 as i32) * factorial(g1) * factorial(g2));
            for u in 0..=PPolyTable::u_max(g1) {
                let l = PPolyTable::level(u, g1) + 2 * g2;
                if (1..=2 * r).contains(&l) {
                    let p = table.eval(u, g1, theta).expect("u and gamma in range");
                    match out[l - 1].iter_mut().find(|e: &&mut (usize, usize, f64)| e.0 == g1 && e.1 == g2) {
                        Some(e) => e.2 += p * scale,
                        None => out[l - 1].push((g1, g2, p * scale)),
                    }
                }
            }
        }
    }
    Ok(out)
}

/// The 2r ratios of the polynomial-limit system for l = 1..=2r.
pub fn limit_system_residuals(
    theta: f64,
    r: usize,
    a: &[f64],
    b: &[f64],
    c: &[f64],
    table: &PPolyTable,
) -> Result<Vec<f64>> {
    if a.len() != b.len() || a.len() != c.len() || a.is_empty() {
        return validation("a, b, c must be nonempty and of equal length");
    }
    if c.iter().any(|v| *v < 0.0) {
        return validation("c must be nonnegative");
    }
    let coeffs = limit_system_coefficients(theta, r, table)?;
    let half = r.div_ceil(2) as i32;
    let den: f64 = (0..a.len())
        .map(|i| c[i] * (a[i].abs().powi(r as i32) + b[i].abs().powi(half)))
        .sum();
    if !(den > 0.0) {
        return Err(Error::Domain("limit-system denominator vanishes".into()));
    }
    Ok(coeffs
        .iter()
        .map(|terms| {
            terms
                .iter()
                .map(|&(g1, g2, k)| {
                    k * (0..a.len())
                        .map(|i| c[i] * a[i].powi(g1 as i32) * b[i].powi(g2 as i32))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / den
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtildeBudget {
    pub starts_per_combo: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Candidate exponents rho for b_i(t) = b_hat_i t^rho_i; must be multiples of 1/2.
    pub rho_grid: Vec<f64>,
    /// Budget for the r_bar search that supplies the upper end.
    pub rbar: SearchBudget,
}

impl Default for RtildeBudget {
    fn default() -> Self {
        Self {
            starts_per_combo: 4,
            max_iters: 200,
            seed: 0,
            rho_grid: (1..=8).map(|k| k as f64 / 2.0).collect(),
            rbar: SearchBudget::default(),
        }
    }
}

/// Leading coefficients below this (relative to the denominator's) count as vanishing.
pub const VANISH_TOL: f64 = 1e-6;

/// A power-law family a_i = a_hat_i t, b_i = b_hat_i t^rho_i, c_i constant, along which every
/// ratio of the order-r system tends to zero as t -> 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitFamily {
    pub r: usize,
    pub rho: Vec<f64>,
    pub a_hat: Vec<f64>,
    pub b_hat: Vec<f64>,
    pub c: Vec<f64>,
    /// Largest |numerator coefficient| at exponents up to the denominator's, over the
    /// denominator's leading coefficient.
    pub leading_max: f64,
    /// (t, max_l |ratio_l|) at a few moderate t.
    pub trend: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtildeBracket {
    pub theta: f64,
    pub s: usize,
    pub lower: usize,
    pub upper: usize,
    /// Whether the upper end came from a determined r_bar search.
    pub upper_status: SearchStatus,
    /// Vanishing families, one per order where one was found.
    pub families: Vec<LimitFamily>,
    /// (r, best leading_max) for orders where no vanishing family was found.
    pub unresolved: Vec<(usize, f64)>,
}

struct FamilyProblem {
    s: usize,
    r: usize,
    rho2: Vec<usize>,
    coeffs: Vec<Vec<(usize, usize, f64)>>,
    d2: usize,
    groups: Vec<(usize, usize)>,
}

impl FamilyProblem {
    fn new(s: usize, r: usize, rho2: Vec<usize>, coeffs: Vec<Vec<(usize, usize, f64)>>) -> Self {
        let half = r.div_ceil(2);
        let d2 = rho2.iter().map(|p| p * half).min().unwrap().min(2 * r);
        let mut groups = Vec::new();
        for (li, terms) in coeffs.iter().enumerate() {
            for &(g1, g2, _) in terms {
                for p in &rho2 {
                    let e2 = 2 * g1 + p * g2;
                    if e2 <= d2 && !groups.contains(&(li, e2)) {
                        groups.push((li, e2));
                    }
                }
            }
        }
        groups.sort();
        Self {
            s,
            r,
            rho2,
            coeffs,
            d2,
            groups,
        }
    }

    fn split<'a>(&self, x: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        (&x[..self.s], &x[self.s..2 * self.s], &x[2 * self.s..])
    }

    fn leading_den(&self, x: &[f64]) -> f64 {
        let (a, b, c) = self.split(x);
        let half = self.r.div_ceil(2);
        (0..self.s)
            .map(|i| {
                let mut v = 0.0;
                if 2 * self.r == self.d2 {
                    v += a[i].abs().powi(self.r as i32);
                }
                if self.rho2[i] * half == self.d2 {
                    v += b[i].abs().powi(half as i32);
                }
                c[i] * v
            })
            .sum()
    }

    fn group_values(&self, x: &[f64]) -> Vec<f64> {
        let (a, b, c) = self.split(x);
        self.groups
            .iter()
            .map(|&(li, e2)| {
                let mut v = 0.0;
                for &(g1, g2, k) in &self.coeffs[li] {
                    for i in 0..self.s {
                        if 2 * g1 + self.rho2[i] * g2 == e2 {
                            v += k * c[i] * a[i].powi(g1 as i32) * b[i].powi(g2 as i32);
                        }
                    }
                }
                v
            })
            .collect()
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = self.group_values(x);
        r.push(self.leading_den(x) - 1.0);
        r
    }

    fn score(&self, x: &[f64]) -> f64 {
        let den = self.leading_den(x);
        if !(den > 0.0) {
            return f64::INFINITY;
        }
        self.group_values(x).iter().fold(0.0f64, |m, v| m.max(v.abs())) / den
    }
}

fn multisets(k: usize, s: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, k: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for i in start..k {
            cur.push(i);
            rec(i, k, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, k, s, &mut Vec::new(), &mut out);
    out
}

fn search_order(
    theta: f64,
    s: usize,
    r: usize,
    table: &PPolyTable,
    budget: &RtildeBudget,
) -> Result<(Option<LimitFamily>, f64)> {
    let coeffs = limit_system_coefficients(theta, r, table)?;
    let rho2: Vec<usize> = budget.rho_grid.iter().map(|v| (2.0 * v).round() as usize).collect();
    let combos = multisets(rho2.len(), s);
    let mut lo = vec![-2.0; s];
    lo.extend(std::iter::repeat_n(-4.0, s));
    lo.extend(std::iter::repeat_n(0.05, s));
    let mut hi = vec![2.0; s];
    hi.extend(std::iter::repeat_n(4.0, s));
    hi.extend(std::iter::repeat_n(1.0, s));
    let opts = LmOptions {
        max_iters: budget.max_iters,
        target: 1e-13,
    };
    let jobs: Vec<(usize, usize)> = (0..combos.len())
        .flat_map(|ci| (0..budget.starts_per_combo).map(move |k| (ci, k)))
        .collect();
    let results: Vec<(f64, Vec<usize>, Vec<f64>)> = jobs
        .par_iter()
        .map(|&(ci, k)| {
            let rho: Vec<usize> = combos[ci].iter().map(|&g| rho2[g]).collect();
            let prob = FamilyProblem::new(s, r, rho.clone(), coeffs.clone());
            let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(
                budget.seed,
                &[s as u64, r as u64, ci as u64, k as u64],
            ));
            let x0: Vec<f64> = if k == 0 {
                // zero means, opposite-sign variance shifts
                let mut x = vec![0.0; s];
                x.extend((0..s).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }));
                x.extend(std::iter::repeat_n(0.5, s));
                x
            } else {
                (0..3 * s).map(|i| rng.random_range(lo[i]..=hi[i])).collect()
            };
            let out = minimize(|x| prob.residual(x), x0, &lo, &hi, &opts);
            (prob.score(&out.x), rho, out.x)
        })
        .collect();
    let (best, rho2_best, x) = results
        .into_iter()
        .reduce(|b, c| if c.0 < b.0 { c } else { b })
        .expect("at least one start");
    if best >= VANISH_TOL {
        return Ok((None, best));
    }
    let (a_hat, b_hat, c) = (x[..s].to_vec(), x[s..2 * s].to_vec(), x[2 * s..].to_vec());
    let rho: Vec<f64> = rho2_best.iter().map(|&p| p as f64 / 2.0).collect();
    let trend = [1e-1, 1e-2, 1e-3]
        .iter()
        .filter_map(|&t| {
            let a: Vec<f64> = a_hat.iter().map(|v| v * t).collect();
            let b: Vec<f64> = b_hat.iter().zip(&rho).map(|(v, p)| v * t.powf(*p)).collect();
            limit_system_residuals(theta, r, &a, &b, &c, table)
                .ok()
                .map(|rs| (t, rs.iter().fold(0.0f64, |m, v| m.max(v.abs()))))
        })
        .collect();
    Ok((
        Some(LimitFamily {
            r,
            rho,
            a_hat,
            b_hat,
            c,
            leading_max: best,
            trend,
        }),
        best,
    ))
}

/// Brackets r_tilde(theta, s): the upper end is r_bar(s), the lower end is one more than the
/// largest order below it that admits a vanishing power-law family.
pub fn rtilde_bracket(
    theta: f64,
    s: usize,
    budget: &RtildeBudget,
    rbar_result: Option<&RbarResult>,
) -> Result<RtildeBracket> {
    if theta == 0.0 || !theta.is_finite() {
        return validation("theta must be finite and nonzero");
    }
    if s < 2 {
        return validation("s must be at least 2");
    }
    if budget.rho_grid.is_empty()
        || budget
            .rho_grid
            .iter()
            .any(|v| !(*v > 0.0) || ((2.0 * v).round() - 2.0 * v).abs() > 1e-12)
    {
        return validation("rho grid must hold positive multiples of 1/2");
    }
    if budget.starts_per_combo == 0 {
        return validation("starts_per_combo must be positive");
    }
    let computed;
    let rb = match rbar_result {
        Some(r) if r.s == s => r,
        Some(_) => return validation("supplied r_bar result is for a different s"),
        None => {
            computed = rbar(s, &budget.rbar)?;
            &computed
        }
    };
    let (upper, upper_status) = match rb.value {
        Some(v) => (v, rb.status),
        None => (
            rb.best_residuals.last().map_or(3, |&(r, _)| r).max(3),
            SearchStatus::Indeterminate,
        ),
    };
    let table = p_polynomials(upper.min(8))?;
    let mut families = Vec::new();
    let mut unresolved = Vec::new();
    for r in 1..upper {
        match search_order(theta, s, r, &table, budget)? {
            (Some(f), _) => families.push(f),
            (None, best) => unresolved.push((r, best)),
        }
    }
    let lower = families.iter().map(|f| f.r + 1).max().unwrap_or(1).min(upper);
    Ok(RtildeBracket {
        theta,
        s,
        lower,
        upper,
        upper_status,
        families,
        unresolved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_ratios_match_closed_forms() {
        let table = p_polynomials(4).unwrap();
        let (th, a, b, c) = (0.7, [0.3, -0.2], [0.5, 0.1], [0.4, 0.6]);
        let rs = limit_system_residuals(th, 2, &a, &b, &c, &table).unwrap();
        let s = |f: &dyn Fn(usize) -> f64| (0..2).map(f).sum::<f64>();
        let den = s(&|i| c[i] * (a[i] * a[i] + b[i].abs()));
        let n1 = s(&|i| c[i] * a[i] * a[i]) + 2.0 * th * s(&|i| c[i] * a[i]);
        let n2 = 2.0 * th * th * s(&|i| c[i] * a[i] * a[i]) + 0.5 * s(&|i| c[i] * b[i]);
        let n3 = th * s(&|i| c[i] * a[i] * b[i]);
        let n4 = s(&|i| c[i] * b[i] * b[i]) / 8.0;
        for (got, want) in rs.iter().zip([n1, n2, n3, n4]) {
            assert!((got - want / den).abs() < 1e-14);
        }
    }

    #[test]
    fn odd_ratios_vanish_without_means() {
        let table = p_polynomials(5).unwrap();
        let rs = limit_system_residuals(0.0, 5, &[0.0, 0.0], &[0.4, -0.9], &[0.3, 0.5], &table).unwrap();
        for (l, v) in rs.iter().enumerate() {
            if (l + 1) % 2 == 1 {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn zero_denominator_rejected() {
        let table = p_polynomials(3).unwrap();
        assert!(matches!(
            limit_system_residuals(1.0, 2, &[0.0], &[0.0], &[1.0], &table),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn multiset_count() {
        assert_eq!(multisets(8, 2).len(), 36);
        assert_eq!(multisets(8, 3).len(), 120);
    }
}
