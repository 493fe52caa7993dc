use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};

/// Coefficients of d^gamma/dtheta^gamma f(h1 = theta^2) on the basis d^l f / dh1^l.
///
/// The coefficient of d^l f / dh1^l is the integer polynomial P_u^(gamma)(theta) with
/// u = l - ceil(gamma / 2), for 0 <= u <= floor(gamma / 2).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PPolyTable {
    gamma_max: usize,
    // poly[gamma][l] = coefficients in ascending powers of theta
    poly: Vec<Vec<Vec<i64>>>,
}

fn poly_derivative(p: &[i64]) -> Vec<i64> {
    p.iter().enumerate().skip(1).map(|(k, c)| k as i64 * c).collect()
}

fn add_into(dst: &mut Vec<i64>, src: &[i64]) {
    if dst.len() < src.len() {
        dst.resize(src.len(), 0);
    }
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Builds the table by differentiating f(theta^2) directly: a term p(theta) f^(l) becomes
/// p'(theta) f^(l) + 2 theta p(theta) f^(l+1).
pub fn p_polynomials(gamma_max: usize) -> Result<PPolyTable> {
    if gamma_max > 8 {
        return validation(format!("gamma_max must be at most 8, got {gamma_max}"));
    }
    let mut poly = vec![vec![vec![1i64]]];
    for g in 0..gamma_max {
        let cur = &poly[g];
        let mut next: Vec<Vec<i64>> = vec![Vec::new(); g + 2];
        for (l, p) in cur.iter().enumerate() {
            add_into(&mut next[l], &poly_derivative(p));
            let mut shifted = vec![0i64];
            shifted.extend(p.iter().map(|c| 2 * c));
            add_into(&mut next[l + 1], &shifted);
        }
        for p in &mut next {
            while p.last() == Some(&0) {
                p.pop();
            }
        }
        poly.push(next);
    }
    Ok(PPolyTable { gamma_max, poly })
}

impl PPolyTable {
    pub fn gamma_max(&self) -> usize {
        self.gamma_max
    }

    /// Range of valid u for a given gamma.
    pub fn u_max(gamma: usize) -> usize {
        gamma / 2
    }

    /// Basis index l for (u, gamma).
    pub fn level(u: usize, gamma: usize) -> usize {
        u + gamma.div_ceil(2)
    }

    /// Integer coefficients of P_u^(gamma), ascending powers; `None` outside the valid range.
    pub fn p(&self, u: usize, gamma: usize) -> Option<&[i64]> {
        if gamma > self.gamma_max || u > Self::u_max(gamma) {
            return None;
        }
        self.poly[gamma].get(Self::level(u, gamma)).map(Vec::as_slice)
    }

    pub fn eval(&self, u: usize, gamma: usize, theta: f64) -> Option<f64> {
        self.p(u, gamma)
            .map(|p| p.iter().rev().fold(0.0, |acc, &c| acc * theta + c as f64))
    }

    /// Coefficients on d^l f / dh1^l for l = 0..=gamma at theta.
    pub fn expansion(&self, gamma: usize, theta: f64) -> Option<Vec<f64>> {
        if gamma > self.gamma_max {
            return None;
        }
        let mut out = vec![0.0; gamma + 1];
        for u in 0..=Self::u_max(gamma) {
            out[Self::level(u, gamma)] = self.eval(u, gamma, theta)?;
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_order_entries() {
        let t = p_polynomials(4).unwrap();
        assert_eq!(t.p(0, 0), Some(&[1][..]));
        assert_eq!(t.p(0, 1), Some(&[0, 2][..]));
        assert_eq!(t.p(0, 2), Some(&[2][..]));
        assert_eq!(t.p(1, 2), Some(&[0, 0, 4][..]));
        assert_eq!(t.p(0, 3), Some(&[0, 12][..]));
        assert_eq!(t.p(1, 3), Some(&[0, 0, 0, 8][..]));
        assert_eq!(t.p(2, 3), None);
        assert!(p_polynomials(9).is_err());
    }
}
