//! Box-constrained Levenberg-Marquardt with a central-difference Jacobian.

use nalgebra::{DMatrix, DVector};

pub(crate) struct LmOutcome {
    pub x: Vec<f64>,
    /// Euclidean norm of the residual vector at `x`.
    pub norm: f64,
}

pub(crate) struct LmOptions {
    pub max_iters: usize,
    /// Stop once the residual norm drops below this.
    pub target: f64,
}

fn jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: &F, x: &[f64], m: usize, lo: &[f64], hi: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let mut j = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for k in 0..n {
        let h = 1e-7 * x[k].abs().max(1.0);
        // one-sided near the box edge so every probe stays feasible
        let (up, dn) = ((x[k] + h).min(hi[k]), (x[k] - h).max(lo[k]));
        if up <= dn {
            continue;
        }
        xp[k] = up;
        let fu = f(&xp);
        xp[k] = dn;
        let fd = f(&xp);
        xp[k] = x[k];
        for i in 0..m {
            j[(i, k)] = (fu[i] - fd[i]) / (up - dn);
        }
    }
    j
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|r| r * r).sum()
}

/// Minimizes ||f(x)||^2 over the box [lo, hi], projecting every trial step onto the box.
pub(crate) fn minimize<F: Fn(&[f64]) -> Vec<f64>>(
    f: F,
    x0: Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    opts: &LmOptions,
) -> LmOutcome {
    let mut x: Vec<f64> = x0.iter().zip(lo.iter().zip(hi)).map(|(v, (l, h))| v.clamp(*l, *h)).collect();
    let mut r = f(&x);
    let mut cost = sq_norm(&r);
    let mut lambda = 1e-3;
    let n = x.len();
    for _ in 0..opts.max_iters {
        if cost.sqrt() < opts.target {
            break;
        }
        let j = jacobian(&f, &x, r.len(), lo, hi);
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * DVector::from_column_slice(&r);
        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * (jtj[(k, k)] + 1e-9);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = (0..n).map(|k| (x[k] + step[k]).clamp(lo[k], hi[k])).collect();
            let rt = f(&trial);
            let ct = sq_norm(&rt);
            if ct < cost {
                x = trial;
                r = rt;
                cost = ct;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    LmOutcome { x, norm: cost.sqrt() }
}
