//! Box-constrained Levenberg-Marquardt for small dense problems.
//!
//! Steps are projected onto the bounds and accepted only when the cost drops,
//! so the recorded cost trace is non-increasing.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LsqOptions {
    pub max_iterations: usize,
    /// Relative cost decrease below which the fit has converged.
    pub ftol: f64,
    pub xtol: f64,
    pub gtol: f64,
    /// Relative finite-difference step.
    pub fd_step: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self { max_iterations: 200, ftol: 1e-12, xtol: 1e-12, gtol: 1e-12, fd_step: 1e-7 }
    }
}

#[derive(Clone, Debug)]
pub struct LsqResult {
    pub x: Vec<f64>,
    /// Half the squared residual norm.
    pub cost: f64,
    pub residuals: Vec<f64>,
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub cost_trace: Vec<f64>,
}

impl LsqResult {
    pub fn residual_norm(&self) -> f64 {
        (2.0 * self.cost).sqrt()
    }
}

fn cost_of(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Forward differences, stepping inward at an upper bound.
pub fn jacobian<F>(f: &mut F, x: &[f64], r0: &[f64], upper: &[f64], rel: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut jac = DMatrix::zeros(r0.len(), x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let mut h = rel * x[j].abs().max(1e-3);
        if x[j] + h > upper[j] {
            h = -h;
        }
        xp[j] = x[j] + h;
        let r = f(&xp)?;
        xp[j] = x[j];
        for i in 0..r0.len() {
            jac[(i, j)] = (r[i] - r0[i]) / h;
        }
    }
    Ok(jac)
}

/// Minimise `0.5 |f(x)|^2` subject to `lower <= x <= upper`.
pub fn levenberg_marquardt<F>(
    mut f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &LsqOptions,
) -> Result<LsqResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(Error::InvalidInput("bounds length differs from parameter count".into()));
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
        return Err(Error::InvalidInput("lower bound above upper bound".into()));
    }
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut r = f(&x)?;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite residual at the initial point".into()));
    }
    let mut cost = cost_of(&r);
    let mut jac = jacobian(&mut f, &x, &r, upper, opts.fd_step)?;
    let mut cost_trace = vec![cost];
    let mut lambda: Option<f64> = None;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let grad = &jt * DVector::from_column_slice(&r);

        // projected gradient: ignore components pushing into an active bound
        let pg = (0..n)
            .map(|j| {
                let g = grad[j];
                if (x[j] <= lower[j] && g > 0.0) || (x[j] >= upper[j] && g < 0.0) { 0.0 } else { g.abs() }
            })
            .fold(0.0, f64::max);
        if pg <= opts.gtol * cost.max(1e-300).sqrt().max(1e-30) || cost == 0.0 {
            converged = true;
            break;
        }

        // a relative floor keeps flat directions from taking wild trial steps
        let top = (0..n).map(|j| jtj[(j, j)]).fold(0.0, f64::max);
        let diag: Vec<f64> = (0..n).map(|j| jtj[(j, j)].max(1e-8 * top).max(1e-300)).collect();
        // Marquardt scaling: lam is relative to each diagonal entry
        let mut lam = lambda.unwrap_or(1e-3);
        let mut accepted = false;
        while lam < 1e20 {
            let mut a = jtj.clone();
            for j in 0..n {
                a[(j, j)] += lam * diag[j];
            }
            let rhs = -&grad;
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => a.svd(true, true).solve(&rhs, 1e-14).map_err(|e| Error::RankDeficient(e.to_string()))?,
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            project(&mut trial, lower, upper);
            let moved: f64 = trial.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rt = f(&trial)?;
            let ct = cost_of(&rt);
            if ct.is_finite() && ct < cost {
                let rel_drop = (cost - ct) / cost;
                x = trial;
                r = rt;
                cost = ct;
                cost_trace.push(cost);
                lambda = Some((lam / 3.0).max(1e-12));
                accepted = true;
                if rel_drop < opts.ftol || moved <= opts.xtol * (scale + opts.xtol) {
                    converged = true;
                }
                break;
            }
            if moved <= opts.xtol * (scale + opts.xtol) {
                // the projected step has collapsed onto the current point
                converged = true;
                break;
            }
            lam *= 4.0;
        }
        if !accepted {
            // no descent at any damping: stationary within the bounds
            converged = true;
            break;
        }
        jac = jacobian(&mut f, &x, &r, upper, opts.fd_step)?;
        if converged {
            break;
        }
    }

    Ok(LsqResult { x, cost, residuals: r, jacobian: jac, iterations, converged, cost_trace })
}

/// Moore-Penrose inverse of `J^T J`.
pub fn normal_pinv(jac: &DMatrix<f64>) -> DMatrix<f64> {
    let jtj = jac.transpose() * jac;
    let n = jtj.nrows();
    let eps = 1e-12 * jtj.norm().max(1e-300);
    jtj.pseudo_inverse(eps).unwrap_or_else(|_| DMatrix::zeros(n, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_exponential() {
        let ts: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.0 * (-1.3 * t).exp() + 0.5).collect();
        let res = levenberg_marquardt(
            |p: &[f64]| Ok(ts.iter().zip(&ys).map(|(t, y)| p[0] * (-p[1] * t).exp() + p[2] - y).collect()),
            &[1.0, 0.5, 0.0],
            &[-10.0, 0.0, -10.0],
            &[10.0, 10.0, 10.0],
            &LsqOptions::default(),
        )
        .unwrap();
        assert!(res.converged);
        assert!((res.x[0] - 2.0).abs() < 1e-6 && (res.x[1] - 1.3).abs() < 1e-6 && (res.x[2] - 0.5).abs() < 1e-6);
        assert!(res.cost_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn respects_bounds() {
        // unconstrained optimum at x = -1
        let res = levenberg_marquardt(
            |p: &[f64]| Ok(vec![p[0] + 1.0]),
            &[2.0],
            &[0.0],
            &[5.0],
            &LsqOptions::default(),
        )
        .unwrap();
        assert_eq!(res.x[0], 0.0);
        assert!(res.converged);
    }

    #[test]
    fn rejects_bad_bounds() {
        let r = levenberg_marquardt(|p: &[f64]| Ok(vec![p[0]]), &[0.0], &[1.0], &[0.0], &LsqOptions::default());
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pinv_of_rank_one() {
        let j = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let p = normal_pinv(&j);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[(0, 0)] - p[(1, 1)]).abs() < 1e-12);
    }
}
