//! Damped least squares (Levenberg-Marquardt) for small parameter counts.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmOptions {
    pub max_iterations: usize,
    /// Relative finite-difference step.
    pub fd_step: f64,
    /// Stop once an accepted step lowers the objective by less than this fraction.
    pub rel_tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            fd_step: 1e-6,
            rel_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LmSolution {
    pub params: Vec<f64>,
    /// `(J^T J)^-1` at the solution.
    pub covariance: DMatrix<f64>,
    /// Sum of squared residuals.
    pub chi2: f64,
    pub n_residuals: usize,
    pub iterations: usize,
    /// Objective after the start and after each accepted step.
    pub history: Vec<f64>,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Central-difference Jacobian. `scales` sets the step floor for
/// parameters near zero.
fn jacobian<F>(f: &F, x: &[f64], r0: &[f64], scales: &[f64], step: f64) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let mut jac = DMatrix::zeros(r0.len(), x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let h = step * x[j].abs().max(scales[j]);
        xp[j] = x[j] + h;
        let up = f(&xp);
        xp[j] = x[j] - h;
        let down = f(&xp);
        xp[j] = x[j];
        match (up, down) {
            (Some(u), Some(d)) => {
                for i in 0..r0.len() {
                    jac[(i, j)] = (u[i] - d[i]) / (2.0 * h);
                }
            }
            // one-sided next to the edge of the parameter domain
            (Some(u), None) => {
                for i in 0..r0.len() {
                    jac[(i, j)] = (u[i] - r0[i]) / h;
                }
            }
            (None, Some(d)) => {
                for i in 0..r0.len() {
                    jac[(i, j)] = (r0[i] - d[i]) / h;
                }
            }
            (None, None) => return None,
        }
    }
    Some(jac)
}

/// Minimize `sum r_i(x)^2`. `residuals` returns `None` outside the
/// parameter domain; such trial steps are rejected.
pub(crate) fn minimize<F>(
    residuals: F,
    x0: &[f64],
    scales: &[f64],
    opts: LmOptions,
) -> Result<LmSolution>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = residuals(&x)
        .ok_or_else(|| Error::Degenerate("starting point outside the model domain".into()))?;
    if r.len() < n {
        return Err(Error::Degenerate(format!(
            "{} data points for {n} parameters",
            r.len()
        )));
    }
    let mut chi2 = sum_sq(&r);
    let mut history = vec![chi2];
    let mut damping = 1e-3;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations {
        iterations += 1;
        let jac = jacobian(&residuals, &x, &r, scales, opts.fd_step).ok_or_else(|| {
            Error::Degenerate("model undefined around the current estimate".into())
        })?;
        let jt = jac.transpose();
        let hess = &jt * &jac;
        let grad = &jt * DVector::from_column_slice(&r);
        if grad.amax() == 0.0 || chi2 == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        while damping < 1e16 {
            let mut damped = hess.clone();
            for j in 0..n {
                damped[(j, j)] += damping * hess[(j, j)].max(1e-300);
            }
            let Some(step) = damped.lu().solve(&(-&grad)) else {
                damping *= 10.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            match residuals(&trial) {
                Some(rt) if sum_sq(&rt) <= chi2 => {
                    let new_chi2 = sum_sq(&rt);
                    let drop = chi2 - new_chi2;
                    let rel_step = step
                        .iter()
                        .zip(&x)
                        .zip(scales)
                        .map(|((d, xi), s)| d.abs() / xi.abs().max(*s))
                        .fold(0.0, f64::max);
                    x = trial;
                    r = rt;
                    chi2 = new_chi2;
                    history.push(chi2);
                    damping = (damping / 10.0).max(1e-12);
                    accepted = true;
                    if drop <= opts.rel_tol * chi2 || rel_step < 1e-12 {
                        converged = true;
                    }
                    break;
                }
                _ => damping *= 10.0,
            }
        }
        if converged {
            break;
        }
        if !accepted {
            // no descent direction left at any damping: a stationary point
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence { iterations });
    }

    let jac = jacobian(&residuals, &x, &r, scales, opts.fd_step)
        .ok_or_else(|| Error::Degenerate("model undefined at the solution".into()))?;
    let hess = jac.transpose() * &jac;
    let covariance = hess
        .try_inverse()
        .filter(|c| c.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Degenerate("parameters are not constrained by the data".into()))?;
    Ok(LmSolution {
        params: x,
        covariance,
        chi2,
        n_residuals: r.len(),
        iterations,
        history,
    })
}
