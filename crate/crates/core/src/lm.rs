//! Box-constrained Levenberg–Marquardt with a forward-difference Jacobian.
//!
//! Marquardt scaling (`A + λ D`, with `D` the running maximum of `diag A`), projection onto the bounds, and an
//! active set for variables pinned at a bound with the gradient pointing out.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative cost decrease below which an accepted step ends the search.
    pub ftol: f64,
    /// Infinity norm of the free gradient below which the search ends.
    pub gtol: f64,
    /// Relative step size below which the search ends.
    pub xtol: f64,
    pub lambda0: f64,
    /// Relative forward-difference step.
    pub fd_step: f64,
    /// Largest allowed step component; longer steps are shortened.
    pub max_step: f64,
    pub scaling: Scaling,
}

/// Damping matrix added to `JᵀJ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scaling {
    /// `λ·I`; suits parameters that are already on a common scale (e.g. logarithms).
    Identity,
    /// `λ·D` with `D` the running maximum of `diag JᵀJ`.
    #[default]
    Marquardt,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            ftol: 1e-10,
            gtol: 1e-10,
            xtol: 1e-14,
            lambda0: 1e-3,
            fd_step: 1e-7,
            max_step: f64::INFINITY,
            scaling: Scaling::Marquardt,
        }
    }
}

pub const LAMBDA_MIN: f64 = 1e-12;
pub const LAMBDA_MAX: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    CostDecrease,
    Gradient,
    Step,
    DampingLimit,
    MaxIterations,
}

impl StopReason {
    pub fn converged(self) -> bool {
        !matches!(self, StopReason::MaxIterations)
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub x: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `‖r‖²` at `x`.
    pub cost: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub reason: StopReason,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    /// Damping used on each iteration.
    pub lambda_history: Vec<f64>,
    /// Jacobian at `x`.
    pub jacobian: DMatrix<f64>,
}

impl LmReport {
    pub fn rms(&self) -> f64 {
        (self.cost / self.residuals.len().max(1) as f64).sqrt()
    }

    /// `σ² (JᵀJ)⁻¹` with `σ² = ‖r‖² / (n − p)`; `None` if singular or `n ≤ p`.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        let (n, p) = self.jacobian.shape();
        if n <= p {
            return None;
        }
        let sigma2 = self.cost / (n - p) as f64;
        let jtj = self.jacobian.transpose() * &self.jacobian;
        jtj.try_inverse().map(|inv| inv * sigma2)
    }
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn jacobian<F>(
    f: &mut F,
    x: &[f64],
    r: &[f64],
    upper: &[f64],
    lower: &[f64],
    rel: f64,
    evals: &mut usize,
) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut jac = DMatrix::zeros(r.len(), x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let mut h = rel.max(rel * x[j].abs());
        if x[j] + h > upper[j] && x[j] - h >= lower[j] {
            h = -h;
        }
        xp[j] = x[j] + h;
        let rp = f(&xp)?;
        *evals += 1;
        if rp.len() != r.len() {
            return Err(Error::Invariant("residual length changed".into()));
        }
        for (i, (a, b)) in rp.iter().zip(r).enumerate() {
            jac[(i, j)] = (a - b) / h;
        }
        xp[j] = x[j];
    }
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("finite-difference Jacobian"));
    }
    Ok(jac)
}

/// Minimizes `‖f(x)‖²` subject to `lower ≤ x ≤ upper`.
///
/// Residual failures at trial points count as rejected steps; a failure at
/// the starting point is returned.
pub fn levenberg_marquardt<F>(
    mut f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &LmOptions,
) -> Result<LmReport>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let p = x0.len();
    if lower.len() != p || upper.len() != p {
        return Err(Error::Input(
            "bounds length does not match parameters".into(),
        ));
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
        return Err(Error::Input("lower bound exceeds upper bound".into()));
    }
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut r = f(&x)?;
    let mut evals = 1;
    if r.is_empty() {
        return Err(Error::Input("no residuals".into()));
    }
    let mut cost = sum_sq(&r);
    if !cost.is_finite() {
        return Err(Error::NonFinite("initial residuals"));
    }
    let mut lambda = opts.lambda0.clamp(LAMBDA_MIN, LAMBDA_MAX);
    let mut cost_history = vec![cost];
    let mut lambda_history = Vec::new();
    let mut jac = jacobian(&mut f, &x, &r, upper, lower, opts.fd_step, &mut evals)?;
    let mut reason = StopReason::MaxIterations;
    let mut iterations = 0;
    // MINPACK-style scaling: running maximum of the squared column norms
    let mut diag = vec![0.0f64; p];

    'outer: loop {
        let g = jac.transpose() * DVector::from_column_slice(&r);
        let free: Vec<usize> = (0..p)
            .filter(|&i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
            .collect();
        if free.iter().all(|&i| g[i].abs() <= opts.gtol) {
            reason = StopReason::Gradient;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;
        let a = jac.transpose() * &jac;
        for (d, i) in diag.iter_mut().zip(0..p) {
            *d = d.max(a[(i, i)]);
        }
        let nf = free.len();
        loop {
            lambda_history.push(lambda);
            let mut m = DMatrix::zeros(nf, nf);
            let mut rhs = DVector::zeros(nf);
            for (ii, &i) in free.iter().enumerate() {
                rhs[ii] = -g[i];
                for (jj, &j) in free.iter().enumerate() {
                    m[(ii, jj)] = a[(i, j)];
                }
                m[(ii, ii)] += lambda
                    * match opts.scaling {
                        Scaling::Identity => 1.0,
                        Scaling::Marquardt => diag[i].max(1e-30),
                    };
            }
            let step = m
                .clone()
                .cholesky()
                .map(|c| c.solve(&rhs))
                .or_else(|| m.lu().solve(&rhs));
            let accepted = step.and_then(|mut delta| {
                let longest = delta.amax();
                if longest > opts.max_step {
                    delta *= opts.max_step / longest;
                }
                let mut xn = x.clone();
                for (ii, &i) in free.iter().enumerate() {
                    xn[i] += delta[ii];
                }
                project(&mut xn, lower, upper);
                let moved: f64 = xn
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let scale: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                evals += 1;
                let rn = f(&xn).ok()?;
                let cn = sum_sq(&rn);
                (cn.is_finite() && rn.len() == r.len()).then_some((xn, rn, cn, moved, scale))
            });
            match accepted {
                Some((xn, rn, cn, moved, scale)) if cn < cost => {
                    let rel_drop = (cost - cn) / cost.max(f64::MIN_POSITIVE);
                    x = xn;
                    r = rn;
                    cost = cn;
                    cost_history.push(cost);
                    lambda = (lambda / 3.0).max(LAMBDA_MIN);
                    jac = jacobian(&mut f, &x, &r, upper, lower, opts.fd_step, &mut evals)?;
                    if rel_drop <= opts.ftol {
                        reason = StopReason::CostDecrease;
                        break 'outer;
                    }
                    if moved <= opts.xtol * (scale + opts.xtol) {
                        reason = StopReason::Step;
                        break 'outer;
                    }
                    continue 'outer;
                }
                Some((_, _, _, moved, scale)) if moved <= opts.xtol * (scale + opts.xtol) => {
                    reason = StopReason::Step;
                    break 'outer;
                }
                _ => {
                    if lambda >= LAMBDA_MAX {
                        reason = StopReason::DampingLimit;
                        break 'outer;
                    }
                    lambda = (lambda * 4.0).min(LAMBDA_MAX);
                }
            }
        }
    }

    Ok(LmReport {
        x,
        residuals: r,
        cost,
        iterations,
        evaluations: evals,
        reason,
        cost_history,
        lambda_history,
        jacobian: jac,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]])
    }

    const FREE: [f64; 2] = [f64::NEG_INFINITY, f64::NEG_INFINITY];
    const FREE_HI: [f64; 2] = [f64::INFINITY, f64::INFINITY];

    #[test]
    fn solves_rosenbrock() {
        let rep = levenberg_marquardt(
            rosenbrock,
            &[-1.2, 1.0],
            &FREE,
            &FREE_HI,
            &LmOptions::default(),
        )
        .unwrap();
        assert!(rep.reason.converged());
        assert!((rep.x[0] - 1.0).abs() < 1e-6 && (rep.x[1] - 1.0).abs() < 1e-6);
        assert!(rep.cost_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(rep
            .lambda_history
            .iter()
            .all(|&l| (LAMBDA_MIN..=LAMBDA_MAX).contains(&l)));
    }

    #[test]
    fn exponential_fit_and_covariance() {
        let t: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| 2.5 * (-1.3 * t).exp()).collect();
        let f = |p: &[f64]| {
            Ok(t.iter()
                .zip(&y)
                .map(|(t, y)| p[0] * (-p[1] * t).exp() - y)
                .collect())
        };
        let rep =
            levenberg_marquardt(f, &[1.0, 0.5], &FREE, &FREE_HI, &LmOptions::default()).unwrap();
        assert!((rep.x[0] - 2.5).abs() < 1e-7 && (rep.x[1] - 1.3).abs() < 1e-7);
        let cov = rep.covariance().unwrap();
        assert!(cov[(0, 0)] >= 0.0 && cov[(0, 0)] < 1e-10);
    }

    #[test]
    fn linear_toy_converges_quickly() {
        let f = |x: &[f64]| {
            Ok(vec![
                x[0] - 1.0,
                2.0 * x[1] + 3.0,
                x[0] + x[2] - 0.5,
                0.5 * x[2],
            ])
        };
        let rep = levenberg_marquardt(
            f,
            &[0.0; 3],
            &[f64::NEG_INFINITY; 3],
            &[f64::INFINITY; 3],
            &LmOptions::default(),
        )
        .unwrap();
        assert!(rep.iterations <= 3, "{} iterations", rep.iterations);
        assert!((rep.x[1] + 1.5).abs() < 1e-7);
    }

    #[test]
    fn respects_bounds() {
        // Unconstrained minimum at x = 3; bound at 2 becomes active.
        let f = |x: &[f64]| Ok(vec![x[0] - 3.0, 0.1 * (x[1] + 1.0)]);
        let rep = levenberg_marquardt(
            f,
            &[0.0, 0.0],
            &[-5.0, 0.0],
            &[2.0, 5.0],
            &LmOptions::default(),
        )
        .unwrap();
        assert!(rep.reason.converged());
        assert_eq!(rep.x, vec![2.0, 0.0]);
    }

    #[test]
    fn residual_failures_are_rejected_steps() {
        let f = |x: &[f64]| {
            if x[0] > 1.5 {
                Err(Error::Domain("outside".into()))
            } else {
                Ok(vec![x[0] - 1.0])
            }
        };
        let rep = levenberg_marquardt(
            f,
            &[-10.0],
            &[f64::NEG_INFINITY],
            &[f64::INFINITY],
            &LmOptions::default(),
        )
        .unwrap();
        assert!((rep.x[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn bad_inputs() {
        let f = |x: &[f64]| Ok(vec![x[0]]);
        assert!(levenberg_marquardt(f, &[0.0], &[1.0], &[0.0], &LmOptions::default()).is_err());
        assert!(
            levenberg_marquardt(f, &[0.0, 1.0], &[0.0], &[1.0], &LmOptions::default()).is_err()
        );
        let g = |_: &[f64]| Ok(vec![f64::NAN]);
        assert!(levenberg_marquardt(g, &[0.0], &[-1.0], &[1.0], &LmOptions::default()).is_err());
    }
}
