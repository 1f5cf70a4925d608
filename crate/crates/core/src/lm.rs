//! Box-constrained Levenberg-Marquardt with a forward-difference Jacobian.
//!
//! Lower bounds are enforced by the substitution `x = lower + p^2`, upper
//! bounds by projecting trial points back onto the box.

use crate::error::{LlvgError, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Stop once the root-mean-square residual is at or below this.
    pub residual_tolerance: f64,
    /// Stop once a step changes `p` by less than this, relative to `|p|`.
    pub step_tolerance: f64,
    /// Stop once the largest gradient component is at or below this.
    pub gradient_tolerance: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            residual_tolerance: 0.0,
            step_tolerance: 1e-8,
            gradient_tolerance: 1e-30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    ResidualTolerance,
    StepTolerance,
    GradientTolerance,
    /// Neither actual nor predicted reduction is measurable any more.
    Stationary,
    MaxIterations,
}

impl StopReason {
    pub fn converged(self) -> bool {
        self != StopReason::MaxIterations
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    /// Best point found.
    pub x: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Half the squared residual norm at `x`.
    pub cost: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub reason: StopReason,
}

impl LmResult {
    pub fn converged(&self) -> bool {
        self.reason.converged()
    }

    pub fn rms(&self) -> f64 {
        rms(&self.residuals)
    }
}

fn rms(r: &[f64]) -> f64 {
    if r.is_empty() {
        0.0
    } else {
        (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt()
    }
}

fn cost_of(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

struct Transform<'a> {
    lower: &'a [f64],
    upper: &'a [f64],
}

impl Transform<'_> {
    fn to_x(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(self.lower.iter().zip(self.upper))
            .map(|(&p, (&lo, &hi))| (lo + p * p).min(hi))
            .collect()
    }

    /// Projects `p` so that `x` stays below the upper bound.
    fn project(&self, p: &mut [f64]) {
        for (p, (&lo, &hi)) in p.iter_mut().zip(self.lower.iter().zip(self.upper)) {
            let cap = (hi - lo).sqrt();
            if p.abs() > cap {
                *p = cap.copysign(*p);
            }
        }
    }
}

/// Minimizes `1/2 |f(x)|^2` subject to `lower <= x <= upper`.
///
/// Evaluation errors at trial points count as rejected steps. Only the
/// starting point must evaluate successfully. The returned point is always
/// the best one seen; non-convergence is reported through `reason`.
pub fn levenberg_marquardt<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], cfg: &LmConfig) -> Result<LmResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(LlvgError::InvalidInput(
            "bounds must match the number of parameters".into(),
        ));
    }
    if lower.iter().zip(upper).any(|(lo, hi)| !(lo < hi)) {
        return Err(LlvgError::InvalidInput(
            "each lower bound must be below its upper bound".into(),
        ));
    }
    let tr = Transform { lower, upper };
    let mut p: Vec<f64> = x0
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(&x, (&lo, &hi))| (x.clamp(lo, hi) - lo).max(0.0).sqrt())
        .collect();
    // a parameter sitting exactly on its lower bound has a zero derivative
    // in p; nudge it inside
    for (pi, (&lo, &hi)) in p.iter_mut().zip(lower.iter().zip(upper)) {
        if *pi == 0.0 {
            *pi = (1e-8 * (hi - lo)).sqrt();
        }
    }
    let mut x = tr.to_x(&p);
    let mut r = f(&x)?;
    let mut evaluations = 1;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(LlvgError::Calibration(
            "non-finite residuals at the starting point".into(),
        ));
    }
    let mut cost = cost_of(&r);
    let m = r.len();
    let mut mu = 0.0;
    let mut nu = 2.0;
    let mut diag = DVector::<f64>::zeros(n);
    let mut iterations = 0;

    let finish = |x: Vec<f64>, r: Vec<f64>, cost, iterations, evaluations, reason| {
        Ok(LmResult {
            x,
            residuals: r,
            cost,
            iterations,
            evaluations,
            reason,
        })
    };

    loop {
        if rms(&r) <= cfg.residual_tolerance {
            return finish(x, r, cost, iterations, evaluations, StopReason::ResidualTolerance);
        }
        if iterations >= cfg.max_iterations {
            return finish(x, r, cost, iterations, evaluations, StopReason::MaxIterations);
        }
        iterations += 1;

        let mut jac = DMatrix::<f64>::zeros(m, n);
        for j in 0..n {
            let h = f64::EPSILON.sqrt() * p[j].abs().max(1e-4);
            let mut pj = p.clone();
            pj[j] += h;
            tr.project(&mut pj);
            let mut step = pj[j] - p[j];
            if step == 0.0 {
                pj[j] = p[j] - h;
                step = -h;
            }
            evaluations += 1;
            let rj = match f(&tr.to_x(&pj)) {
                Ok(rj) => rj,
                Err(_) => {
                    pj[j] = p[j] - h;
                    step = -h;
                    evaluations += 1;
                    f(&tr.to_x(&pj))?
                }
            };
            for i in 0..m {
                jac[(i, j)] = (rj[i] - r[i]) / step;
            }
        }
        let rv = DVector::from_column_slice(&r);
        let grad = jac.transpose() * &rv;
        if grad.amax() <= cfg.gradient_tolerance {
            return finish(x, r, cost, iterations, evaluations, StopReason::GradientTolerance);
        }
        let jtj = jac.transpose() * &jac;
        for j in 0..n {
            diag[j] = diag[j].max(jtj[(j, j)]).max(1e-300);
        }
        if mu == 0.0 {
            mu = 1e-3 * (0..n).map(|j| jtj[(j, j)]).fold(0.0, f64::max).max(1e-300) / diag.amax();
        }

        loop {
            let mut lhs = jtj.clone();
            for j in 0..n {
                lhs[(j, j)] += mu * diag[j];
            }
            let delta = match lhs.cholesky() {
                Some(ch) => -ch.solve(&grad),
                None => {
                    mu *= nu;
                    nu *= 2.0;
                    if !mu.is_finite() {
                        return finish(x, r, cost, iterations, evaluations, StopReason::Stationary);
                    }
                    continue;
                }
            };
            let mut trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            tr.project(&mut trial);
            let taken = DVector::from_iterator(n, trial.iter().zip(&p).map(|(a, b)| a - b));
            let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            let small_step = taken.norm() <= cfg.step_tolerance * (p_norm + cfg.step_tolerance);

            let predicted = -(grad.dot(&taken)) - 0.5 * taken.dot(&(&jtj * &taken));
            let x_trial = tr.to_x(&trial);
            let outcome = f(&x_trial);
            evaluations += 1;
            let accepted = match outcome {
                Ok(r_trial) if r_trial.iter().all(|v| v.is_finite()) => {
                    let c_trial = cost_of(&r_trial);
                    if c_trial < cost {
                        let actual = cost - c_trial;
                        let rho = if predicted > 0.0 { actual / predicted } else { 1.0 };
                        mu *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                        nu = 2.0;
                        let stationary = actual <= 1e-16 * cost && predicted.abs() <= 1e-16 * cost;
                        p = trial;
                        x = x_trial;
                        r = r_trial;
                        cost = c_trial;
                        if small_step {
                            return finish(x, r, cost, iterations, evaluations, StopReason::StepTolerance);
                        }
                        if stationary {
                            return finish(x, r, cost, iterations, evaluations, StopReason::Stationary);
                        }
                        true
                    } else {
                        false
                    }
                }
                _ => false,
            };
            if accepted {
                break;
            }
            if small_step {
                return finish(x, r, cost, iterations, evaluations, StopReason::StepTolerance);
            }
            mu *= nu;
            nu *= 2.0;
            if !mu.is_finite() || mu > 1e300 {
                return finish(x, r, cost, iterations, evaluations, StopReason::Stationary);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unbounded(n: usize) -> (Vec<f64>, Vec<f64>) {
        (vec![-100.0; n], vec![100.0; n])
    }

    #[test]
    fn linear_residual_in_few_iterations() {
        let (lo, hi) = unbounded(1);
        let res = levenberg_marquardt(|x| Ok(vec![x[0] - 3.0]), &[0.0], &lo, &hi, &LmConfig::default()).unwrap();
        assert!((res.x[0] - 3.0).abs() < 1e-10);
        assert!(res.iterations <= 3 || res.rms() < 1e-12);
        assert!(res.converged());
    }

    #[test]
    fn rosenbrock() {
        let (lo, hi) = unbounded(2);
        let cfg = LmConfig {
            max_iterations: 500,
            step_tolerance: 1e-14,
            ..LmConfig::default()
        };
        let res = levenberg_marquardt(
            |x| Ok(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]),
            &[-1.2, 1.0],
            &lo,
            &hi,
            &cfg,
        )
        .unwrap();
        assert!(
            (res.x[0] - 1.0).abs() < 1e-8 && (res.x[1] - 1.0).abs() < 1e-8,
            "{:?}",
            res.x
        );
    }

    #[test]
    fn bounds_are_honoured() {
        // unconstrained optimum at -2 and 5, box [0, 4]^2
        let res = levenberg_marquardt(
            |x| Ok(vec![x[0] + 2.0, x[1] - 5.0]),
            &[1.0, 1.0],
            &[0.0, 0.0],
            &[4.0, 4.0],
            &LmConfig::default(),
        )
        .unwrap();
        assert!(res.x[0] >= 0.0 && res.x[0] < 1e-3, "{:?}", res.x);
        assert!(res.x[1] <= 4.0 && res.x[1] > 4.0 - 1e-9);
    }

    #[test]
    fn objective_never_increases_and_best_point_kept() {
        let (lo, hi) = unbounded(2);
        let mut seen = Vec::new();
        let cfg = LmConfig {
            max_iterations: 3,
            ..LmConfig::default()
        };
        let res = levenberg_marquardt(
            |x| {
                let r = vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]];
                seen.push(cost_of(&r));
                Ok(r)
            },
            &[-1.2, 1.0],
            &lo,
            &hi,
            &cfg,
        )
        .unwrap();
        assert_eq!(res.reason, StopReason::MaxIterations);
        assert!(!res.converged());
        let best = seen.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(res.cost <= seen[0]);
        assert!(res.cost >= best);
    }

    #[test]
    fn failing_trial_points_are_rejected() {
        let (lo, hi) = unbounded(1);
        let res = levenberg_marquardt(
            |x| {
                if x[0] > 2.5 {
                    Err(LlvgError::Domain("too far".into()))
                } else {
                    Ok(vec![x[0] - 2.0, 0.1 * (x[0] - 10.0)])
                }
            },
            &[0.0],
            &lo,
            &hi,
            &LmConfig::default(),
        )
        .unwrap();
        assert!(res.x[0] <= 2.5);
        assert!(res.converged());
    }

    #[test]
    fn starting_point_error_propagates() {
        let (lo, hi) = unbounded(1);
        let out = levenberg_marquardt(
            |_| Err(LlvgError::Domain("bad".into())),
            &[0.0],
            &lo,
            &hi,
            &LmConfig::default(),
        );
        assert!(out.is_err());
    }
}
