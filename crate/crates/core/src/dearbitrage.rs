//! Detection of butterfly and bound violations in call prices, and their
//! removal by projecting onto the arbitrage-free set with a quadratic
//! program.

use crate::black::implied_vol;
use crate::calibration::QuoteSlice;
use crate::error::{LlvgError, Result};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    SlopeBelowMinusOne,
    SlopeAboveZero,
    NonConvex,
    BelowIntrinsic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Strike index: the first strike of the offending slope for slope
    /// checks, the middle strike for convexity, the strike itself for the
    /// intrinsic bound.
    pub index: usize,
    /// How far the condition is missed.
    pub magnitude: f64,
}

/// Lists the strikes where undiscounted call prices fail to be decreasing
/// with slope in `(-1, 0)`, convex, or above intrinsic value, each with the
/// given margin (zero for the weak conditions).
pub fn detect_arbitrage(strikes: &[f64], calls: &[f64], forward: f64, margin: f64) -> Vec<Violation> {
    let m = strikes.len();
    let mut out = Vec::new();
    let slopes: Vec<f64> = (0..m.saturating_sub(1))
        .map(|i| (calls[i + 1] - calls[i]) / (strikes[i + 1] - strikes[i]))
        .collect();
    for (i, &s) in slopes.iter().enumerate() {
        if s < -1.0 + margin {
            out.push(Violation {
                kind: ViolationKind::SlopeBelowMinusOne,
                index: i,
                magnitude: -1.0 + margin - s,
            });
        }
        if s > -margin {
            out.push(Violation {
                kind: ViolationKind::SlopeAboveZero,
                index: i,
                magnitude: s + margin,
            });
        }
    }
    for i in 1..slopes.len() {
        let d = slopes[i] - slopes[i - 1];
        if d < margin {
            out.push(Violation {
                kind: ViolationKind::NonConvex,
                index: i,
                magnitude: margin - d,
            });
        }
    }
    for i in 0..m {
        let floor = (forward - strikes[i]).max(0.0) + margin;
        if calls[i] < floor {
            out.push(Violation {
                kind: ViolationKind::BelowIntrinsic,
                index: i,
                magnitude: floor - calls[i],
            });
        }
    }
    out
}

/// `min 1/2 z'Qz + q'z` subject to `Gz <= h`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub q_mat: DMatrix<f64>,
    pub q_vec: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

/// The projection of call prices `c` at strikes `y` onto prices that are
/// strictly convex, with slopes in `(-1 + eps, -eps)` and at least `eps`
/// above intrinsic value, in the norm weighted by `w`.
pub fn build_qp(strikes: &[f64], calls: &[f64], forward: f64, weights: &[f64], epsilon: f64) -> Result<QpProblem> {
    let m = strikes.len();
    if m < 3 {
        return Err(LlvgError::InvalidInput("at least 3 strikes are needed".into()));
    }
    if calls.len() != m || weights.len() != m {
        return Err(LlvgError::InvalidInput(
            "one price and one weight per strike required".into(),
        ));
    }
    if strikes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LlvgError::InvalidInput("strikes must be strictly increasing".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(LlvgError::InvalidInput("weights must be non-negative".into()));
    }
    let w2: Vec<f64> = weights.iter().map(|w| w * w).collect();
    let q_mat = DMatrix::from_diagonal(&DVector::from_vec(w2.clone()));
    let q_vec = DVector::from_iterator(m, w2.iter().zip(calls).map(|(w, c)| -w * c));
    let mut g = DMatrix::zeros(2 * m, m);
    let mut h = DVector::zeros(2 * m);
    let inv_h = |i: usize| 1.0 / (strikes[i + 1] - strikes[i]);
    g[(0, 0)] = inv_h(0);
    g[(0, 1)] = -inv_h(0);
    h[0] = 1.0 - epsilon;
    for i in 1..m - 1 {
        g[(i, i - 1)] = -inv_h(i - 1);
        g[(i, i)] = inv_h(i - 1) + inv_h(i);
        g[(i, i + 1)] = -inv_h(i);
        h[i] = -epsilon;
    }
    g[(m - 1, m - 2)] = -inv_h(m - 2);
    g[(m - 1, m - 1)] = inv_h(m - 2);
    h[m - 1] = -epsilon;
    for i in 0..m {
        g[(m + i, i)] = -1.0;
        h[m + i] = -(forward - strikes[i]).max(0.0) - epsilon;
    }
    Ok(QpProblem { q_mat, q_vec, g, h })
}

/// Solves a strictly convex QP with the dual active-set method of
/// Goldfarb and Idnani.
pub fn solve_qp(p: &QpProblem) -> Result<Vec<f64>> {
    let n = p.q_vec.len();
    let rows = p.g.nrows();
    let mut qmat: Vec<f64> = (0..n * n).map(|k| p.q_mat[(k / n, k % n)]).collect();
    let amat: Vec<f64> = (0..rows * n).map(|k| p.g[(k / n, k % n)]).collect();
    match quadprog::solve_qp(&mut qmat, p.q_vec.as_slice(), &amat, p.h.as_slice(), 0, false) {
        Ok(sol) => Ok(sol.sol),
        Err(quadprog::Error::Infeasible) => {
            // report the constraint most violated by the unconstrained minimizer
            let free = p
                .q_mat
                .clone()
                .cholesky()
                .map(|c| -c.solve(&p.q_vec))
                .unwrap_or_else(|| DVector::zeros(n));
            let slack = &p.g * &free - &p.h;
            let (worst, value) =
                slack.iter().enumerate().fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
                );
            Err(LlvgError::Infeasible(format!(
                "no point satisfies all constraints; constraint {worst} is violated by {value:e} at the unconstrained optimum"
            )))
        }
        Err(quadprog::Error::NotPositiveDefinite) => Err(LlvgError::InvalidInput(
            "quadratic term is not positive definite".into(),
        )),
        Err(e) => Err(LlvgError::InvalidInput(e.to_string())),
    }
}

#[derive(Debug, Clone)]
pub struct Dearbitraged {
    pub quotes: QuoteSlice,
    /// Violations found in the input at zero margin.
    pub violations: Vec<Violation>,
    /// Call prices before and after projection.
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

/// Default slope margin relative to the forward.
pub const DEFAULT_EPSILON: f64 = 1e-10;

/// Projects quotes onto the closest arbitrage-free call prices and converts
/// them back to implied volatilities. `epsilon` defaults to `1e-10` times
/// the forward and the weights to one.
///
/// Zero weights would make the problem only semi-definite; they are raised
/// to `1e-8` of the largest weight.
pub fn dearbitrage(quotes: &QuoteSlice, epsilon: Option<f64>, weights: Option<&[f64]>) -> Result<Dearbitraged> {
    quotes.validate()?;
    let m = quotes.len();
    let eps = epsilon.unwrap_or(DEFAULT_EPSILON * quotes.forward);
    let raw: Vec<f64> = weights.map_or_else(|| vec![1.0; m], |w| w.to_vec());
    let top = raw.iter().cloned().fold(0.0, f64::max);
    if !(top > 0.0) {
        return Err(LlvgError::InvalidInput("at least one weight must be positive".into()));
    }
    let w: Vec<f64> = raw.iter().map(|&v| v.max(1e-8 * top)).collect();
    let before: Vec<f64> = (0..m).map(|i| quotes.call_price(i)).collect();
    let violations = detect_arbitrage(&quotes.strikes, &before, quotes.forward, 0.0);
    let problem = build_qp(&quotes.strikes, &before, quotes.forward, &w, eps)?;
    let after = solve_qp(&problem)?;
    let vols = quotes
        .strikes
        .iter()
        .zip(&after)
        .map(|(&k, &c)| implied_vol(c, quotes.forward, k, quotes.tau, true))
        .collect::<Result<Vec<_>>>()?;
    let cleaned = QuoteSlice {
        strikes: quotes.strikes.clone(),
        vols,
        prices: Some(after.clone()),
        mu: quotes.mu.clone(),
        forward: quotes.forward,
        tau: quotes.tau,
    };
    Ok(Dearbitraged {
        quotes: cleaned,
        violations,
        before,
        after,
    })
}
