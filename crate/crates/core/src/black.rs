//! Black-76 pricing on the forward, Vega, and implied-volatility inversion.
//!
//! Prices are undiscounted. Out-of-the-money prices are always computed
//! directly and in-the-money prices recovered through put-call parity, so
//! that tail prices keep their relative accuracy.

use crate::error::{LlvgError, Result};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal cumulative distribution, via `erfc` so that the lower
/// tail keeps full relative precision.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlackInputs {
    pub forward: f64,
    pub strike: f64,
    /// Volatility per square-root year.
    pub vol: f64,
    /// Year fraction.
    pub tau: f64,
    pub is_call: bool,
}

impl BlackInputs {
    pub fn new(forward: f64, strike: f64, vol: f64, tau: f64, is_call: bool) -> Self {
        Self {
            forward,
            strike,
            vol,
            tau,
            is_call,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.forward > 0.0 && self.forward.is_finite()) {
            return Err(LlvgError::Domain(format!(
                "forward must be positive, got {}",
                self.forward
            )));
        }
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(LlvgError::Domain(format!(
                "strike must be positive, got {}",
                self.strike
            )));
        }
        if !(self.vol >= 0.0) || !(self.tau >= 0.0) {
            return Err(LlvgError::Domain(format!(
                "vol and tau must be nonnegative, got vol={} tau={}",
                self.vol, self.tau
            )));
        }
        Ok(())
    }

    fn total_std(&self) -> f64 {
        self.vol * self.tau.sqrt()
    }
}

/// Price of the out-of-the-money option (call if `strike >= forward`, put
/// otherwise) as a function of the total standard deviation `s = vol*sqrt(tau)`.
pub fn otm_price(forward: f64, strike: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let d1 = (forward / strike).ln() / s + 0.5 * s;
    let d2 = d1 - s;
    let price = if strike >= forward {
        forward * norm_cdf(d1) - strike * norm_cdf(d2)
    } else {
        strike * norm_cdf(-d2) - forward * norm_cdf(-d1)
    };
    price.max(0.0)
}

/// Undiscounted Black price.
pub fn black_price(inp: &BlackInputs) -> Result<f64> {
    inp.validate()?;
    let otm = otm_price(inp.forward, inp.strike, inp.total_std());
    let call_is_otm = inp.strike >= inp.forward;
    Ok(match (inp.is_call, call_is_otm) {
        (true, true) | (false, false) => otm,
        (true, false) => otm + (inp.forward - inp.strike),
        (false, true) => otm + (inp.strike - inp.forward),
    })
}

/// Derivative of the Black price with respect to volatility. Zero when the
/// option has no time value left (`tau = 0` or `vol = 0`).
pub fn black_vega(inp: &BlackInputs) -> Result<f64> {
    inp.validate()?;
    let s = inp.total_std();
    if s <= 0.0 {
        return Ok(0.0);
    }
    let d1 = (inp.forward / inp.strike).ln() / s + 0.5 * s;
    Ok(inp.forward * norm_pdf(d1) * inp.tau.sqrt())
}

/// Implied Black volatility of an undiscounted option price.
///
/// Works on the out-of-the-money equivalent price and solves
/// `ln otm(s) = ln price` for the total standard deviation `s` with a
/// bracketed Halley iteration, falling back to bisection whenever the step
/// leaves the bracket.
pub fn implied_vol(price: f64, forward: f64, strike: f64, tau: f64, is_call: bool) -> Result<f64> {
    BlackInputs::new(forward, strike, 0.0, tau, is_call).validate()?;
    if !(tau > 0.0) {
        return Err(LlvgError::Domain("tau must be positive for implied volatility".into()));
    }
    let call_is_otm = strike >= forward;
    let otm = match (is_call, call_is_otm) {
        (true, true) | (false, false) => price,
        (true, false) => price - (forward - strike),
        (false, true) => price - (strike - forward),
    };
    let upper = forward.min(strike);
    // an in-the-money price within rounding of its intrinsic value has no
    // recoverable time value
    let noise = if otm == price { 0.0 } else { 2.0 * f64::EPSILON * price };
    if !(otm > noise && otm < upper) || !price.is_finite() {
        let intrinsic = if is_call {
            (forward - strike).max(0.0)
        } else {
            (strike - forward).max(0.0)
        };
        return Err(LlvgError::NoImpliedVol {
            price,
            lower: intrinsic,
            upper: intrinsic + upper,
        });
    }
    let s = implied_total_std(otm, forward, strike)?;
    Ok(s / tau.sqrt())
}

fn implied_total_std(otm: f64, forward: f64, strike: f64) -> Result<f64> {
    let x = (forward / strike).ln();
    let target = otm.ln();
    let mut lo = 0.0_f64;
    let mut hi = f64::INFINITY;
    let mut s = if x.abs() < 1e-8 {
        (2.0 * PI).sqrt() * otm / forward
    } else {
        (2.0 * x.abs()).sqrt()
    };
    for _ in 0..200 {
        let d1 = x / s + 0.5 * s;
        let d2 = d1 - s;
        let p = otm_price(forward, strike, s);
        if p <= 0.0 {
            // underflow: the root lies above s
            lo = s;
            s = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * s };
            continue;
        }
        let g = p.ln() - target;
        if g == 0.0 {
            return Ok(s);
        }
        if g < 0.0 {
            lo = lo.max(s);
        } else {
            hi = hi.min(s);
        }
        let vega = forward * norm_pdf(d1);
        let g1 = vega / p;
        let g2 = vega * d1 * d2 / (s * p) - g1 * g1;
        let newton = -g / g1;
        let halley_den = 1.0 - 0.5 * newton * g2 / g1;
        let step = if halley_den > 0.5 && halley_den.is_finite() {
            newton / halley_den
        } else {
            newton
        };
        let mut next = s + step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                2.0 * s.max(lo)
            };
        }
        if (next - s).abs() <= 2.0 * f64::EPSILON * s {
            return Ok(next);
        }
        if hi.is_finite() && hi - lo <= 2.0 * f64::EPSILON * hi {
            return Ok(0.5 * (lo + hi));
        }
        s = next;
    }
    Ok(s)
}
