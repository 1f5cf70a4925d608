//! Hyperbolic helpers that stay accurate for small arguments and do not
//! overflow for large ones.

/// Returns `(cosh(x) - 1, sinh(x) - x)` with full relative precision for
/// small `|x|`.
pub fn coshm_sinhm(x: f64) -> (f64, f64) {
    let half = (0.5 * x).sinh();
    let coshm = 2.0 * half * half;
    let ax = x.abs();
    let sinhm = if ax < 1.0 {
        // odd Taylor tail x^3/3! + x^5/5! + ...
        let x2 = x * x;
        let mut term = x * x2 / 6.0;
        let mut sum = term;
        let mut k = 3.0;
        while term.abs() > 1e-18 * sum.abs() {
            term *= x2 / ((2.0 * k - 2.0) * (2.0 * k - 1.0));
            sum += term;
            k += 1.0;
            if k > 30.0 {
                break;
            }
        }
        sum
    } else {
        x.sinh() - x
    };
    (coshm, sinhm)
}

/// Ratio `sinh/cosh` kept strictly inside `(-1, 1)`: when it rounds to
/// `±1` (or within `eps` of it) it is replaced by `±(1 - eps)`.
pub fn stabilize_ratio(sinh: f64, cosh: f64, eps: f64) -> f64 {
    let ratio = sinh / cosh;
    if ratio.abs() > 1.0 - eps {
        ratio.signum() * (1.0 - eps)
    } else {
        ratio
    }
}

/// `sinh(a) / sinh(b)` for `|a| <= |b|`, `b != 0` and `a` of the same sign
/// as `b` (or zero). Safe for arguments beyond the `sinh` overflow limit.
pub fn sinh_ratio(a: f64, b: f64) -> f64 {
    let (aa, bb) = (a.abs(), b.abs());
    if bb < 20.0 {
        aa.sinh() / bb.sinh()
    } else {
        (aa - bb).exp() * (-(-2.0 * aa).exp_m1()) / (-(-2.0 * bb).exp_m1())
    }
}

/// `cosh(a) / sinh(b)` for `|a| <= |b|`, `b != 0`.
pub fn cosh_sinh_ratio(a: f64, b: f64) -> f64 {
    let (aa, bb) = (a.abs(), b.abs());
    let magnitude = if bb < 20.0 {
        aa.cosh() / bb.sinh()
    } else {
        (aa - bb).exp() * (1.0 + (-2.0 * aa).exp()) / (-(-2.0 * bb).exp_m1())
    };
    magnitude.copysign(b)
}

/// `(cosh(u), sinh(u))` scaled by `exp(-|u|)`, together with `|u|`.
pub fn scaled_cosh_sinh(u: f64) -> (f64, f64, f64) {
    let au = u.abs();
    let e2 = (-2.0 * au).exp();
    let ch = 0.5 * (1.0 + e2);
    let sh = (-0.5 * (-2.0 * au).exp_m1()).copysign(u);
    (ch, sh, au)
}
