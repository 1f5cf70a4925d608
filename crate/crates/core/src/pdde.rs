//! Closed-form solution of Dupire's forward difference-differential equation
//! when the local variance function is continuous and piecewise linear.
//!
//! On each interval `[x_i, x_{i+1}]` the out-of-the-money value solves
//! `V = 1/2 a(x)^2 T V''`, whose solution is a hyperbolic combination in the
//! transformed variable `z_i(x)`. The interval coefficients are obtained by
//! sweeping continuity conditions inward from both absorbing boundaries and
//! rescaling the two families so that `V'` drops by one at the forward.

use crate::error::{LlvgError, Result};
use crate::hyperbolic::{cosh_sinh_ratio, coshm_sinhm, scaled_cosh_sinh, sinh_ratio, stabilize_ratio};
use crate::surface::PriorPriceCurve;
use serde::{Deserialize, Serialize};

/// Relative slope below which a segment is handled as constant.
const CONSTANT_SEGMENT_TOL: f64 = 1e-12;

pub const DEFAULT_RATIO_EPS: f64 = 1e-12;

/// Knots `x_0 = L < x_1 < ... < x_{m+1} = U` and node values of the local
/// variance function `a`, with `x_s` the forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalVarianceGrid {
    pub knots: Vec<f64>,
    pub alphas: Vec<f64>,
    pub s: usize,
}

impl LocalVarianceGrid {
    pub fn new(knots: Vec<f64>, alphas: Vec<f64>, s: usize) -> Result<Self> {
        let grid = Self { knots, alphas, s };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.knots.len();
        if n < 3 || self.alphas.len() != n {
            return Err(LlvgError::InvalidInput(format!(
                "grid needs at least 3 knots and one alpha per knot (knots={}, alphas={})",
                n,
                self.alphas.len()
            )));
        }
        if self.knots.iter().any(|x| !x.is_finite()) || self.knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LlvgError::InvalidInput(
                "knots must be finite and strictly increasing".into(),
            ));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(LlvgError::Domain(format!(
                "local variance values must be positive, got {a}"
            )));
        }
        if self.s < 1 || self.s > n - 2 {
            return Err(LlvgError::InvalidInput(format!(
                "forward index {} must be interior",
                self.s
            )));
        }
        Ok(())
    }

    /// Number of interior knots.
    pub fn m(&self) -> usize {
        self.knots.len() - 2
    }

    pub fn lower(&self) -> f64 {
        self.knots[0]
    }

    pub fn upper(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn forward(&self) -> f64 {
        self.knots[self.s]
    }

    /// Index `i` of the interval `[x_i, x_{i+1}]` containing `x`.
    pub fn interval_index(&self, x: f64) -> Option<usize> {
        if !(x >= self.lower() && x <= self.upper()) {
            return None;
        }
        let i = self.knots.partition_point(|&k| k <= x);
        Some((i.max(1) - 1).min(self.m()))
    }

    /// The piecewise-linear local variance function.
    pub fn a(&self, x: f64) -> Option<f64> {
        let i = self.interval_index(x)?;
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let (a0, a1) = (self.alphas[i], self.alphas[i + 1]);
        Some(a0 + (a1 - a0) * (x - x0) / (x1 - x0))
    }
}

/// Per-interval solution coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalCoefficients {
    pub theta_c: f64,
    pub theta_s: f64,
    pub omega: f64,
    pub kappa: f64,
    /// Slope of `a` on the interval, zero on constant segments.
    pub q: f64,
    /// Intercept of `a` on the interval.
    pub r: f64,
}

/// Transformed-variable quantities at a point of an interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Basis {
    pub chi: f64,
    /// `z(x) - z(x_i)`
    pub dz: f64,
    /// `z'(x)`
    pub dz_dx: f64,
}

/// Evaluates `chi`, `z(x) - z(x_i)` and `z'(x)` for the interval starting at
/// `x_i`. `a(x) = q x + r` must stay positive between `x_i` and `x`.
pub fn eval_interval_basis(coeff: &IntervalCoefficients, x_i: f64, x: f64) -> Result<Basis> {
    if coeff.kappa == 0.0 {
        return Ok(Basis {
            chi: 1.0,
            dz: x - x_i,
            dz_dx: 1.0,
        });
    }
    let a_i = coeff.q * x_i + coeff.r;
    let a_x = coeff.q * x + coeff.r;
    if !(a_i > 0.0 && a_x > 0.0) {
        return Err(LlvgError::Domain(format!(
            "local variance not positive on interval (a({x_i})={a_i}, a({x})={a_x})"
        )));
    }
    let step = coeff.q * (x - x_i) / a_i;
    Ok(Basis {
        chi: (1.0 + step).sqrt(),
        dz: step.ln_1p(),
        dz_dx: coeff.q / a_x,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Side {
    Left,
    Right,
}

/// Geometry of one interval, fixed by the grid and the time step.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Segment {
    pub x0: f64,
    pub a0: f64,
    pub q: f64,
    pub omega: f64,
    pub kappa: f64,
    /// `z(x_{i+1}) - z(x_i)`
    pub z_len: f64,
    pub chi1: f64,
    pub dz0: f64,
    pub dz1: f64,
    pub linear: bool,
}

impl Segment {
    pub fn new(x0: f64, x1: f64, a0: f64, a1: f64, tau: f64) -> Result<Self> {
        if !(a0 > 0.0 && a1 > 0.0) {
            return Err(LlvgError::Domain(format!(
                "local variance must be positive, got {a0}, {a1}"
            )));
        }
        let h = x1 - x0;
        if (a1 - a0).abs() < CONSTANT_SEGMENT_TOL * a0 {
            return Ok(Self {
                x0,
                a0,
                q: 0.0,
                omega: (2.0 / tau).sqrt() / a0,
                kappa: 0.0,
                z_len: h,
                chi1: 1.0,
                dz0: 1.0,
                dz1: 1.0,
                linear: false,
            });
        }
        let q = (a1 - a0) / h;
        Ok(Self {
            x0,
            a0,
            q,
            omega: 0.5 * (1.0 + 8.0 / (q * q * tau)).sqrt(),
            kappa: 0.5,
            z_len: ((a1 - a0) / a0).ln_1p(),
            chi1: (a1 / a0).sqrt(),
            dz0: q / a0,
            dz1: q / a1,
            linear: true,
        })
    }

    fn coefficients(&self, theta_c: f64, theta_s: f64) -> IntervalCoefficients {
        IntervalCoefficients {
            theta_c,
            theta_s,
            omega: self.omega,
            kappa: self.kappa,
            q: self.q,
            r: if self.linear {
                self.a0 - self.q * self.x0
            } else {
                self.a0
            },
        }
    }

    pub fn basis(&self, x: f64) -> Basis {
        if !self.linear {
            return Basis {
                chi: 1.0,
                dz: x - self.x0,
                dz_dx: 1.0,
            };
        }
        let step = self.q * (x - self.x0) / self.a0;
        Basis {
            chi: (1.0 + step).sqrt(),
            dz: step.ln_1p(),
            dz_dx: self.q / (self.a0 + self.q * (x - self.x0)),
        }
    }

    /// Value and left derivative at `x_{i+1}` of the solution with
    /// coefficients `(c, s)`, both scaled by `exp(-log)`.
    pub fn transfer(&self, c: f64, s: f64) -> (f64, f64, f64) {
        let (ch, sh, log) = scaled_cosh_sinh(self.omega * self.z_len);
        let (k, w) = (self.kappa, self.omega);
        let v = self.chi1 * (c * ch + s * sh);
        let d = self.chi1 * self.dz1 * ((k * c + w * s) * ch + (k * s + w * c) * sh);
        (v, d, log)
    }

    /// Coefficients `(c, s)` reproducing value `v` and left derivative `d`
    /// at `x_{i+1}`, scaled by `exp(-log)`.
    pub fn inverse_transfer(&self, v: f64, d: f64) -> (f64, f64, f64) {
        let (ch, sh, log) = scaled_cosh_sinh(self.omega * self.z_len);
        let v = v / self.chi1;
        let d = d / (self.chi1 * self.dz1);
        let g = (d - self.kappa * v) / self.omega;
        (ch * v - sh * g, ch * g - sh * v, log)
    }

    /// Coefficients from the value and right derivative at `x_i`.
    pub fn theta_from_left(&self, v: f64, d: f64) -> (f64, f64) {
        (v, (d / self.dz0 - self.kappa * v) / self.omega)
    }

    /// Right derivative at `x_i` of the solution with coefficients `(c, s)`.
    pub fn left_derivative(&self, c: f64, s: f64) -> f64 {
        self.dz0 * (self.kappa * c + self.omega * s)
    }

    /// Value and derivative at `x` of the solution with end values `vl`
    /// at `x_i` and `vr` at `x_{i+1}`.
    pub fn eval_two_point(&self, vl: f64, vr: f64, x: f64) -> (f64, f64) {
        let b = self.basis(x);
        let (w, k) = (self.omega, self.kappa);
        let u = w * self.z_len;
        let a = (w * (self.z_len - b.dz)).clamp(u.min(0.0), u.max(0.0));
        let c = (w * b.dz).clamp(u.min(0.0), u.max(0.0));
        let right = vr / self.chi1;
        let (t1, t2) = (sinh_ratio(a, u), sinh_ratio(c, u));
        let value = b.chi * (vl * t1 + right * t2);
        let deriv = b.chi
            * b.dz_dx
            * (vl * (k * t1 - w * cosh_sinh_ratio(a, u)) + right * (k * t2 + w * cosh_sinh_ratio(c, u)));
        (value, deriv)
    }
}

/// Family of coefficients from one sweep, each stored as `(c, s)` times
/// `exp(log)`.
#[derive(Debug, Clone, Copy)]
struct Scaled {
    c: f64,
    s: f64,
    log: f64,
}

impl Scaled {
    fn normalized(c: f64, s: f64, log: f64) -> Self {
        let n = c.abs().max(s.abs());
        if n > 0.0 && n.is_finite() {
            Self {
                c: c / n,
                s: s / n,
                log: log + n.ln(),
            }
        } else {
            Self { c, s, log }
        }
    }
}

pub(crate) fn build_segments(grid: &LocalVarianceGrid, tau: f64) -> Result<Vec<Segment>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(LlvgError::Domain(format!("time step must be positive, got {tau}")));
    }
    (0..=grid.m())
        .map(|i| {
            Segment::new(
                grid.knots[i],
                grid.knots[i + 1],
                grid.alphas[i],
                grid.alphas[i + 1],
                tau,
            )
        })
        .collect()
}

fn boundary_start(seg: &Segment, eps: f64) -> Scaled {
    let (ch, sh, _) = scaled_cosh_sinh(seg.omega * seg.z_len);
    Scaled {
        c: -stabilize_ratio(sh, ch, eps),
        s: 1.0,
        log: 0.0,
    }
}

/// Rescales the left family (intervals `0..s`) and the right family
/// (intervals `s..=m`) so that `V` is continuous at `x_s` and `V'` drops by
/// one there.
fn match_families(segs: &[Segment], left: &[Scaled], right: &[Scaled]) -> Result<Vec<(f64, f64)>> {
    let s = left.len();
    let last = left[s - 1];
    let (va, da, extra) = segs[s - 1].transfer(last.c, last.s);
    let la = last.log + extra;
    let first = right[0];
    let vb = first.c;
    let db = segs[s].left_derivative(first.c, first.s);
    let lb = first.log;
    if va == 0.0 || !va.is_finite() {
        return Err(LlvgError::Singular("left solution vanishes at the forward".into()));
    }
    let ratio = vb / va;
    let den = ratio * da - db;
    if den == 0.0 || !den.is_finite() {
        return Err(LlvgError::Singular(
            "jump condition cannot be met (vanishing denominator)".into(),
        ));
    }
    let rho_l = ratio / den;
    let rho_r = 1.0 / den;
    let mut out = Vec::with_capacity(left.len() + right.len());
    for f in left {
        let k = rho_l * (f.log - la).exp();
        out.push((f.c * k, f.s * k));
    }
    for f in right {
        let k = rho_r * (f.log - lb).exp();
        out.push((f.c * k, f.s * k));
    }
    Ok(out)
}

/// A solved maturity: grid, time step and interval coefficients.
///
/// Slices solved from time zero use the intrinsic value as baseline, so the
/// out-of-the-money value is the homogeneous solution itself. Bootstrap
/// slices carry the previous maturity's piecewise-linear prices as baseline.
#[derive(Debug, Clone)]
pub struct LVGSlice {
    grid: LocalVarianceGrid,
    tau: f64,
    coeffs: Vec<IntervalCoefficients>,
    segments: Vec<Segment>,
    prior: Option<PriorPriceCurve>,
}

/// Outcome of the `alpha_s` update loop.
#[derive(Debug, Clone, PartialEq)]
pub struct C3Diagnostics {
    /// `alpha_s` before the first iteration and after each completed one.
    pub alpha_history: Vec<f64>,
    pub aborted: Option<String>,
}

/// Solves the coefficients for a grid and maturity `tau` with the default
/// ratio regularization.
pub fn solve_theta(grid: &LocalVarianceGrid, tau: f64) -> Result<LVGSlice> {
    solve_theta_with_eps(grid, tau, DEFAULT_RATIO_EPS)
}

pub fn solve_theta_with_eps(grid: &LocalVarianceGrid, tau: f64, eps: f64) -> Result<LVGSlice> {
    grid.validate()?;
    let segs = build_segments(grid, tau)?;
    let (m, s) = (grid.m(), grid.s);

    let mut left = Vec::with_capacity(s);
    left.push(Scaled {
        c: 0.0,
        s: 1.0,
        log: 0.0,
    });
    for i in 0..s - 1 {
        let prev = left[i];
        let (v, d, log) = segs[i].transfer(prev.c, prev.s);
        let (c, sn) = segs[i + 1].theta_from_left(v, d);
        left.push(Scaled::normalized(c, sn, prev.log + log));
    }

    let mut right = vec![boundary_start(&segs[m], eps); m - s + 1];
    for i in (s..m).rev() {
        let next = right[i + 1 - s];
        let v = next.c;
        let d = segs[i + 1].left_derivative(next.c, next.s);
        let (c, sn, log) = segs[i].inverse_transfer(v, d);
        right[i - s] = Scaled::normalized(c, sn, next.log + log);
    }

    let thetas = match_families(&segs, &left, &right)?;
    LVGSlice::from_parts(grid.clone(), tau, segs, thetas, None)
}

impl LVGSlice {
    pub(crate) fn from_parts(
        grid: LocalVarianceGrid,
        tau: f64,
        segments: Vec<Segment>,
        thetas: Vec<(f64, f64)>,
        prior: Option<PriorPriceCurve>,
    ) -> Result<Self> {
        let coeffs: Vec<IntervalCoefficients> = segments
            .iter()
            .zip(&thetas)
            .map(|(seg, &(c, s))| seg.coefficients(c, s))
            .collect();
        if coeffs.iter().any(|c| !c.theta_c.is_finite() || !c.theta_s.is_finite()) {
            return Err(LlvgError::Singular("non-finite interval coefficients".into()));
        }
        let slice = Self {
            grid,
            tau,
            coeffs,
            segments,
            prior,
        };
        let x_s = slice.grid.forward();
        if slice.prior.is_none() && !(slice.coeffs[slice.grid.s].theta_c > 0.0) {
            return Err(LlvgError::Singular(format!(
                "non-positive option value {} at the forward",
                slice.coeffs[slice.grid.s].theta_c
            )));
        }
        debug_assert!(x_s > slice.grid.lower());
        Ok(slice)
    }

    /// Rebuilds a slice from stored coefficients without solving.
    pub fn from_coefficients(
        grid: LocalVarianceGrid,
        tau: f64,
        theta_c: &[f64],
        theta_s: &[f64],
        prior: Option<PriorPriceCurve>,
    ) -> Result<Self> {
        grid.validate()?;
        if theta_c.len() != grid.m() + 1 || theta_s.len() != grid.m() + 1 {
            return Err(LlvgError::InvalidInput(format!(
                "expected {} interval coefficients, got {} and {}",
                grid.m() + 1,
                theta_c.len(),
                theta_s.len()
            )));
        }
        let segs = build_segments(&grid, tau)?;
        let thetas = theta_c.iter().copied().zip(theta_s.iter().copied()).collect();
        Self::from_parts(grid, tau, segs, thetas, prior)
    }

    pub fn grid(&self) -> &LocalVarianceGrid {
        &self.grid
    }

    /// Time step over which the equation was solved (the maturity for
    /// slices solved from time zero).
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn coefficients(&self) -> &[IntervalCoefficients] {
        &self.coeffs
    }

    pub fn prior(&self) -> Option<&PriorPriceCurve> {
        self.prior.as_ref()
    }

    pub fn forward(&self) -> f64 {
        self.grid.forward()
    }

    pub fn lower(&self) -> f64 {
        self.grid.lower()
    }

    pub fn upper(&self) -> f64 {
        self.grid.upper()
    }

    fn locate(&self, x: f64, side: Side) -> Result<usize> {
        let i = self.grid.interval_index(x).ok_or_else(|| {
            LlvgError::Domain(format!(
                "strike {x} outside model domain [{}, {}]",
                self.lower(),
                self.upper()
            ))
        })?;
        if side == Side::Left && i > 0 && x == self.grid.knots[i] {
            Ok(i - 1)
        } else {
            Ok(i)
        }
    }

    fn end_values(&self, i: usize) -> (f64, f64) {
        let vl = if i == 0 { 0.0 } else { self.coeffs[i].theta_c };
        let vr = if i == self.grid.m() {
            0.0
        } else {
            self.coeffs[i + 1].theta_c
        };
        (vl, vr)
    }

    /// Homogeneous part `W` and its derivative: the out-of-the-money value
    /// for slices from time zero, the excess over the prior otherwise.
    pub fn eval_homogeneous(&self, x: f64, side: Side) -> Result<(f64, f64)> {
        let i = self.locate(x, side)?;
        let (vl, vr) = self.end_values(i);
        Ok(self.segments[i].eval_two_point(vl, vr, x))
    }

    /// Out-of-the-money option value (put below the forward, call at and
    /// above it).
    pub fn eval_v(&self, x: f64) -> Result<f64> {
        let (w, _) = self.eval_homogeneous(x, Side::Right)?;
        let base = self.prior.as_ref().map_or(0.0, |p| p.otm_at(x));
        Ok((w + base).max(0.0))
    }

    pub fn eval_v_prime(&self, x: f64, side: Side) -> Result<f64> {
        let (_, dw) = self.eval_homogeneous(x, side)?;
        let base = self.prior.as_ref().map_or(0.0, |p| p.otm_slope(x, side));
        Ok(dw + base)
    }

    /// Direct evaluation of the hyperbolic form in `theta_c`, `theta_s`,
    /// using `coshm`/`sinhm` near the left knot of each interval.
    pub fn eval_v_theta(&self, x: f64) -> Result<f64> {
        let i = self.locate(x, Side::Right)?;
        let seg = &self.segments[i];
        let c = &self.coeffs[i];
        let b = seg.basis(x);
        let u = seg.omega * b.dz;
        let (cm, sm) = coshm_sinhm(u);
        let w = b.chi * (c.theta_c + c.theta_c * cm + c.theta_s * u + c.theta_s * sm);
        let base = self.prior.as_ref().map_or(0.0, |p| p.otm_at(x));
        Ok(w + base)
    }

    /// Risk-neutral density `2 W / (a^2 tau)`.
    pub fn eval_density(&self, x: f64) -> Result<f64> {
        let (w, _) = self.eval_homogeneous(x, Side::Right)?;
        let a = self.grid.a(x).expect("located above");
        Ok((2.0 * w / (a * a * self.tau)).max(0.0))
    }

    pub fn eval_call(&self, x: f64) -> Result<f64> {
        Ok(self.eval_v(x)? + (self.forward() - x).max(0.0))
    }

    pub fn eval_put(&self, x: f64) -> Result<f64> {
        Ok(self.eval_v(x)? + (x - self.forward()).max(0.0))
    }

    /// Iterates `alpha_s` towards the value that makes `V` three times
    /// continuously differentiable around the forward.
    ///
    /// Each iteration sets `alpha_s` from the current `theta_c_s`, rebuilds
    /// coefficients of interval `s` from interval `s+1` and of interval
    /// `s-1` from interval `s-2`, then rescales both families to restore the
    /// jump condition.
    pub fn c3_update_alpha_s(&self, iterations: usize) -> (LVGSlice, C3Diagnostics) {
        let mut current = self.clone();
        let s = self.grid.s;
        let mut diag = C3Diagnostics {
            alpha_history: vec![self.grid.alphas[s]],
            aborted: None,
        };
        if self.prior.is_some() {
            diag.aborted = Some("alpha_s update only applies to slices solved from time zero".into());
            return (current, diag);
        }
        for _ in 0..iterations {
            match current.c3_step() {
                Ok(next) => {
                    diag.alpha_history.push(next.grid.alphas[s]);
                    current = next;
                }
                Err(e) => {
                    diag.aborted = Some(e.to_string());
                    break;
                }
            }
        }
        (current, diag)
    }

    fn c3_step(&self) -> Result<LVGSlice> {
        let g = &self.grid;
        let (s, m) = (g.s, g.m());
        let x = &g.knots;
        let theta = self.coeffs[s].theta_c;
        let (hl, hr) = (x[s] - x[s - 1], x[s + 1] - x[s]);
        let den = 2.0 * theta * (hl + hr) - hl * hr;
        if !(den > 0.0) {
            return Err(LlvgError::Singular(format!(
                "alpha_s update denominator {den} is not positive"
            )));
        }
        let alpha_s = 2.0 * theta * (g.alphas[s - 1] * hr + g.alphas[s + 1] * hl) / den;
        let mut grid = g.clone();
        grid.alphas[s] = alpha_s;
        grid.validate()?;
        let mut segs = self.segments.clone();
        segs[s - 1] = Segment::new(x[s - 1], x[s], g.alphas[s - 1], alpha_s, self.tau)?;
        segs[s] = Segment::new(x[s], x[s + 1], alpha_s, g.alphas[s + 1], self.tau)?;

        let plain = |c: &IntervalCoefficients| Scaled {
            c: c.theta_c,
            s: c.theta_s,
            log: 0.0,
        };
        let new_right = if s == m {
            boundary_start(&segs[m], DEFAULT_RATIO_EPS)
        } else {
            let next = &self.coeffs[s + 1];
            let d = segs[s + 1].left_derivative(next.theta_c, next.theta_s);
            let (c, sn, log) = segs[s].inverse_transfer(next.theta_c, d);
            Scaled::normalized(c, sn, log)
        };
        let new_left = if s == 1 {
            Scaled {
                c: 0.0,
                s: 1.0,
                log: 0.0,
            }
        } else {
            let prev = &self.coeffs[s - 2];
            let (v, d, log) = segs[s - 2].transfer(prev.theta_c, prev.theta_s);
            let (c, sn) = segs[s - 1].theta_from_left(v, d);
            Scaled::normalized(c, sn, log)
        };
        let mut left: Vec<Scaled> = self.coeffs[..s - 1].iter().map(plain).collect();
        left.push(new_left);
        let mut right = vec![new_right];
        right.extend(self.coeffs[s + 1..].iter().map(plain));
        let thetas = match_families(&segs, &left, &right)?;
        LVGSlice::from_parts(grid, self.tau, segs, thetas, None)
    }

    pub fn to_document(&self) -> SliceDocument {
        SliceDocument {
            schema: SLICE_SCHEMA.to_string(),
            tau: self.tau,
            knots: self.grid.knots.clone(),
            alphas: self.grid.alphas.clone(),
            s: self.grid.s,
            theta_c: self.coeffs.iter().map(|c| c.theta_c).collect(),
            theta_s: self.coeffs.iter().map(|c| c.theta_s).collect(),
        }
    }

    pub fn from_document(doc: &SliceDocument, prior: Option<PriorPriceCurve>) -> Result<Self> {
        if doc.schema != SLICE_SCHEMA {
            return Err(LlvgError::Parse(format!(
                "unsupported slice schema '{}', expected '{SLICE_SCHEMA}'",
                doc.schema
            )));
        }
        let grid = LocalVarianceGrid::new(doc.knots.clone(), doc.alphas.clone(), doc.s)?;
        Self::from_coefficients(grid, doc.tau, &doc.theta_c, &doc.theta_s, prior)
    }
}

pub const SLICE_SCHEMA: &str = "llvg-slice-v1";

/// Serialized form of a slice; carries the coefficients so evaluation does
/// not need to solve again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceDocument {
    pub schema: String,
    pub tau: f64,
    pub knots: Vec<f64>,
    pub alphas: Vec<f64>,
    pub s: usize,
    pub theta_c: Vec<f64>,
    pub theta_s: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn flat_single_kink() -> LVGSlice {
        let grid = LocalVarianceGrid::new(vec![0.0, 1.0, 2.0], vec![0.2; 3], 1).unwrap();
        solve_theta(&grid, 1.0).unwrap()
    }

    #[test]
    fn basis_constant_segment() {
        let c = IntervalCoefficients {
            theta_c: 0.0,
            theta_s: 0.0,
            omega: 1.0,
            kappa: 0.0,
            q: 0.0,
            r: 0.3,
        };
        let b = eval_interval_basis(&c, 1.0, 1.7).unwrap();
        assert_eq!(
            b,
            Basis {
                chi: 1.0,
                dz: 0.7000000000000001 - 0.0,
                dz_dx: 1.0
            }
            .clone_with_dz(1.7 - 1.0)
        );
    }

    impl Basis {
        fn clone_with_dz(mut self, dz: f64) -> Self {
            self.dz = dz;
            self
        }
    }

    #[test]
    fn basis_positive_slope() {
        let seg = Segment::new(1.0, 2.0, 0.1, 0.2, 1.0).unwrap();
        let coeff = seg.coefficients(0.0, 0.0);
        assert_relative_eq!(coeff.q, 0.1, epsilon = 1e-15);
        assert!(coeff.r.abs() < 1e-15);
        let b = eval_interval_basis(&coeff, 1.0, 2.0).unwrap();
        assert_relative_eq!(b.chi, 2f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(b.dz, 2f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(b.dz_dx, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn basis_negative_slope() {
        // a(x) = -0.1 x + 0.3 on [1, 2]
        let coeff = IntervalCoefficients {
            theta_c: 0.0,
            theta_s: 0.0,
            omega: 1.0,
            kappa: 0.5,
            q: -0.1,
            r: 0.3,
        };
        for &x in &[1.0, 1.25, 1.5, 2.0] {
            let b = eval_interval_basis(&coeff, 1.0, x).unwrap();
            let expected_chi = ((x - 3.0) / (1.0 - 3.0)).sqrt();
            assert_relative_eq!(b.chi, expected_chi, epsilon = 1e-15);
            assert_relative_eq!(b.dz, ((x - 3.0_f64).abs().ln() - 2.0_f64.ln()), epsilon = 1e-15);
            assert_relative_eq!(b.dz_dx, 1.0 / (x - 3.0), epsilon = 1e-15);
        }
    }

    #[test]
    fn basis_rejects_nonpositive_variance() {
        let coeff = IntervalCoefficients {
            theta_c: 0.0,
            theta_s: 0.0,
            omega: 1.0,
            kappa: 0.5,
            q: -0.1,
            r: 0.15,
        };
        assert!(eval_interval_basis(&coeff, 1.0, 2.0).is_err());
    }

    #[test]
    fn flat_single_kink_matches_closed_form() {
        let slice = flat_single_kink();
        let w = 2f64.sqrt() / 0.2;
        let (x0, u) = (1.0, 2.0);
        let expected = (w * x0).sinh() * (w * (u - x0)).sinh() / (w * (w * u).sinh());
        assert_relative_eq!(slice.eval_v(1.0).unwrap(), expected, max_relative = 1e-13);
        assert!((slice.eval_v(1.0).unwrap() - 0.0707).abs() < 1e-4);
        // V'(x0-) = cosh(w x0) sinh(w(U-x0)) / sinh(w U)
        let left = (w * x0).cosh() * (w * (u - x0)).sinh() / (w * u).sinh();
        assert_relative_eq!(slice.eval_v_prime(1.0, Side::Left).unwrap(), left, max_relative = 1e-12);
        assert_eq!(slice.coefficients()[0].theta_c, 0.0);
    }

    #[test]
    fn boundary_values_and_jump() {
        let slice = flat_single_kink();
        assert_eq!(slice.eval_v(0.0).unwrap(), 0.0);
        assert!(slice.eval_v(2.0).unwrap().abs() < 1e-16);
        let jump = slice.eval_v_prime(1.0, Side::Left).unwrap() - slice.eval_v_prime(1.0, Side::Right).unwrap();
        assert!((jump - 1.0).abs() < 1e-12);
        assert!(slice.eval_v(2.5).is_err());
        assert!(slice.eval_v(-0.1).is_err());
    }

    #[test]
    fn theta_form_agrees_with_two_point_form() {
        let grid = LocalVarianceGrid::new(
            vec![0.2, 0.6, 0.9, 1.0, 1.2, 1.6, 2.5],
            vec![0.15, 0.18, 0.2, 0.21, 0.19, 0.25, 0.4],
            3,
        )
        .unwrap();
        let slice = solve_theta(&grid, 0.5).unwrap();
        for i in 0..300 {
            let x = 0.2 + 2.3 * (i as f64 + 0.5) / 300.0;
            let a = slice.eval_v(x).unwrap();
            let b = slice.eval_v_theta(x).unwrap();
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "x={x} {a} {b}");
        }
    }

    #[test]
    fn stored_coefficients_round_trip() {
        let slice = flat_single_kink();
        let doc = slice.to_document();
        let back = LVGSlice::from_document(&doc, None).unwrap();
        assert_eq!(back.eval_v(0.7).unwrap(), slice.eval_v(0.7).unwrap());
        let mut bad = doc.clone();
        bad.schema = "other".into();
        assert!(LVGSlice::from_document(&bad, None).is_err());
    }

    #[test]
    fn c3_update_is_fixed_point_when_converged() {
        let grid = LocalVarianceGrid::new(
            vec![0.4, 0.8, 0.95, 1.0, 1.05, 1.3, 2.0],
            vec![0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1],
            3,
        )
        .unwrap();
        let slice = solve_theta(&grid, 0.25).unwrap();
        // the iteration contracts linearly, by a factor of about 0.45 here
        let (converged, diag) = slice.c3_update_alpha_s(80);
        assert!(diag.aborted.is_none());
        let (again, diag2) = converged.c3_update_alpha_s(1);
        let (a, b) = (diag2.alpha_history[0], diag2.alpha_history[1]);
        assert!((a - b).abs() <= 1e-12 * a, "{a} {b}");
        let jump = again.eval_v_prime(1.0, Side::Left).unwrap() - again.eval_v_prime(1.0, Side::Right).unwrap();
        assert!((jump - 1.0).abs() < 1e-11);
    }

    #[test]
    fn c3_update_aborts_on_nonpositive_denominator() {
        // wide neighbours around the forward with a tiny option value
        let grid = LocalVarianceGrid::new(vec![0.0, 0.5, 1.0, 1.5, 2.0], vec![0.001; 5], 2).unwrap();
        let slice = solve_theta(&grid, 0.01).unwrap();
        let (out, diag) = slice.c3_update_alpha_s(3);
        assert!(diag.aborted.is_some());
        assert_eq!(out.grid().alphas, grid.alphas);
    }
}
