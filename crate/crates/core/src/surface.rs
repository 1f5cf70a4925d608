//! Multiple maturities: normalization to the driftless asset, independent
//! and bootstrap calibration, and calendar-spread checks.

use crate::banded::BandedMatrix;
use crate::black::implied_vol;
use crate::calibration::{
    calibrate_slice, domain_bounds, initial_guess, merge_knots, with_fictitious_point, Calibrated, CalibrationConfig,
    DomainBounds, FitReport, Problem, QuoteSlice, SpikeFix, StepKind,
};
use crate::error::{LlvgError, Result};
use crate::pdde::{build_segments, LVGSlice, LocalVarianceGrid, Side, SliceDocument};
use serde::{Deserialize, Serialize};

/// Piecewise-linear call prices of the previous maturity on the driftless
/// asset, used as the starting condition of a bootstrap step.
///
/// The first and last knots are the domain bounds, where the out-of-the-money
/// value is zero, and the forward is always one of the knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorPriceCurve {
    pub knots: Vec<f64>,
    /// Call prices at the knots.
    pub values: Vec<f64>,
    /// Out-of-the-money values at the knots; kept separately because
    /// subtracting the intrinsic value from deep in-the-money calls loses
    /// the digits that matter.
    pub otm_values: Vec<f64>,
    pub forward: f64,
}

impl PriorPriceCurve {
    pub fn from_otm(knots: Vec<f64>, otm_values: Vec<f64>, forward: f64) -> Result<Self> {
        if knots.len() < 3 || knots.len() != otm_values.len() {
            return Err(LlvgError::InvalidInput(
                "prior needs at least 3 knots with one value each".into(),
            ));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LlvgError::InvalidInput(
                "prior knots must be strictly increasing".into(),
            ));
        }
        if !knots.contains(&forward) {
            return Err(LlvgError::InvalidInput("prior knots must contain the forward".into()));
        }
        if otm_values[0] != 0.0 || *otm_values.last().unwrap() != 0.0 {
            return Err(LlvgError::InvalidInput("prior must vanish at the domain bounds".into()));
        }
        let values = knots
            .iter()
            .zip(&otm_values)
            .map(|(&x, &v)| v + (forward - x).max(0.0))
            .collect();
        Ok(Self {
            knots,
            values,
            otm_values,
            forward,
        })
    }

    fn segment(&self, x: f64, side: Side) -> Option<usize> {
        let n = self.knots.len();
        if !(x >= self.knots[0] && x <= self.knots[n - 1]) {
            return None;
        }
        let mut i = (self.knots.partition_point(|&k| k <= x).max(1) - 1).min(n - 2);
        if side == Side::Left && i > 0 && x == self.knots[i] {
            i -= 1;
        }
        Some(i)
    }

    fn slope(&self, i: usize) -> f64 {
        (self.otm_values[i + 1] - self.otm_values[i]) / (self.knots[i + 1] - self.knots[i])
    }

    /// Linear interpolation of the out-of-the-money values; zero outside.
    pub fn otm_at(&self, x: f64) -> f64 {
        match self.segment(x, Side::Right) {
            Some(i) => {
                let t = (x - self.knots[i]) / (self.knots[i + 1] - self.knots[i]);
                self.otm_values[i] + t * (self.otm_values[i + 1] - self.otm_values[i])
            }
            None => 0.0,
        }
    }

    pub fn otm_slope(&self, x: f64, side: Side) -> f64 {
        self.segment(x, side).map_or(0.0, |i| self.slope(i))
    }

    pub fn call_at(&self, x: f64) -> f64 {
        self.otm_at(x) + (self.forward - x).max(0.0)
    }

    /// Increase of the call-price slope at interior knot `j`.
    pub fn slope_jump(&self, j: usize) -> f64 {
        let kink = if self.knots[j] == self.forward { 1.0 } else { 0.0 };
        self.slope(j) - self.slope(j - 1) + kink
    }
}

/// Solves the step from the prior maturity over `dtau`: the excess
/// `W = C - PL` solves the homogeneous equation on every interval, vanishes
/// at both bounds and its derivative drops at each prior knot by the slope
/// increase of the prior.
///
/// The unknowns are the values of `W` at the interior knots. Each interval
/// solution is written in terms of its two end values, which keeps the
/// tridiagonal jump system well conditioned however long the intervals.
pub fn solve_theta_with_prior(grid: &LocalVarianceGrid, dtau: f64, prior: &PriorPriceCurve) -> Result<LVGSlice> {
    grid.validate()?;
    if grid.forward() != prior.forward {
        return Err(LlvgError::InvalidInput("grid and prior forwards differ".into()));
    }
    if prior.knots[0] != grid.lower() || *prior.knots.last().unwrap() != grid.upper() {
        return Err(LlvgError::InvalidInput("prior must span the grid domain".into()));
    }
    let segs = build_segments(grid, dtau)?;
    let m = grid.m();
    let mut jumps = vec![0.0; m + 2];
    let mut p = 1;
    for j in 1..=m {
        while p < prior.knots.len() - 1 && prior.knots[p] < grid.knots[j] {
            p += 1;
        }
        if prior.knots[p] == grid.knots[j] {
            jumps[j] = prior.slope_jump(p);
        }
    }
    let matched = prior.knots[1..prior.knots.len() - 1]
        .iter()
        .all(|k| grid.knots.binary_search_by(|g| g.total_cmp(k)).is_ok());
    if !matched {
        return Err(LlvgError::InvalidInput("prior knots must be grid knots".into()));
    }

    // end derivatives of each interval as linear functions of its end values
    let ends: Vec<[f64; 4]> = segs
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            let (x0, x1) = (grid.knots[i], grid.knots[i + 1]);
            [
                seg.eval_two_point(1.0, 0.0, x0).1,
                seg.eval_two_point(0.0, 1.0, x0).1,
                seg.eval_two_point(1.0, 0.0, x1).1,
                seg.eval_two_point(0.0, 1.0, x1).1,
            ]
        })
        .collect();
    let mut a = BandedMatrix::zeros(m, 1, 1);
    let mut w = vec![0.0; m];
    for j in 1..=m {
        let (left, right) = (&ends[j - 1], &ends[j]);
        let row = j - 1;
        if j > 1 {
            a.set(row, row - 1, left[2]);
        }
        a.set(row, row, left[3] - right[0]);
        if j < m {
            a.set(row, row + 1, -right[1]);
        }
        w[row] = jumps[j];
    }
    a.solve(&mut w).map_err(|e| match e {
        LlvgError::Singular(msg) => LlvgError::Singular(format!("bootstrap step system: {msg}")),
        other => other,
    })?;
    let thetas = (0..=m)
        .map(|i| {
            let vl = if i == 0 { 0.0 } else { w[i - 1] };
            let vr = if i == m { 0.0 } else { w[i] };
            let d = ends[i][0] * vl + ends[i][1] * vr;
            segs[i].theta_from_left(vl, d)
        })
        .collect();
    LVGSlice::from_parts(grid.clone(), dtau, segs, thetas, Some(prior.clone()))
}

/// Quotes of one maturity on the real asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSlice {
    pub maturity: f64,
    pub strikes: Vec<f64>,
    pub vols: Vec<f64>,
    /// Discounted call prices, when quoted as prices.
    pub prices: Option<Vec<f64>>,
    pub mu: Vec<f64>,
    pub forward: f64,
    pub discount: f64,
}

/// Maps real-asset quotes to the driftless asset `X = S/F`: strikes
/// `K/F`, call prices divided by `B F`, forward one. Volatilities are
/// unchanged.
pub fn normalize_slice(ms: &MarketSlice) -> Result<QuoteSlice> {
    if !(ms.forward > 0.0 && ms.discount > 0.0) {
        return Err(LlvgError::InvalidInput(
            "forward and discount factor must be positive".into(),
        ));
    }
    let strikes: Vec<f64> = ms.strikes.iter().map(|k| k / ms.forward).collect();
    match &ms.prices {
        Some(prices) => {
            let scaled = prices.iter().map(|p| p / (ms.discount * ms.forward)).collect();
            QuoteSlice::from_call_prices(strikes, scaled, ms.mu.clone(), 1.0, ms.maturity)
        }
        None => QuoteSlice::new(strikes, ms.vols.clone(), ms.mu.clone(), 1.0, ms.maturity),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceMode {
    Independent,
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceConfig {
    pub calibration: CalibrationConfig,
    pub mode: SurfaceMode,
    /// Equidistant knots of each bootstrap prior.
    pub prior_knots: usize,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            calibration: CalibrationConfig::default(),
            mode: SurfaceMode::Independent,
            prior_knots: 50,
        }
    }
}

/// Calibrated maturities on the driftless asset. In bootstrap mode every
/// slice after the first is a step from the previous one and carries its
/// prior.
#[derive(Debug, Clone)]
pub struct SurfaceModel {
    pub mode: SurfaceMode,
    pub maturities: Vec<f64>,
    pub slices: Vec<LVGSlice>,
    pub forwards: Vec<f64>,
    pub discounts: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SurfaceCalibration {
    pub model: SurfaceModel,
    /// Fit report of each calibrated maturity, in order.
    pub reports: Vec<(f64, FitReport)>,
    /// Maturities that could not be calibrated.
    pub failures: Vec<(f64, LlvgError)>,
}

/// Absorbing bounds shared by all maturities: the widest of the per-slice
/// defaults.
pub fn common_domain(quotes: &[QuoteSlice], policy: DomainBounds) -> (f64, f64) {
    quotes.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), q| {
        let (l, u) = domain_bounds(q, policy);
        (lo.min(l), hi.max(u))
    })
}

fn check_order(slices: &[MarketSlice]) -> Result<()> {
    if slices.is_empty() {
        return Err(LlvgError::InvalidInput("no maturities".into()));
    }
    if slices.windows(2).any(|w| w[1].maturity <= w[0].maturity) {
        return Err(LlvgError::InvalidInput("maturities must be strictly increasing".into()));
    }
    Ok(())
}

fn fixed_domain(config: &CalibrationConfig, quotes: &[QuoteSlice]) -> CalibrationConfig {
    let (lower, upper) = common_domain(quotes, config.domain);
    CalibrationConfig {
        domain: DomainBounds::Fixed { lower, upper },
        ..config.clone()
    }
}

/// Calibrates each maturity from time zero on a common domain. Failing
/// maturities are collected and skipped.
pub fn calibrate_independent(slices: &[MarketSlice], config: &SurfaceConfig) -> Result<SurfaceCalibration> {
    check_order(slices)?;
    let quotes = slices.iter().map(normalize_slice).collect::<Result<Vec<_>>>()?;
    let cfg = fixed_domain(&config.calibration, &quotes);
    let mut out = SurfaceCalibration {
        model: SurfaceModel {
            mode: SurfaceMode::Independent,
            maturities: vec![],
            slices: vec![],
            forwards: vec![],
            discounts: vec![],
        },
        reports: vec![],
        failures: vec![],
    };
    for (ms, q) in slices.iter().zip(&quotes) {
        match calibrate_slice(q, &cfg) {
            Ok(Calibrated { slice, report }) => {
                out.model.maturities.push(ms.maturity);
                out.model.slices.push(slice);
                out.model.forwards.push(ms.forward);
                out.model.discounts.push(ms.discount);
                out.reports.push((ms.maturity, report));
            }
            Err(e) => out.failures.push((ms.maturity, e)),
        }
    }
    Ok(out)
}

/// Piecewise-linear representation of a solved slice: `n_knots`
/// equidistant strikes over the quoted range, the market strikes, the
/// forward and the domain bounds.
pub fn build_prior(slice: &LVGSlice, n_knots: usize, strikes: &[f64]) -> Result<PriorPriceCurve> {
    let (lo, hi) = strikes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &k| (a.min(k), b.max(k)));
    let mut pts = vec![slice.lower(), slice.upper()];
    pts.extend_from_slice(strikes);
    if n_knots >= 2 && hi > lo {
        pts.extend((0..n_knots).map(|i| lo + (hi - lo) * i as f64 / (n_knots - 1) as f64));
    }
    let sk = merge_knots(&pts, slice.forward())?;
    let last = sk.knots.len() - 1;
    let otm = sk
        .knots
        .iter()
        .enumerate()
        .map(|(i, &x)| if i == 0 || i == last { Ok(0.0) } else { slice.eval_v(x) })
        .collect::<Result<Vec<_>>>()?;
    PriorPriceCurve::from_otm(sk.knots, otm, slice.forward())
}

/// Calibrates the first maturity from time zero and each later one as a
/// step from the piecewise-linear prices of the previous maturity. A
/// failing step ends the bootstrap.
pub fn calibrate_bootstrap(slices: &[MarketSlice], config: &SurfaceConfig) -> Result<SurfaceCalibration> {
    check_order(slices)?;
    let quotes = slices.iter().map(normalize_slice).collect::<Result<Vec<_>>>()?;
    let cfg = fixed_domain(&config.calibration, &quotes);
    let mut out = SurfaceCalibration {
        model: SurfaceModel {
            mode: SurfaceMode::Bootstrap,
            maturities: vec![],
            slices: vec![],
            forwards: vec![],
            discounts: vec![],
        },
        reports: vec![],
        failures: vec![],
    };
    for (i, (ms, q)) in slices.iter().zip(&quotes).enumerate() {
        let result = if i == 0 {
            calibrate_slice(q, &cfg)
        } else {
            let prev = out.model.slices.last().expect("previous step");
            bootstrap_step(
                prev,
                &quotes[i - 1],
                q,
                ms.maturity - slices[i - 1].maturity,
                &cfg,
                config.prior_knots,
            )
        };
        match result {
            Ok(Calibrated { slice, report }) => {
                out.model.maturities.push(ms.maturity);
                out.model.slices.push(slice);
                out.model.forwards.push(ms.forward);
                out.model.discounts.push(ms.discount);
                out.reports.push((ms.maturity, report));
            }
            Err(e) => {
                out.failures.push((ms.maturity, e));
                break;
            }
        }
    }
    Ok(out)
}

fn bootstrap_step(
    prev: &LVGSlice,
    prev_quotes: &QuoteSlice,
    quotes: &QuoteSlice,
    dtau: f64,
    cfg: &CalibrationConfig,
    prior_knots: usize,
) -> Result<Calibrated> {
    cfg.validate()?;
    // the prior must be accurate wherever the new quotes are
    let mut prior_strikes = prev_quotes.strikes.clone();
    prior_strikes.extend_from_slice(&quotes.strikes);
    let prior = build_prior(prev, prior_knots, &prior_strikes)?;
    let working = if cfg.spike_fix == SpikeFix::FictitiousPoint {
        with_fictitious_point(quotes)
    } else {
        quotes.clone()
    };
    let mut pts = prior.knots.clone();
    pts.extend_from_slice(&working.strikes);
    let skeleton = merge_knots(&pts, quotes.forward)?;
    let problem = Problem::new(working, cfg, skeleton, StepKind::FromPrior { prior: &prior, dtau })?;
    let free_knots: Vec<f64> = problem.free.iter().map(|&k| problem.skeleton.knots[k]).collect();
    let bounds = cfg
        .alpha_bounds
        .unwrap_or((1e-4 * quotes.forward, 10.0 * quotes.forward));
    let guess: Vec<f64> = free_knots
        .iter()
        .map(|&x| prev.grid().a(x).unwrap_or(f64::NAN))
        .collect();
    let guess = if guess.iter().all(|a| a.is_finite()) {
        guess
    } else {
        initial_guess(quotes, &free_knots, cfg.guess, bounds)
    };
    let mut out = problem.solve(&guess)?;
    if cfg.spike_fix == SpikeFix::FictitiousPoint {
        let original = Problem::new(
            quotes.clone(),
            cfg,
            problem.skeleton.clone(),
            StepKind::FromPrior { prior: &prior, dtau },
        )?;
        out.report.rmse_vol = original.rmse_vol(&out.slice);
    }
    Ok(out)
}

pub fn calibrate_surface(slices: &[MarketSlice], config: &SurfaceConfig) -> Result<SurfaceCalibration> {
    match config.mode {
        SurfaceMode::Independent => calibrate_independent(slices, config),
        SurfaceMode::Bootstrap => calibrate_bootstrap(slices, config),
    }
}

/// A point where the normalized call price decreases with maturity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalendarViolation {
    /// Index of the later maturity.
    pub maturity_index: usize,
    pub x: f64,
    pub earlier: f64,
    pub later: f64,
}

/// Compares consecutive maturities at each strike of `xs` (driftless
/// strikes). Strikes outside a slice domain are skipped.
pub fn check_calendar(model: &SurfaceModel, xs: &[f64]) -> Vec<CalendarViolation> {
    let mut out = Vec::new();
    for i in 1..model.slices.len() {
        for &x in xs {
            let (Ok(earlier), Ok(later)) = (model.slices[i - 1].eval_call(x), model.slices[i].eval_call(x)) else {
                continue;
            };
            if later < earlier - 1e-14 * earlier.max(1e-300).max(1e-14) {
                out.push(CalendarViolation {
                    maturity_index: i,
                    x,
                    earlier,
                    later,
                });
            }
        }
    }
    out
}

impl SurfaceModel {
    pub fn maturity_index(&self, maturity: f64) -> Result<usize> {
        self.maturities
            .iter()
            .position(|&t| (t - maturity).abs() <= 1e-12 * t.max(1.0))
            .ok_or_else(|| LlvgError::InvalidInput(format!("maturity {maturity} is not calibrated")))
    }

    /// Implied volatility of maturity `i` at driftless strike `x`.
    pub fn implied_vol(&self, i: usize, x: f64) -> Result<f64> {
        let v = self.slices[i].eval_v(x)?;
        implied_vol(v, 1.0, x, self.maturities[i], x >= 1.0)
    }

    /// Total implied variance `sigma^2 T` at log-moneyness `y`.
    pub fn total_variance(&self, i: usize, y: f64) -> Result<f64> {
        let vol = self.implied_vol(i, y.exp())?;
        Ok(vol * vol * self.maturities[i])
    }

    pub fn to_document(&self) -> SurfaceDocument {
        SurfaceDocument {
            schema: SURFACE_SCHEMA.to_string(),
            mode: self.mode,
            maturities: self.maturities.clone(),
            slices: self.slices.iter().map(|s| s.to_document()).collect(),
            priors: self.slices.iter().map(|s| s.prior().cloned()).collect(),
            forwards: self.forwards.clone(),
            discounts: self.discounts.clone(),
        }
    }

    pub fn from_document(doc: &SurfaceDocument) -> Result<Self> {
        if doc.schema != SURFACE_SCHEMA {
            return Err(LlvgError::Parse(format!(
                "unsupported surface schema '{}', expected '{SURFACE_SCHEMA}'",
                doc.schema
            )));
        }
        let n = doc.slices.len();
        if doc.maturities.len() != n || doc.priors.len() != n || doc.forwards.len() != n || doc.discounts.len() != n {
            return Err(LlvgError::Parse("surface arrays must have one entry per slice".into()));
        }
        let slices = doc
            .slices
            .iter()
            .zip(&doc.priors)
            .map(|(s, p)| LVGSlice::from_document(s, p.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mode: doc.mode,
            maturities: doc.maturities.clone(),
            slices,
            forwards: doc.forwards.clone(),
            discounts: doc.discounts.clone(),
        })
    }
}

pub const SURFACE_SCHEMA: &str = "llvg-surface-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDocument {
    pub schema: String,
    pub mode: SurfaceMode,
    pub maturities: Vec<f64>,
    pub slices: Vec<SliceDocument>,
    pub priors: Vec<Option<PriorPriceCurve>>,
    pub forwards: Vec<f64>,
    pub discounts: Vec<f64>,
}
