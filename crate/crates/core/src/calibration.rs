//! Single-maturity calibration of the node values of the local variance
//! function to option quotes.

use crate::black::{black_vega, implied_vol, otm_price, BlackInputs};
use crate::error::{LlvgError, Result};
use crate::lm::{levenberg_marquardt, LmConfig, StopReason};
use crate::pdde::{solve_theta, LVGSlice, LocalVarianceGrid};
use crate::surface::{solve_theta_with_prior, PriorPriceCurve};
use serde::{Deserialize, Serialize};

/// Quotes for one maturity on the driftless asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuoteSlice {
    pub strikes: Vec<f64>,
    pub vols: Vec<f64>,
    /// Undiscounted call prices, when quoted as prices.
    pub prices: Option<Vec<f64>>,
    /// Accuracy weights; zero marks points that only shape the grid.
    pub mu: Vec<f64>,
    pub forward: f64,
    pub tau: f64,
}

impl QuoteSlice {
    pub fn new(strikes: Vec<f64>, vols: Vec<f64>, mu: Vec<f64>, forward: f64, tau: f64) -> Result<Self> {
        let q = Self {
            strikes,
            vols,
            prices: None,
            mu,
            forward,
            tau,
        };
        q.validate()?;
        Ok(q)
    }

    /// Builds quotes from undiscounted call prices, inverting them to
    /// implied volatilities.
    pub fn from_call_prices(strikes: Vec<f64>, prices: Vec<f64>, mu: Vec<f64>, forward: f64, tau: f64) -> Result<Self> {
        if prices.len() != strikes.len() {
            return Err(LlvgError::InvalidInput("one price per strike required".into()));
        }
        let vols = strikes
            .iter()
            .zip(&prices)
            .map(|(&k, &p)| implied_vol(p, forward, k, tau, true))
            .collect::<Result<Vec<_>>>()?;
        let q = Self {
            strikes,
            vols,
            prices: Some(prices),
            mu,
            forward,
            tau,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.strikes.len();
        if n == 0 {
            return Err(LlvgError::InvalidInput("no quotes".into()));
        }
        if self.vols.len() != n || self.mu.len() != n {
            return Err(LlvgError::InvalidInput(
                "strikes, vols and weights must have equal length".into(),
            ));
        }
        if !(self.forward > 0.0 && self.forward.is_finite()) || !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(LlvgError::InvalidInput("forward and maturity must be positive".into()));
        }
        if self.strikes.iter().any(|k| !(*k > 0.0 && k.is_finite())) || self.strikes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LlvgError::InvalidInput(
                "strikes must be positive and strictly increasing".into(),
            ));
        }
        for i in 0..n {
            if !(self.mu[i] >= 0.0 && self.mu[i].is_finite()) {
                return Err(LlvgError::InvalidInput(format!(
                    "weight {} at strike {} is invalid",
                    self.mu[i], self.strikes[i]
                )));
            }
            if self.mu[i] > 0.0 && !(self.vols[i] > 0.0 && self.vols[i].is_finite()) {
                return Err(LlvgError::InvalidInput(format!(
                    "volatility at strike {} must be positive",
                    self.strikes[i]
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.strikes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strikes.is_empty()
    }

    /// Out-of-the-money price of quote `i` (put below the forward).
    pub fn otm_price(&self, i: usize) -> f64 {
        let k = self.strikes[i];
        match &self.prices {
            Some(p) => (p[i] - (self.forward - k).max(0.0)).max(0.0),
            None => otm_price(self.forward, k, self.vols[i] * self.tau.sqrt()),
        }
    }

    pub fn call_price(&self, i: usize) -> f64 {
        match &self.prices {
            Some(p) => p[i],
            None => self.otm_price(i) + (self.forward - self.strikes[i]).max(0.0),
        }
    }

    /// Volatility of the quote nearest to the forward among weighted quotes.
    pub fn atm_vol(&self) -> f64 {
        let pool: Vec<usize> = (0..self.len()).filter(|&i| self.mu[i] > 0.0).collect();
        let pool = if pool.is_empty() {
            (0..self.len()).collect()
        } else {
            pool
        };
        let i = pool
            .into_iter()
            .min_by(|&a, &b| {
                let da = (self.strikes[a] - self.forward).abs();
                let db = (self.strikes[b] - self.forward).abs();
                da.total_cmp(&db)
            })
            .unwrap();
        self.vols[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    VolSpace,
    PriceSpace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regularization {
    None,
    /// Second differences of the node values.
    AlphaSecondDifference,
    /// Second differences of the log density at the knots.
    LogDensitySecondDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpikeFix {
    None,
    /// Adds a zero-weight quote at the forward so that `alpha_s` is free.
    FictitiousPoint,
    /// Sets `alpha_s` by this many iterations of the third-derivative
    /// continuity update on every model evaluation.
    C3Iteration(usize),
}

impl std::fmt::Display for SpikeFix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpikeFix::None => write!(f, "none"),
            SpikeFix::FictitiousPoint => write!(f, "fictitious"),
            SpikeFix::C3Iteration(n) => write!(f, "c3:{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialGuess {
    FlatBachelier,
    FlatLognormal,
}

/// How the absorbing bounds `L` and `U` are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DomainBounds {
    /// Extreme strikes moved out by this many at-the-money standard
    /// deviations.
    StdDevs(f64),
    Fixed {
        lower: f64,
        upper: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub objective: Objective,
    pub regularization: Regularization,
    pub lambda: f64,
    /// Bounds on the node values; `None` means `[1e-4, 10]` times the forward.
    pub alpha_bounds: Option<(f64, f64)>,
    pub solver: LmConfig,
    pub spike_fix: SpikeFix,
    pub guess: InitialGuess,
    pub domain: DomainBounds,
    /// Residual, in multiples of the quote weight, used when the model price
    /// has no implied volatility.
    pub failure_penalty: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            objective: Objective::VolSpace,
            regularization: Regularization::None,
            lambda: 0.0,
            alpha_bounds: None,
            solver: LmConfig::default(),
            spike_fix: SpikeFix::None,
            guess: InitialGuess::FlatLognormal,
            domain: DomainBounds::StdDevs(3.0),
            failure_penalty: 1e3,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(LlvgError::InvalidInput(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if let Some((lo, hi)) = self.alpha_bounds {
            if !(lo > 0.0 && hi > lo) {
                return Err(LlvgError::InvalidInput(format!("invalid alpha bounds [{lo}, {hi}]")));
            }
        }
        if self.spike_fix == SpikeFix::C3Iteration(0) {
            return Err(LlvgError::InvalidInput("c3 iteration count must be at least 1".into()));
        }
        Ok(())
    }

    fn bounds(&self, forward: f64) -> (f64, f64) {
        self.alpha_bounds.unwrap_or((1e-4 * forward, 10.0 * forward))
    }
}

/// Summary of a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Root-mean-square implied volatility error over weighted quotes.
    pub rmse_vol: f64,
    pub iterations: usize,
    pub duration_ms: f64,
    pub objective: Objective,
    pub lambda: f64,
    pub spike_fix: String,
    pub converged: bool,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct Calibrated {
    pub slice: LVGSlice,
    pub report: FitReport,
}

/// Knots `{L} ∪ strikes ∪ {X(0)} ∪ {U}` and the index of the forward.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSkeleton {
    pub knots: Vec<f64>,
    pub s: usize,
}

fn same_point(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Sorts and merges points, snapping anything within the relative
/// tolerance of the forward onto it.
pub(crate) fn merge_knots(points: &[f64], forward: f64) -> Result<GridSkeleton> {
    let mut pts: Vec<f64> = points
        .iter()
        .map(|&x| if same_point(x, forward) { forward } else { x })
        .chain(std::iter::once(forward))
        .collect();
    pts.sort_by(f64::total_cmp);
    let mut knots: Vec<f64> = Vec::with_capacity(pts.len());
    for x in pts {
        match knots.last() {
            Some(&last) if same_point(last, x) => {
                if x == forward {
                    *knots.last_mut().unwrap() = forward;
                }
            }
            _ => knots.push(x),
        }
    }
    let s = knots.iter().position(|&k| k == forward).expect("forward inserted");
    if s == 0 || s == knots.len() - 1 {
        return Err(LlvgError::InvalidInput(format!(
            "forward {forward} must lie strictly inside the domain [{}, {}]",
            knots[0],
            knots[knots.len() - 1]
        )));
    }
    Ok(GridSkeleton { knots, s })
}

/// Default absorbing bounds for a set of quotes.
pub fn domain_bounds(quotes: &QuoteSlice, policy: DomainBounds) -> (f64, f64) {
    match policy {
        DomainBounds::Fixed { lower, upper } => (lower, upper),
        DomainBounds::StdDevs(n) => {
            let width = (n * quotes.atm_vol() * quotes.tau.sqrt()).exp();
            let lower = (quotes.strikes[0] / width).max(1e-4 * quotes.forward);
            let upper = quotes.strikes[quotes.len() - 1] * width;
            (lower, upper)
        }
    }
}

pub fn build_grid(quotes: &QuoteSlice, policy: DomainBounds) -> Result<GridSkeleton> {
    quotes.validate()?;
    let (lower, upper) = domain_bounds(quotes, policy);
    if !(lower < quotes.strikes[0] && upper > quotes.strikes[quotes.len() - 1]) {
        return Err(LlvgError::InvalidInput(format!(
            "domain [{lower}, {upper}] must strictly contain all strikes"
        )));
    }
    if !(quotes.forward > lower && quotes.forward < upper) {
        return Err(LlvgError::InvalidInput(format!(
            "forward {} outside domain [{lower}, {upper}]",
            quotes.forward
        )));
    }
    let mut pts = vec![lower, upper];
    pts.extend_from_slice(&quotes.strikes);
    merge_knots(&pts, quotes.forward)
}

/// Linear interpolation of `alpha_s` from its neighbours.
pub fn alpha_s_from_neighbors(grid: &LocalVarianceGrid) -> f64 {
    let s = grid.s;
    let x = &grid.knots;
    let a = &grid.alphas;
    ((x[s] - x[s - 1]) * a[s + 1] + (x[s + 1] - x[s]) * a[s - 1]) / (x[s + 1] - x[s - 1])
}

/// Price-space weights `min(1/vega, 1e6/X(0)) * mu`.
pub fn capped_vega_weights(quotes: &QuoteSlice) -> Vec<f64> {
    (0..quotes.len())
        .map(|i| {
            if quotes.mu[i] == 0.0 {
                return 0.0;
            }
            let k = quotes.strikes[i];
            let inp = BlackInputs::new(quotes.forward, k, quotes.vols[i], quotes.tau, k >= quotes.forward);
            let vega = black_vega(&inp).unwrap_or(0.0);
            let inv = if vega > 0.0 { 1.0 / vega } else { f64::INFINITY };
            inv.min(1e6 / quotes.forward) * quotes.mu[i]
        })
        .collect()
}

/// Starting node values for the free knots.
pub fn initial_guess(quotes: &QuoteSlice, knots: &[f64], strategy: InitialGuess, bounds: (f64, f64)) -> Vec<f64> {
    let atm = quotes.atm_vol();
    knots
        .iter()
        .map(|&x| {
            let a = match strategy {
                InitialGuess::FlatBachelier => atm * quotes.forward,
                InitialGuess::FlatLognormal => atm * x,
            };
            a.clamp(bounds.0, bounds.1)
        })
        .collect()
}

/// How the model for a trial grid is solved.
#[derive(Debug, Clone, Copy)]
pub(crate) enum StepKind<'a> {
    FromZero,
    FromPrior { prior: &'a PriorPriceCurve, dtau: f64 },
}

/// One calibration problem: quotes mapped to knots of a fixed grid, with
/// the node values of the quote knots free and the others interpolated.
pub(crate) struct Problem<'a> {
    pub quotes: QuoteSlice,
    pub config: &'a CalibrationConfig,
    pub skeleton: GridSkeleton,
    /// Knot index of each quote.
    pub quote_knot: Vec<usize>,
    /// Free knot indices, increasing; one per quote.
    pub free: Vec<usize>,
    pub step: StepKind<'a>,
    weights: Vec<f64>,
    targets: Vec<f64>,
    lambda_tilde: f64,
}

impl<'a> Problem<'a> {
    pub fn new(
        quotes: QuoteSlice,
        config: &'a CalibrationConfig,
        skeleton: GridSkeleton,
        step: StepKind<'a>,
    ) -> Result<Self> {
        let quote_knot = quotes
            .strikes
            .iter()
            .map(|&k| {
                skeleton
                    .knots
                    .iter()
                    .position(|&x| same_point(x, k))
                    .ok_or_else(|| LlvgError::InvalidInput(format!("strike {k} is not a grid knot")))
            })
            .collect::<Result<Vec<_>>>()?;
        let free = quote_knot.clone();
        if free.iter().any(|&i| i == 0 || i == skeleton.knots.len() - 1) {
            return Err(LlvgError::InvalidInput(
                "quotes must lie strictly inside the domain".into(),
            ));
        }
        let weights = match config.objective {
            Objective::VolSpace => quotes.mu.clone(),
            Objective::PriceSpace => capped_vega_weights(&quotes),
        };
        let targets = match config.objective {
            Objective::VolSpace => quotes.vols.clone(),
            Objective::PriceSpace => (0..quotes.len()).map(|i| quotes.otm_price(i)).collect(),
        };
        let mu2: f64 = quotes.mu.iter().map(|m| m * m).sum();
        let lambda_tilde = (2.0 * mu2).sqrt() * quotes.forward * config.lambda;
        Ok(Self {
            quotes,
            config,
            skeleton,
            quote_knot,
            free,
            step,
            weights,
            targets,
            lambda_tilde,
        })
    }

    /// Full node-value vector from the free values.
    pub fn expand(&self, free_alpha: &[f64]) -> Vec<f64> {
        let knots = &self.skeleton.knots;
        let n = knots.len();
        let mut alphas = vec![f64::NAN; n];
        for (&k, &a) in self.free.iter().zip(free_alpha) {
            alphas[k] = a;
        }
        let (first, last) = (self.free[0], self.free[self.free.len() - 1]);
        let mut left = first;
        for i in 1..n - 1 {
            if i < first {
                alphas[i] = free_alpha[0];
            } else if i > last {
                alphas[i] = free_alpha[free_alpha.len() - 1];
            } else if alphas[i].is_nan() {
                let right = self.free.iter().copied().find(|&f| f > i).expect("inside free range");
                let t = (knots[i] - knots[left]) / (knots[right] - knots[left]);
                alphas[i] = alphas[left] + t * (alphas[right] - alphas[left]);
            } else {
                left = i;
            }
        }
        alphas[0] = alphas[1];
        alphas[n - 1] = alphas[n - 2];
        alphas
    }

    pub fn model(&self, free_alpha: &[f64]) -> Result<LVGSlice> {
        let grid = LocalVarianceGrid::new(self.skeleton.knots.clone(), self.expand(free_alpha), self.skeleton.s)?;
        match self.step {
            StepKind::FromZero => {
                let slice = solve_theta(&grid, self.quotes.tau)?;
                match self.config.spike_fix {
                    SpikeFix::C3Iteration(n) => Ok(slice.c3_update_alpha_s(n).0),
                    _ => Ok(slice),
                }
            }
            StepKind::FromPrior { prior, dtau } => solve_theta_with_prior(&grid, dtau, prior),
        }
    }

    fn model_vol(&self, slice: &LVGSlice, i: usize) -> Result<f64> {
        let x = self.quotes.strikes[i];
        let v = slice.eval_v(x)?;
        implied_vol(v, self.quotes.forward, x, self.quotes.tau, x >= self.quotes.forward)
    }

    pub fn residuals(&self, free_alpha: &[f64]) -> Result<Vec<f64>> {
        let slice = self.model(free_alpha)?;
        let n = self.quotes.len();
        let mut r = Vec::with_capacity(2 * n);
        for i in 0..n {
            let w = self.weights[i];
            if w == 0.0 {
                r.push(0.0);
                continue;
            }
            let value = match self.config.objective {
                Objective::VolSpace => match self.model_vol(&slice, i) {
                    Ok(vol) => w * (vol - self.targets[i]),
                    Err(_) => self.config.failure_penalty * self.quotes.mu[i],
                },
                Objective::PriceSpace => w * (slice.eval_v(self.quotes.strikes[i])? - self.targets[i]),
            };
            r.push(value);
        }
        if self.config.regularization != Regularization::None && self.lambda_tilde > 0.0 && n >= 3 {
            let xs: Vec<f64> = self.quote_knot.iter().map(|&k| self.skeleton.knots[k]).collect();
            let ys: Vec<f64> = match self.config.regularization {
                Regularization::AlphaSecondDifference => {
                    let alphas = slice.grid().alphas.clone();
                    self.quote_knot.iter().map(|&k| alphas[k]).collect()
                }
                _ => xs
                    .iter()
                    .map(|&x| slice.eval_density(x).map(|d| d.max(f64::MIN_POSITIVE).ln()))
                    .collect::<Result<Vec<_>>>()?,
            };
            for i in 1..n - 1 {
                let d = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]) - (ys[i] - ys[i - 1]) / (xs[i] - xs[i - 1]);
                r.push(self.lambda_tilde * d);
            }
        }
        Ok(r)
    }

    /// Unweighted implied-volatility RMSE over weighted quotes; infinite if
    /// any model price has no implied volatility.
    pub fn rmse_vol(&self, slice: &LVGSlice) -> f64 {
        let mut sum = 0.0;
        let mut count = 0;
        for i in 0..self.quotes.len() {
            if self.quotes.mu[i] == 0.0 {
                continue;
            }
            match self.model_vol(slice, i) {
                Ok(v) => sum += (v - self.quotes.vols[i]).powi(2),
                Err(_) => return f64::INFINITY,
            }
            count += 1;
        }
        if count == 0 {
            0.0
        } else {
            (sum / count as f64).sqrt()
        }
    }

    pub fn solve(&self, guess: &[f64]) -> Result<Calibrated> {
        let started = crate::clock::now_ms();
        let (lo, hi) = self.config.bounds(self.quotes.forward);
        let n = self.free.len();
        let x0: Vec<f64> = guess.iter().map(|a| a.clamp(lo, hi)).collect();
        let lm = levenberg_marquardt(
            |a| self.residuals(a),
            &x0,
            &vec![lo; n],
            &vec![hi; n],
            &self.config.solver,
        )?;
        let slice = self.model(&lm.x)?;
        let report = FitReport {
            rmse_vol: self.rmse_vol(&slice),
            iterations: lm.iterations,
            duration_ms: crate::clock::now_ms() - started,
            objective: self.config.objective,
            lambda: self.config.lambda,
            spike_fix: self.config.spike_fix.to_string(),
            converged: lm.reason != StopReason::MaxIterations,
            evaluations: lm.evaluations,
        };
        Ok(Calibrated { slice, report })
    }
}

/// Adds the zero-weight quote at the forward used by the fictitious-point
/// spike fix, unless a quote is already there.
pub(crate) fn with_fictitious_point(quotes: &QuoteSlice) -> QuoteSlice {
    if quotes.strikes.iter().any(|&k| same_point(k, quotes.forward)) {
        return quotes.clone();
    }
    let pos = quotes.strikes.partition_point(|&k| k < quotes.forward);
    let mut q = quotes.clone();
    q.strikes.insert(pos, quotes.forward);
    q.vols.insert(pos, quotes.atm_vol());
    q.mu.insert(pos, 0.0);
    if let Some(p) = &mut q.prices {
        let atm = otm_price(quotes.forward, quotes.forward, quotes.atm_vol() * quotes.tau.sqrt());
        p.insert(pos, atm);
    }
    q
}

/// Calibrates one maturity solved from time zero.
pub fn calibrate_slice(quotes: &QuoteSlice, config: &CalibrationConfig) -> Result<Calibrated> {
    config.validate()?;
    quotes.validate()?;
    if quotes.mu.iter().all(|&m| m == 0.0) {
        return Err(LlvgError::InvalidInput(
            "at least one quote needs a positive weight".into(),
        ));
    }
    let skeleton = build_grid(quotes, config.domain)?;
    let working = if config.spike_fix == SpikeFix::FictitiousPoint {
        with_fictitious_point(quotes)
    } else {
        quotes.clone()
    };
    let problem = Problem::new(working, config, skeleton, StepKind::FromZero)?;
    let free_knots: Vec<f64> = problem.free.iter().map(|&k| problem.skeleton.knots[k]).collect();
    let guess = initial_guess(quotes, &free_knots, config.guess, config.bounds(quotes.forward));
    let mut out = problem.solve(&guess)?;
    // the report refers to the caller's quotes only
    if config.spike_fix == SpikeFix::FictitiousPoint {
        let original = Problem::new(quotes.clone(), config, problem.skeleton.clone(), StepKind::FromZero)?;
        out.report.rmse_vol = original.rmse_vol(&out.slice);
    }
    Ok(out)
}
