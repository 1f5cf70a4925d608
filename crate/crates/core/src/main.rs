use clap::{Args, Parser, Subcommand, ValueEnum};
use llvg::calibration::{calibrate_slice, CalibrationConfig, Objective, QuoteSlice, Regularization, SpikeFix};
use llvg::dearbitrage::{dearbitrage, DEFAULT_EPSILON};
use llvg::fixtures::Fixture;
use llvg::io::{
    fmt_f64, read_model, read_quotes, rows_to_slices, slice_to_rows, spread_weights, write_model, write_quotes,
    ModelFile, QuoteRow,
};
use llvg::repro::{run, Table};
use llvg::surface::{calibrate_surface, normalize_slice, MarketSlice, SurfaceConfig, SurfaceMode};
use llvg::{LVGSlice, LlvgError};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_INPUT: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_REPRO_FAILED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "llvg",
    version,
    about = "Arbitrage-free smile interpolation with the piecewise-linear local variance gamma model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit quotes; writes a slice model for one maturity, a surface otherwise.
    Calibrate(CalibrateArgs),
    /// Evaluate a model file at strikes; CSV on stdout.
    Eval(EvalArgs),
    /// Project quotes onto arbitrage-free prices; CSV on stdout or --output.
    Dearb(DearbArgs),
    /// Run the reproduction checks: table1, blackflat, kahale, noisy or all.
    Repro { table: String },
}

#[derive(Args)]
struct Source {
    /// Quote file (CSV).
    quotes: Option<PathBuf>,
    /// Embedded quote set: case1, case2, kahale or blackflat.
    #[arg(long, conflicts_with = "quotes")]
    fixture: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Vol,
    Price,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegArg {
    None,
    Alpha,
    Density,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Independent,
    Bootstrap,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_enum, default_value = "vol")]
    objective: ObjectiveArg,
    #[arg(long, value_enum, default_value = "none")]
    reg: RegArg,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Relative step size at which the solver stops.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, value_enum, default_value = "independent")]
    mode: ModeArg,
    /// none, fictitious or c3:N
    #[arg(long, default_value = "none", value_parser = parse_spike_fix)]
    spike_fix: SpikeFix,
    #[arg(long, default_value_t = 50)]
    prior_knots: usize,
    /// Upper bound on node values, as a multiple of the forward.
    #[arg(long, default_value_t = 10.0)]
    alpha_max: f64,
    /// Model file; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum OutArg {
    Price,
    Vol,
    Density,
    Totalvar,
}

#[derive(Args)]
struct EvalArgs {
    model: PathBuf,
    /// Comma-separated strikes.
    #[arg(
        long,
        value_delimiter = ',',
        conflicts_with = "grid",
        required_unless_present = "grid"
    )]
    strikes: Vec<f64>,
    /// Number of equidistant strikes inside the model domain.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, value_enum, default_value = "price")]
    out: OutArg,
}

#[derive(Args)]
struct DearbArgs {
    #[command(flatten)]
    source: Source,
    /// Margin of the slope, convexity and bound constraints, relative to the
    /// forward.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn parse_spike_fix(s: &str) -> Result<SpikeFix, String> {
    match s {
        "none" => Ok(SpikeFix::None),
        "fictitious" => Ok(SpikeFix::FictitiousPoint),
        _ => s
            .strip_prefix("c3:")
            .and_then(|n| n.parse().ok())
            .filter(|&n| n > 0)
            .map(SpikeFix::C3Iteration)
            .ok_or_else(|| format!("expected none, fictitious or c3:N, got '{s}'")),
    }
}

/// Error with the exit code it maps to.
struct Failure(u8, String);

impl From<LlvgError> for Failure {
    fn from(e: LlvgError) -> Self {
        let code = match e {
            LlvgError::Parse(_) | LlvgError::InvalidInput(_) => EXIT_INPUT,
            _ => EXIT_NOT_CONVERGED,
        };
        Failure(code, e.to_string())
    }
}

fn input_error(msg: impl Into<String>) -> Failure {
    Failure(EXIT_INPUT, msg.into())
}

fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| input_error(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(source: &Source) -> Result<(Vec<MarketSlice>, Vec<QuoteRow>), Failure> {
    match (&source.quotes, &source.fixture) {
        (_, Some(name)) => {
            let fx = Fixture::parse(name)
                .ok_or_else(|| input_error(format!("unknown fixture '{name}' (case1, case2, kahale, blackflat)")))?;
            Ok((fx.market_slices(), vec![]))
        }
        (Some(path), None) => {
            let text = read_file(path)?;
            let rows = read_quotes(text.as_bytes()).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
            Ok((rows_to_slices(&rows)?, rows))
        }
        (None, None) => Err(input_error("give a quote file or --fixture")),
    }
}

/// A single maturity in its own strike units, undiscounted.
fn single_slice(ms: &MarketSlice) -> Result<QuoteSlice, LlvgError> {
    match &ms.prices {
        Some(p) => QuoteSlice::from_call_prices(
            ms.strikes.clone(),
            p.iter().map(|v| v / ms.discount).collect(),
            ms.mu.clone(),
            ms.forward,
            ms.maturity,
        ),
        None => QuoteSlice::new(
            ms.strikes.clone(),
            ms.vols.clone(),
            ms.mu.clone(),
            ms.forward,
            ms.maturity,
        ),
    }
}

fn calibration_config(args: &CalibrateArgs, forward: f64) -> CalibrationConfig {
    let mut cfg = CalibrationConfig {
        objective: match args.objective {
            ObjectiveArg::Vol => Objective::VolSpace,
            ObjectiveArg::Price => Objective::PriceSpace,
        },
        regularization: match args.reg {
            RegArg::None => Regularization::None,
            RegArg::Alpha => Regularization::AlphaSecondDifference,
            RegArg::Density => Regularization::LogDensitySecondDifference,
        },
        lambda: args.lambda,
        alpha_bounds: Some((1e-4 * forward, args.alpha_max * forward)),
        spike_fix: args.spike_fix,
        ..CalibrationConfig::default()
    };
    cfg.solver.step_tolerance = args.tol;
    cfg.solver.max_iterations = args.max_iter;
    cfg
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<(), Failure> {
    let (slices, _) = load(&args.source)?;
    if slices.len() == 1 {
        let quotes = single_slice(&slices[0])?;
        let fit = calibrate_slice(&quotes, &calibration_config(args, quotes.forward))?;
        eprintln!("{}", serde_json::to_string(&fit.report).expect("report serializes"));
        write_output(args.output.as_deref(), &write_model(&ModelFile::Slice(fit.slice))?)?;
        return if fit.report.converged {
            Ok(())
        } else {
            Err(Failure(
                EXIT_NOT_CONVERGED,
                "solver stopped at the iteration limit".into(),
            ))
        };
    }
    let config = SurfaceConfig {
        calibration: calibration_config(args, 1.0),
        mode: match args.mode {
            ModeArg::Independent => SurfaceMode::Independent,
            ModeArg::Bootstrap => SurfaceMode::Bootstrap,
        },
        prior_knots: args.prior_knots,
    };
    let fit = calibrate_surface(&slices, &config)?;
    for (t, report) in &fit.reports {
        eprintln!(
            "{{\"maturity\":{},\"report\":{}}}",
            fmt_f64(*t),
            serde_json::to_string(report).expect("report serializes")
        );
    }
    for (t, e) in &fit.failures {
        eprintln!("maturity {}: {e}", fmt_f64(*t));
    }
    if fit.model.slices.is_empty() {
        return Err(Failure(EXIT_NOT_CONVERGED, "no maturity could be calibrated".into()));
    }
    write_output(args.output.as_deref(), &write_model(&ModelFile::Surface(fit.model))?)?;
    if !fit.failures.is_empty() || fit.reports.iter().any(|(_, r)| !r.converged) {
        return Err(Failure(EXIT_NOT_CONVERGED, "not every maturity converged".into()));
    }
    Ok(())
}

/// One output value at driftless strike `x` of `slice`, scaled back to the
/// quote units by forward `f` and discount `b`.
fn eval_point(slice: &LVGSlice, x: f64, tau: f64, f: f64, b: f64, out: OutArg) -> Result<f64, LlvgError> {
    let vol = || llvg::black::implied_vol(slice.eval_v(x)?, slice.forward(), x, tau, x >= slice.forward());
    match out {
        OutArg::Price => Ok(b * f * slice.eval_call(x)?),
        OutArg::Vol => vol(),
        OutArg::Density => Ok(slice.eval_density(x)? / f),
        OutArg::Totalvar => vol().map(|v| v * v * tau),
    }
}

fn strikes_for(args: &EvalArgs, lower: f64, upper: f64) -> Vec<f64> {
    match args.grid {
        Some(n) => (1..=n)
            .map(|j| lower + (upper - lower) * j as f64 / (n + 1) as f64)
            .collect(),
        None => args.strikes.clone(),
    }
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Failure> {
    let model = read_model(&read_file(&args.model)?)?;
    let mut csv = String::new();
    let mut emit = |prefix: String, k: f64, value: Result<f64, LlvgError>| {
        let v = value.unwrap_or_else(|e| {
            eprintln!("warning: strike {}: {e}", fmt_f64(k));
            f64::NAN
        });
        csv.push_str(&format!("{prefix}{},{}\n", fmt_f64(k), fmt_f64(v)));
    };
    match &model {
        ModelFile::Slice(s) => {
            for k in strikes_for(args, s.lower(), s.upper()) {
                emit(String::new(), k, eval_point(s, k, s.tau(), 1.0, 1.0, args.out));
            }
            csv.insert_str(0, "strike,value\n");
        }
        ModelFile::Surface(m) => {
            for (i, s) in m.slices.iter().enumerate() {
                let (f, b, t) = (m.forwards[i], m.discounts[i], m.maturities[i]);
                for k in strikes_for(args, s.lower() * f, s.upper() * f) {
                    emit(format!("{},", fmt_f64(t)), k, eval_point(s, k / f, t, f, b, args.out));
                }
            }
            csv.insert_str(0, "maturity,strike,value\n");
        }
    }
    print!("{csv}");
    Ok(())
}

fn cmd_dearb(args: &DearbArgs) -> Result<(), Failure> {
    if !(args.epsilon > 0.0 && args.epsilon.is_finite()) {
        return Err(input_error("--epsilon must be positive"));
    }
    let (slices, rows) = load(&args.source)?;
    let mut out_rows = Vec::new();
    let mut report = String::new();
    for ms in &slices {
        let quotes = normalize_slice(ms)?;
        let weights = spread_weights(&rows, ms.maturity).map(|w| w.iter().map(|v| v * ms.forward).collect::<Vec<_>>());
        let cleaned = dearbitrage(&quotes, Some(args.epsilon), weights.as_deref())?;
        for v in &cleaned.violations {
            report.push_str(&format!(
                "maturity {} strike {} {} {}\n",
                fmt_f64(ms.maturity),
                fmt_f64(ms.strikes[v.index]),
                serde_json::to_string(&v.kind)
                    .expect("kind serializes")
                    .trim_matches('"'),
                fmt_f64(v.magnitude)
            ));
        }
        let scale = ms.discount * ms.forward;
        let clean_ms = MarketSlice {
            vols: cleaned.quotes.vols.clone(),
            prices: Some(cleaned.after.iter().map(|c| c * scale).collect()),
            ..ms.clone()
        };
        let mut new_rows = slice_to_rows(&clean_ms)?;
        for r in &mut new_rows {
            if let Some(orig) = rows.iter().find(|o| o.maturity == r.maturity && o.strike == r.strike) {
                r.bid = orig.bid;
                r.ask = orig.ask;
                r.weight = orig.weight;
            }
        }
        out_rows.extend(new_rows);
    }
    eprint!(
        "{}",
        if report.is_empty() {
            "no violations\n".to_string()
        } else {
            report
        }
    );
    let mut buf = Vec::new();
    write_quotes(&mut buf, &out_rows)?;
    write_output(args.output.as_deref(), &String::from_utf8(buf).expect("csv is utf-8"))
}

fn cmd_repro(table: &str) -> Result<(), Failure> {
    let t = Table::parse(table).ok_or_else(|| {
        input_error(format!(
            "unknown table '{table}' (table1, blackflat, kahale, noisy, all)"
        ))
    })?;
    let results = run(t)?;
    for c in &results {
        println!("{c}");
    }
    let failed = results.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure(
            EXIT_REPRO_FAILED,
            format!("{failed} of {} checks failed", results.len()),
        ));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Dearb(a) => cmd_dearb(a),
        Command::Repro { table } => cmd_repro(table),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
