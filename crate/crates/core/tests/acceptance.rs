//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use common::{brute_force_qp, lognormal_density, random_grid, random_qp, DenseSolution};
use llvg::black::{black_price, implied_vol, BlackInputs};
use llvg::calibration::{build_grid, calibrate_slice, CalibrationConfig, QuoteSlice, Regularization, SpikeFix};
use llvg::dearbitrage::{build_qp, dearbitrage, solve_qp, QpProblem};
use llvg::fixtures::{blackflat, case1, case2, kahale};
use llvg::surface::{
    calibrate_surface, check_calendar, solve_theta_with_prior, PriorPriceCurve, SurfaceConfig, SurfaceMode,
};
use llvg::{solve_theta, LVGSlice, LocalVarianceGrid, Side};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn model_vol(slice: &LVGSlice, x: f64) -> f64 {
    let v = slice.eval_v(x).unwrap();
    implied_vol(v, slice.forward(), x, slice.tau(), x >= slice.forward()).unwrap_or(f64::NAN)
}

fn rmse(slice: &LVGSlice, q: &QuoteSlice) -> f64 {
    let sum: f64 = q
        .strikes
        .iter()
        .zip(&q.vols)
        .map(|(&k, &v)| (model_vol(slice, k) - v).powi(2))
        .sum();
    (sum / q.len() as f64).sqrt()
}

fn case_one() -> Outcome {
    let q = case1();
    let cfg = CalibrationConfig::default();
    calibrate_slice(&q, &cfg).unwrap();
    let start = Instant::now();
    let fit = calibrate_slice(&q, &cfg).unwrap();
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let err = rmse(&fit.slice, &q);
    outcome(
        err <= 1e-10 && ms <= 100.0,
        format!("RMSE {err:.2e} (<= 1e-10), {ms:.1} ms (<= 100 ms)"),
    )
}

fn case_two() -> Outcome {
    let q = case2();
    let mut cfg = CalibrationConfig {
        alpha_bounds: Some((1e-4, 1e5)),
        ..CalibrationConfig::default()
    };
    cfg.solver.max_iterations = 2000;
    let fit = calibrate_slice(&q, &cfg).unwrap();
    let err = rmse(&fit.slice, &q);
    outcome(
        err <= 1e-6,
        format!("RMSE {err:.2e} (<= 1e-6) after {} iterations", fit.report.iterations),
    )
}

fn black_flat() -> Outcome {
    let q = blackflat();
    let fict = CalibrationConfig {
        spike_fix: SpikeFix::FictitiousPoint,
        regularization: Regularization::LogDensitySecondDifference,
        lambda: 1e-8,
        ..CalibrationConfig::default()
    };
    let fit = calibrate_slice(&q, &fict).unwrap();
    let err = rmse(&fit.slice, &q);
    let c3 = CalibrationConfig {
        spike_fix: SpikeFix::C3Iteration(3),
        ..CalibrationConfig::default()
    };
    let smooth = calibrate_slice(&q, &c3).unwrap();
    let sk = build_grid(&q, c3.domain).unwrap();
    let (a, b) = (sk.knots[sk.s - 1], sk.knots[sk.s + 1]);
    let pts: Vec<f64> = (1..4000).map(|i| a + (b - a) * i as f64 / 4000.0).collect();
    let model = pts
        .iter()
        .map(|&x| smooth.slice.eval_density(x).unwrap())
        .fold(0.0, f64::max);
    let exact = pts
        .iter()
        .map(|&x| lognormal_density(x, q.forward, 0.2, q.tau))
        .fold(0.0, f64::max);
    let rel = (model / exact - 1.0).abs();
    outcome(
        err <= 1e-6 && rel <= 0.05,
        format!(
            "fictitious-point RMSE {err:.2e} (<= 1e-6); c3:3 peak density off by {:.2}% (<= 5%)",
            100.0 * rel
        ),
    )
}

fn kahale_surface() -> Outcome {
    let slices = kahale();
    let fit = |mode| {
        calibrate_surface(
            &slices,
            &SurfaceConfig {
                mode,
                ..SurfaceConfig::default()
            },
        )
        .unwrap()
    };
    let ind = fit(SurfaceMode::Independent);
    let boot = fit(SurfaceMode::Bootstrap);
    let complete = ind.failures.is_empty() && boot.failures.is_empty();
    let (l, u) = (ind.model.slices[0].lower(), ind.model.slices[0].upper());
    let dense: Vec<f64> = (1..1000).map(|i| l + (u - l) * i as f64 / 1000.0).collect();
    let crossings = check_calendar(&ind.model, &dense).len();
    let knots: Vec<f64> = boot
        .model
        .slices
        .iter()
        .filter_map(|s| s.prior())
        .flat_map(|p| p.knots.clone())
        .collect();
    let boot_crossings = check_calendar(&boot.model, &knots).len();
    let i = slices.iter().position(|s| s.maturity == 1.0).unwrap();
    let ms = &slices[i];
    let (lo, hi) = (ms.strikes[0], *ms.strikes.last().unwrap());
    let diff = (0..=400)
        .map(|j| {
            let x = (lo + (hi - lo) * j as f64 / 400.0) / ms.forward;
            (ind.model.implied_vol(i, x).unwrap() - boot.model.implied_vol(i, x).unwrap()).abs()
        })
        .fold(0.0, f64::max);
    outcome(
        complete && crossings >= 1 && boot_crossings == 0 && diff <= 1e-3,
        format!(
            "independent crossings {crossings} (>= 1); bootstrap crossings at {} prior knots {boot_crossings} (0); T=1 max smile difference {:.2} bp (<= 10 bp)",
            knots.len(),
            diff * 1e4
        ),
    )
}

/// Second derivative from a five-point stencil on the first derivative.
fn second_derivative(slice: &LVGSlice, x: f64, h: f64) -> f64 {
    let d = |t: f64| slice.eval_v_prime(t, Side::Right).unwrap();
    (-d(x + 2.0 * h) + 8.0 * d(x + h) - 8.0 * d(x - h) + d(x - 2.0 * h)) / (12.0 * h)
}

fn property_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut ode, mut jump, mut min_density, mut cont, mut parity) =
        (0.0_f64, 0.0_f64, f64::INFINITY, 0.0_f64, 0.0_f64);
    for _ in 0..50 {
        let m = rng.gen_range(2..=12);
        let grid = random_grid(&mut rng, m, 0.1, 0.6);
        let tau = rng.gen_range(0.1..2.0);
        let slice = solve_theta(&grid, tau).unwrap();
        let (l, u) = (grid.lower(), grid.upper());
        for k in 0..200 {
            let i = k % (m + 1);
            let (x0, x1) = (grid.knots[i], grid.knots[i + 1]);
            let x = x0 + (x1 - x0) * rng.gen_range(0.1..0.9);
            let a = grid.a(x).unwrap();
            let h = 1e-3 * (x1 - x0).min(a * (tau / 2.0).sqrt());
            let v = slice.eval_v(x).unwrap();
            let res = (v - 0.5 * a * a * tau * second_derivative(&slice, x, h)).abs() / v;
            ode = ode.max(res);
        }
        let xs = grid.forward();
        let dj = slice.eval_v_prime(xs, Side::Left).unwrap() - slice.eval_v_prime(xs, Side::Right).unwrap();
        jump = jump.max((dj - 1.0).abs());
        for k in 1..10_000 {
            let x = l + (u - l) * k as f64 / 10_000.0;
            min_density = min_density.min(slice.eval_density(x).unwrap());
            let p = slice.eval_call(x).unwrap() - slice.eval_put(x).unwrap() - (xs - x);
            parity = parity.max(p.abs());
        }
        for &x in &grid.knots[1..=m] {
            let a = grid.a(x).unwrap();
            let left = 2.0 * slice.eval_homogeneous(x, Side::Left).unwrap().0 / (a * a * tau);
            let right = 2.0 * slice.eval_homogeneous(x, Side::Right).unwrap().0 / (a * a * tau);
            cont = cont.max((left - right).abs() / left.abs().max(right.abs()));
        }
    }
    outcome(
        ode <= 1e-8 && jump <= 1e-11 && min_density >= 0.0 && cont <= 1e-9 && parity <= 1e-15,
        format!(
            "ODE residual {ode:.1e} (<= 1e-8), jump error {jump:.1e} (<= 1e-11), min density {min_density:.1e} (>= 0), density jump {cont:.1e} (<= 1e-9), parity {parity:.1e}"
        ),
    )
}

fn smooth_calls<R: Rng>(rng: &mut R, m: usize) -> (Vec<f64>, Vec<f64>) {
    let strikes: Vec<f64> = (0..m)
        .map(|i| 0.7 + 0.1 * i as f64 + rng.gen_range(0.0..0.05))
        .collect();
    let vol = rng.gen_range(0.1..0.4);
    let calls = strikes
        .iter()
        .map(|&k| black_price(&BlackInputs::new(1.0, k, vol, 1.0, true)).unwrap() * (1.0 + rng.gen_range(-0.05..0.05)))
        .collect();
    (strikes, calls)
}

fn qp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0_f64;
    for k in 0..200 {
        let problem = if k % 4 == 0 {
            let m = rng.gen_range(3..=5);
            let (y, c) = smooth_calls(&mut rng, m);
            let w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.5..2.0)).collect();
            build_qp(&y, &c, 1.0, &w, 1e-6).unwrap()
        } else {
            let n = rng.gen_range(1..=8);
            let p = rng.gen_range(1..=8);
            let (q_mat, q_vec, g, h) = random_qp(&mut rng, n, p);
            QpProblem { q_mat, q_vec, g, h }
        };
        let z = DVector::from_vec(solve_qp(&problem).unwrap());
        let oracle = brute_force_qp(&problem.q_mat, &problem.q_vec, &problem.g, &problem.h).unwrap();
        worst = worst.max((&z - &oracle).amax() / (1.0 + oracle.amax()));
    }
    let mut idem = 0.0_f64;
    for _ in 0..20 {
        let (y, c) = smooth_calls(&mut rng, 12);
        let q = QuoteSlice::from_call_prices(y, c.iter().map(|v| v.max(1e-4)).collect(), vec![1.0; 12], 1.0, 1.0);
        let Ok(q) = q else { continue };
        let once = dearbitrage(&q, None, None).unwrap();
        let twice = dearbitrage(&once.quotes, None, None).unwrap();
        for (a, b) in once.after.iter().zip(&twice.after) {
            idem = idem.max((a - b).abs());
        }
    }
    outcome(
        worst <= 1e-9 && idem <= 1e-10,
        format!("max deviation from enumeration {worst:.1e} (<= 1e-9); idempotence {idem:.1e} (<= 1e-10)"),
    )
}

/// Prior on all grid knots from Black prices at a flat volatility.
fn black_prior(grid: &LocalVarianceGrid, vol: f64, t: f64) -> PriorPriceCurve {
    let f = grid.forward();
    let n = grid.knots.len();
    let otm = grid
        .knots
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if i == 0 || i == n - 1 {
                0.0
            } else {
                black_price(&BlackInputs::new(f, x, vol, t, x >= f)).unwrap()
            }
        })
        .collect();
    PriorPriceCurve::from_otm(grid.knots.clone(), otm, f).unwrap()
}

fn multi_kink() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let m = rng.gen_range(2..=12);
        let grid = random_grid(&mut rng, m, 0.15, 0.5);
        let dtau = rng.gen_range(0.05..0.5);
        let prior = black_prior(&grid, rng.gen_range(0.1..0.3), rng.gen_range(0.1..1.0));
        let f = grid.forward();
        let calls: Vec<f64> = grid
            .knots
            .iter()
            .zip(&prior.otm_values)
            .map(|(&x, &v)| v + (f - x).max(0.0))
            .collect();
        let slope = |i: usize| (calls[i + 1] - calls[i]) / (grid.knots[i + 1] - grid.knots[i]);
        let mut jumps = vec![0.0; m + 2];
        for (j, jump) in jumps.iter_mut().enumerate().take(m + 1).skip(1) {
            *jump = slope(j) - slope(j - 1);
        }
        let dense = DenseSolution::solve(&grid, dtau, &jumps);
        let slice = solve_theta_with_prior(&grid, dtau, &prior).unwrap();
        let (l, u) = (grid.lower(), grid.upper());
        let pts: Vec<f64> = (1..500).map(|i| l + (u - l) * i as f64 / 500.0).collect();
        let scale = pts.iter().map(|&x| dense.value(x).abs()).fold(0.0, f64::max);
        for &x in &pts {
            let w = slice.eval_homogeneous(x, Side::Right).unwrap().0;
            worst = worst.max((w - dense.value(x)).abs() / scale);
        }
    }
    outcome(
        worst <= 1e-10,
        format!("max relative deviation from dense solve {worst:.1e} (<= 1e-10)"),
    )
}

fn noisy_ladder() -> Outcome {
    let mut q = case1();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for v in &mut q.vols {
        *v += rng.gen_range(-0.005..0.005);
    }
    let clean = dearbitrage(&q, None, None).unwrap().quotes;
    let lambdas = [0.0, 1e-6, 1e-5, 1e-4, 1e-3];
    let mut errors = Vec::new();
    let (mut min_density, mut jump) = (f64::INFINITY, 0.0_f64);
    for &lambda in &lambdas {
        let cfg = CalibrationConfig {
            regularization: Regularization::LogDensitySecondDifference,
            lambda,
            ..CalibrationConfig::default()
        };
        let fit = calibrate_slice(&clean, &cfg).unwrap();
        errors.push(rmse(&fit.slice, &clean));
        let s = &fit.slice;
        let (l, u) = (s.lower(), s.upper());
        for k in 1..5000 {
            min_density = min_density.min(s.eval_density(l + (u - l) * k as f64 / 5000.0).unwrap());
        }
        let grid = s.grid();
        for &x in &grid.knots[1..grid.knots.len() - 1] {
            let a = grid.a(x).unwrap();
            let left = s.eval_homogeneous(x, Side::Left).unwrap().0 / (a * a);
            let right = s.eval_homogeneous(x, Side::Right).unwrap().0 / (a * a);
            jump = jump.max((left - right).abs() / left.abs().max(right.abs()));
        }
    }
    let monotone = errors.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9));
    let list: Vec<String> = errors.iter().map(|e| format!("{e:.2e}")).collect();
    outcome(
        monotone && min_density > 0.0 && jump <= 1e-9,
        format!(
            "RMSE over lambda {lambdas:?}: [{}] nondecreasing {monotone}; min density {min_density:.1e} (> 0); density jump {jump:.1e}",
            list.join(", ")
        ),
    )
}

type Check = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Check; 8] = [
        ("case I reproduction", case_one),
        ("case II reproduction", case_two),
        ("black-flat spike fixture", black_flat),
        ("kahale surface", kahale_surface),
        ("property suite", property_suite),
        ("QP oracle equivalence", qp_oracle),
        ("multi-kink solve equivalence", multi_kink),
        ("noisy case I regularization ladder", noisy_ladder),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = check();
        let tag = if result.passed { "PASS" } else { "FAIL" };
        println!("{tag} criterion {}: {name}: {}", i + 1, result.detail);
        if !result.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
