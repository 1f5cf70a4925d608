//! Browser bindings: calibrate a smile, plot the fitted curves, and clean
//! arbitrage out of quotes. Every export takes plain numbers and returns a
//! JSON string so the page needs no glue beyond `JSON.parse`.

use llvg::black::implied_vol;
use llvg::calibration::{calibrate_slice, CalibrationConfig, QuoteSlice, SpikeFix};
use llvg::dearbitrage::dearbitrage;
use llvg::fixtures;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Smile {
    strikes: Vec<f64>,
    vols: Vec<f64>,
    forward: f64,
    tau: f64,
}

#[derive(Serialize)]
struct Curve {
    x: Vec<f64>,
    vol: Vec<Option<f64>>,
    density: Vec<f64>,
    local_vol: Vec<f64>,
}

#[derive(Serialize)]
struct Fit {
    rmse_vol: f64,
    iterations: usize,
    converged: bool,
    knots: Vec<f64>,
    alphas: Vec<f64>,
    curve: Curve,
}

#[derive(Serialize)]
struct Cleaned {
    violations: Vec<String>,
    vols: Vec<f64>,
    before: Vec<f64>,
    after: Vec<f64>,
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

/// Quotes of a built-in example: `case1`, `case2` or `blackflat`.
pub fn fixture_json(name: &str) -> Result<String, String> {
    let q = match name {
        "case1" => fixtures::case1(),
        "case2" => fixtures::case2(),
        "blackflat" => fixtures::blackflat(),
        other => return Err(format!("unknown example '{other}'")),
    };
    to_json(&Smile {
        strikes: q.strikes,
        vols: q.vols,
        forward: q.forward,
        tau: q.tau,
    })
}

fn parse_spike_fix(s: &str) -> Result<SpikeFix, String> {
    match s {
        "none" => Ok(SpikeFix::None),
        "fictitious" => Ok(SpikeFix::FictitiousPoint),
        _ => s
            .strip_prefix("c3:")
            .and_then(|n| n.parse().ok())
            .map(SpikeFix::C3Iteration)
            .ok_or_else(|| format!("unknown spike fix '{s}'")),
    }
}

/// Fits the model to a smile and samples implied vol, density and local
/// vol on `points` strikes across the fitted domain.
pub fn calibrate_json(
    strikes: &[f64],
    vols: &[f64],
    forward: f64,
    tau: f64,
    spike_fix: &str,
    points: usize,
) -> Result<String, String> {
    let quotes = QuoteSlice::new(strikes.to_vec(), vols.to_vec(), vec![1.0; strikes.len()], forward, tau)
        .map_err(|e| e.to_string())?;
    let config = CalibrationConfig {
        spike_fix: parse_spike_fix(spike_fix)?,
        ..CalibrationConfig::default()
    };
    let fit = calibrate_slice(&quotes, &config).map_err(|e| e.to_string())?;
    let slice = &fit.slice;
    let (l, u) = (slice.lower(), slice.upper());
    let n = points.clamp(10, 2000);
    let x: Vec<f64> = (1..n).map(|i| l + (u - l) * i as f64 / n as f64).collect();
    let mut curve = Curve {
        vol: Vec::with_capacity(x.len()),
        density: Vec::with_capacity(x.len()),
        local_vol: Vec::with_capacity(x.len()),
        x,
    };
    for &k in &curve.x {
        let call = slice.eval_call(k).map_err(|e| e.to_string())?;
        curve.vol.push(implied_vol(call, forward, k, tau, true).ok());
        curve.density.push(slice.eval_density(k).map_err(|e| e.to_string())?);
        curve.local_vol.push(slice.grid().a(k).map_or(f64::NAN, |a| a / k));
    }
    to_json(&Fit {
        rmse_vol: fit.report.rmse_vol,
        iterations: fit.report.iterations,
        converged: fit.report.converged,
        knots: slice.grid().knots.clone(),
        alphas: slice.grid().alphas.clone(),
        curve,
    })
}

/// Finds arbitrage in a smile and returns the closest clean one.
pub fn dearbitrage_json(strikes: &[f64], vols: &[f64], forward: f64, tau: f64) -> Result<String, String> {
    let quotes = QuoteSlice::new(strikes.to_vec(), vols.to_vec(), vec![1.0; strikes.len()], forward, tau)
        .map_err(|e| e.to_string())?;
    let out = dearbitrage(&quotes, None, None).map_err(|e| e.to_string())?;
    let violations = out
        .violations
        .iter()
        .map(|v| {
            let kind = serde_json::to_value(v.kind)
                .ok()
                .and_then(|k| k.as_str().map(str::to_string));
            format!(
                "strike {} {} by {:.3e}",
                strikes[v.index],
                kind.unwrap_or_default(),
                v.magnitude
            )
        })
        .collect();
    to_json(&Cleaned {
        violations,
        vols: out.quotes.vols,
        before: out.before,
        after: out.after,
    })
}

#[wasm_bindgen]
pub fn fixture(name: &str) -> Result<String, JsError> {
    fixture_json(name).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn calibrate(
    strikes: &[f64],
    vols: &[f64],
    forward: f64,
    tau: f64,
    spike_fix: &str,
    points: usize,
) -> Result<String, JsError> {
    calibrate_json(strikes, vols, forward, tau, spike_fix, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn clean_smile(strikes: &[f64], vols: &[f64], forward: f64, tau: f64) -> Result<String, JsError> {
    dearbitrage_json(strikes, vols, forward, tau).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn smile(name: &str) -> (Vec<f64>, Vec<f64>, f64, f64) {
        let v: Value = serde_json::from_str(&fixture_json(name).unwrap()).unwrap();
        let nums = |k: &str| v[k].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        (
            nums("strikes"),
            nums("vols"),
            v["forward"].as_f64().unwrap(),
            v["tau"].as_f64().unwrap(),
        )
    }

    #[test]
    fn calibrates_the_flat_smile() {
        let (k, v, f, t) = smile("blackflat");
        let out: Value = serde_json::from_str(&calibrate_json(&k, &v, f, t, "fictitious", 100).unwrap()).unwrap();
        assert!(out["rmse_vol"].as_f64().unwrap() < 1e-8);
        assert_eq!(out["curve"]["x"].as_array().unwrap().len(), 99);
        assert!(out["curve"]["density"]
            .as_array()
            .unwrap()
            .iter()
            .all(|d| d.as_f64().unwrap() >= 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(fixture_json("nope").is_err());
        assert!(calibrate_json(&[1.0], &[0.2], 1.0, 1.0, "sideways", 50).is_err());
        assert!(calibrate_json(&[1.0, 0.9], &[0.2], 1.0, 1.0, "none", 50).is_err());
    }

    #[test]
    fn cleans_a_bumped_smile() {
        let (k, mut v, f, t) = smile("blackflat");
        v[4] += 0.08;
        let out: Value = serde_json::from_str(&dearbitrage_json(&k, &v, f, t).unwrap()).unwrap();
        assert!(!out["violations"].as_array().unwrap().is_empty());
        let after: Vec<f64> = out["after"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .collect();
        assert!(llvg::dearbitrage::detect_arbitrage(&k, &after, f, 0.0).is_empty());
    }
}
