//! wasm-bindgen surface for the static page in `www/`. Every export returns
//! a JSON string; errors become JS exceptions.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use ergodic_ia::metrics::{figure_data, least_squares_slope, ratio_to_f64};
use ergodic_ia::{Scheme, SchemeRunner, SystemConfig};

/// Upper limits keeping a single call interactive in the browser.
pub const MAX_K: usize = 200;
pub const MAX_USERS_SIMULATED: usize = 8;
pub const MAX_EPISODES: usize = 20_000;
pub const MAX_POINTS: usize = 25;

#[derive(Serialize)]
struct CurveRow {
    k: i64,
    proposed: f64,
    retro_csit: f64,
    retro_outputfb: f64,
    baseline: f64,
    proposed_exact: String,
}

pub fn dof_curves_json(k_max: usize) -> Result<String, String> {
    if !(3..=MAX_K).contains(&k_max) {
        return Err(format!("k_max must be in 3..={MAX_K}"));
    }
    let rows: Vec<CurveRow> = figure_data(3, k_max as i64)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|r| CurveRow {
            k: r.num_users,
            proposed: ratio_to_f64(r.proposed),
            retro_csit: ratio_to_f64(r.retro_csit),
            retro_outputfb: ratio_to_f64(r.retro_outputfb),
            baseline: ratio_to_f64(r.baseline),
            proposed_exact: format!("{}/{}", r.proposed.numer(), r.proposed.denom()),
        })
        .collect();
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct RateCurve {
    scheme: &'static str,
    k: usize,
    points: Vec<(f64, f64)>,
    slope: f64,
    formula: f64,
    aborted: usize,
}

fn parse_scheme(name: &str) -> Result<Scheme, String> {
    name.parse::<Scheme>().map_err(|e| e.to_string())
}

fn check_sim(k: usize, episodes: usize) -> Result<(), String> {
    if !(3..=MAX_USERS_SIMULATED).contains(&k) {
        return Err(format!("K must be in 3..={MAX_USERS_SIMULATED}"));
    }
    if !(1..=MAX_EPISODES).contains(&episodes) {
        return Err(format!("episodes must be in 1..={MAX_EPISODES}"));
    }
    Ok(())
}

pub fn sum_rate_curve_json(
    scheme: &str,
    k: usize,
    snr_lo_db: f64,
    snr_hi_db: f64,
    points: usize,
    episodes: usize,
    seed: u64,
) -> Result<String, String> {
    check_sim(k, episodes)?;
    if !(2..=MAX_POINTS).contains(&points) || snr_hi_db.is_nan() || snr_lo_db.is_nan() || snr_hi_db <= snr_lo_db {
        return Err(format!("need 2..={MAX_POINTS} points and snr_hi > snr_lo"));
    }
    let scheme = parse_scheme(scheme)?;
    let runner = SchemeRunner::genie(scheme);
    let mut curve = Vec::with_capacity(points);
    let mut aborted = 0;
    for i in 0..points {
        let snr = snr_lo_db + (snr_hi_db - snr_lo_db) * i as f64 / (points - 1) as f64;
        let config = SystemConfig::at_snr_db(k, snr, seed).map_err(|e| e.to_string())?;
        let batch = runner.run_batch(&config, episodes).map_err(|e| e.to_string())?;
        aborted += batch.aborted();
        curve.push((snr, batch.mean_sum_rate.unwrap_or(f64::NAN)));
    }
    let xs: Vec<f64> = curve.iter().map(|p| p.0 / (10.0 * 2f64.log10())).collect();
    let ys: Vec<f64> = curve.iter().map(|p| p.1).collect();
    let slope = least_squares_slope(&xs, &ys).map_err(|e| e.to_string())?;
    let formula = ratio_to_f64(scheme.formula(k).map_err(|e| e.to_string())?);
    serde_json::to_string(&RateCurve { scheme: scheme.name(), k, points: curve, slope, formula, aborted })
        .map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct NoiselessCheck {
    scheme: &'static str,
    k: usize,
    episodes: usize,
    aborted: usize,
    max_decode_error: f64,
    ledger: String,
    exact: bool,
}

pub fn noiseless_check_json(scheme: &str, k: usize, episodes: usize, seed: u64) -> Result<String, String> {
    check_sim(k, episodes)?;
    let scheme = parse_scheme(scheme)?;
    let config = SystemConfig::noiseless(k, seed).map_err(|e| e.to_string())?;
    let b = SchemeRunner::genie(scheme).run_batch(&config, episodes).map_err(|e| e.to_string())?;
    let ledger = b.ledger.map(|l| format!("{}/{}", l.messages_decoded, l.slots_consumed)).unwrap_or_default();
    serde_json::to_string(&NoiselessCheck {
        scheme: scheme.name(),
        k,
        episodes: b.completed(),
        aborted: b.aborted(),
        max_decode_error: b.max_decode_error,
        ledger,
        exact: b.max_decode_error < 1e-9,
    })
    .map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn dof_curves(k_max: usize) -> Result<String, JsError> {
    dof_curves_json(k_max).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn sum_rate_curve(
    scheme: &str,
    k: usize,
    snr_lo_db: f64,
    snr_hi_db: f64,
    points: usize,
    episodes: usize,
    seed: u64,
) -> Result<String, JsError> {
    sum_rate_curve_json(scheme, k, snr_lo_db, snr_hi_db, points, episodes, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn noiseless_check(scheme: &str, k: usize, episodes: usize, seed: u64) -> Result<String, JsError> {
    noiseless_check_json(scheme, k, episodes, seed).map_err(|e| JsError::new(&e))
}
