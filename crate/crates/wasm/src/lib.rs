//! Browser bindings for the demo page. Each export takes plain numbers and
//! returns a JSON string; the `*_json` functions are the same operations for
//! native callers.

use beheco::experiment::{self, ExperimentConfig, SISO_BLOCK, SISO_BLOCKS, SISO_INPUT_STD};
use beheco::lti::{self, seeded_rng};
use beheco::obs_index::identify_observability_index;
use beheco::page::{self, RecentTrajectory};
use beheco::predictor::{build_predictor, check_small_noise, predict};
use beheco::robust::{self, SolverOptions};
use beheco::{presets, Error, Result};
use nalgebra::{DMatrix, DVector};
use serde_json::json;
use wasm_bindgen::prelude::*;

const HORIZON: usize = 3;

fn check_delta(delta: f64) -> Result<()> {
    if !(0.0..=10.0).contains(&delta) {
        return Err(Error::InvalidArgument(format!("noise bound must lie in [0, 10], got {delta}")));
    }
    Ok(())
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Smallest singular values of the Page test matrices for `k = 1, 2, ...` and
/// the identified index, on the SISO benchmark with noise `delta`.
pub fn obs_index_json(delta: f64, seed: u64) -> Result<String> {
    check_delta(delta)?;
    let sys = presets::siso_benchmark();
    let traj = lti::generate_historical(&sys, SISO_BLOCK, SISO_BLOCKS, SISO_INPUT_STD, &mut seeded_rng(seed))?;
    let y = lti::add_noise_with(traj.outputs(), delta, &mut seeded_rng(seed ^ 0x5eed));
    let u_page = page::page_matrix(traj.inputs(), SISO_BLOCK)?;
    let y_page = page::page_matrix(&y, SISO_BLOCK)?;
    let report = identify_observability_index(&u_page, &y_page, 1, 1, delta)?;
    Ok(serde_json::to_string(&report).expect("report serializes"))
}

/// Three-step prediction on the SISO benchmark with past horizon `l_p`,
/// against the noiseless continuation of a random recent window.
pub fn predict_json(delta: f64, seed: u64, l_p: usize) -> Result<String> {
    check_delta(delta)?;
    if !(1..=5).contains(&l_p) {
        return Err(Error::InvalidArgument(format!("past horizon must lie in 1..=5, got {l_p}")));
    }
    let sys = presets::siso_benchmark();
    let mut rng = seeded_rng(seed);
    let traj = lti::generate_historical(&sys, SISO_BLOCK, SISO_BLOCKS, SISO_INPUT_STD, &mut rng)?;
    let y = lti::add_noise_with(traj.outputs(), delta, &mut rng);
    let l_f = SISO_BLOCK - l_p;
    let data = page::behavioral_from_signals(traj.inputs(), &y, l_p, l_f, delta)?;

    let fresh = lti::generate_historical(&sys, SISO_BLOCK, 2, SISO_INPUT_STD, &mut rng)?;
    let (u_r, y_r) = (fresh.inputs(), fresh.outputs());
    let y_r_noisy = lti::add_noise_with(y_r, delta, &mut rng);
    let col = |m: &DMatrix<f64>, start: usize, len: usize| DVector::from_iterator(len, m.columns(start, len).iter().copied());
    let start = 4;
    let recent = RecentTrajectory::new(col(u_r, start, l_p), col(&y_r_noisy, start, l_p));
    let state = build_predictor(data, recent)?;
    let pred = predict(&state, &col(u_r, start + l_p, l_f))?;
    let truth = col(y_r, start + l_p, HORIZON);
    let y_hat = pred.y_f_hat.rows(0, HORIZON).into_owned();
    Ok(json!({
        "l_p": l_p,
        "y_true": truth.as_slice(),
        "y_hat": y_hat.as_slice(),
        "error": (&y_hat - &truth).norm(),
        "error_bound": finite(pred.y_f_error_bound),
        "sigma_min": state.sigma_min(),
        "certified": pred.certified,
    })
    .to_string())
}

/// Robust regulation of the SISO benchmark at noise `delta`: the robust input,
/// its worst-case and true costs, and the cost of the noiseless optimum.
pub fn regulate_json(delta: f64, seed: u64) -> Result<String> {
    check_delta(delta)?;
    let setup = experiment::siso_setup(&ExperimentConfig::default())?;
    let state = experiment::siso_trial_state(&setup, delta, seed)?;
    let opts = SolverOptions { seed, ..SolverOptions::default() };
    let res = robust::alternate_solve(&state, &opts)?;
    let c_check = robust::true_cost(&setup.sys, &setup.x_start, &res.u_check, &state.q(), &state.r(), &state.r_f())?;
    let trace: Vec<f64> = res.trace.iter().map(|t| t.c_worst).collect();
    Ok(json!({
        "u_check": res.u_check.as_slice(),
        "u_star": setup.u_star.as_slice(),
        "c_worst": res.c_worst,
        "c_check": c_check,
        "c_star": setup.c_star,
        "rel_subopt": experiment::relative_suboptimality(c_check, setup.c_star),
        "iterations": res.iterations,
        "converged": res.converged,
        "assumption4_ok": check_small_noise(&state, delta),
        "trace": trace,
    })
    .to_string())
}

fn to_js(r: Result<String>) -> std::result::Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen]
pub fn obs_index_trace(delta: f64, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(obs_index_json(delta, seed as u64))
}

#[wasm_bindgen]
pub fn predict_demo(delta: f64, seed: u32, l_p: u32) -> std::result::Result<String, JsValue> {
    to_js(predict_json(delta, seed as u64, l_p as usize))
}

#[wasm_bindgen]
pub fn regulate_demo(delta: f64, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(regulate_json(delta, seed as u64))
}
