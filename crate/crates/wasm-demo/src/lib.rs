//! Browser bindings for three small operations: optimal piecewise-linear
//! fitting, routing a release series along an arc, and simulating a constant
//! release on a steep drawdown reservoir. Inputs and outputs are JSON strings.

use hydrocascade::approx::{fit_pwl_1d_optimal, max_error, FitSpec};
use hydrocascade::routing::RoutingSpec;
use hydrocascade::schedule::{ReservoirSchedule, Schedule, UnitSchedule};
use hydrocascade::simulate::simulate;
use hydrocascade::synthetic::drawdown_instance;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct FitOutput {
    pub breakpoints: Vec<(f64, f64)>,
    pub pieces: usize,
    pub max_error: f64,
}

#[derive(Debug, Deserialize)]
pub struct FitInput {
    pub samples: Vec<(f64, f64)>,
    pub epsilon: f64,
}

pub fn fit(input: &str) -> Result<String, String> {
    let req: FitInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let curve = fit_pwl_1d_optimal(&req.samples, &FitSpec::new(req.epsilon)).map_err(|e| e.to_string())?;
    let err = max_error(&curve, &req.samples).map_err(|e| e.to_string())?;
    let out = FitOutput { breakpoints: curve.breakpoints().to_vec(), pieces: curve.n_pieces(), max_error: err.value };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Debug, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RouteInput {
    Instantaneous { release: Vec<f64> },
    FixedLag { tau: usize, release: Vec<f64> },
    Convolution { kernel: Vec<f64>, release: Vec<f64> },
}

/// Arrivals downstream for periods `1..=release.len() + max lag`.
pub fn route(input: &str) -> Result<String, String> {
    let req: RouteInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let (spec, release) = match req {
        RouteInput::Instantaneous { release } => (RoutingSpec::instantaneous(), release),
        RouteInput::FixedLag { tau, release } => (RoutingSpec::fixed_lag(tau), release),
        RouteInput::Convolution { kernel, release } => (RoutingSpec::convolution(kernel), release),
    };
    spec.validate().map_err(|e| e.to_string())?;
    let mut padded = release;
    padded.extend(std::iter::repeat(0.0).take(spec.max_lag()));
    let arrivals: Vec<f64> = (1..=padded.len()).map(|t| spec.contribution(&padded, t)).collect();
    serde_json::to_string(&arrivals).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct DrawdownOutput {
    pub storage: Vec<f64>,
    pub head_predicted: Vec<f64>,
    pub head_realized: Vec<f64>,
    pub power_predicted: Vec<f64>,
    pub power_realized: Vec<f64>,
    pub energy_predicted_mwh: f64,
    pub energy_realized_mwh: f64,
    pub gap_percent: f64,
    pub violations: usize,
}

/// Runs the unit at `release` m³/s for `periods` hours, predicting power with
/// the head frozen at its initial value, and simulates the true trajectory.
pub fn drawdown(release: f64, periods: usize) -> Result<String, String> {
    if !(1..=48).contains(&periods) {
        return Err(format!("periods {periods} outside 1..=48"));
    }
    let (system, inflows) = drawdown_instance(periods);
    let res = &system.reservoirs[0];
    let unit = &system.units[0];
    if !(0.0..=unit.q_max).contains(&release) {
        return Err(format!("release {release} outside [0, {}]", unit.q_max));
    }
    let e0 = res.storage_to_elevation.evaluate(res.v_initial).map_err(|e| e.to_string())?;
    let tw = res.tailrace.curve.evaluate(release).map_err(|e| e.to_string())?;
    let h_ref = e0 - tw;
    let eta = match unit.power {
        hydrocascade::domain::PowerSurface::FixedEfficiency { efficiency } => efficiency,
        _ => return Err("drawdown unit must have a fixed efficiency".into()),
    };
    let p_ref = system.constants.hydropower_mw(eta, release, h_ref);
    let dt = system.time_grid.dt;
    let storage: Vec<f64> = (1..=periods).map(|t| res.v_initial - release * dt * t as f64).collect();
    let schedule = Schedule {
        dt,
        units: vec![UnitSchedule {
            id: unit.id.clone(),
            turbined: vec![release; periods],
            power: vec![p_ref; periods],
            commitment: vec![release > 0.0; periods],
            head: vec![h_ref; periods],
        }],
        reservoirs: vec![ReservoirSchedule {
            id: res.id.clone(),
            spill: vec![0.0; periods],
            storage: storage.clone(),
            elevation: vec![e0; periods],
        }],
    };
    let report = simulate(&system, &schedule, &inflows).map_err(|e| e.to_string())?;
    let out = DrawdownOutput {
        storage: report.reservoirs[0].storage.clone(),
        head_predicted: vec![h_ref; periods],
        head_realized: report.units[0].head.clone(),
        power_predicted: vec![p_ref; periods],
        power_realized: report.units[0].power.clone(),
        energy_predicted_mwh: report.energy_predicted,
        energy_realized_mwh: report.energy_realized,
        gap_percent: report.gap_percent,
        violations: report.violations.len(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = fitPwl)]
pub fn fit_js(input: &str) -> Result<String, JsError> {
    fit(input).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = routeRelease)]
pub fn route_js(input: &str) -> Result<String, JsError> {
    route(input).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = simulateDrawdown)]
pub fn drawdown_js(release: f64, periods: usize) -> Result<String, JsError> {
    drawdown(release, periods).map_err(|e| JsError::new(&e))
}
