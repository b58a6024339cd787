//! Browser bindings for the controller. Every exported function returns a
//! JSON string: either the result object or `{"error": "..."}`.

use drowsy_mpc::domain::{ControlMode, DrowsinessLevel, MpcConfig, StateSnapshot, WorkerState};
use drowsy_mpc::models::comfort_penalty;
use drowsy_mpc::mpc::solve;
use drowsy_mpc::optimizer::DeParams;
use drowsy_mpc::sim::{simulate, Metrics, PlantConfig, ScenarioConfig, SimTrace};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const WORKERS: usize = 5;

#[derive(Serialize)]
struct Schedule {
    mode: String,
    feasible: bool,
    objective: f64,
    violation: f64,
    temp_setpoints: Vec<f64>,
    illum_setpoints: Vec<f64>,
    predicted_temp: Vec<f64>,
    predicted_illum: Vec<f64>,
    predicted_mean_dl: Vec<f64>,
    penalty: Vec<f64>,
}

#[derive(Serialize)]
struct Series {
    mode: String,
    temp_set: Vec<f64>,
    illum_set: Vec<f64>,
    temp: Vec<f64>,
    illum: Vec<f64>,
    mean_dl: Vec<f64>,
    metrics: Metrics,
}

#[derive(Serialize)]
struct Day {
    hours: Vec<f64>,
    arm: Series,
    baseline: Series,
}

#[derive(Serialize)]
struct ComfortMap {
    temps: Vec<f64>,
    illums: Vec<f64>,
    /// `penalty[i][j]` at `temps[i]`, `illums[j]`.
    penalty: Vec<Vec<f64>>,
    cap: f64,
    temp_bounds: (f64, f64),
    illum_bounds: (f64, f64),
}

fn to_json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

fn config(mode: &str, penalty_cap: f64) -> Result<MpcConfig, String> {
    let mode: ControlMode = mode.parse()?;
    let cfg = MpcConfig {
        penalty_cap,
        ..MpcConfig::case1(mode)
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// Mid-day drowsiness bump over a 28-step day, peaking at `peak`.
fn drift_bump(peak: f64, steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|t| {
            let z = (t as f64 - 15.0) / 2.8;
            peak * (-0.5 * z * z).exp()
        })
        .collect()
}

fn schedule(mode: &str, temp_c: f64, illum_lx: f64, mean_dl: f64, cap: f64, seed: u32) -> Result<Schedule, String> {
    let cfg = config(mode, cap)?;
    let workers = (0..WORKERS)
        .map(|i| {
            let d = (mean_dl + 0.2 * (i as f64 - 2.0)).clamp(1.0, 5.0);
            let prev = (d - 0.1).clamp(1.0, 5.0);
            let level = |v| DrowsinessLevel::new(v).map_err(|e| e.to_string());
            WorkerState::from_history(level(d)?, level(prev)?, 0.15).map_err(|e| e.to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let snap = StateSnapshot::new(workers, temp_c, illum_lx).map_err(|e| e.to_string())?;
    let models = PlantConfig::office_default().models;
    let de = DeParams::for_dimension(2 * cfg.horizon, u64::from(seed));
    let sol = solve(&models, &snap, &cfg, &de).map_err(|e| e.to_string())?;
    let p = &sol.predicted;
    Ok(Schedule {
        mode: cfg.mode.to_string(),
        feasible: sol.feasible,
        objective: sol.objective_value,
        violation: sol.violation,
        temp_setpoints: sol.schedule.temp_setpoints().to_vec(),
        illum_setpoints: sol.schedule.illum_setpoints().to_vec(),
        predicted_mean_dl: (0..p.horizon())
            .map(|t| p.dls.iter().map(|w| w[t]).sum::<f64>() / p.num_workers() as f64)
            .collect(),
        penalty: p
            .temps
            .iter()
            .zip(&p.illums)
            .map(|(&t, &l)| comfort_penalty(t, l, &cfg))
            .collect(),
        predicted_temp: p.temps.clone(),
        predicted_illum: p.illums.clone(),
    })
}

fn series(trace: &SimTrace, metrics: Metrics) -> Series {
    let rows = &trace.rows;
    Series {
        mode: trace.mode.to_string(),
        temp_set: rows.iter().map(|r| r.temp_set).collect(),
        illum_set: rows.iter().map(|r| r.illum_set).collect(),
        temp: rows.iter().map(|r| r.temp).collect(),
        illum: rows.iter().map(|r| r.illum).collect(),
        mean_dl: rows
            .iter()
            .map(|r| r.dl.iter().sum::<f64>() / r.dl.len() as f64)
            .collect(),
        metrics,
    }
}

fn day(mode: &str, seed: u32, drift_peak: f64) -> Result<Day, String> {
    let mode: ControlMode = mode.parse()?;
    if !(0.0..=1.0).contains(&drift_peak) {
        return Err(format!("drift peak {drift_peak} outside 0..1"));
    }
    let mut base = ScenarioConfig::working_day(ControlMode::Noc, u64::from(seed));
    base.plant.drift = drift_bump(drift_peak, base.steps);
    let run = |m: ControlMode| simulate(&base.clone().with_mode(m)).map_err(|e| e.to_string());
    let arm = run(mode)?;
    let noc = run(ControlMode::Noc)?;
    let hours = (1..=base.steps)
        .map(|k| 9.0 + k as f64 * base.mpc.step_hours)
        .collect();
    Ok(Day {
        hours,
        arm: series(&arm.trace, arm.metrics),
        baseline: series(&noc.trace, noc.metrics),
    })
}

fn comfort(cap: f64, resolution: usize) -> Result<ComfortMap, String> {
    let cfg = config("MPC2", cap)?;
    let n = resolution.clamp(2, 200);
    // Room values well outside the setpoint bounds, where the lag can leave them.
    let (t_lo, t_hi) = (cfg.temp_lo - 2.0, cfg.temp_hi + 2.0);
    let (l_lo, l_hi) = (cfg.illum_lo - 250.0, cfg.illum_hi + 250.0);
    let axis = |lo: f64, hi: f64| -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    };
    let temps = axis(t_lo, t_hi);
    let illums = axis(l_lo, l_hi);
    let penalty = temps
        .iter()
        .map(|&t| illums.iter().map(|&l| comfort_penalty(t, l, &cfg)).collect())
        .collect();
    Ok(ComfortMap {
        temps,
        illums,
        penalty,
        cap,
        temp_bounds: (cfg.temp_lo, cfg.temp_hi),
        illum_bounds: (cfg.illum_lo, cfg.illum_hi),
    })
}

/// Solves one four-step horizon for a five-worker office whose drowsiness
/// levels spread around `mean_dl`.
#[wasm_bindgen]
pub fn solve_schedule(mode: &str, temp_c: f64, illum_lx: f64, mean_dl: f64, penalty_cap: f64, seed: u32) -> String {
    to_json(schedule(mode, temp_c, illum_lx, mean_dl, penalty_cap, seed))
}

/// Simulates a working day under `mode` and, on the same noise, without
/// control.
#[wasm_bindgen]
pub fn simulate_day(mode: &str, seed: u32, drift_peak: f64) -> String {
    to_json(day(mode, seed, drift_peak))
}

/// Comfort penalty over a temperature by illuminance grid.
#[wasm_bindgen]
pub fn comfort_map(penalty_cap: f64, resolution: u32) -> String {
    to_json(comfort(penalty_cap, resolution as usize))
}
