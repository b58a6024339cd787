//! Closed-loop simulation: ground-truth plants for room temperature,
//! illuminance and worker drowsiness, a scenario runner for the NOC / MPC-1 /
//! MPC-2 arms, and paired multi-seed comparisons.
//!
//! Plant noise is drawn from generators keyed by `(seed, step, channel,
//! worker)` and nothing else. Two arms run with the same seed therefore see
//! the same disturbances (common random numbers), and paired differences
//! reflect only the controller.

use crate::domain::{
    ControlMode, DomainError, DrowsinessLevel, ModelSet, MpcConfig, DL_MAX, DL_MIN,
};
use crate::identify::TelemetryRow;
use crate::models::{self, increments, DlFeatures};
use crate::mpc::{ControlError, Controller, MeasuredStep, WindowAggregator};
use crate::optimizer::DeParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Ground truth used to advance the simulated room and workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub models: ModelSet,
    /// Gaussian disturbance on room temperature per step, °C.
    pub temp_disturbance_sd: f64,
    /// Gaussian disturbance on illuminance per step, lux.
    pub illum_disturbance_sd: f64,
    /// Gaussian noise on each worker's drowsiness per step.
    pub dl_noise_sd: f64,
    /// Additive drowsiness pressure per step, cycled when shorter than the run.
    #[serde(default)]
    pub drift: Vec<f64>,
    /// Fraction of the gap to `outside_temp` closed per step on top of the
    /// air conditioner's response.
    #[serde(default)]
    pub ambient_pull: f64,
    #[serde(default = "default_outside")]
    pub outside_temp: f64,
    /// Long-run mean of the awakening effort process.
    pub effort_mean: f64,
    pub effort_sd: f64,
    /// AR(1) persistence of the effort process, in [0, 1).
    pub effort_persistence: f64,
    /// Instant drowsiness samples per step.
    pub substeps: usize,
}

fn default_outside() -> f64 {
    26.0
}

impl PlantConfig {
    /// A plant whose drowsiness falls with lower temperature, temperature
    /// drops and brighter light. Noise magnitudes are small artifact choices.
    pub fn office_default() -> Self {
        use crate::domain::{AmiModel, IdtModel};
        Self {
            models: ModelSet {
                dl: office_dl_model(),
                idt: IdtModel::new(0.4, 0.5).expect("valid gains"),
                ami: AmiModel::new(30.0, 0.1, 0.85).expect("stable"),
            },
            temp_disturbance_sd: 0.05,
            illum_disturbance_sd: 5.0,
            dl_noise_sd: 0.05,
            drift: Vec::new(),
            ambient_pull: 0.0,
            outside_temp: 26.0,
            effort_mean: 0.15,
            effort_sd: 0.03,
            effort_persistence: 0.5,
            substeps: 4,
        }
    }

    /// Noise-free copy.
    pub fn noiseless(mut self) -> Self {
        self.temp_disturbance_sd = 0.0;
        self.illum_disturbance_sd = 0.0;
        self.dl_noise_sd = 0.0;
        self.effort_sd = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.models.validate()?;
        for (name, v) in [
            ("temp_disturbance_sd", self.temp_disturbance_sd),
            ("illum_disturbance_sd", self.illum_disturbance_sd),
            ("dl_noise_sd", self.dl_noise_sd),
            ("effort_mean", self.effort_mean),
            ("effort_sd", self.effort_sd),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SimError::Invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.effort_persistence) {
            return Err(SimError::Invalid(format!(
                "effort_persistence must be in [0, 1), got {}",
                self.effort_persistence
            )));
        }
        if !(0.0..=1.0).contains(&self.ambient_pull) {
            return Err(SimError::Invalid(format!(
                "ambient_pull must be in [0, 1], got {}",
                self.ambient_pull
            )));
        }
        if self.substeps == 0 {
            return Err(SimError::Invalid("substeps must be >= 1".into()));
        }
        if self.drift.iter().any(|d| !d.is_finite()) {
            return Err(SimError::Invalid("drift must be finite".into()));
        }
        Ok(())
    }

    fn drift_at(&self, step: usize) -> f64 {
        if self.drift.is_empty() {
            0.0
        } else {
            self.drift[(step - 1) % self.drift.len()]
        }
    }
}

/// Drowsiness regression used by the default office plant.
pub fn office_dl_model() -> crate::domain::DlModel {
    use crate::domain::{DlFeature, DlModel};
    DlModel::constant(-1.875)
        .with(DlFeature::DPrev, 0.6)
        .with(DlFeature::DPlusPrev, 0.15)
        .with(DlFeature::DMinusPrev, -0.05)
        .with(DlFeature::Temp, 0.12)
        .with(DlFeature::TempPlus, 0.2)
        .with(DlFeature::TempMinus, -0.35)
        .with(DlFeature::Illum, -0.0008)
        .with(DlFeature::IllumPlus, -0.0015)
        .with(DlFeature::IllumMinus, 0.001)
        .with(DlFeature::Effort, -0.3)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkerPlantState {
    /// Latent drowsiness of the latest step.
    pub dl: f64,
    /// Latent drowsiness of the step before.
    pub dl_prev: f64,
    pub effort: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub temp: f64,
    pub illum: f64,
    pub workers: Vec<WorkerPlantState>,
}

/// Instant drowsiness samples of one step, `samples[worker][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InstantSamples {
    pub samples: Vec<Vec<f64>>,
}

#[derive(Clone, Copy)]
enum Channel {
    Temp = 0,
    Illum = 1,
    Dl = 2,
    Effort = 3,
    Sweep = 4,
}

/// Generator for one `(seed, step, channel, worker)` cell.
fn cell_rng(seed: u64, step: usize, channel: Channel, worker: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((step as u64) << 32) | ((channel as u64) << 24) | worker as u64);
    rng
}

fn normal(seed: u64, step: usize, channel: Channel, worker: usize) -> f64 {
    cell_rng(seed, step, channel, worker).sample(StandardNormal)
}

/// Zero-mean pattern with unit population standard deviation: the within-step
/// drowsiness ramp scaled by the worker's effort.
fn substep_pattern(n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![0.0; n];
    }
    let centre = (n - 1) as f64 / 2.0;
    let raw: Vec<f64> = (0..n).map(|k| k as f64 - centre).collect();
    let sd = (raw.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt();
    raw.into_iter().map(|r| r / sd).collect()
}

fn instants(plant: &PlantConfig, state: &PlantState) -> InstantSamples {
    let pattern = substep_pattern(plant.substeps);
    InstantSamples {
        samples: state
            .workers
            .iter()
            .map(|w| {
                pattern
                    .iter()
                    .map(|z| (w.dl + w.effort * z).clamp(DL_MIN, DL_MAX))
                    .collect()
            })
            .collect(),
    }
}

/// Advances the plant by one step under `setpoints = (temperature, illuminance)`.
///
/// When `frozen` is set (a break), the workers' drowsiness and effort stay
/// where they are while the room keeps evolving.
pub fn plant_step(
    plant: &PlantConfig,
    state: &PlantState,
    setpoints: (f64, f64),
    step: usize,
    seed: u64,
    frozen: bool,
) -> (PlantState, InstantSamples) {
    let (temp_set, illum_set) = setpoints;
    let ms = &plant.models;
    let temp = models::predict_idt(&ms.idt, state.temp, temp_set)
        + plant.ambient_pull * (plant.outside_temp - state.temp)
        + plant.temp_disturbance_sd * normal(seed, step, Channel::Temp, 0);
    let illum = (models::predict_ami(&ms.ami, state.illum, illum_set)
        + plant.illum_disturbance_sd * normal(seed, step, Channel::Illum, 0))
    .max(0.0);
    let (temp_plus, temp_minus) = increments(temp, state.temp);
    let (illum_plus, illum_minus) = increments(illum, state.illum);

    let workers = state
        .workers
        .iter()
        .enumerate()
        .map(|(i, w)| {
            if frozen {
                return *w;
            }
            let effort = (plant.effort_mean
                + plant.effort_persistence * (w.effort - plant.effort_mean)
                + plant.effort_sd * normal(seed, step, Channel::Effort, i))
            .max(0.0);
            let (d_plus_prev, d_minus_prev) = increments(w.dl, w.dl_prev);
            let x = DlFeatures {
                d_prev: w.dl,
                d_plus_prev,
                d_minus_prev,
                temp,
                temp_plus,
                temp_minus,
                illum,
                illum_plus,
                illum_minus,
                effort,
            };
            let dl = DrowsinessLevel::clamped(
                models::dl_linear(&ms.dl, &x)
                    + plant.drift_at(step)
                    + plant.dl_noise_sd * normal(seed, step, Channel::Dl, i),
            )
            .value();
            WorkerPlantState {
                dl,
                dl_prev: w.dl,
                effort,
            }
        })
        .collect();
    let next = PlantState {
        temp,
        illum,
        workers,
    };
    let samples = instants(plant, &next);
    (next, samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LunchBreak {
    /// First realized step of the break (1-based).
    pub start: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: ControlMode,
    pub steps: usize,
    pub seed: u64,
    pub initial_temp: f64,
    pub initial_illum: f64,
    /// Initial drowsiness per worker, cycled over the roster.
    pub initial_dl: Vec<f64>,
    #[serde(default)]
    pub lunch: Option<LunchBreak>,
    /// Replace the controller with uniformly random setpoints inside the
    /// bounds (identification experiments).
    #[serde(default)]
    pub sweep: bool,
    /// Controller uses `controller_models` instead of the plant truth.
    #[serde(default)]
    pub model_mismatch: bool,
    #[serde(default)]
    pub controller_models: Option<ModelSet>,
    pub plant: PlantConfig,
    pub mpc: MpcConfig,
    pub de: DeParams,
}

impl ScenarioConfig {
    /// 28 steps of 15 minutes (a 7-hour day) under the Case-1 settings.
    pub fn working_day(mode: ControlMode, seed: u64) -> Self {
        let mpc = MpcConfig::case1(mode);
        Self {
            mode,
            steps: 28,
            seed,
            initial_temp: 26.0,
            initial_illum: 600.0,
            initial_dl: vec![1.6, 1.8, 2.0, 1.7, 1.9],
            lunch: None,
            sweep: false,
            model_mismatch: false,
            controller_models: None,
            plant: PlantConfig::office_default(),
            de: DeParams::for_dimension(2 * mpc.horizon, seed),
            mpc,
        }
    }

    pub fn with_mode(mut self, mode: ControlMode) -> Self {
        self.mode = mode;
        self.mpc.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.steps < 1 {
            return Err(SimError::Invalid("steps must be >= 1".into()));
        }
        if self.mode != self.mpc.mode {
            return Err(SimError::Invalid(format!(
                "scenario mode {} differs from controller mode {}",
                self.mode, self.mpc.mode
            )));
        }
        if self.initial_dl.is_empty() {
            return Err(SimError::Invalid("initial_dl is empty".into()));
        }
        for &d in &self.initial_dl {
            DrowsinessLevel::new(d)?;
        }
        self.mpc.validate()?;
        self.plant.validate()?;
        self.de
            .validate()
            .map_err(|e| SimError::Invalid(e.to_string()))?;
        match (self.model_mismatch, &self.controller_models) {
            (true, None) => {
                return Err(SimError::Invalid(
                    "model_mismatch requires controller_models".into(),
                ))
            }
            (_, Some(m)) => m.validate()?,
            _ => {}
        }
        Ok(())
    }

    pub fn controller_models(&self) -> &ModelSet {
        match (&self.controller_models, self.model_mismatch) {
            (Some(m), true) => m,
            _ => &self.plant.models,
        }
    }

    fn initial_state(&self) -> PlantState {
        PlantState {
            temp: self.initial_temp,
            illum: self.initial_illum,
            workers: (0..self.mpc.num_workers)
                .map(|i| {
                    let d = self.initial_dl[i % self.initial_dl.len()];
                    WorkerPlantState {
                        dl: d,
                        dl_prev: d,
                        effort: self.plant.effort_mean,
                    }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepStatus {
    Ok,
    /// Controller lacked a current measurement and held its setpoints.
    Stale,
    /// Solve failed; previous setpoints held.
    Error,
}

impl StepStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            StepStatus::Ok => "ok",
            StepStatus::Stale => "stale",
            StepStatus::Error => "error",
        }
    }
}

impl std::str::FromStr for StepStatus {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ok" => Ok(StepStatus::Ok),
            "stale" => Ok(StepStatus::Stale),
            "error" => Ok(StepStatus::Error),
            other => Err(format!("unknown status `{other}`")),
        }
    }
}

/// Controller's one-step-ahead prediction for a realized step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPrediction {
    pub temp: f64,
    pub illum: f64,
    pub dl: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub temp_set: f64,
    pub illum_set: f64,
    /// Time-averaged measured values of the step.
    pub temp: f64,
    pub illum: f64,
    pub dl: Vec<f64>,
    pub effort: Vec<f64>,
    pub penalty: f64,
    /// Whether the applied schedule was predicted to satisfy the comfort cap.
    pub feasible: bool,
    pub status: StepStatus,
    pub predicted: Option<StepPrediction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub mode: ControlMode,
    pub seed: u64,
    pub rows: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mean_dl: f64,
    /// Fraction of steps whose realized comfort penalty exceeds the cap.
    pub comfort_violation_rate: f64,
    pub mean_abs_temp_dev: f64,
    pub mean_abs_illum_dev: f64,
    pub setpoint_change_count: usize,
}

/// Metrics of a trace against the comfort settings of `cfg`.
pub fn compute_metrics(trace: &SimTrace, cfg: &MpcConfig) -> Metrics {
    let rows = &trace.rows;
    let n = rows.len().max(1) as f64;
    let dl_count: usize = rows.iter().map(|r| r.dl.len()).sum();
    let mean_dl = rows.iter().flat_map(|r| &r.dl).sum::<f64>() / dl_count.max(1) as f64;
    let violations = rows
        .iter()
        .filter(|r| r.penalty > cfg.penalty_cap)
        .count();
    let changes = rows
        .windows(2)
        .filter(|w| w[0].temp_set != w[1].temp_set || w[0].illum_set != w[1].illum_set)
        .count();
    Metrics {
        mean_dl,
        comfort_violation_rate: violations as f64 / n,
        mean_abs_temp_dev: rows
            .iter()
            .map(|r| (r.temp - cfg.temp_comfort).abs())
            .sum::<f64>()
            / n,
        mean_abs_illum_dev: rows
            .iter()
            .map(|r| (r.illum - cfg.illum_comfort).abs())
            .sum::<f64>()
            / n,
        setpoint_change_count: changes,
    }
}

/// One instant record as an edge device would send it.
#[derive(Debug, Clone, PartialEq)]
pub struct InstantRecord {
    pub step: usize,
    pub substep: usize,
    pub worker: usize,
    pub dl: f64,
    pub temp_c: f64,
    pub illum_lx: f64,
}

/// Everything one scenario run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub trace: SimTrace,
    pub metrics: Metrics,
    /// Step-level measurements for steps `0..=steps`, one row per worker.
    pub telemetry: Vec<TelemetryRow>,
    /// Instant records for steps `0..=steps`, in emission order.
    pub instants: Vec<InstantRecord>,
}

fn measure(
    step: usize,
    state: &PlantState,
    samples: &InstantSamples,
    records: &mut Vec<InstantRecord>,
) -> MeasuredStep {
    let mut agg = WindowAggregator::new(state.workers.len());
    let substeps = samples.samples.first().map_or(0, Vec::len);
    for k in 0..substeps {
        for (w, s) in samples.samples.iter().enumerate() {
            agg.push(w, s[k], state.temp, state.illum);
            records.push(InstantRecord {
                step,
                substep: k,
                worker: w,
                dl: s[k],
                temp_c: state.temp,
                illum_lx: state.illum,
            });
        }
    }
    agg.finish(step as u64).expect("every worker sampled")
}

fn telemetry_rows(m: &MeasuredStep, setpoints: (f64, f64), out: &mut Vec<TelemetryRow>) {
    for (i, w) in m.workers.iter().enumerate() {
        out.push(TelemetryRow {
            step: m.step as i64,
            worker_id: i.to_string(),
            dl: w.dl,
            effort: w.effort,
            temp: m.temp_c,
            illum: m.illum_lx,
            temp_set: setpoints.0,
            illum_set: setpoints.1,
        });
    }
}

/// Runs a scenario and keeps every artifact.
///
/// Timeline: step 0 is the measured initial condition. Before realized step
/// `t` (1..=steps) the controller sees measurements through step `t - 1` and
/// picks the setpoints applied during step `t`.
pub fn simulate(sc: &ScenarioConfig) -> Result<ScenarioRun, SimError> {
    sc.validate()?;
    let cfg = &sc.mpc;
    let comfort = (cfg.temp_comfort, cfg.illum_comfort);
    let mut controller = Controller::new(
        sc.controller_models().clone(),
        cfg.clone(),
        sc.de.clone(),
        sc.seed,
    );

    let mut state = sc.initial_state();
    let mut instants_out = Vec::new();
    let mut telemetry = Vec::new();
    let initial_samples = instants(&sc.plant, &state);
    let m0 = measure(0, &state, &initial_samples, &mut instants_out);
    telemetry_rows(&m0, comfort, &mut telemetry);
    controller.observe(m0);

    let mut rows = Vec::with_capacity(sc.steps);
    let mut held = comfort;
    for t in 1..=sc.steps {
        let (setpoints, feasible, status, predicted) = if sc.sweep {
            let mut rng = cell_rng(sc.seed, t, Channel::Sweep, 0);
            let ts = cfg.temp_lo + rng.random::<f64>() * (cfg.temp_hi - cfg.temp_lo);
            let ls = cfg.illum_lo + rng.random::<f64>() * (cfg.illum_hi - cfg.illum_lo);
            ((ts, ls), true, StepStatus::Ok, None)
        } else if sc.mode == ControlMode::Noc {
            (comfort, true, StepStatus::Ok, None)
        } else {
            match controller.step((t - 1) as u64) {
                Ok(sol) => {
                    let p = StepPrediction {
                        temp: sol.predicted.temps[0],
                        illum: sol.predicted.illums[0],
                        dl: sol.predicted.dls.iter().map(|row| row[0]).collect(),
                    };
                    (sol.applied_setpoints, sol.feasible, StepStatus::Ok, Some(p))
                }
                Err(ControlError::StaleData { held, .. }) => {
                    (held, false, StepStatus::Stale, None)
                }
                Err(ControlError::Solve(_)) => (held, false, StepStatus::Error, None),
            }
        };
        held = setpoints;

        let frozen = sc
            .lunch
            .as_ref()
            .is_some_and(|l| t >= l.start && t < l.start + l.steps);
        let (next, samples) = plant_step(&sc.plant, &state, setpoints, t, sc.seed, frozen);
        state = next;
        let measured = measure(t, &state, &samples, &mut instants_out);
        telemetry_rows(&measured, setpoints, &mut telemetry);
        rows.push(StepRecord {
            step: t,
            temp_set: setpoints.0,
            illum_set: setpoints.1,
            temp: measured.temp_c,
            illum: measured.illum_lx,
            dl: measured.workers.iter().map(|w| w.dl).collect(),
            effort: measured.workers.iter().map(|w| w.effort).collect(),
            penalty: models::comfort_penalty(measured.temp_c, measured.illum_lx, cfg),
            feasible,
            status,
            predicted,
        });
        controller.observe(measured);
    }

    let trace = SimTrace {
        mode: sc.mode,
        seed: sc.seed,
        rows,
    };
    let metrics = compute_metrics(&trace, cfg);
    Ok(ScenarioRun {
        trace,
        metrics,
        telemetry,
        instants: instants_out,
    })
}

pub fn run_scenario(sc: &ScenarioConfig) -> Result<(SimTrace, Metrics), SimError> {
    simulate(sc).map(|r| (r.trace, r.metrics))
}

/// Per-seed result of one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmRun {
    pub mode: ControlMode,
    pub seed: u64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub mode: ControlMode,
    pub mean_dl: f64,
    pub comfort_violation_rate: f64,
    pub mean_abs_temp_dev: f64,
    pub mean_abs_illum_dev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub arms: Vec<ControlMode>,
    /// `runs[arm][seed]`.
    pub runs: Vec<Vec<ArmRun>>,
    pub summaries: Vec<ArmSummary>,
}

impl Comparison {
    /// Per-seed `mean_dl(arm) - mean_dl(first arm)`.
    pub fn paired_dl_deltas(&self, arm: usize) -> Vec<f64> {
        self.runs[arm]
            .iter()
            .zip(&self.runs[0])
            .map(|(a, b)| a.metrics.mean_dl - b.metrics.mean_dl)
            .collect()
    }
}

/// Runs the three arms on every seed with shared noise streams.
pub fn compare_arms(base: &ScenarioConfig, seeds: &[u64]) -> Result<Comparison, SimError> {
    compare_modes(base, seeds, &ControlMode::ALL)
}

/// Runs the given arm list on every seed. The first arm is the reference for
/// paired deltas.
pub fn compare_modes(
    base: &ScenarioConfig,
    seeds: &[u64],
    arms: &[ControlMode],
) -> Result<Comparison, SimError> {
    if seeds.len() < 2 {
        return Err(SimError::Invalid("need at least two seeds".into()));
    }
    if arms.is_empty() {
        return Err(SimError::Invalid("need at least one arm".into()));
    }
    let jobs: Vec<(usize, u64)> = arms
        .iter()
        .enumerate()
        .flat_map(|(a, _)| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let run = |&(a, seed): &(usize, u64)| -> Result<ArmRun, SimError> {
        let mut sc = base.clone().with_mode(arms[a]);
        sc.seed = seed;
        sc.de.seed = seed;
        let (_, metrics) = run_scenario(&sc)?;
        Ok(ArmRun {
            mode: arms[a],
            seed,
            metrics,
        })
    };
    #[cfg(feature = "parallel")]
    let results: Vec<ArmRun> = jobs.par_iter().map(run).collect::<Result<_, _>>()?;
    #[cfg(not(feature = "parallel"))]
    let results: Vec<ArmRun> = jobs.iter().map(run).collect::<Result<_, _>>()?;

    let runs: Vec<Vec<ArmRun>> = results
        .chunks(seeds.len())
        .map(<[ArmRun]>::to_vec)
        .collect();
    let summaries = runs
        .iter()
        .map(|r| {
            let n = r.len() as f64;
            let avg = |f: fn(&Metrics) -> f64| r.iter().map(|x| f(&x.metrics)).sum::<f64>() / n;
            ArmSummary {
                mode: r[0].mode,
                mean_dl: avg(|m| m.mean_dl),
                comfort_violation_rate: avg(|m| m.comfort_violation_rate),
                mean_abs_temp_dev: avg(|m| m.mean_abs_temp_dev),
                mean_abs_illum_dev: avg(|m| m.mean_abs_illum_dev),
            }
        })
        .collect();
    Ok(Comparison {
        seeds: seeds.to_vec(),
        arms: arms.to_vec(),
        runs,
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AmiModel, DlModel, IdtModel};

    fn identity_plant() -> PlantConfig {
        PlantConfig {
            models: ModelSet {
                dl: DlModel::constant(2.0),
                idt: IdtModel::identity(),
                ami: AmiModel::identity(),
            },
            drift: Vec::new(),
            ..PlantConfig::office_default().noiseless()
        }
    }

    fn state(temp: f64) -> PlantState {
        PlantState {
            temp,
            illum: 600.0,
            workers: vec![
                WorkerPlantState {
                    dl: 2.0,
                    dl_prev: 2.0,
                    effort: 0.15
                };
                2
            ],
        }
    }

    #[test]
    fn identity_plant_tracks_setpoints() {
        let (next, s) = plant_step(&identity_plant(), &state(28.0), (25.5, 700.0), 1, 9, false);
        assert_eq!(next.temp, 25.5);
        assert_eq!(next.illum, 700.0);
        assert_eq!(next.workers[0].dl, 2.0);
        assert_eq!(s.samples[0].len(), 4);
    }

    #[test]
    fn lag_plant_arithmetic() {
        let mut p = identity_plant();
        p.models.idt = IdtModel::new(1.0, 0.5).unwrap();
        let (next, _) = plant_step(&p, &state(28.0), (26.0, 600.0), 1, 0, false);
        assert_eq!(next.temp, 27.0);
    }

    #[test]
    fn plant_step_deterministic() {
        let p = PlantConfig::office_default();
        let a = plant_step(&p, &state(26.3), (25.5, 700.0), 3, 42, false);
        let b = plant_step(&p, &state(26.3), (25.5, 700.0), 3, 42, false);
        assert_eq!(a, b);
        let c = plant_step(&p, &state(26.3), (25.5, 700.0), 3, 43, false);
        assert_ne!(a, c);
    }

    #[test]
    fn substep_pattern_has_unit_sd() {
        for n in 2..8 {
            let z = substep_pattern(n);
            assert!(crate::mpc::mean(&z).abs() < 1e-15);
            assert!((crate::mpc::population_sd(&z) - 1.0).abs() < 1e-12);
        }
        assert_eq!(substep_pattern(1), vec![0.0]);
    }

    #[test]
    fn noise_streams_are_independent_cells() {
        let a = normal(1, 5, Channel::Dl, 0);
        assert_eq!(a, normal(1, 5, Channel::Dl, 0));
        assert_ne!(a, normal(1, 5, Channel::Dl, 1));
        assert_ne!(a, normal(1, 6, Channel::Dl, 0));
        assert_ne!(a, normal(1, 5, Channel::Temp, 0));
    }

    #[test]
    fn noc_identity_scenario_is_flat() {
        let mut sc = ScenarioConfig::working_day(ControlMode::Noc, 3);
        sc.plant = identity_plant();
        let (trace, metrics) = run_scenario(&sc).unwrap();
        assert_eq!(trace.rows.len(), 28);
        for r in &trace.rows {
            assert_eq!(r.temp, 26.0);
            assert_eq!(r.illum, 600.0);
            assert_eq!(r.penalty, 0.0);
        }
        assert_eq!(metrics.comfort_violation_rate, 0.0);
        assert_eq!(metrics.setpoint_change_count, 0);
    }

    #[test]
    fn zero_cap_pins_controller_to_comfort() {
        let mut sc = ScenarioConfig::working_day(ControlMode::Mpc2, 5);
        sc.steps = 8;
        sc.plant = sc.plant.noiseless();
        sc.mpc.penalty_cap = 0.0;
        let (mpc, _) = run_scenario(&sc).unwrap();
        let (noc, _) = run_scenario(&sc.clone().with_mode(ControlMode::Noc)).unwrap();
        for (a, b) in mpc.rows.iter().zip(&noc.rows) {
            assert!((a.temp_set - 26.0).abs() < 0.05, "{}", a.temp_set);
            assert!((a.illum_set - 600.0).abs() < 10.0, "{}", a.illum_set);
            assert!((a.temp - b.temp).abs() < 0.1);
        }
    }

    #[test]
    fn lunch_freezes_drowsiness() {
        let mut sc = ScenarioConfig::working_day(ControlMode::Noc, 1);
        sc.lunch = Some(LunchBreak { start: 9, steps: 4 });
        let (trace, _) = run_scenario(&sc).unwrap();
        for t in 9..12 {
            assert_eq!(trace.rows[t - 1].dl, trace.rows[t].dl);
        }
    }

    #[test]
    fn invalid_scenarios() {
        let mut sc = ScenarioConfig::working_day(ControlMode::Mpc2, 1);
        sc.steps = 0;
        assert!(run_scenario(&sc).is_err());
        let mut sc = ScenarioConfig::working_day(ControlMode::Mpc2, 1);
        sc.mpc.mode = ControlMode::Noc;
        assert!(run_scenario(&sc).is_err());
        let mut sc = ScenarioConfig::working_day(ControlMode::Mpc2, 1);
        sc.model_mismatch = true;
        assert!(run_scenario(&sc).is_err());
    }

    #[test]
    fn forced_identical_arms_have_zero_deltas() {
        let mut base = ScenarioConfig::working_day(ControlMode::Noc, 0);
        base.steps = 6;
        let cmp = compare_modes(&base, &[1, 2, 3], &[ControlMode::Noc; 3]).unwrap();
        for arm in 1..3 {
            assert!(cmp.paired_dl_deltas(arm).iter().all(|&d| d == 0.0));
        }
        assert!(compare_arms(&base, &[1]).is_err());
    }
}
