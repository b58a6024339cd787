//! Horizon solve and receding-horizon controller.

use crate::domain::{
    ControlMode, ControlSchedule, DomainError, DrowsinessLevel, ModelSet, MpcConfig,
    StateSnapshot, WorkerState,
};
use crate::models::{self, HorizonPrediction, ModelError};
use crate::optimizer::{de_minimize, DeParams, OptimizerError};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MpcError {
    #[error(transparent)]
    Config(#[from] DomainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    /// The newest measurement is older than the step being controlled. The
    /// controller keeps emitting `held`.
    #[error("stale data at step {clock}: latest measurement {latest:?}")]
    StaleData {
        clock: u64,
        latest: Option<u64>,
        held: (f64, f64),
    },
    #[error(transparent)]
    Solve(#[from] MpcError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub schedule: ControlSchedule,
    pub predicted: HorizonPrediction,
    pub objective_value: f64,
    /// Predicted trajectory satisfies the comfort cap at every step.
    pub feasible: bool,
    pub violation: f64,
    /// Step-1 setpoints `(temperature °C, illuminance lux)`.
    pub applied_setpoints: (f64, f64),
    /// Objective evaluations spent by the optimizer (0 for NOC).
    pub optimizer_evaluations: usize,
}

/// Solves one horizon.
///
/// A solution that is not feasible carries the least-violating schedule
/// found; callers decide whether to apply it.
pub fn solve(
    models: &ModelSet,
    snapshot: &StateSnapshot,
    cfg: &MpcConfig,
    de: &DeParams,
) -> Result<MpcSolution, MpcError> {
    cfg.validate()?;
    models.validate()?;
    snapshot.validate()?;
    let horizon = cfg.horizon;

    let (schedule, evaluations) = match cfg.mode {
        ControlMode::Noc => (
            ControlSchedule::constant(horizon, cfg.temp_comfort, cfg.illum_comfort)?,
            0,
        ),
        ControlMode::Mpc1 | ControlMode::Mpc2 => {
            let pinned_illum = cfg.mode == ControlMode::Mpc1;
            let to_schedule = |x: &[f64]| -> ControlSchedule {
                if pinned_illum {
                    ControlSchedule::new(x.to_vec(), vec![cfg.illum_comfort; horizon])
                } else {
                    ControlSchedule::unflatten(x)
                }
                .expect("decision vector has the horizon's length")
            };
            let (lower, upper) = if pinned_illum {
                (vec![cfg.temp_lo; horizon], vec![cfg.temp_hi; horizon])
            } else {
                (cfg.lower_bounds(), cfg.upper_bounds())
            };
            // Shapes were checked above, so the rollout cannot fail here.
            let predict = |x: &[f64]| {
                models::rollout(models, snapshot, &to_schedule(x), cfg)
                    .expect("shapes validated before the solve")
            };
            // Check shapes once with a representative vector.
            models::rollout(models, snapshot, &to_schedule(&lower), cfg)?;
            let result = de_minimize(
                |x| models::objective(&predict(x)),
                |x| models::constraint_violation(&predict(x), cfg),
                &lower,
                &upper,
                de,
            )?;
            (to_schedule(&result.best_vector), result.evaluations)
        }
    };

    let predicted = models::rollout(models, snapshot, &schedule, cfg)?;
    let violation = models::constraint_violation(&predicted, cfg);
    let applied_setpoints = (schedule.temp_setpoints()[0], schedule.illum_setpoints()[0]);
    Ok(MpcSolution {
        objective_value: models::objective(&predicted),
        feasible: violation == 0.0,
        violation,
        schedule,
        predicted,
        applied_setpoints,
        optimizer_evaluations: evaluations,
    })
}

/// Time-averaged measurements of one completed step.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredStep {
    pub step: u64,
    pub temp_c: f64,
    pub illum_lx: f64,
    pub workers: Vec<WorkerMeasurement>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkerMeasurement {
    /// Mean of the instant drowsiness samples.
    pub dl: f64,
    /// Population standard deviation of the instant samples.
    pub effort: f64,
}

/// Accumulates instant samples of one step window.
///
/// Both the simulator and the stream daemon aggregate through this type, so
/// identical sample sequences give bit-identical measurements.
#[derive(Debug, Clone, Default)]
pub struct WindowAggregator {
    temp: Vec<f64>,
    illum: Vec<f64>,
    dl: Vec<Vec<f64>>,
}

impl WindowAggregator {
    pub fn new(num_workers: usize) -> Self {
        Self {
            temp: Vec::new(),
            illum: Vec::new(),
            dl: vec![Vec::new(); num_workers],
        }
    }

    /// Adds one instant record of worker `worker` (index into the roster).
    pub fn push(&mut self, worker: usize, dl: f64, temp_c: f64, illum_lx: f64) {
        if worker >= self.dl.len() {
            self.dl.resize(worker + 1, Vec::new());
        }
        self.dl[worker].push(dl);
        self.temp.push(temp_c);
        self.illum.push(illum_lx);
    }

    pub fn is_empty(&self) -> bool {
        self.temp.is_empty()
    }

    /// `None` if any roster worker has no sample in this window.
    pub fn finish(&self, step: u64) -> Option<MeasuredStep> {
        if self.temp.is_empty() || self.dl.iter().any(Vec::is_empty) {
            return None;
        }
        Some(MeasuredStep {
            step,
            temp_c: mean(&self.temp),
            illum_lx: mean(&self.illum),
            workers: self
                .dl
                .iter()
                .map(|s| WorkerMeasurement {
                    dl: mean(s),
                    effort: population_sd(s),
                })
                .collect(),
        })
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation; zero for a single sample.
pub fn population_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Builds the horizon seed from the latest measured step and, when it is the
/// immediately preceding step, the one before it. Without a preceding step
/// the drowsiness increments are zero.
pub fn snapshot_from_history(
    latest: &MeasuredStep,
    previous: Option<&MeasuredStep>,
) -> Result<StateSnapshot, DomainError> {
    let previous = previous.filter(|p| p.step + 1 == latest.step);
    let workers = latest
        .workers
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let cur = DrowsinessLevel::clamped(w.dl);
            let prev = previous
                .and_then(|p| p.workers.get(i))
                .map_or(cur, |p| DrowsinessLevel::clamped(p.dl));
            WorkerState::from_history(cur, prev, w.effort)
        })
        .collect::<Result<Vec<_>, _>>()?;
    StateSnapshot::new(workers, latest.temp_c, latest.illum_lx)
}

/// Receding-horizon controller: keeps a short measurement history and
/// re-solves every step, applying only the first step of each schedule.
#[derive(Debug, Clone)]
pub struct Controller {
    models: ModelSet,
    cfg: MpcConfig,
    de: DeParams,
    base_seed: u64,
    history: VecDeque<MeasuredStep>,
    held: (f64, f64),
}

impl Controller {
    /// The optimizer seed for step `n` is `base_seed + n`; `de.seed` is
    /// ignored.
    pub fn new(models: ModelSet, cfg: MpcConfig, de: DeParams, base_seed: u64) -> Self {
        let held = (cfg.temp_comfort, cfg.illum_comfort);
        Self {
            models,
            cfg,
            de,
            base_seed,
            history: VecDeque::with_capacity(2),
            held,
        }
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn held_setpoints(&self) -> (f64, f64) {
        self.held
    }

    pub fn observe(&mut self, m: MeasuredStep) {
        if self.history.len() == 2 {
            self.history.pop_front();
        }
        self.history.push_back(m);
    }

    /// Solves for the interval following step `clock`. Requires a
    /// measurement of step `clock` itself.
    pub fn step(&mut self, clock: u64) -> Result<MpcSolution, ControlError> {
        let latest = self.history.back();
        let latest_step = latest.map(|m| m.step);
        let Some(latest) = latest.filter(|m| m.step == clock) else {
            return Err(ControlError::StaleData {
                clock,
                latest: latest_step,
                held: self.held,
            });
        };
        let previous = if self.history.len() == 2 {
            self.history.front()
        } else {
            None
        };
        let snapshot = snapshot_from_history(latest, previous).map_err(MpcError::from)?;
        let de = DeParams {
            seed: self.base_seed.wrapping_add(clock),
            ..self.de.clone()
        };
        let solution = solve(&self.models, &snapshot, &self.cfg, &de)?;
        self.held = solution.applied_setpoints;
        Ok(solution)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AmiModel, DlFeature, DlModel, IdtModel};

    fn snapshot(n: usize, temp: f64) -> StateSnapshot {
        StateSnapshot::new(
            vec![
                WorkerState::new(DrowsinessLevel::new(2.0).unwrap(), 0.1, 0.0, 0.2).unwrap();
                n
            ],
            temp,
            600.0,
        )
        .unwrap()
    }

    fn models(dl: DlModel) -> ModelSet {
        ModelSet {
            dl,
            idt: IdtModel::new(0.6, 0.5).unwrap(),
            ami: AmiModel::new(0.0, 0.1, 0.9).unwrap(),
        }
    }

    #[test]
    fn noc_holds_comfort_without_optimizer() {
        let cfg = MpcConfig::case1(ControlMode::Noc);
        let de = DeParams::for_dimension(8, 0);
        let sol = solve(&models(DlModel::constant(2.0)), &snapshot(5, 26.0), &cfg, &de).unwrap();
        assert_eq!(sol.optimizer_evaluations, 0);
        assert_eq!(sol.schedule.temp_setpoints(), &[26.0; 4]);
        assert_eq!(sol.schedule.illum_setpoints(), &[600.0; 4]);
        assert_eq!(sol.applied_setpoints, (26.0, 600.0));
    }

    #[test]
    fn control_independent_model_is_feasible_at_intercept() {
        let cfg = MpcConfig::case1(ControlMode::Mpc2);
        let de = DeParams::for_dimension(8, 3);
        let sol = solve(&models(DlModel::constant(1.7)), &snapshot(5, 26.0), &cfg, &de).unwrap();
        assert!(sol.feasible);
        assert!((sol.objective_value - 1.7).abs() < 1e-12);
        assert!(sol.optimizer_evaluations > 0);
    }

    #[test]
    fn mpc1_pins_illuminance() {
        let cfg = MpcConfig::case1(ControlMode::Mpc1);
        let dl = DlModel::constant(0.5)
            .with(DlFeature::DPrev, 0.5)
            .with(DlFeature::Illum, -0.001);
        let sol = solve(&models(dl), &snapshot(5, 26.0), &cfg, &DeParams::for_dimension(4, 1)).unwrap();
        assert!(sol.schedule.illum_setpoints().iter().all(|&l| l == 600.0));
    }

    #[test]
    fn aggregator_mean_and_sd() {
        let mut agg = WindowAggregator::new(2);
        for (k, x) in [1.0, 2.0, 3.0, 4.0].iter().enumerate() {
            agg.push(0, *x, 26.0, 600.0 + k as f64);
            agg.push(1, 2.0, 26.0, 600.0 + k as f64);
        }
        let m = agg.finish(3).unwrap();
        assert_eq!(m.step, 3);
        assert_eq!(m.workers[0].dl, 2.5);
        assert!((m.workers[0].effort - 1.25f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.workers[1].effort, 0.0);
        assert_eq!(m.illum_lx, 601.5);

        let mut missing = WindowAggregator::new(2);
        missing.push(0, 2.0, 26.0, 600.0);
        assert!(missing.finish(0).is_none());
    }

    #[test]
    fn snapshot_uses_previous_only_when_adjacent() {
        let m = |step, dl| MeasuredStep {
            step,
            temp_c: 26.0,
            illum_lx: 600.0,
            workers: vec![WorkerMeasurement { dl, effort: 0.0 }],
        };
        let s = snapshot_from_history(&m(5, 2.5), Some(&m(4, 2.0))).unwrap();
        assert_eq!((s.workers[0].d_plus, s.workers[0].d_minus), (0.5, 0.0));
        let s = snapshot_from_history(&m(5, 2.5), Some(&m(3, 2.0))).unwrap();
        assert_eq!((s.workers[0].d_plus, s.workers[0].d_minus), (0.0, 0.0));
    }

    #[test]
    fn controller_stale_and_deterministic() {
        let cfg = MpcConfig {
            num_workers: 1,
            ..MpcConfig::case1(ControlMode::Mpc2)
        };
        let dl = DlModel::constant(0.5)
            .with(DlFeature::DPrev, 0.6)
            .with(DlFeature::Temp, 0.03)
            .with(DlFeature::TempMinus, -0.2);
        let mut c = Controller::new(models(dl), cfg, DeParams::for_dimension(8, 0), 10);
        assert!(matches!(
            c.step(0),
            Err(ControlError::StaleData { held: (26.0, 600.0), latest: None, .. })
        ));
        let meas = |step| MeasuredStep {
            step,
            temp_c: 26.2,
            illum_lx: 610.0,
            workers: vec![WorkerMeasurement { dl: 2.2, effort: 0.1 }],
        };
        c.observe(meas(0));
        c.observe(meas(1));
        let a = c.step(1).unwrap();
        let mut twin = c.clone();
        let b = twin.step(1).unwrap();
        assert_eq!(a, b);
        // Step 2 missing: previous setpoints held.
        let err = c.step(2).unwrap_err();
        assert_eq!(
            err,
            ControlError::StaleData {
                clock: 2,
                latest: Some(1),
                held: a.applied_setpoints
            }
        );
    }
}
