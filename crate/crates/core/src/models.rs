//! Prediction models, horizon rollout, objective and comfort constraint.
//!
//! Every function here is pure. The optimizer calls [`rollout`] many times per
//! solve, from several threads when the `parallel` feature is on.

use crate::domain::{
    AmiModel, ControlSchedule, DlFeature, DlModel, DrowsinessLevel, IdtModel, ModelSet,
    MpcConfig, StateSnapshot, DL_MAX, DL_MIN,
};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("shape mismatch: {what} is {got}, expected {expected}")]
    ShapeMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

/// Split of a step change into its rising and falling parts.
pub fn increments(current: f64, previous: f64) -> (f64, f64) {
    let delta = current - previous;
    (delta.max(0.0), (-delta).max(0.0))
}

/// One-step room temperature. Uses the raising gain when the setpoint is at
/// or above the previous temperature.
pub fn predict_idt(m: &IdtModel, temp_prev: f64, setpoint: f64) -> f64 {
    let k = idt_gain(m, temp_prev, setpoint);
    k * setpoint + (1.0 - k) * temp_prev
}

fn idt_gain(m: &IdtModel, temp_prev: f64, setpoint: f64) -> f64 {
    if setpoint >= temp_prev {
        m.k_up()
    } else {
        m.k_down()
    }
}

/// One-step ambient illuminance, floored at 0 lux.
pub fn predict_ami(m: &AmiModel, illum_prev: f64, setpoint: f64) -> f64 {
    (m.theta0 + m.theta_prev * illum_prev + m.theta_set * setpoint).max(0.0)
}

/// Explanatory variables of one drowsiness prediction.
///
/// The drowsiness terms are lagged by one step; the environment terms and
/// their increments belong to the predicted step itself.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DlFeatures {
    pub d_prev: f64,
    pub d_plus_prev: f64,
    pub d_minus_prev: f64,
    pub temp: f64,
    pub temp_plus: f64,
    pub temp_minus: f64,
    pub illum: f64,
    pub illum_plus: f64,
    pub illum_minus: f64,
    pub effort: f64,
}

impl DlFeatures {
    /// Values in [`DlFeature::ALL`] order.
    pub fn to_array(&self) -> [f64; DlFeature::COUNT] {
        [
            self.d_prev,
            self.d_plus_prev,
            self.d_minus_prev,
            self.temp,
            self.temp_plus,
            self.temp_minus,
            self.illum,
            self.illum_plus,
            self.illum_minus,
            self.effort,
        ]
    }
}

/// Unclamped regression output.
pub fn dl_linear(m: &DlModel, x: &DlFeatures) -> f64 {
    m.intercept
        + m.coefficients()
            .iter()
            .zip(x.to_array())
            .map(|(c, v)| c * v)
            .sum::<f64>()
}

pub fn predict_dl(m: &DlModel, x: &DlFeatures) -> DrowsinessLevel {
    DrowsinessLevel::clamped(dl_linear(m, x))
}

/// Predicted trajectories over one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonPrediction {
    pub temps: Vec<f64>,
    pub illums: Vec<f64>,
    /// `dls[worker][step]`, every entry within [1, 5].
    pub dls: Vec<Vec<f64>>,
}

impl HorizonPrediction {
    pub fn horizon(&self) -> usize {
        self.temps.len()
    }

    pub fn num_workers(&self) -> usize {
        self.dls.len()
    }
}

fn check_shapes(
    snapshot: &StateSnapshot,
    schedule: &ControlSchedule,
    cfg: &MpcConfig,
) -> Result<(), ModelError> {
    if schedule.horizon() != cfg.horizon {
        return Err(ModelError::ShapeMismatch {
            what: "schedule horizon",
            got: schedule.horizon(),
            expected: cfg.horizon,
        });
    }
    if snapshot.workers.len() != cfg.num_workers {
        return Err(ModelError::ShapeMismatch {
            what: "snapshot worker count",
            got: snapshot.workers.len(),
            expected: cfg.num_workers,
        });
    }
    Ok(())
}

/// Runs the three models forward over the schedule from the snapshot.
pub fn rollout(
    models: &ModelSet,
    snapshot: &StateSnapshot,
    schedule: &ControlSchedule,
    cfg: &MpcConfig,
) -> Result<HorizonPrediction, ModelError> {
    check_shapes(snapshot, schedule, cfg)?;
    let horizon = schedule.horizon();

    let mut temps = Vec::with_capacity(horizon);
    let mut illums = Vec::with_capacity(horizon);
    let mut temp_prev = snapshot.temp_current;
    let mut illum_prev = snapshot.illum_current;
    for (&ts, &ls) in schedule
        .temp_setpoints()
        .iter()
        .zip(schedule.illum_setpoints())
    {
        let t = predict_idt(&models.idt, temp_prev, ts);
        let l = predict_ami(&models.ami, illum_prev, ls);
        temps.push(t);
        illums.push(l);
        temp_prev = t;
        illum_prev = l;
    }

    let dls = snapshot
        .workers
        .iter()
        .map(|w| {
            let mut d_prev = w.d_current.value();
            let mut d_plus = w.d_plus;
            let mut d_minus = w.d_minus;
            let mut temp_prev = snapshot.temp_current;
            let mut illum_prev = snapshot.illum_current;
            let mut row = Vec::with_capacity(horizon);
            for step in 0..horizon {
                let (temp_plus, temp_minus) = increments(temps[step], temp_prev);
                let (illum_plus, illum_minus) = increments(illums[step], illum_prev);
                let x = DlFeatures {
                    d_prev,
                    d_plus_prev: d_plus,
                    d_minus_prev: d_minus,
                    temp: temps[step],
                    temp_plus,
                    temp_minus,
                    illum: illums[step],
                    illum_plus,
                    illum_minus,
                    effort: w.effort,
                };
                let d = predict_dl(&models.dl, &x).value();
                (d_plus, d_minus) = increments(d, d_prev);
                d_prev = d;
                temp_prev = temps[step];
                illum_prev = illums[step];
                row.push(d);
            }
            row
        })
        .collect();

    Ok(HorizonPrediction { temps, illums, dls })
}

/// Mean predicted drowsiness over all workers and steps.
pub fn objective(pred: &HorizonPrediction) -> f64 {
    let n = (pred.num_workers() * pred.horizon()) as f64;
    pred.dls.iter().flatten().sum::<f64>() / n
}

pub fn comfort_penalty(temp: f64, illum: f64, cfg: &MpcConfig) -> f64 {
    cfg.p_temp * (temp - cfg.temp_comfort).abs() + cfg.p_illum * (illum - cfg.illum_comfort).abs()
}

/// Total excess of the per-step comfort penalty over the cap. Zero exactly
/// when every step satisfies the comfort constraint.
pub fn constraint_violation(pred: &HorizonPrediction, cfg: &MpcConfig) -> f64 {
    pred.temps
        .iter()
        .zip(&pred.illums)
        .map(|(&t, &l)| (comfort_penalty(t, l, cfg) - cfg.penalty_cap).max(0.0))
        .sum()
}

/// Gradient of [`objective`] with respect to the flattened schedule
/// (temperatures first, then illuminances), by forward-mode propagation of
/// the rollout's tangent equations.
///
/// The rollout is piecewise linear. At a kink (a setpoint equal to the
/// previous temperature, a zero increment, or a clamped prediction) the
/// derivative of the branch that the rollout itself takes is returned.
pub fn objective_gradient(
    models: &ModelSet,
    snapshot: &StateSnapshot,
    schedule: &ControlSchedule,
    cfg: &MpcConfig,
) -> Result<Vec<f64>, ModelError> {
    check_shapes(snapshot, schedule, cfg)?;
    let horizon = schedule.horizon();
    let n_vars = 2 * horizon;
    let pred = rollout(models, snapshot, schedule, cfg)?;
    let coef = |f: DlFeature| models.dl.coef(f);

    // dT[t][j], dL[t][j]: sensitivity of the step-t prediction to variable j.
    let mut d_temp = vec![vec![0.0; n_vars]; horizon];
    let mut d_illum = vec![vec![0.0; n_vars]; horizon];
    let mut temp_prev = snapshot.temp_current;
    let mut illum_prev = snapshot.illum_current;
    for t in 0..horizon {
        let ts = schedule.temp_setpoints()[t];
        let k = idt_gain(&models.idt, temp_prev, ts);
        let ls = schedule.illum_setpoints()[t];
        let illum_raw =
            models.ami.theta0 + models.ami.theta_prev * illum_prev + models.ami.theta_set * ls;
        for j in 0..n_vars {
            let prev_t = if t > 0 { d_temp[t - 1][j] } else { 0.0 };
            let prev_l = if t > 0 { d_illum[t - 1][j] } else { 0.0 };
            let own_t = if j == t { 1.0 } else { 0.0 };
            let own_l = if j == horizon + t { 1.0 } else { 0.0 };
            d_temp[t][j] = k * own_t + (1.0 - k) * prev_t;
            d_illum[t][j] = if illum_raw > 0.0 {
                models.ami.theta_prev * prev_l + models.ami.theta_set * own_l
            } else {
                0.0
            };
        }
        temp_prev = pred.temps[t];
        illum_prev = pred.illums[t];
    }

    // Derivative of max(a - b, 0) is (da - db) on the open positive side.
    let split = |cur: f64, prev: f64, d_cur: f64, d_prev: f64| -> (f64, f64) {
        let delta = cur - prev;
        if delta > 0.0 {
            (d_cur - d_prev, 0.0)
        } else if delta < 0.0 {
            (0.0, d_prev - d_cur)
        } else {
            (0.0, 0.0)
        }
    };

    let mut grad = vec![0.0; n_vars];
    for (w, worker) in snapshot.workers.iter().enumerate() {
        let mut d_prev_val = worker.d_current.value();
        let mut prev_d_sens = vec![0.0; n_vars];
        let mut prev_plus_sens = vec![0.0; n_vars];
        let mut prev_minus_sens = vec![0.0; n_vars];
        for t in 0..horizon {
            let (t_prev, l_prev) = if t == 0 {
                (snapshot.temp_current, snapshot.illum_current)
            } else {
                (pred.temps[t - 1], pred.illums[t - 1])
            };
            let d = pred.dls[w][t];
            // Unclamped value decides whether the clamp was active.
            let raw_inside = {
                let (d_plus_prev, d_minus_prev) = if t == 0 {
                    (worker.d_plus, worker.d_minus)
                } else {
                    let before = if t >= 2 {
                        pred.dls[w][t - 2]
                    } else {
                        worker.d_current.value()
                    };
                    increments(pred.dls[w][t - 1], before)
                };
                let (tp, tm) = increments(pred.temps[t], t_prev);
                let (lp, lm) = increments(pred.illums[t], l_prev);
                let raw = dl_linear(
                    &models.dl,
                    &DlFeatures {
                        d_prev: d_prev_val,
                        d_plus_prev,
                        d_minus_prev,
                        temp: pred.temps[t],
                        temp_plus: tp,
                        temp_minus: tm,
                        illum: pred.illums[t],
                        illum_plus: lp,
                        illum_minus: lm,
                        effort: worker.effort,
                    },
                );
                raw > DL_MIN && raw < DL_MAX
            };
            let mut d_sens = vec![0.0; n_vars];
            if raw_inside {
                for j in 0..n_vars {
                    let dt_prev = if t > 0 { d_temp[t - 1][j] } else { 0.0 };
                    let dl_prev = if t > 0 { d_illum[t - 1][j] } else { 0.0 };
                    let (tp, tm) = split(pred.temps[t], t_prev, d_temp[t][j], dt_prev);
                    let (lp, lm) = split(pred.illums[t], l_prev, d_illum[t][j], dl_prev);
                    d_sens[j] = coef(DlFeature::DPrev) * prev_d_sens[j]
                        + coef(DlFeature::DPlusPrev) * prev_plus_sens[j]
                        + coef(DlFeature::DMinusPrev) * prev_minus_sens[j]
                        + coef(DlFeature::Temp) * d_temp[t][j]
                        + coef(DlFeature::TempPlus) * tp
                        + coef(DlFeature::TempMinus) * tm
                        + coef(DlFeature::Illum) * d_illum[t][j]
                        + coef(DlFeature::IllumPlus) * lp
                        + coef(DlFeature::IllumMinus) * lm;
                }
            }
            for j in 0..n_vars {
                let (p, m) = split(d, d_prev_val, d_sens[j], prev_d_sens[j]);
                prev_plus_sens[j] = p;
                prev_minus_sens[j] = m;
                grad[j] += d_sens[j];
            }
            prev_d_sens = d_sens;
            d_prev_val = d;
        }
    }
    let n = (snapshot.workers.len() * horizon) as f64;
    Ok(grad.into_iter().map(|g| g / n).collect())
}
