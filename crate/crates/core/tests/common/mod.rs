//! Independent oracles and data generators shared by integration and
//! acceptance tests.
#![allow(dead_code)]

use drowsy_mpc::domain::{AmiModel, DlFeature, DlModel, IdtModel, ModelSet};
use drowsy_mpc::identify::{TelemetryRow, TelemetryTable};
use drowsy_mpc::models::{dl_linear, increments, predict_ami, predict_idt, DlFeatures};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Straight-line recursion of the lag, affine-light and drowsiness models for
/// one worker, written out independently of the library.
#[allow(clippy::too_many_arguments)]
pub fn hand_recursion(
    k_up: f64,
    k_down: f64,
    theta: (f64, f64, f64),
    dl: &[f64; 11],
    t0: f64,
    l0: f64,
    d0: f64,
    d0_prev: f64,
    effort: f64,
    temp_sp: &[f64],
    illum_sp: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let pos = |x: f64| if x > 0.0 { x } else { 0.0 };
    let mut temps = vec![t0];
    let mut illums = vec![l0];
    let mut ds = vec![d0_prev, d0];
    for i in 0..temp_sp.len() {
        let tp = temps[i];
        let k = if temp_sp[i] >= tp { k_up } else { k_down };
        temps.push(k * temp_sp[i] + (1.0 - k) * tp);
        let l = theta.0 + theta.1 * illums[i] + theta.2 * illum_sp[i];
        illums.push(if l < 0.0 { 0.0 } else { l });
        let t = temps[i + 1];
        let l = illums[i + 1];
        let dp = ds[i + 1];
        let dpp = ds[i];
        let raw = dl[0]
            + dl[1] * dp
            + dl[2] * pos(dp - dpp)
            + dl[3] * pos(dpp - dp)
            + dl[4] * t
            + dl[5] * pos(t - temps[i])
            + dl[6] * pos(temps[i] - t)
            + dl[7] * l
            + dl[8] * pos(l - illums[i])
            + dl[9] * pos(illums[i] - l)
            + dl[10] * effort;
        ds.push(raw.clamp(1.0, 5.0));
    }
    (temps[1..].to_vec(), illums[1..].to_vec(), ds[2..].to_vec())
}

pub fn grid(levels: usize, lo: &[f64], hi: &[f64]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for (l, h) in lo.iter().zip(hi) {
        let mut next = Vec::new();
        for prefix in &out {
            for k in 0..levels {
                let mut v = prefix.clone();
                v.push(l + (h - l) * k as f64 / (levels - 1) as f64);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

pub fn fixture_models() -> ModelSet {
    ModelSet {
        dl: DlModel::constant(-1.2)
            .with(DlFeature::DPrev, 0.6)
            .with(DlFeature::DPlusPrev, 0.2)
            .with(DlFeature::Temp, 0.1)
            .with(DlFeature::TempPlus, 0.25)
            .with(DlFeature::TempMinus, -0.4)
            .with(DlFeature::Illum, -0.0005)
            .with(DlFeature::IllumPlus, -0.002)
            .with(DlFeature::Effort, -0.2),
        idt: IdtModel::new(0.45, 0.55).unwrap(),
        ami: AmiModel::new(40.0, 0.15, 0.8).unwrap(),
    }
}

/// Random coefficients that keep generated drowsiness well inside (1, 5)
/// for the input ranges used below.
pub fn random_dl_truth(rng: &mut ChaCha8Rng) -> DlModel {
    let c = [
        rng.random_range(0.2..0.6),
        rng.random_range(-0.15..0.15),
        rng.random_range(-0.15..0.15),
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.2..0.2),
        rng.random_range(-0.2..0.2),
        rng.random_range(-0.0005..0.0005),
        rng.random_range(-0.001..0.001),
        rng.random_range(-0.001..0.001),
        rng.random_range(-0.4..0.4),
    ];
    // Put the mean response near 2.5 at typical inputs.
    let typical = c[0] * 2.5 + c[3] * 26.0 + c[6] * 600.0 + c[9] * 0.25;
    DlModel::new(2.5 - typical, c).unwrap()
}

/// Draws truths until one generates telemetry that stays inside the scale,
/// so the data are exactly linear in the features.
pub fn truth_and_telemetry(
    workers: usize,
    steps: usize,
    noise_sd: f64,
    rng: &mut ChaCha8Rng,
) -> (DlModel, TelemetryTable) {
    loop {
        let truth = random_dl_truth(rng);
        if let Some(t) = dl_telemetry(&truth, workers, steps, noise_sd, rng) {
            return (truth, t);
        }
    }
}

/// Telemetry from the drowsiness model with exogenous random environment, or
/// `None` when the series leaves the open interval (1, 5).
pub fn dl_telemetry(
    truth: &DlModel,
    workers: usize,
    steps: usize,
    noise_sd: f64,
    rng: &mut ChaCha8Rng,
) -> Option<TelemetryTable> {
    let noise = Normal::new(0.0, noise_sd.max(1e-300)).unwrap();
    let mut rows = Vec::new();
    for w in 0..workers {
        let mut d = [2.5, 2.5];
        let mut temp_prev = 26.0;
        let mut illum_prev = 600.0;
        for t in 0..steps {
            let temp = rng.random_range(24.5..27.5);
            let illum = rng.random_range(450.0..750.0);
            let effort = rng.random_range(0.0..0.5);
            let (dpp, dmp) = increments(d[1], d[0]);
            let (tp, tm) = increments(temp, temp_prev);
            let (lp, lm) = increments(illum, illum_prev);
            let x = DlFeatures {
                d_prev: d[1],
                d_plus_prev: dpp,
                d_minus_prev: dmp,
                temp,
                temp_plus: tp,
                temp_minus: tm,
                illum,
                illum_plus: lp,
                illum_minus: lm,
                effort,
            };
            let e = if noise_sd > 0.0 { noise.sample(rng) } else { 0.0 };
            let dl = dl_linear(truth, &x) + e;
            if !(dl > 1.0 && dl < 5.0) {
                return None;
            }
            rows.push(TelemetryRow {
                step: t as i64,
                worker_id: format!("w{w}"),
                dl,
                effort,
                temp,
                illum,
                temp_set: 26.0,
                illum_set: 600.0,
            });
            d = [d[1], dl];
            temp_prev = temp;
            illum_prev = illum;
        }
    }
    Some(TelemetryTable::new(rows).unwrap())
}

pub fn room_telemetry(
    idt: &IdtModel,
    ami: &AmiModel,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> TelemetryTable {
    let mut temp = 26.0;
    // Start at the steady state of the light model so the zero floor never
    // clips the data and the generated series stays affine.
    let mut illum = (ami.theta0 + ami.theta_set * 600.0) / (1.0 - ami.theta_prev);
    let mut rows = Vec::new();
    for t in 0..steps {
        let (ts, ls) = if t == 0 {
            (26.0, 600.0)
        } else {
            (rng.random_range(24.0..28.0), rng.random_range(450.0..750.0))
        };
        if t > 0 {
            temp = predict_idt(idt, temp, ts);
            illum = predict_ami(ami, illum, ls);
            assert!(illum > 0.0, "generator hit the floor");
        }
        rows.push(TelemetryRow {
            step: t as i64,
            worker_id: "0".into(),
            dl: 2.0,
            effort: 0.1,
            temp,
            illum,
            temp_set: ts,
            illum_set: ls,
        });
    }
    TelemetryTable::new(rows).unwrap()
}


/// One noisy identification trial: 5 workers x 102 steps (500 samples),
/// sigma = 0.05. True when every fitted coefficient, intercept included, lies
/// within three reported standard errors of the truth.
pub fn noisy_trial_within_3se(seed: u64) -> bool {
    use drowsy_mpc::identify::{fit_dl_model, FitOptions};
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (truth, table) = truth_and_telemetry(5, 102, 0.05, &mut rng);
    let (fit, report) = fit_dl_model(&table, &FitOptions::default()).unwrap();
    assert_eq!(report.n_samples, 500);
    let mut pairs = vec![(fit.intercept, truth.intercept, report.std_errors[0])];
    for (j, f) in DlFeature::ALL.iter().enumerate() {
        pairs.push((fit.coef(*f), truth.coef(*f), report.std_errors[j + 1]));
    }
    pairs.iter().all(|(est, t, se)| (est - t).abs() <= 3.0 * se)
}
