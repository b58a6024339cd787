//! Identification of the drowsiness, temperature and illuminance models from
//! step-level telemetry, by ordinary least squares.

use crate::domain::{AmiModel, DlFeature, DlModel, DomainError, IdtModel, DL_MAX, DL_MIN};
use crate::models::{increments, DlFeatures};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Smallest gain a fitted lag coefficient is clipped to.
pub const MIN_LAG_GAIN: f64 = 1e-6;

/// Condition number above which a fit is flagged.
const CONDITION_LIMIT: f64 = 1e10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IdentifyError {
    #[error("insufficient data for {what}: {got} usable samples, need {need}")]
    InsufficientData {
        what: &'static str,
        got: usize,
        need: usize,
    },
    #[error("setpoint sweep is degenerate: every illuminance setpoint equals {0}")]
    DegenerateSweep(f64),
    #[error("telemetry row {row}: {reason}")]
    BadTable { row: usize, reason: String },
    #[error("fitted model is invalid: {0}")]
    InvalidModel(#[from] DomainError),
}

/// One step of one worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRow {
    pub step: i64,
    pub worker_id: String,
    pub dl: f64,
    pub effort: f64,
    pub temp: f64,
    pub illum: f64,
    pub temp_set: f64,
    pub illum_set: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TelemetryTable {
    rows: Vec<TelemetryRow>,
}

impl TelemetryTable {
    /// Checks that step indices strictly increase per worker.
    pub fn new(rows: Vec<TelemetryRow>) -> Result<Self, IdentifyError> {
        let mut last: BTreeMap<&str, i64> = BTreeMap::new();
        for (i, r) in rows.iter().enumerate() {
            if let Some(&prev) = last.get(r.worker_id.as_str()) {
                if r.step <= prev {
                    return Err(IdentifyError::BadTable {
                        row: i,
                        reason: format!(
                            "step {} for worker `{}` does not follow step {}",
                            r.step, r.worker_id, prev
                        ),
                    });
                }
            }
            for (name, v) in [
                ("dl", r.dl),
                ("effort", r.effort),
                ("temp", r.temp),
                ("illum", r.illum),
                ("temp_set", r.temp_set),
                ("illum_set", r.illum_set),
            ] {
                if !v.is_finite() {
                    return Err(IdentifyError::BadTable {
                        row: i,
                        reason: format!("{name} is not finite"),
                    });
                }
            }
            if !(DL_MIN..=DL_MAX).contains(&r.dl) {
                return Err(IdentifyError::BadTable {
                    row: i,
                    reason: format!("dl {} outside [1, 5]", r.dl),
                });
            }
            if r.effort < 0.0 {
                return Err(IdentifyError::BadTable {
                    row: i,
                    reason: format!("effort {} < 0", r.effort),
                });
            }
            last.insert(r.worker_id.as_str(), r.step);
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[TelemetryRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn by_worker(&self) -> BTreeMap<&str, Vec<&TelemetryRow>> {
        let mut map: BTreeMap<&str, Vec<&TelemetryRow>> = BTreeMap::new();
        for r in &self.rows {
            map.entry(r.worker_id.as_str()).or_default().push(r);
        }
        map
    }

    /// Room-level series: the first row seen for every step index, in step
    /// order. Temperature and illuminance are shared by all workers.
    fn room_series(&self) -> Vec<&TelemetryRow> {
        let mut map: BTreeMap<i64, &TelemetryRow> = BTreeMap::new();
        for r in &self.rows {
            map.entry(r.step).or_insert(r);
        }
        map.into_values().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Drop samples whose target drowsiness sits on the scale boundary; such
    /// values may be clamped and would bias the fit.
    pub exclude_boundary_dl: bool,
    /// Ridge factor added to the normal equations of the centered problem.
    pub ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            exclude_boundary_dl: true,
            ridge: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Root-mean-square training residual.
    pub rmse: f64,
    pub n_samples: usize,
    /// Set when the design matrix is rank deficient or badly conditioned.
    pub condition_warning: bool,
    /// Standard errors of the fitted parameters, intercept first, in the
    /// order the model stores them. Empty when there are no residual
    /// degrees of freedom.
    pub std_errors: Vec<f64>,
}

/// Result of an affine least-squares fit.
struct LinearFit {
    intercept: f64,
    coef: Vec<f64>,
    rmse: f64,
    condition_warning: bool,
    /// Intercept first.
    std_errors: Vec<f64>,
}

/// Fits `y ≈ b0 + X b`. The intercept is not penalized: columns are centered
/// and the slope solved by SVD, giving the minimum-norm solution when the
/// centered design is rank deficient.
fn affine_least_squares(x: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> LinearFit {
    let n = x.nrows();
    let p = x.ncols();
    let means: Vec<f64> = (0..p).map(|j| x.column(j).mean()).collect();
    let y_mean = y.mean();
    let mut xc = x.clone();
    for j in 0..p {
        for v in xc.column_mut(j).iter_mut() {
            *v -= means[j];
        }
    }
    let yc = y.map(|v| v - y_mean);

    let svd = xc.clone().svd(true, true);
    let s = &svd.singular_values;
    let s_max = s.iter().cloned().fold(0.0, f64::max);
    let cutoff = (n.max(p) as f64) * f64::EPSILON * s_max;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");

    let mut rank = 0;
    let mut s_min_kept = f64::INFINITY;
    let uty = u.transpose() * &yc;
    let mut scaled = DVector::zeros(s.len());
    // inv_sq[k] = 1 / (s_k^2 + ridge) for the coefficient covariance.
    let mut inv_sq = DVector::zeros(s.len());
    for k in 0..s.len() {
        if s[k] > cutoff && s[k] > 0.0 {
            rank += 1;
            s_min_kept = s_min_kept.min(s[k]);
            scaled[k] = s[k] / (s[k] * s[k] + ridge) * uty[k];
            inv_sq[k] = 1.0 / (s[k] * s[k] + ridge);
        }
    }
    let beta = v_t.transpose() * scaled;
    let intercept = y_mean - means.iter().zip(beta.iter()).map(|(m, b)| m * b).sum::<f64>();

    let fitted = &xc * &beta;
    let rss: f64 = fitted
        .iter()
        .zip(yc.iter())
        .map(|(f, y)| (y - f).powi(2))
        .sum();
    let rmse = (rss / n as f64).sqrt();

    let condition_warning =
        rank < p || (rank > 0 && s_max / s_min_kept > CONDITION_LIMIT);

    let dof = n as i64 - p as i64 - 1;
    let std_errors = if dof > 0 {
        let sigma2 = rss / dof as f64;
        // Cov(beta) = sigma2 * V diag(inv_sq) V^T
        let v = v_t.transpose();
        let cov = &v * DMatrix::from_diagonal(&inv_sq) * v.transpose() * sigma2;
        let m = DVector::from_vec(means);
        let var_b0 = sigma2 / n as f64 + (m.transpose() * &cov * &m)[(0, 0)];
        std::iter::once(var_b0.max(0.0).sqrt())
            .chain((0..p).map(|j| cov[(j, j)].max(0.0).sqrt()))
            .collect()
    } else {
        Vec::new()
    };

    LinearFit {
        intercept,
        coef: beta.iter().copied().collect(),
        rmse,
        condition_warning,
        std_errors,
    }
}

/// Builds the drowsiness regression samples: features from steps t-2, t-1
/// and t of one worker (consecutive step indices), target the drowsiness
/// at step t.
pub fn dl_samples(table: &TelemetryTable, opts: &FitOptions) -> Vec<(DlFeatures, f64)> {
    let mut out = Vec::new();
    for rows in table.by_worker().values() {
        for w in rows.windows(3) {
            let (a, b, c) = (w[0], w[1], w[2]);
            if b.step != a.step + 1 || c.step != b.step + 1 {
                continue;
            }
            if opts.exclude_boundary_dl && (c.dl <= DL_MIN || c.dl >= DL_MAX) {
                continue;
            }
            let (d_plus_prev, d_minus_prev) = increments(b.dl, a.dl);
            let (temp_plus, temp_minus) = increments(c.temp, b.temp);
            let (illum_plus, illum_minus) = increments(c.illum, b.illum);
            out.push((
                DlFeatures {
                    d_prev: b.dl,
                    d_plus_prev,
                    d_minus_prev,
                    temp: c.temp,
                    temp_plus,
                    temp_minus,
                    illum: c.illum,
                    illum_plus,
                    illum_minus,
                    effort: c.effort,
                },
                c.dl,
            ));
        }
    }
    out
}

pub fn fit_dl_model(
    table: &TelemetryTable,
    opts: &FitOptions,
) -> Result<(DlModel, FitReport), IdentifyError> {
    let samples = dl_samples(table, opts);
    let need = DlFeature::COUNT + 1;
    if samples.len() < need {
        return Err(IdentifyError::InsufficientData {
            what: "drowsiness model",
            got: samples.len(),
            need,
        });
    }
    let x = DMatrix::from_fn(samples.len(), DlFeature::COUNT, |i, j| {
        samples[i].0.to_array()[j]
    });
    let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1));
    let fit = affine_least_squares(&x, &y, opts.ridge);
    let mut coef = [0.0; DlFeature::COUNT];
    coef.copy_from_slice(&fit.coef);
    let model = DlModel::new(fit.intercept, coef)?;
    Ok((
        model,
        FitReport {
            rmse: fit.rmse,
            n_samples: samples.len(),
            condition_warning: fit.condition_warning,
            std_errors: fit.std_errors,
        },
    ))
}

/// One-dimensional least squares for a lag gain `k` on
/// `T_t - T_prev = k (T_set - T_prev)`.
fn lag_gain(pairs: &[(f64, f64)]) -> (f64, f64, f64) {
    let sxx: f64 = pairs.iter().map(|(a, _)| a * a).sum();
    let sxy: f64 = pairs.iter().map(|(a, b)| a * b).sum();
    let raw = sxy / sxx;
    let k = raw.clamp(MIN_LAG_GAIN, 1.0);
    let rss: f64 = pairs.iter().map(|(a, b)| (b - k * a).powi(2)).sum();
    let se = if pairs.len() > 1 {
        (rss / (pairs.len() - 1) as f64 / sxx).sqrt()
    } else {
        f64::NAN
    };
    (k, rss, se)
}

/// Fits the raising and lowering gains of the temperature lag model.
/// Transitions whose setpoint equals the previous temperature carry no
/// information about the gain and are skipped.
pub fn fit_idt_coeffs(table: &TelemetryTable) -> Result<(IdtModel, FitReport), IdentifyError> {
    let series = table.room_series();
    let mut raising = Vec::new();
    let mut lowering = Vec::new();
    for w in series.windows(2) {
        let (prev, cur) = (w[0], w[1]);
        if cur.step != prev.step + 1 {
            continue;
        }
        let a = cur.temp_set - prev.temp;
        let b = cur.temp - prev.temp;
        if a == 0.0 {
            continue;
        }
        if cur.temp_set >= prev.temp {
            raising.push((a, b));
        } else {
            lowering.push((a, b));
        }
    }
    for (what, branch) in [("raising transitions", &raising), ("lowering transitions", &lowering)] {
        if branch.len() < 2 {
            return Err(IdentifyError::InsufficientData {
                what,
                got: branch.len(),
                need: 2,
            });
        }
    }
    let (k_up, rss_up, se_up) = lag_gain(&raising);
    let (k_down, rss_down, se_down) = lag_gain(&lowering);
    let n = raising.len() + lowering.len();
    Ok((
        IdtModel::new(k_up, k_down)?,
        FitReport {
            rmse: ((rss_up + rss_down) / n as f64).sqrt(),
            n_samples: n,
            condition_warning: false,
            std_errors: vec![se_up, se_down],
        },
    ))
}

pub fn fit_ami_model(table: &TelemetryTable) -> Result<(AmiModel, FitReport), IdentifyError> {
    let series = table.room_series();
    let samples: Vec<(f64, f64, f64)> = series
        .windows(2)
        .filter(|w| w[1].step == w[0].step + 1)
        .map(|w| (w[0].illum, w[1].illum_set, w[1].illum))
        .collect();
    if samples.len() < 3 {
        return Err(IdentifyError::InsufficientData {
            what: "illuminance model",
            got: samples.len(),
            need: 3,
        });
    }
    let first = samples[0].1;
    if samples.iter().all(|s| s.1 == first) {
        return Err(IdentifyError::DegenerateSweep(first));
    }
    let x = DMatrix::from_fn(samples.len(), 2, |i, j| {
        if j == 0 {
            samples[i].0
        } else {
            samples[i].1
        }
    });
    let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.2));
    let fit = affine_least_squares(&x, &y, 0.0);
    Ok((
        AmiModel::new(fit.intercept, fit.coef[0], fit.coef[1])?,
        FitReport {
            rmse: fit.rmse,
            n_samples: samples.len(),
            condition_warning: fit.condition_warning,
            std_errors: fit.std_errors,
        },
    ))
}
