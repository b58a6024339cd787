//! Core value types and configuration shared by every other module.

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

/// Lowest drowsiness level (awake).
pub const DL_MIN: f64 = 1.0;
/// Highest drowsiness level (extremely drowsy).
pub const DL_MAX: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("bounds inverted for {field}: lower {lo} > upper {hi}")]
    BoundsInverted { field: &'static str, lo: f64, hi: f64 },
    #[error("{field} = {value} lies outside its bounds [{lo}, {hi}]")]
    ComfortOutsideBounds {
        field: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("{field} must be positive, got {value}")]
    NonPositiveCoefficient { field: &'static str, value: f64 },
    #[error("{field} = {value} is out of range: {expected}")]
    OutOfRange {
        field: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("schedule sequences differ in length: {temps} temperatures vs {illums} illuminances")]
    ScheduleLength { temps: usize, illums: usize },
    #[error("snapshot has no workers")]
    NoWorkers,
}

/// Drowsiness on the 1 (awake) to 5 (extremely drowsy) rating scale.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct DrowsinessLevel(f64);

impl DrowsinessLevel {
    pub fn new(value: f64) -> Result<Self, DomainError> {
        if (DL_MIN..=DL_MAX).contains(&value) {
            Ok(Self(value))
        } else {
            Err(DomainError::OutOfRange {
                field: "drowsiness level",
                value,
                expected: "within [1, 5]",
            })
        }
    }

    /// Clamps any finite value onto the scale. NaN maps to the lower end.
    pub fn clamped(value: f64) -> Self {
        if value.is_nan() {
            return Self(DL_MIN);
        }
        Self(value.clamp(DL_MIN, DL_MAX))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for DrowsinessLevel {
    type Error = DomainError;
    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<DrowsinessLevel> for f64 {
    fn from(d: DrowsinessLevel) -> f64 {
        d.0
    }
}

/// Per-worker state at the start of a horizon (time step 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkerState {
    pub d_current: DrowsinessLevel,
    pub d_plus: f64,
    pub d_minus: f64,
    /// Standard deviation of the instant drowsiness samples in the latest step.
    pub effort: f64,
}

impl WorkerState {
    pub fn new(
        d_current: DrowsinessLevel,
        d_plus: f64,
        d_minus: f64,
        effort: f64,
    ) -> Result<Self, DomainError> {
        if !(d_plus >= 0.0) {
            return Err(DomainError::OutOfRange {
                field: "d_plus",
                value: d_plus,
                expected: ">= 0",
            });
        }
        if !(d_minus >= 0.0) {
            return Err(DomainError::OutOfRange {
                field: "d_minus",
                value: d_minus,
                expected: ">= 0",
            });
        }
        if d_plus > 0.0 && d_minus > 0.0 {
            return Err(DomainError::OutOfRange {
                field: "d_plus/d_minus",
                value: d_plus.min(d_minus),
                expected: "at most one nonzero",
            });
        }
        if !(effort >= 0.0) || !effort.is_finite() {
            return Err(DomainError::OutOfRange {
                field: "effort",
                value: effort,
                expected: ">= 0",
            });
        }
        Ok(Self {
            d_current,
            d_plus,
            d_minus,
            effort,
        })
    }

    /// Builds the state from the current and previous step's drowsiness.
    pub fn from_history(
        d_current: DrowsinessLevel,
        d_previous: DrowsinessLevel,
        effort: f64,
    ) -> Result<Self, DomainError> {
        let delta = d_current.value() - d_previous.value();
        Self::new(d_current, delta.max(0.0), (-delta).max(0.0), effort)
    }
}

/// Measured state at the start of a horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub workers: Vec<WorkerState>,
    /// Time-averaged room temperature of step 0, °C.
    pub temp_current: f64,
    /// Time-averaged ambient illuminance of step 0, lux.
    pub illum_current: f64,
}

impl StateSnapshot {
    pub fn new(
        workers: Vec<WorkerState>,
        temp_current: f64,
        illum_current: f64,
    ) -> Result<Self, DomainError> {
        let s = Self {
            workers,
            temp_current,
            illum_current,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.workers.is_empty() {
            return Err(DomainError::NoWorkers);
        }
        if !(0.0..=50.0).contains(&self.temp_current) {
            return Err(DomainError::OutOfRange {
                field: "temp_current",
                value: self.temp_current,
                expected: "within [0, 50] °C",
            });
        }
        if !(0.0..=10_000.0).contains(&self.illum_current) {
            return Err(DomainError::OutOfRange {
                field: "illum_current",
                value: self.illum_current,
                expected: "within [0, 10000] lux",
            });
        }
        Ok(())
    }
}

/// Setpoint schedule over the horizon: temperatures for the air conditioner
/// and illuminances for the lighting, one per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    temp_setpoints: Vec<f64>,
    illum_setpoints: Vec<f64>,
}

impl ControlSchedule {
    pub fn new(temp_setpoints: Vec<f64>, illum_setpoints: Vec<f64>) -> Result<Self, DomainError> {
        if temp_setpoints.len() != illum_setpoints.len() || temp_setpoints.is_empty() {
            return Err(DomainError::ScheduleLength {
                temps: temp_setpoints.len(),
                illums: illum_setpoints.len(),
            });
        }
        Ok(Self {
            temp_setpoints,
            illum_setpoints,
        })
    }

    /// A schedule holding the same setpoints at every step.
    pub fn constant(horizon: usize, temp: f64, illum: f64) -> Result<Self, DomainError> {
        Self::new(vec![temp; horizon], vec![illum; horizon])
    }

    pub fn horizon(&self) -> usize {
        self.temp_setpoints.len()
    }

    pub fn temp_setpoints(&self) -> &[f64] {
        &self.temp_setpoints
    }

    pub fn illum_setpoints(&self) -> &[f64] {
        &self.illum_setpoints
    }

    /// Decision vector layout: all temperatures, then all illuminances.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.horizon());
        v.extend_from_slice(&self.temp_setpoints);
        v.extend_from_slice(&self.illum_setpoints);
        v
    }

    pub fn unflatten(vector: &[f64]) -> Result<Self, DomainError> {
        if !vector.len().is_multiple_of(2) || vector.is_empty() {
            return Err(DomainError::ScheduleLength {
                temps: vector.len().div_ceil(2),
                illums: vector.len() / 2,
            });
        }
        let (t, l) = vector.split_at(vector.len() / 2);
        Self::new(t.to_vec(), l.to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControlMode {
    /// Setpoints held at the comfort values.
    #[serde(rename = "NOC")]
    Noc,
    /// Temperature optimized; illuminance held at its comfort value.
    #[serde(rename = "MPC1")]
    Mpc1,
    /// Temperature and illuminance both optimized.
    #[serde(rename = "MPC2")]
    Mpc2,
}

impl ControlMode {
    pub const ALL: [ControlMode; 3] = [ControlMode::Noc, ControlMode::Mpc1, ControlMode::Mpc2];

    pub fn as_str(self) -> &'static str {
        match self {
            ControlMode::Noc => "NOC",
            ControlMode::Mpc1 => "MPC1",
            ControlMode::Mpc2 => "MPC2",
        }
    }
}

impl std::fmt::Display for ControlMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ControlMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NOC" => Ok(ControlMode::Noc),
            "MPC1" => Ok(ControlMode::Mpc1),
            "MPC2" => Ok(ControlMode::Mpc2),
            other => Err(format!("unknown control mode `{other}`")),
        }
    }
}

/// Horizon, bounds and comfort parameters of the controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcConfig {
    /// Number of steps in the horizon.
    pub horizon: usize,
    /// Step length in hours.
    pub step_hours: f64,
    pub num_workers: usize,
    pub temp_lo: f64,
    pub temp_hi: f64,
    pub illum_lo: f64,
    pub illum_hi: f64,
    pub temp_comfort: f64,
    pub illum_comfort: f64,
    /// Comfort penalty per °C of deviation.
    pub p_temp: f64,
    /// Comfort penalty per lux of deviation. Accepts a ratio string such as
    /// `"1/150"` when deserialized.
    #[serde(deserialize_with = "deserialize_ratio")]
    pub p_illum: f64,
    /// Maximum total comfort penalty allowed at any step.
    pub penalty_cap: f64,
    pub mode: ControlMode,
}

impl MpcConfig {
    /// Summer cooling setup: five workers, temperature band 25.5–26.5 °C.
    pub fn case1(mode: ControlMode) -> Self {
        Self {
            horizon: 4,
            step_hours: 0.25,
            num_workers: 5,
            temp_lo: 25.5,
            temp_hi: 26.5,
            illum_lo: 450.0,
            illum_hi: 750.0,
            temp_comfort: 26.0,
            illum_comfort: 600.0,
            p_temp: 0.5,
            p_illum: 1.0 / 150.0,
            penalty_cap: 2.0,
            mode,
        }
    }

    /// Winter heating setup: six workers, temperature band 25.0–27.0 °C.
    pub fn case2(mode: ControlMode) -> Self {
        Self {
            num_workers: 6,
            temp_lo: 25.0,
            temp_hi: 27.0,
            ..Self::case1(mode)
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.horizon < 1 {
            return Err(DomainError::OutOfRange {
                field: "horizon",
                value: self.horizon as f64,
                expected: ">= 1",
            });
        }
        if self.num_workers < 1 {
            return Err(DomainError::OutOfRange {
                field: "num_workers",
                value: self.num_workers as f64,
                expected: ">= 1",
            });
        }
        positive("step_hours", self.step_hours)?;
        ordered("temp", self.temp_lo, self.temp_hi)?;
        ordered("illum", self.illum_lo, self.illum_hi)?;
        within("temp_comfort", self.temp_comfort, self.temp_lo, self.temp_hi)?;
        within(
            "illum_comfort",
            self.illum_comfort,
            self.illum_lo,
            self.illum_hi,
        )?;
        positive("p_temp", self.p_temp)?;
        positive("p_illum", self.p_illum)?;
        if !(self.penalty_cap >= 0.0) || !self.penalty_cap.is_finite() {
            return Err(DomainError::OutOfRange {
                field: "penalty_cap",
                value: self.penalty_cap,
                expected: ">= 0",
            });
        }
        Ok(())
    }

    /// Lower bound of the decision vector for a full (temperature and
    /// illuminance) schedule.
    pub fn lower_bounds(&self) -> Vec<f64> {
        let mut v = vec![self.temp_lo; self.horizon];
        v.extend(std::iter::repeat_n(self.illum_lo, self.horizon));
        v
    }

    pub fn upper_bounds(&self) -> Vec<f64> {
        let mut v = vec![self.temp_hi; self.horizon];
        v.extend(std::iter::repeat_n(self.illum_hi, self.horizon));
        v
    }
}

pub fn validate_config(cfg: &MpcConfig) -> Result<(), DomainError> {
    cfg.validate()
}

fn ordered(field: &'static str, lo: f64, hi: f64) -> Result<(), DomainError> {
    if !lo.is_finite() || !hi.is_finite() {
        return Err(DomainError::OutOfRange {
            field,
            value: if lo.is_finite() { hi } else { lo },
            expected: "finite bounds",
        });
    }
    if lo > hi {
        return Err(DomainError::BoundsInverted { field, lo, hi });
    }
    Ok(())
}

fn within(field: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), DomainError> {
    if !(lo..=hi).contains(&value) {
        return Err(DomainError::ComfortOutsideBounds {
            field,
            value,
            lo,
            hi,
        });
    }
    Ok(())
}

fn positive(field: &'static str, value: f64) -> Result<(), DomainError> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(DomainError::NonPositiveCoefficient { field, value });
    }
    Ok(())
}

fn deserialize_ratio<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Number(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Number(x) => Ok(x),
        Raw::Text(s) => parse_ratio(&s).map_err(serde::de::Error::custom),
    }
}

/// Parses `"a/b"` or a plain decimal.
pub fn parse_ratio(s: &str) -> Result<f64, String> {
    let s = s.trim();
    match s.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse().map_err(|_| format!("bad ratio `{s}`"))?;
            let den: f64 = den.trim().parse().map_err(|_| format!("bad ratio `{s}`"))?;
            if den == 0.0 {
                return Err(format!("zero denominator in `{s}`"));
            }
            Ok(num / den)
        }
        None => s.parse().map_err(|_| format!("bad number `{s}`")),
    }
}

/// Explanatory variables of the drowsiness regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DlFeature {
    DPrev,
    DPlusPrev,
    DMinusPrev,
    Temp,
    TempPlus,
    TempMinus,
    Illum,
    IllumPlus,
    IllumMinus,
    Effort,
}

impl DlFeature {
    pub const COUNT: usize = 10;
    pub const ALL: [DlFeature; Self::COUNT] = [
        DlFeature::DPrev,
        DlFeature::DPlusPrev,
        DlFeature::DMinusPrev,
        DlFeature::Temp,
        DlFeature::TempPlus,
        DlFeature::TempMinus,
        DlFeature::Illum,
        DlFeature::IllumPlus,
        DlFeature::IllumMinus,
        DlFeature::Effort,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            DlFeature::DPrev => "d_prev",
            DlFeature::DPlusPrev => "d_plus_prev",
            DlFeature::DMinusPrev => "d_minus_prev",
            DlFeature::Temp => "temp",
            DlFeature::TempPlus => "temp_plus",
            DlFeature::TempMinus => "temp_minus",
            DlFeature::Illum => "illum",
            DlFeature::IllumPlus => "illum_plus",
            DlFeature::IllumMinus => "illum_minus",
            DlFeature::Effort => "effort",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }
}

/// Linear regression for next-step drowsiness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DlModelRepr", into = "DlModelRepr")]
pub struct DlModel {
    pub intercept: f64,
    coef: [f64; DlFeature::COUNT],
}

impl DlModel {
    pub fn new(intercept: f64, coef: [f64; DlFeature::COUNT]) -> Result<Self, DomainError> {
        let m = Self { intercept, coef };
        m.validate()?;
        Ok(m)
    }

    /// Intercept only; every feature coefficient zero.
    pub fn constant(intercept: f64) -> Self {
        Self {
            intercept,
            coef: [0.0; DlFeature::COUNT],
        }
    }

    /// Builder-style setter for one coefficient.
    pub fn with(mut self, feature: DlFeature, value: f64) -> Self {
        self.coef[feature.index()] = value;
        self
    }

    pub fn coef(&self, feature: DlFeature) -> f64 {
        self.coef[feature.index()]
    }

    pub fn coefficients(&self) -> &[f64; DlFeature::COUNT] {
        &self.coef
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if !self.intercept.is_finite() {
            return Err(DomainError::OutOfRange {
                field: "intercept",
                value: self.intercept,
                expected: "finite",
            });
        }
        for f in DlFeature::ALL {
            if !self.coef(f).is_finite() {
                return Err(DomainError::OutOfRange {
                    field: f.name(),
                    value: self.coef(f),
                    expected: "finite",
                });
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DlModelRepr {
    intercept: f64,
    d_prev: f64,
    d_plus_prev: f64,
    d_minus_prev: f64,
    temp: f64,
    temp_plus: f64,
    temp_minus: f64,
    illum: f64,
    illum_plus: f64,
    illum_minus: f64,
    effort: f64,
}

impl TryFrom<DlModelRepr> for DlModel {
    type Error = DomainError;
    fn try_from(r: DlModelRepr) -> Result<Self, Self::Error> {
        DlModel::new(
            r.intercept,
            [
                r.d_prev,
                r.d_plus_prev,
                r.d_minus_prev,
                r.temp,
                r.temp_plus,
                r.temp_minus,
                r.illum,
                r.illum_plus,
                r.illum_minus,
                r.effort,
            ],
        )
    }
}

impl From<DlModel> for DlModelRepr {
    fn from(m: DlModel) -> Self {
        let c = m.coef;
        DlModelRepr {
            intercept: m.intercept,
            d_prev: c[0],
            d_plus_prev: c[1],
            d_minus_prev: c[2],
            temp: c[3],
            temp_plus: c[4],
            temp_minus: c[5],
            illum: c[6],
            illum_plus: c[7],
            illum_minus: c[8],
            effort: c[9],
        }
    }
}

/// Asymmetric first-order lag toward the temperature setpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IdtModelRepr", into = "IdtModelRepr")]
pub struct IdtModel {
    k_up: f64,
    k_down: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IdtModelRepr {
    k_up: f64,
    k_down: f64,
}

impl TryFrom<IdtModelRepr> for IdtModel {
    type Error = DomainError;
    fn try_from(r: IdtModelRepr) -> Result<Self, Self::Error> {
        IdtModel::new(r.k_up, r.k_down)
    }
}

impl From<IdtModel> for IdtModelRepr {
    fn from(m: IdtModel) -> Self {
        IdtModelRepr {
            k_up: m.k_up,
            k_down: m.k_down,
        }
    }
}

impl IdtModel {
    pub fn new(k_up: f64, k_down: f64) -> Result<Self, DomainError> {
        for (field, k) in [("k_up", k_up), ("k_down", k_down)] {
            if !(k > 0.0 && k <= 1.0) {
                return Err(DomainError::OutOfRange {
                    field,
                    value: k,
                    expected: "within (0, 1]",
                });
            }
        }
        Ok(Self { k_up, k_down })
    }

    /// Room follows the setpoint within one step.
    pub fn identity() -> Self {
        Self {
            k_up: 1.0,
            k_down: 1.0,
        }
    }

    pub fn k_up(&self) -> f64 {
        self.k_up
    }

    pub fn k_down(&self) -> f64 {
        self.k_down
    }
}

/// Affine illuminance model: `theta0 + theta_prev * L_prev + theta_set * L_set`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AmiModelRepr", into = "AmiModelRepr")]
pub struct AmiModel {
    pub theta0: f64,
    pub theta_prev: f64,
    pub theta_set: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AmiModelRepr {
    theta0: f64,
    theta_prev: f64,
    theta_set: f64,
}

impl TryFrom<AmiModelRepr> for AmiModel {
    type Error = DomainError;
    fn try_from(r: AmiModelRepr) -> Result<Self, Self::Error> {
        AmiModel::new(r.theta0, r.theta_prev, r.theta_set)
    }
}

impl From<AmiModel> for AmiModelRepr {
    fn from(m: AmiModel) -> Self {
        AmiModelRepr {
            theta0: m.theta0,
            theta_prev: m.theta_prev,
            theta_set: m.theta_set,
        }
    }
}

impl AmiModel {
    pub fn new(theta0: f64, theta_prev: f64, theta_set: f64) -> Result<Self, DomainError> {
        let m = Self {
            theta0,
            theta_prev,
            theta_set,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn identity() -> Self {
        Self {
            theta0: 0.0,
            theta_prev: 0.0,
            theta_set: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        for (field, v) in [
            ("theta0", self.theta0),
            ("theta_prev", self.theta_prev),
            ("theta_set", self.theta_set),
        ] {
            if !v.is_finite() {
                return Err(DomainError::OutOfRange {
                    field,
                    value: v,
                    expected: "finite",
                });
            }
        }
        if self.theta_prev.abs() >= 1.0 {
            return Err(DomainError::OutOfRange {
                field: "theta_prev",
                value: self.theta_prev,
                expected: "|theta_prev| < 1",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSet {
    pub dl: DlModel,
    pub idt: IdtModel,
    pub ami: AmiModel,
}

impl ModelSet {
    pub fn validate(&self) -> Result<(), DomainError> {
        self.dl.validate()?;
        IdtModel::new(self.idt.k_up, self.idt.k_down)?;
        self.ami.validate()
    }
}
