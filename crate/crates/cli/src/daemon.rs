//! Line-delimited JSON stream daemon.
//!
//! Input records carry one instant drowsiness sample of one worker together
//! with the room readings at that moment. Records are binned into windows of
//! one control step, anchored on a grid that starts at midnight of the first
//! record's date. When a window closes the controller observes its aggregate
//! and emits the setpoints for the following interval. Windows with no
//! records produce the held setpoints flagged `stale`.

use crate::error::{CliError, Result};
use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeDelta};
use drowsy_mpc::mpc::{ControlError, Controller, WindowAggregator};
use drowsy_mpc::sim::{ScenarioRun, StepStatus};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// Wall-clock start of simulated days.
pub const DAY_START_HOUR: i64 = 9;
const SIM_DATE: (i32, u32, u32) = (2024, 4, 1);

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum WorkerKey {
    Number(u64),
    Name(String),
}

impl WorkerKey {
    fn into_string(self) -> String {
        match self {
            WorkerKey::Number(n) => n.to_string(),
            WorkerKey::Name(s) => s,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InRecord {
    t: String,
    worker: WorkerKey,
    dl: f64,
    temp_c: f64,
    illum_lx: f64,
}

/// One instant record as sent by an edge device.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutgoingSample {
    pub t: String,
    pub worker: usize,
    pub dl: f64,
    pub temp_c: f64,
    pub illum_lx: f64,
}

/// Setpoints for one control interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetpointRecord {
    pub t: String,
    pub temp_set_c: f64,
    pub illum_set_lx: f64,
    pub feasible: bool,
    pub status: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DaemonStats {
    pub records: usize,
    pub windows: usize,
    pub emitted: usize,
    pub malformed: usize,
}

pub fn step_millis(step_hours: f64) -> i64 {
    (step_hours * 3_600_000.0).round() as i64
}

pub fn parse_time(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
        .ok()
        .or_else(|| DateTime::parse_from_rfc3339(s).ok().map(|d| d.naive_utc()))
}

pub fn format_time(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S%.f").to_string()
}

/// Start of the step grid containing `t`, with the grid anchored at midnight.
fn grid_floor(t: NaiveDateTime, tau_ms: i64) -> NaiveDateTime {
    let midnight = t.date().and_hms_opt(0, 0, 0).expect("midnight exists");
    let since = (t - midnight).num_milliseconds();
    midnight + TimeDelta::milliseconds(since.div_euclid(tau_ms) * tau_ms)
}

/// Grid origin of simulated days: the grid point at or before 09:00.
pub fn sim_origin(tau_ms: i64) -> NaiveDateTime {
    let (y, m, d) = SIM_DATE;
    let start = NaiveDate::from_ymd_opt(y, m, d)
        .expect("valid date")
        .and_hms_opt(DAY_START_HOUR as u32, 0, 0)
        .expect("valid time");
    grid_floor(start, tau_ms)
}

/// Instant records of steps `0..steps` of a simulated run, in emission order:
/// the stream an edge device would have sent up to the last decision.
pub fn replay_samples(run: &ScenarioRun, step_hours: f64, substeps: usize) -> Vec<OutgoingSample> {
    let tau = step_millis(step_hours);
    let origin = sim_origin(tau);
    let spacing = tau / substeps.max(1) as i64;
    let last = run.trace.rows.len();
    run.instants
        .iter()
        .filter(|r| r.step < last)
        .map(|r| OutgoingSample {
            t: format_time(
                origin + TimeDelta::milliseconds(r.step as i64 * tau + r.substep as i64 * spacing),
            ),
            worker: r.worker,
            dl: r.dl,
            temp_c: r.temp_c,
            illum_lx: r.illum_lx,
        })
        .collect()
}

/// The setpoint stream a daemon should produce for a simulated run.
pub fn expected_setpoints(run: &ScenarioRun, step_hours: f64) -> Vec<SetpointRecord> {
    let tau = step_millis(step_hours);
    let origin = sim_origin(tau);
    run.trace
        .rows
        .iter()
        .map(|r| SetpointRecord {
            t: format_time(origin + TimeDelta::milliseconds(r.step as i64 * tau)),
            temp_set_c: r.temp_set,
            illum_set_lx: r.illum_set,
            feasible: r.feasible,
            status: r.status.as_str().to_string(),
        })
        .collect()
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut out: W) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

struct State {
    controller: Controller,
    tau_ms: i64,
    num_workers: usize,
    origin: Option<NaiveDateTime>,
    window: Option<i64>,
    agg: WindowAggregator,
    roster: Vec<String>,
    stats: DaemonStats,
}

impl State {
    fn close<W: Write, E: Write>(&mut self, k: i64, out: &mut W, warn: &mut E) -> Result<()> {
        if let Some(m) = self.agg.finish(k as u64) {
            self.controller.observe(m);
        } else if !self.agg.is_empty() {
            let _ = writeln!(warn, "warning: window {k} lacks samples from some workers");
        }
        self.agg = WindowAggregator::new(self.num_workers);
        self.stats.windows += 1;
        let (setpoints, feasible, status) = match self.controller.step(k as u64) {
            Ok(sol) => (sol.applied_setpoints, sol.feasible, StepStatus::Ok),
            Err(ControlError::StaleData { held, .. }) => (held, false, StepStatus::Stale),
            Err(ControlError::Solve(e)) => {
                let _ = writeln!(warn, "warning: window {k}: solve failed: {e}");
                (self.controller.held_setpoints(), false, StepStatus::Error)
            }
        };
        let origin = self.origin.expect("window implies origin");
        let rec = SetpointRecord {
            t: format_time(origin + TimeDelta::milliseconds((k + 1) * self.tau_ms)),
            temp_set_c: setpoints.0,
            illum_set_lx: setpoints.1,
            feasible,
            status: status.as_str().to_string(),
        };
        let io = |e| CliError::Input(format!("writing setpoints: {e}"));
        serde_json::to_writer(&mut *out, &rec).map_err(|e| io(std::io::Error::other(e)))?;
        out.write_all(b"\n").map_err(io)?;
        out.flush().map_err(io)?;
        self.stats.emitted += 1;
        Ok(())
    }

    /// Validates a line and returns `(window, worker index, dl, temp, illum)`.
    fn accept(&mut self, line: &str) -> std::result::Result<(i64, usize, f64, f64, f64), String> {
        let rec: InRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let t = parse_time(&rec.t).ok_or_else(|| format!("unparseable timestamp `{}`", rec.t))?;
        if !(1.0..=5.0).contains(&rec.dl) {
            return Err(format!("dl {} outside the 1-5 scale", rec.dl));
        }
        if !rec.temp_c.is_finite() || !rec.illum_lx.is_finite() || rec.illum_lx < 0.0 {
            return Err("room readings must be finite and illuminance non-negative".into());
        }
        let origin = *self.origin.get_or_insert_with(|| grid_floor(t, self.tau_ms));
        let since = (t - origin).num_milliseconds();
        if since < 0 {
            return Err("record precedes the first window".into());
        }
        let k = since / self.tau_ms;
        if let Some(cur) = self.window {
            if k < cur {
                return Err(format!("record for window {k} arrived after window {cur}"));
            }
        }
        let key = rec.worker.into_string();
        let idx = match self.roster.iter().position(|w| *w == key) {
            Some(i) => i,
            None if self.roster.len() < self.num_workers => {
                self.roster.push(key);
                self.roster.len() - 1
            }
            None => {
                return Err(format!(
                    "worker `{key}` exceeds the configured {} workers",
                    self.num_workers
                ))
            }
        };
        Ok((k, idx, rec.dl, rec.temp_c, rec.illum_lx))
    }
}

/// Runs until end of input. Malformed lines are reported on `warn` and
/// skipped.
pub fn run<R: BufRead, W: Write, E: Write>(
    controller: Controller,
    input: R,
    mut out: W,
    mut warn: E,
) -> Result<DaemonStats> {
    let cfg = controller.config().clone();
    let mut st = State {
        tau_ms: step_millis(cfg.step_hours),
        num_workers: cfg.num_workers,
        controller,
        origin: None,
        window: None,
        agg: WindowAggregator::new(cfg.num_workers),
        roster: Vec::new(),
        stats: DaemonStats::default(),
    };
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| CliError::Input(format!("reading input: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let (k, idx, dl, temp, illum) = match st.accept(&line) {
            Ok(sample) => sample,
            Err(why) => {
                st.stats.malformed += 1;
                let _ = writeln!(warn, "warning: line {}: {why}", n + 1);
                continue;
            }
        };
        st.stats.records += 1;
        match st.window {
            None => st.window = Some(k),
            Some(cur) if k > cur => {
                st.close(cur, &mut out, &mut warn)?;
                for empty in cur + 1..k {
                    st.close(empty, &mut out, &mut warn)?;
                }
                st.window = Some(k);
            }
            _ => {}
        }
        st.agg.push(idx, dl, temp, illum);
    }
    if let Some(cur) = st.window {
        st.close(cur, &mut out, &mut warn)?;
    }
    if st.stats.malformed > 0 {
        let _ = writeln!(warn, "warning: skipped {} malformed line(s)", st.stats.malformed);
    }
    Ok(st.stats)
}
