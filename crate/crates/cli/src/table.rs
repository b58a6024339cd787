//! CSV layouts: telemetry, snapshots, schedules, traces and metrics.
//!
//! Derived outputs (traces, metrics, schedules) print floats with six
//! significant digits so golden files stay stable. Telemetry keeps full
//! round-trip precision because it feeds identification.

use crate::error::{CliError, Result};
use drowsy_mpc::domain::{ControlMode, DrowsinessLevel, MpcConfig, StateSnapshot, WorkerState};
use drowsy_mpc::identify::TelemetryRow;
use drowsy_mpc::sim::{Metrics, SimTrace, StepRecord, StepStatus};
use drowsy_mpc::{ControlSchedule, MpcSolution};
use std::io::Write;
use std::str::FromStr;

pub const TELEMETRY_HEADER: [&str; 8] = [
    "step",
    "worker_id",
    "dl",
    "effort",
    "temp_c",
    "illum_lx",
    "temp_set_c",
    "illum_set_lx",
];

pub const SNAPSHOT_HEADER: [&str; 6] = ["worker_id", "dl", "dl_prev", "effort", "temp_c", "illum_lx"];

pub const METRICS_HEADER: [&str; 8] = [
    "mode",
    "seed",
    "steps",
    "mean_dl",
    "comfort_violation_rate",
    "mean_abs_temp_dev",
    "mean_abs_illum_dev",
    "setpoint_change_count",
];

/// Six significant digits, shortest form, always with a decimal point.
///
/// Idempotent: formatting the parsed output reproduces it byte for byte.
pub fn fmt6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    // Normalise negative zero.
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    let s = rounded.to_string();
    if s.contains('.') {
        s
    } else {
        format!("{s}.0")
    }
}

fn csv_err(what: &str, e: csv::Error) -> CliError {
    CliError::Input(format!("{what}: {e}"))
}

fn check_header(what: &str, got: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if got.iter().ne(expected.iter().copied()) {
        return Err(CliError::Input(format!(
            "{what}: header must be `{}`, found `{}`",
            expected.join(","),
            got.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn field<T: FromStr>(rec: &csv::StringRecord, i: usize, name: &str, what: &str) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    let raw = rec.get(i).unwrap_or("");
    raw.trim().parse().map_err(|_| {
        CliError::Input(format!(
            "{what}: line {line}: column `{name}` has invalid value `{raw}`"
        ))
    })
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// Parses telemetry. A file with no content at all yields an empty list.
pub fn parse_telemetry(text: &str) -> Result<Vec<TelemetryRow>> {
    const WHAT: &str = "telemetry";
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    check_header(WHAT, &rdr.headers().map_err(|e| csv_err(WHAT, e))?.clone(), &TELEMETRY_HEADER)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(WHAT, e))?;
        let num = |i: usize| field::<f64>(&rec, i, TELEMETRY_HEADER[i], WHAT);
        let row = TelemetryRow {
            step: field(&rec, 0, "step", WHAT)?,
            worker_id: rec.get(1).unwrap_or("").to_string(),
            dl: num(2)?,
            effort: num(3)?,
            temp: num(4)?,
            illum: num(5)?,
            temp_set: num(6)?,
            illum_set: num(7)?,
        };
        if !(1.0..=5.0).contains(&row.dl) {
            return Err(CliError::Input(format!(
                "{WHAT}: line {}: dl {} outside the 1-5 scale",
                line_of(&rec),
                row.dl
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Telemetry with full round-trip precision.
pub fn write_telemetry<W: Write>(rows: &[TelemetryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let e = |e| csv_err("writing telemetry", e);
    w.write_record(TELEMETRY_HEADER).map_err(e)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.worker_id.clone(),
            r.dl.to_string(),
            r.effort.to_string(),
            r.temp.to_string(),
            r.illum.to_string(),
            r.temp_set.to_string(),
            r.illum_set.to_string(),
        ])
        .map_err(e)?;
    }
    w.flush().map_err(|e| CliError::Input(format!("writing telemetry: {e}")))
}

/// Parses a current-state snapshot: one row per worker, room values equal on
/// every row.
pub fn parse_snapshot(text: &str) -> Result<StateSnapshot> {
    const WHAT: &str = "snapshot";
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    check_header(WHAT, &rdr.headers().map_err(|e| csv_err(WHAT, e))?.clone(), &SNAPSHOT_HEADER)?;
    let mut workers = Vec::new();
    let mut room: Option<(f64, f64)> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(WHAT, e))?;
        let num = |i: usize| field::<f64>(&rec, i, SNAPSHOT_HEADER[i], WHAT);
        let line = line_of(&rec);
        let bad = |e: drowsy_mpc::DomainError| CliError::Input(format!("{WHAT}: line {line}: {e}"));
        let dl = DrowsinessLevel::new(num(1)?).map_err(bad)?;
        let dl_prev = DrowsinessLevel::new(num(2)?).map_err(bad)?;
        workers.push(WorkerState::from_history(dl, dl_prev, num(3)?).map_err(bad)?);
        let here = (num(4)?, num(5)?);
        match room {
            None => room = Some(here),
            Some(r) if r != here => {
                return Err(CliError::Input(format!(
                    "{WHAT}: line {line}: room temperature and illuminance must match the first row"
                )))
            }
            _ => {}
        }
    }
    let (temp, illum) =
        room.ok_or_else(|| CliError::Input(format!("{WHAT}: no worker rows")))?;
    let snap = StateSnapshot::new(workers, temp, illum)
        .map_err(|e| CliError::Input(format!("{WHAT}: {e}")))?;
    snap.validate()
        .map_err(|e| CliError::Input(format!("{WHAT}: {e}")))?;
    Ok(snap)
}

/// Schedule CSV with a comment line carrying the solve outcome.
pub fn write_schedule<W: Write>(mode: ControlMode, sol: &MpcSolution, mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "# mode={mode},objective={},feasible={},violation={}",
        fmt6(sol.objective_value),
        sol.feasible,
        fmt6(sol.violation)
    )?;
    writeln!(out, "step,t_set_c,l_set_lx")?;
    write_schedule_rows(&sol.schedule, out)
}

fn write_schedule_rows<W: Write>(s: &ControlSchedule, mut out: W) -> std::io::Result<()> {
    for (i, (t, l)) in s.temp_setpoints().iter().zip(s.illum_setpoints()).enumerate() {
        writeln!(out, "{},{},{}", i + 1, fmt6(*t), fmt6(*l))?;
    }
    Ok(())
}

/// Comfort settings recorded in a trace header; enough to recompute metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceHeader {
    pub mode: ControlMode,
    pub seed: u64,
    pub temp_comfort: f64,
    pub illum_comfort: f64,
    pub penalty_cap: f64,
}

impl TraceHeader {
    pub fn from_config(trace: &SimTrace, cfg: &MpcConfig) -> Self {
        Self {
            mode: trace.mode,
            seed: trace.seed,
            temp_comfort: cfg.temp_comfort,
            illum_comfort: cfg.illum_comfort,
            penalty_cap: cfg.penalty_cap,
        }
    }

    /// A controller configuration carrying these comfort settings, for
    /// metric computation only.
    pub fn metrics_config(&self) -> MpcConfig {
        MpcConfig {
            temp_comfort: self.temp_comfort,
            illum_comfort: self.illum_comfort,
            penalty_cap: self.penalty_cap,
            ..MpcConfig::case1(self.mode)
        }
    }

    fn render(&self) -> String {
        format!(
            "# mode={},seed={},temp_comfort={},illum_comfort={},penalty_cap={}",
            self.mode, self.seed, self.temp_comfort, self.illum_comfort, self.penalty_cap
        )
    }

    fn parse(line: &str) -> Result<Self> {
        let bad = |why: String| CliError::Input(format!("trace header: {why}"));
        let body = line
            .strip_prefix('#')
            .ok_or_else(|| bad("first line must be a `#` comment".into()))?;
        let mut mode = None;
        let mut seed = None;
        let mut tc = None;
        let mut lc = None;
        let mut cap = None;
        for kv in body.trim().split(',') {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| bad(format!("`{kv}` is not key=value")))?;
            let num = || v.parse::<f64>().map_err(|_| bad(format!("{k} = `{v}`")));
            match k.trim() {
                "mode" => mode = Some(v.parse::<ControlMode>().map_err(|e| bad(e.to_string()))?),
                "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad(format!("seed = `{v}`")))?),
                "temp_comfort" => tc = Some(num()?),
                "illum_comfort" => lc = Some(num()?),
                "penalty_cap" => cap = Some(num()?),
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        let need = |name: &str| bad(format!("missing `{name}`"));
        Ok(Self {
            mode: mode.ok_or_else(|| need("mode"))?,
            seed: seed.ok_or_else(|| need("seed"))?,
            temp_comfort: tc.ok_or_else(|| need("temp_comfort"))?,
            illum_comfort: lc.ok_or_else(|| need("illum_comfort"))?,
            penalty_cap: cap.ok_or_else(|| need("penalty_cap"))?,
        })
    }
}

fn trace_columns(workers: usize) -> Vec<String> {
    let mut cols: Vec<String> = [
        "step",
        "temp_set_c",
        "illum_set_lx",
        "temp_c",
        "illum_lx",
        "penalty",
        "feasible",
        "status",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend((0..workers).map(|i| format!("dl_w{i}")));
    cols.extend((0..workers).map(|i| format!("effort_w{i}")));
    cols
}

pub fn write_trace<W: Write>(header: &TraceHeader, rows: &[StepRecord], mut out: W) -> std::io::Result<()> {
    let workers = rows.first().map_or(0, |r| r.dl.len());
    writeln!(out, "{}", header.render())?;
    writeln!(out, "{}", trace_columns(workers).join(","))?;
    for r in rows {
        let mut cells = vec![
            r.step.to_string(),
            fmt6(r.temp_set),
            fmt6(r.illum_set),
            fmt6(r.temp),
            fmt6(r.illum),
            fmt6(r.penalty),
            r.feasible.to_string(),
            r.status.as_str().to_string(),
        ];
        cells.extend(r.dl.iter().map(|&v| fmt6(v)));
        cells.extend(r.effort.iter().map(|&v| fmt6(v)));
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// A trace read back from disk. Predictions are not stored in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub rows: Vec<StepRecord>,
}

impl TraceFile {
    pub fn to_trace(&self) -> SimTrace {
        SimTrace {
            mode: self.header.mode,
            seed: self.header.seed,
            rows: self.rows.clone(),
        }
    }
}

pub fn parse_trace(text: &str) -> Result<TraceFile> {
    const WHAT: &str = "trace";
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let header = TraceHeader::parse(first.trim_end_matches('\r'))?;
    let mut rdr = csv::ReaderBuilder::new().from_reader(rest.as_bytes());
    let cols = rdr.headers().map_err(|e| csv_err(WHAT, e))?.clone();
    let dl_cols = cols.iter().filter(|c| c.starts_with("dl_w")).count();
    let expected = trace_columns(dl_cols);
    check_header(WHAT, &cols, &expected.iter().map(String::as_str).collect::<Vec<_>>())?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(WHAT, e))?;
        let num = |i: usize| field::<f64>(&rec, i, &expected[i], WHAT);
        let status: StepStatus = field::<String>(&rec, 7, "status", WHAT)?
            .parse()
            .map_err(|e: String| CliError::Input(format!("{WHAT}: line {}: {e}", line_of(&rec))))?;
        rows.push(StepRecord {
            step: field(&rec, 0, "step", WHAT)?,
            temp_set: num(1)?,
            illum_set: num(2)?,
            temp: num(3)?,
            illum: num(4)?,
            penalty: num(5)?,
            feasible: field(&rec, 6, "feasible", WHAT)?,
            status,
            dl: (0..dl_cols).map(|w| num(8 + w)).collect::<Result<_>>()?,
            effort: (0..dl_cols).map(|w| num(8 + dl_cols + w)).collect::<Result<_>>()?,
            predicted: None,
        });
    }
    Ok(TraceFile { header, rows })
}

pub fn write_metrics<W: Write>(
    mode: ControlMode,
    seed: u64,
    steps: usize,
    m: &Metrics,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "{}", METRICS_HEADER.join(","))?;
    writeln!(
        out,
        "{mode},{seed},{steps},{},{},{},{},{}",
        fmt6(m.mean_dl),
        fmt6(m.comfort_violation_rate),
        fmt6(m.mean_abs_temp_dev),
        fmt6(m.mean_abs_illum_dev),
        m.setpoint_change_count
    )
}
