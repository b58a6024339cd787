use crate::config::{load_models, write_models, ConfigFile};
use crate::daemon::{self, DaemonStats};
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::table::{self, fmt6, TraceFile, TraceHeader};
use drowsy_mpc::domain::ControlMode;
use drowsy_mpc::identify::{
    fit_ami_model, fit_dl_model, fit_idt_coeffs, FitOptions, FitReport, IdentifyError,
    TelemetryTable,
};
use drowsy_mpc::mpc::{self, Controller};
use drowsy_mpc::sim::{self, compute_metrics, Metrics};
use drowsy_mpc::ModelSet;
use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Text,
}

pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TELEMETRY_CSV: &str = "telemetry.csv";
pub const TELEMETRY_JSONL: &str = "telemetry.jsonl";
pub const SETPOINTS_JSONL: &str = "setpoints.jsonl";
pub const CONTROLLER_MODEL: &str = "controller_model.toml";
pub const MODEL_FILE: &str = "model.toml";
pub const FIT_REPORT: &str = "fit_report.csv";
pub const SCHEDULE_FILE: &str = "schedule.csv";
pub const REPORT_FILE: &str = "report.csv";

fn out_err(e: std::io::Error) -> CliError {
    CliError::Input(format!("writing output: {e}"))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(CliError::io(path))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(CliError::io(path))
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

fn fit_error(which: &str, e: IdentifyError) -> CliError {
    match e {
        IdentifyError::BadTable { row, reason } => CliError::Input(format!(
            "telemetry: line {}: {reason}",
            row + 2
        )),
        other => CliError::InsufficientData(format!("{which} model: {other}")),
    }
}

/// Summary lines of a fit, one per model.
pub struct FitSummary {
    pub models: ModelSet,
    pub reports: [(&'static str, FitReport); 3],
}

fn render_fit(reports: &[(&str, FitReport)], format: Format) -> String {
    let mut s = String::new();
    match format {
        Format::Csv => {
            s.push_str("model,rmse,n_samples,condition_warning\n");
            for (name, r) in reports {
                s.push_str(&format!("{name},{},{},{}\n", fmt6(r.rmse), r.n_samples, r.condition_warning));
            }
        }
        Format::Text => {
            s.push_str(&format!("{:<6} {:>12} {:>8}  {}\n", "model", "rmse", "samples", "conditioning"));
            for (name, r) in reports {
                let cond = if r.condition_warning { "ill-conditioned" } else { "ok" };
                s.push_str(&format!("{name:<6} {:>12} {:>8}  {cond}\n", fmt6(r.rmse), r.n_samples));
            }
        }
    }
    s
}

/// Fits all three models from a telemetry CSV and writes `model.toml`,
/// `fit_report.csv` and a manifest into `out_dir`.
pub fn identify(
    telemetry: &Path,
    out_dir: &Path,
    ridge: f64,
    format: Format,
    stdout: &mut dyn Write,
) -> Result<FitSummary> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(CliError::Input(format!("--ridge must be a non-negative number, got {ridge}")));
    }
    let rows = table::parse_telemetry(&read_file(telemetry)?)?;
    if rows.is_empty() {
        return Err(CliError::InsufficientData(format!(
            "{} contains no telemetry rows",
            telemetry.display()
        )));
    }
    let table = TelemetryTable::new(rows).map_err(|e| fit_error("telemetry", e))?;
    let opts = FitOptions {
        ridge,
        ..FitOptions::default()
    };
    let (dl, dl_rep) = fit_dl_model(&table, &opts).map_err(|e| fit_error("drowsiness", e))?;
    let (idt, idt_rep) = fit_idt_coeffs(&table).map_err(|e| fit_error("temperature", e))?;
    let (ami, ami_rep) = fit_ami_model(&table).map_err(|e| fit_error("illuminance", e))?;
    let models = ModelSet { dl, idt, ami };

    create_dir(out_dir)?;
    let model_path = out_dir.join(MODEL_FILE);
    write_models(&model_path, &models)?;
    let reports = [("dl", dl_rep), ("idt", idt_rep), ("ami", ami_rep)];
    write_file(&out_dir.join(FIT_REPORT), render_fit(&reports, Format::Csv).as_bytes())?;

    let mut m = RunManifest::new("identify", out_dir);
    m.inputs.push(path_string(telemetry));
    m.parameters.insert("ridge".into(), ridge.into());
    m.parameters
        .insert("exclude_boundary_dl".into(), opts.exclude_boundary_dl.into());
    m.write(out_dir, None)?;

    stdout
        .write_all(render_fit(&reports, format).as_bytes())
        .map_err(out_err)?;
    if format == Format::Text {
        writeln!(stdout, "wrote {}", model_path.display()).map_err(out_err)?;
    }
    Ok(FitSummary { models, reports })
}

/// One-shot solve for a snapshot. The schedule is printed even when
/// infeasible; the error then carries exit code 4.
pub fn solve(
    config: &Path,
    model: &Path,
    snapshot: &Path,
    seed: Option<u64>,
    out_dir: Option<&Path>,
    format: Format,
    stdout: &mut dyn Write,
) -> Result<mpc::MpcSolution> {
    let cfg = ConfigFile::load(config)?;
    let models = load_models(model)?;
    let snap = table::parse_snapshot(&read_file(snapshot)?)?;
    if snap.workers.len() != cfg.mpc.num_workers {
        return Err(CliError::Input(format!(
            "snapshot has {} workers but the configuration expects {}",
            snap.workers.len(),
            cfg.mpc.num_workers
        )));
    }
    let de = cfg.de_params(cfg.seed(seed));
    let sol = mpc::solve(&models, &snap, &cfg.mpc, &de).map_err(|e| CliError::Input(e.to_string()))?;

    let mut csv = Vec::new();
    table::write_schedule(cfg.mpc.mode, &sol, &mut csv).map_err(out_err)?;
    match format {
        Format::Csv => stdout.write_all(&csv).map_err(out_err)?,
        Format::Text => {
            writeln!(
                stdout,
                "mode {}  objective {}  feasible {}  violation {}",
                cfg.mpc.mode,
                fmt6(sol.objective_value),
                if sol.feasible { "yes" } else { "no" },
                fmt6(sol.violation)
            )
            .map_err(out_err)?;
            writeln!(stdout, "{:>4} {:>10} {:>10}", "step", "t_set_c", "l_set_lx").map_err(out_err)?;
            let s = &sol.schedule;
            for (i, (t, l)) in s.temp_setpoints().iter().zip(s.illum_setpoints()).enumerate() {
                writeln!(stdout, "{:>4} {:>10} {:>10}", i + 1, fmt6(*t), fmt6(*l)).map_err(out_err)?;
            }
        }
    }
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        write_file(&dir.join(SCHEDULE_FILE), &csv)?;
        let mut m = RunManifest::new("solve", dir);
        m.config_path = Some(path_string(config));
        m.seed = Some(de.seed);
        m.inputs = vec![path_string(model), path_string(snapshot)];
        m.write(dir, Some(&cfg.resolved(seed)))?;
    }
    if !sol.feasible {
        return Err(CliError::Infeasible {
            violation: sol.violation,
        });
    }
    Ok(sol)
}

fn render_metrics(mode: ControlMode, seed: u64, steps: usize, m: &Metrics, format: Format) -> String {
    match format {
        Format::Csv => {
            let mut v = Vec::new();
            table::write_metrics(mode, seed, steps, m, &mut v).expect("in-memory write");
            String::from_utf8(v).expect("utf-8")
        }
        Format::Text => format!(
            "mode {mode}  seed {seed}  steps {steps}\n\
             mean drowsiness         {}\n\
             comfort violation rate  {}\n\
             mean |T - Tc| (degC)    {}\n\
             mean |L - Lc| (lx)      {}\n\
             setpoint changes        {}\n",
            fmt6(m.mean_dl),
            fmt6(m.comfort_violation_rate),
            fmt6(m.mean_abs_temp_dev),
            fmt6(m.mean_abs_illum_dev),
            m.setpoint_change_count
        ),
    }
}

/// Runs a scenario and writes the trace, metrics, telemetry (CSV for
/// identification, JSON lines for daemon replay), the setpoints a daemon
/// replay must reproduce, the controller's models and a manifest.
pub fn simulate(
    config: &Path,
    seed: Option<u64>,
    out_dir: &Path,
    format: Format,
    stdout: &mut dyn Write,
) -> Result<sim::ScenarioRun> {
    let cfg = ConfigFile::load(config)?;
    let sc = cfg.scenario(seed)?;
    let run = sim::simulate(&sc).map_err(|e| CliError::Input(e.to_string()))?;

    create_dir(out_dir)?;
    let header = TraceHeader::from_config(&run.trace, &sc.mpc);
    let mut buf = Vec::new();
    table::write_trace(&header, &run.trace.rows, &mut buf).map_err(out_err)?;
    write_file(&out_dir.join(TRACE_FILE), &buf)?;

    buf.clear();
    table::write_metrics(sc.mode, sc.seed, sc.steps, &run.metrics, &mut buf).map_err(out_err)?;
    write_file(&out_dir.join(METRICS_FILE), &buf)?;

    buf.clear();
    table::write_telemetry(&run.telemetry, &mut buf)?;
    write_file(&out_dir.join(TELEMETRY_CSV), &buf)?;

    buf.clear();
    let samples = daemon::replay_samples(&run, sc.mpc.step_hours, sc.plant.substeps);
    daemon::write_jsonl(&samples, &mut buf).map_err(out_err)?;
    write_file(&out_dir.join(TELEMETRY_JSONL), &buf)?;

    buf.clear();
    daemon::write_jsonl(&daemon::expected_setpoints(&run, sc.mpc.step_hours), &mut buf)
        .map_err(out_err)?;
    write_file(&out_dir.join(SETPOINTS_JSONL), &buf)?;

    write_models(&out_dir.join(CONTROLLER_MODEL), sc.controller_models())?;

    let mut m = RunManifest::new("simulate", out_dir);
    m.config_path = Some(path_string(config));
    m.seed = Some(sc.seed);
    m.write(out_dir, Some(&cfg.resolved(seed)))?;

    stdout
        .write_all(render_metrics(sc.mode, sc.seed, sc.steps, &run.metrics, format).as_bytes())
        .map_err(out_err)?;
    Ok(run)
}

/// Aggregated metrics of one arm across its traces.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmRow {
    pub mode: ControlMode,
    pub traces: usize,
    pub mean_dl: f64,
    pub comfort_violation_rate: f64,
    pub mean_abs_temp_dev: f64,
    pub mean_abs_illum_dev: f64,
    /// Mean paired `mean_dl(arm) - mean_dl(reference)` and the number of
    /// seeds on which the arm was lower; `None` for the reference arm or
    /// when the seed sets differ.
    pub delta: Option<(f64, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub arms: Vec<ArmRow>,
    pub has_delta_columns: bool,
    pub warnings: Vec<String>,
}

pub fn build_report(traces: &[TraceFile]) -> Result<Report> {
    let Some(first) = traces.first() else {
        return Err(CliError::Input("report needs at least one trace".into()));
    };
    let comfort = |h: &TraceHeader| (h.temp_comfort, h.illum_comfort, h.penalty_cap);
    let mut seen = BTreeSet::new();
    for t in traces {
        if comfort(&t.header) != comfort(&first.header) {
            return Err(CliError::Input(format!(
                "traces disagree on comfort settings: {:?} vs {:?}",
                comfort(&first.header),
                comfort(&t.header)
            )));
        }
        if !seen.insert((t.header.mode.as_str(), t.header.seed)) {
            return Err(CliError::Input(format!(
                "duplicate trace for mode {} seed {}",
                t.header.mode, t.header.seed
            )));
        }
    }
    let per_trace: Vec<(ControlMode, u64, Metrics)> = traces
        .iter()
        .map(|t| {
            let m = compute_metrics(&t.to_trace(), &t.header.metrics_config());
            (t.header.mode, t.header.seed, m)
        })
        .collect();
    let modes: Vec<ControlMode> = ControlMode::ALL
        .into_iter()
        .filter(|m| per_trace.iter().any(|(x, _, _)| x == m))
        .collect();
    let reference = modes[0];
    let by_seed = |mode: ControlMode| -> Vec<(u64, f64)> {
        let mut v: Vec<(u64, f64)> = per_trace
            .iter()
            .filter(|(m, _, _)| *m == mode)
            .map(|(_, s, x)| (*s, x.mean_dl))
            .collect();
        v.sort_by_key(|(s, _)| *s);
        v
    };
    let ref_runs = by_seed(reference);
    let mut warnings = Vec::new();
    let arms = modes
        .iter()
        .map(|&mode| {
            let ms: Vec<&Metrics> = per_trace
                .iter()
                .filter(|(m, _, _)| *m == mode)
                .map(|(_, _, x)| x)
                .collect();
            let n = ms.len() as f64;
            let avg = |f: fn(&Metrics) -> f64| ms.iter().map(|m| f(m)).sum::<f64>() / n;
            let delta = if mode == reference {
                None
            } else {
                let runs = by_seed(mode);
                let paired = runs.len() == ref_runs.len()
                    && runs.iter().zip(&ref_runs).all(|(a, b)| a.0 == b.0);
                if paired {
                    let d: Vec<f64> = runs.iter().zip(&ref_runs).map(|(a, b)| a.1 - b.1).collect();
                    Some((
                        d.iter().sum::<f64>() / d.len() as f64,
                        d.iter().filter(|x| **x < 0.0).count(),
                    ))
                } else {
                    warnings.push(format!(
                        "warning: seeds of {mode} do not match those of {reference}; paired deltas omitted"
                    ));
                    None
                }
            };
            ArmRow {
                mode,
                traces: ms.len(),
                mean_dl: avg(|m| m.mean_dl),
                comfort_violation_rate: avg(|m| m.comfort_violation_rate),
                mean_abs_temp_dev: avg(|m| m.mean_abs_temp_dev),
                mean_abs_illum_dev: avg(|m| m.mean_abs_illum_dev),
                delta,
            }
        })
        .collect();
    Ok(Report {
        arms,
        has_delta_columns: modes.len() > 1,
        warnings,
    })
}

pub fn render_report(r: &Report, format: Format) -> String {
    let mut s = String::new();
    let delta_cells = |a: &ArmRow| match a.delta {
        Some((d, k)) => (fmt6(d), k.to_string()),
        None => (String::new(), String::new()),
    };
    match format {
        Format::Csv => {
            s.push_str("mode,traces,mean_dl,comfort_violation_rate,mean_abs_temp_dev,mean_abs_illum_dev");
            if r.has_delta_columns {
                s.push_str(",delta_mean_dl,pairs_lower");
            }
            s.push('\n');
            for a in &r.arms {
                s.push_str(&format!(
                    "{},{},{},{},{},{}",
                    a.mode,
                    a.traces,
                    fmt6(a.mean_dl),
                    fmt6(a.comfort_violation_rate),
                    fmt6(a.mean_abs_temp_dev),
                    fmt6(a.mean_abs_illum_dev)
                ));
                if r.has_delta_columns {
                    let (d, k) = delta_cells(a);
                    s.push_str(&format!(",{d},{k}"));
                }
                s.push('\n');
            }
        }
        Format::Text => {
            s.push_str(&format!(
                "{:<5} {:>6} {:>10} {:>10} {:>10} {:>10}",
                "arm", "traces", "mean_dl", "viol_rate", "|T-Tc|", "|L-Lc|"
            ));
            if r.has_delta_columns {
                s.push_str(&format!(" {:>10} {:>6}", "delta_dl", "lower"));
            }
            s.push('\n');
            for a in &r.arms {
                s.push_str(&format!(
                    "{:<5} {:>6} {:>10} {:>10} {:>10} {:>10}",
                    a.mode.as_str(),
                    a.traces,
                    fmt6(a.mean_dl),
                    fmt6(a.comfort_violation_rate),
                    fmt6(a.mean_abs_temp_dev),
                    fmt6(a.mean_abs_illum_dev)
                ));
                if r.has_delta_columns {
                    let (d, k) = delta_cells(a);
                    let d = if d.is_empty() { "-".to_string() } else { d };
                    let k = if k.is_empty() { "-".to_string() } else { k };
                    s.push_str(&format!(" {d:>10} {k:>6}"));
                }
                s.push('\n');
            }
        }
    }
    s
}

pub fn report(
    traces: &[PathBuf],
    out_dir: Option<&Path>,
    format: Format,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<Report> {
    let files = traces
        .iter()
        .map(|p| {
            table::parse_trace(&read_file(p)?)
                .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let rep = build_report(&files)?;
    for w in &rep.warnings {
        writeln!(stderr, "{w}").map_err(out_err)?;
    }
    stdout
        .write_all(render_report(&rep, format).as_bytes())
        .map_err(out_err)?;
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        write_file(&dir.join(REPORT_FILE), render_report(&rep, Format::Csv).as_bytes())?;
        let mut m = RunManifest::new("report", dir);
        m.inputs = traces.iter().map(|p| path_string(p)).collect();
        m.write(dir, None)?;
    }
    Ok(rep)
}

/// Streams setpoints for line-delimited records on `input` (standard input
/// when `None`) to `output` (standard output when `None`).
#[allow(clippy::too_many_arguments)]
pub fn daemon(
    config: &Path,
    model: &Path,
    seed: Option<u64>,
    input: Option<&Path>,
    output: Option<&Path>,
    out_dir: Option<&Path>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<DaemonStats> {
    let cfg = ConfigFile::load(config)?;
    let models = load_models(model)?;
    let seed_used = cfg.seed(seed);
    let controller = Controller::new(models, cfg.mpc.clone(), cfg.de_params(seed_used), seed_used);

    let reader: Box<dyn BufRead> = match input {
        Some(p) => Box::new(BufReader::new(std::fs::File::open(p).map_err(CliError::io(p))?)),
        None => Box::new(BufReader::new(std::io::stdin().lock())),
    };
    let stats = match output {
        Some(p) => {
            let f = std::fs::File::create(p).map_err(CliError::io(p))?;
            daemon::run(controller, reader, std::io::BufWriter::new(f), &mut *stderr)?
        }
        None => daemon::run(controller, reader, &mut *stdout, &mut *stderr)?,
    };
    writeln!(
        stderr,
        "daemon: {} records, {} setpoint records, {} malformed lines",
        stats.records, stats.emitted, stats.malformed
    )
    .map_err(out_err)?;
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        let mut m = RunManifest::new("daemon", dir);
        m.config_path = Some(path_string(config));
        m.seed = Some(seed_used);
        m.inputs.push(path_string(model));
        if let Some(p) = input {
            m.inputs.push(path_string(p));
        }
        m.write(dir, Some(&cfg.resolved(seed)))?;
    }
    Ok(stats)
}
