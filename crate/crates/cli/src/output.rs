use std::fs;
use std::time::{SystemTime, UNIX_EPOCH};

use octool_core::BolzaProblem;
use serde_json::{json, Map, Value};

use crate::{Common, Failure, Format};

pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn csv_rows(header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.iter().map(|v| fmt_real(*v)).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    s
}

pub fn names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Report skeleton shared by all commands: what ran, on what, with which
/// tolerances.
pub fn header(command: &str, common: &Common, problem: &BolzaProblem, pi: &[f64], extra_tol: Value) -> Map<String, Value> {
    let d = problem.dims();
    let mut tolerances = json!({
        "ode_rtol": problem.ode.rtol,
        "ode_atol": problem.ode.atol,
        "quadrature_abs_tol": problem.quadrature.abs_tol,
        "feasibility_tol": problem.feasibility_tol,
    });
    if let (Value::Object(t), Value::Object(extra)) = (&mut tolerances, extra_tol) {
        t.extend(extra);
    }
    let mut m = Map::new();
    m.insert("command".into(), json!(command));
    m.insert(
        "problem".into(),
        json!({
            "name": problem.name,
            "horizon": problem.horizon,
            "state_dim": d.state,
            "control_dim": d.control,
            "param_dim": d.param,
            "inequalities": d.inequalities,
            "equalities": d.equalities,
            "deriv_mode": problem.model.deriv_mode(),
        }),
    );
    m.insert("pi".into(), json!(pi));
    m.insert("seed".into(), json!(common.seed));
    m.insert("tolerances".into(), tolerances);
    if !common.no_timestamp {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        m.insert("timestamp".into(), json!(secs));
    }
    m
}

/// Writes `report.json` (and, in CSV mode, the plot files) into `--out`, or
/// prints to stdout. Everything is rendered before anything is written.
pub fn emit(common: &Common, report: Map<String, Value>, csv: Vec<(&str, String)>) -> Result<(), Failure> {
    let json = serde_json::to_string_pretty(&Value::Object(report)).expect("report serializes") + "\n";
    let io_fail = |e: std::io::Error| Failure {
        code: 1,
        message: format!("cannot write output: {e}"),
    };
    match &common.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_fail)?;
            fs::write(dir.join("report.json"), &json).map_err(io_fail)?;
            if common.format == Format::Csv {
                for (name, body) in &csv {
                    fs::write(dir.join(name), body).map_err(io_fail)?;
                }
            }
        }
        None => match (common.format, csv.first()) {
            (Format::Csv, Some((_, body))) => print!("{body}"),
            _ => print!("{json}"),
        },
    }
    Ok(())
}
