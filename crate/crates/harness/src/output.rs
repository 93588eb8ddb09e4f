//! On-disk layout: `<root>/<scenario>/<mode>/<alpha>_<epsilon>/` holding
//! `trace.csv`, `torque.csv`, `summary.json` and, on request,
//! `constraints.csv`; `<root>/<scenario>/sweep.csv` for sweeps.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use issf_wbc::sim::RunTrace;

use crate::runner::{RunOutcome, SweepResult};
use crate::Result;

pub const OUT_ENV: &str = "ISSF_WBC_OUT";
pub const DEFAULT_OUT: &str = "out";

/// Output root: `--out` if given, else `$ISSF_WBC_OUT`, else `out`.
pub fn output_root(cli: Option<&Path>) -> PathBuf {
    if let Some(p) = cli {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUT),
    }
}

pub fn run_dir(root: &Path, scenario: &str, mode: &str, alpha: &str, epsilon: &str) -> PathBuf {
    root.join(scenario).join(mode).join(format!("{alpha}_{epsilon}"))
}

fn push_vector(header: &mut Vec<String>, name: &str, n: usize) {
    header.extend((0..n).map(|i| format!("{name}[{i}]")));
}

fn write_values(line: &mut String, values: impl IntoIterator<Item = f64>) {
    for v in values {
        line.push(',');
        line.push_str(&v.to_string());
    }
}

/// One row per control cycle.
pub fn write_trace_csv<W: Write>(trace: &RunTrace, mut w: W) -> std::io::Result<()> {
    let n = trace.n_dof;
    let mut header = vec!["t".to_string()];
    for name in ["q", "qd", "qdot_des", "qdot_safe", "tau_cmd"] {
        push_vector(&mut header, name, n);
    }
    header.push("clamped".into());
    header.extend(trace.rows.iter().map(|r| format!("h[{}:{}]", r.kind, r.pair)));
    header.extend(
        ["d_inf", "dbar", "qp_iters", "qp_status", "relaxed", "dyn_residual"]
            .iter()
            .map(|s| s.to_string()),
    );
    writeln!(w, "{}", header.join(","))?;
    let mut line = String::new();
    for c in &trace.cycles {
        line.clear();
        line.push_str(&c.t.to_string());
        for v in [&c.q, &c.qd, &c.qdot_des, &c.qdot_safe, &c.tau_cmd] {
            write_values(&mut line, v.iter().copied());
        }
        line.push_str(if c.clamped { ",1" } else { ",0" });
        write_values(&mut line, c.h.iter().copied());
        write_values(&mut line, [c.d_inf, c.dbar]);
        line.push_str(&format!(
            ",{},{},{}",
            c.qp_iters,
            c.qp_status.as_str(),
            u8::from(c.relaxed)
        ));
        write_values(&mut line, [c.dynamics_residual]);
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Commanded torques and per-joint saturation flags.
pub fn write_torque_csv<W: Write>(trace: &RunTrace, mut w: W) -> std::io::Result<()> {
    let n = trace.n_dof;
    let mut header = vec!["t".to_string()];
    push_vector(&mut header, "tau_cmd", n);
    header.push("clamped".into());
    writeln!(w, "{}", header.join(","))?;
    for c in &trace.cycles {
        let mut line = c.t.to_string();
        write_values(&mut line, c.tau_cmd.iter().copied());
        line.push_str(if c.clamped { ",1" } else { ",0" });
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Every filter row of every cycle.
pub fn write_constraint_csv<W: Write>(trace: &RunTrace, mut w: W) -> std::io::Result<()> {
    writeln!(w, "t,kind,pair,h,rhs,active")?;
    for r in &trace.constraints {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.t,
            r.kind,
            r.pair,
            r.h,
            r.rhs,
            u8::from(r.active)
        )?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Write one run's files and return its directory.
pub fn persist_run(root: &Path, outcome: &RunOutcome, constraints: bool) -> Result<PathBuf> {
    let s = &outcome.summary;
    let dir = run_dir(root, &s.scenario, &s.mode, &s.alpha, &s.epsilon);
    fs::create_dir_all(&dir)?;
    let mut w = create(&dir.join("trace.csv"))?;
    write_trace_csv(&outcome.trace, &mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("torque.csv"))?;
    write_torque_csv(&outcome.trace, &mut w)?;
    w.flush()?;
    if constraints {
        let mut w = create(&dir.join("constraints.csv"))?;
        write_constraint_csv(&outcome.trace, &mut w)?;
        w.flush()?;
    }
    let json = serde_json::to_string_pretty(s)?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(dir)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn write_sweep_csv(root: &Path, result: &SweepResult) -> Result<PathBuf> {
    let dir = root.join(&result.scenario);
    fs::create_dir_all(&dir)?;
    let path = dir.join("sweep.csv");
    let mut w = create(&path)?;
    writeln!(
        w,
        "mode,alpha,epsilon,remaining_collision_ratio,collision_events,min_collision_h,mean_qdot_deviation,jitter,dbar,error"
    )?;
    for p in &result.points {
        let s = p.summary.as_ref();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            p.mode,
            p.alpha,
            p.epsilon,
            opt(p.remaining_collision_ratio),
            s.map_or_else(String::new, |s| s.collision_events.to_string()),
            opt(s.and_then(|s| s.min_collision_h)),
            opt(s.map(|s| s.mean_qdot_deviation)),
            opt(s.map(|s| s.jitter)),
            opt(s.map(|s| s.dbar)),
            p.error.as_deref().unwrap_or("").replace(',', ";"),
        )?;
    }
    w.flush()?;
    Ok(path)
}
