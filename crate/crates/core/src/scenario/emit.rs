//! Output files of a run.
//!
//! * `trace.csv`: one header row, then one row per tick.
//! * `metrics.json`: run metrics, resolved attack, and the first alarms.
//! * `alarms.json`: every alarm of every follower.
//! * `plot_eoi.csv`: filtered injection, thresholds, injection and estimate
//!   of the attacked follower, with the transmission marker column.
//! * `plot_scenario.csv`: lead maneuver and injected attack.
//! * `transmissions.csv`: every delivery on every link.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::thresholds::AlarmEvent;

use super::sim::{RunOutput, Trace};

pub const TRACE_FORMAT_VERSION: u32 = 1;

/// Number of alarms listed individually in the summary.
const ALARM_LIST_LIMIT: usize = 100;

pub fn trace_header(vehicles: usize) -> String {
    let mut cols = vec!["t".to_string()];
    for i in 0..vehicles {
        for name in ["p", "v", "a", "u"] {
            cols.push(format!("{name}_{i}"));
        }
    }
    for i in 1..vehicles {
        for name in [
            "e", "edot", "ehat", "edothat", "eps1_1", "eps1_2", "eps2", "epsy_1", "epsy_2", "nu_1",
            "nu_2", "nufil_1", "nufil_2", "upper_1", "upper_2", "lower_1", "lower_2", "alarm",
            "comm", "phi", "duc", "duhat", "clamp",
        ] {
            cols.push(format!("{name}_{i}"));
        }
    }
    cols.join(",")
}

fn flag(b: bool) -> u8 {
    u8::from(b)
}

pub fn write_trace<W: Write>(trace: &Trace, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", trace_header(trace.vehicles))?;
    let mut line = String::with_capacity(1024);
    for r in &trace.records {
        line.clear();
        let _ = write!(line, "{}", r.t);
        for s in &r.vehicles {
            let _ = write!(line, ",{},{},{},{}", s.p, s.v, s.a, s.u);
        }
        for f in &r.followers {
            let _ = write!(
                line,
                ",{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                f.e,
                f.edot,
                f.e_hat,
                f.edot_hat,
                f.eps1[0],
                f.eps1[1],
                f.eps2,
                f.eps_y[0],
                f.eps_y[1],
                f.nu[0],
                f.nu[1],
                f.nu_fil[0],
                f.nu_fil[1],
                f.upper[0],
                f.upper[1],
                f.lower[0],
                f.lower[1],
                flag(f.alarm),
                flag(f.comm),
                f.phi,
                f.du_c,
                f.du_hat,
                flag(f.clamped),
            );
        }
        writeln!(w, "{line}")?;
    }
    w.flush()
}

pub fn write_eoi_plot<W: Write>(trace: &Trace, follower: usize, mut w: W) -> std::io::Result<()> {
    writeln!(w, "t,nufil_2,upper_2,lower_2,phi,duhat,duc,comm,alarm")?;
    for r in &trace.records {
        let f = &r.followers[follower - 1];
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.t,
            f.nu_fil[1],
            f.upper[1],
            f.lower[1],
            f.phi,
            f.du_hat,
            f.du_c,
            flag(f.comm),
            flag(f.alarm)
        )?;
    }
    w.flush()
}

pub fn write_scenario_plot<W: Write>(out: &RunOutput, mut w: W) -> std::io::Result<()> {
    writeln!(w, "t,lead_u,lead_v,phi")?;
    for r in &out.trace.records {
        let lead = &r.vehicles[0];
        writeln!(w, "{},{},{},{}", r.t, lead.u, lead.v, out.attack.value(r.t))?;
    }
    w.flush()
}

pub fn write_transmissions<W: Write>(trace: &Trace, mut w: W) -> std::io::Result<()> {
    writeln!(w, "t,link,payload,attacked")?;
    for e in &trace.transmissions {
        writeln!(w, "{},{},{},{}", e.t, e.link, e.payload, flag(e.attacked))?;
    }
    w.flush()
}

#[derive(Serialize)]
struct AlarmRecord<'a> {
    follower: usize,
    #[serde(flatten)]
    event: &'a AlarmEvent,
}

#[derive(Serialize)]
struct Summary<'a> {
    trace_format_version: u32,
    scenario: &'a str,
    attack_schedule: &'a [(f64, f64)],
    attack_target: usize,
    metrics: &'a super::metrics::RunMetrics,
    first_alarms: Vec<AlarmRecord<'a>>,
}

fn alarm_records(trace: &Trace) -> impl Iterator<Item = AlarmRecord<'_>> {
    trace.alarms.iter().map(|(follower, event)| AlarmRecord {
        follower: *follower,
        event,
    })
}

pub fn alarms_json(trace: &Trace) -> String {
    let all: Vec<_> = alarm_records(trace).collect();
    serde_json::to_string_pretty(&all).expect("alarms serialize")
}

pub fn summary_json(out: &RunOutput) -> String {
    let summary = Summary {
        trace_format_version: TRACE_FORMAT_VERSION,
        scenario: &out.config.name,
        attack_schedule: out.attack.schedule(),
        attack_target: out.config.attack.target,
        metrics: &out.metrics,
        first_alarms: alarm_records(&out.trace).take(ALARM_LIST_LIMIT).collect(),
    };
    serde_json::to_string_pretty(&summary).expect("summary serializes")
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<fs::File>)> {
    let path = dir.join(name);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok((path, BufWriter::new(file)))
}

/// Writes every output file of `out` into `dir` (created if missing).
pub fn emit(out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let (path, w) = create(dir, "trace.csv")?;
    write_trace(&out.trace, w).map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let (path, w) = create(dir, "plot_eoi.csv")?;
    write_eoi_plot(&out.trace, out.config.attack.target, w).map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let (path, w) = create(dir, "plot_scenario.csv")?;
    write_scenario_plot(out, w).map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let (path, w) = create(dir, "transmissions.csv")?;
    write_transmissions(&out.trace, w).map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = dir.join("metrics.json");
    fs::write(&path, summary_json(out) + "\n").map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = dir.join("alarms.json");
    fs::write(&path, alarms_json(&out.trace) + "\n").map_err(|e| Error::io(&path, e))?;
    written.push(path);

    Ok(written)
}
