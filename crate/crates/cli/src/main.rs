use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use platoon_core::scenario::{calibrate, emit, load_scenario, run, RunOutput};
use platoon_core::{CommMode, Error, RunMetrics, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "platoon-smo",
    version,
    about = "Platoon attack-detection simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trace, metrics and plot data.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        comm: Option<CommMode>,
        /// Simulated time in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Drop the scenario's attack.
        #[arg(long)]
        no_attack: bool,
    },
    /// Run `seeds` consecutive seeds in parallel and summarize their metrics.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report the attack-free steady-state threshold of the target follower.
    Calibrate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<CommMode, String> {
    s.parse()
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidParameter { .. } | Error::DwellUndefined { .. } => 2,
        Error::Io { .. } => 3,
        Error::Divergence { .. } => 4,
        Error::InsufficientHistory | Error::EmptyWindow => 1,
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "none".to_string(), |v| format!("{v:.3}"))
}

fn report(out: &RunOutput) {
    let m = &out.metrics;
    println!(
        "{} ({}, seed {}): detection delay {} s (reference {} s), false alarms {}, \
         steady threshold ({:.3}, {:.3}) (reference {}), transmissions {}",
        out.config.name,
        m.comm_mode,
        m.seed,
        fmt_opt(m.detection_delay),
        m.reference_delay,
        m.false_alarm_count,
        m.threshold_steady_state[0],
        m.threshold_steady_state[1],
        m.reference_steady_threshold,
        m.transmissions_count,
    );
}

fn cmd_run(
    scenario: &Path,
    seed: Option<u64>,
    out: &Path,
    comm: Option<CommMode>,
    duration: Option<f64>,
    no_attack: bool,
) -> Result<(), Error> {
    let mut cfg = load_scenario(scenario)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(mode) = comm {
        cfg.comm_mode = mode;
    }
    if let Some(d) = duration {
        cfg.duration = d;
    }
    if no_attack {
        cfg.attack.schedule.clear();
        cfg.attack.calibrated = None;
    }
    cfg.validate()?;
    let output = run(&cfg)?;
    let files = emit(&output, out)?;
    report(&output);
    for f in files {
        log::info!("wrote {}", f.display());
    }
    Ok(())
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn sweep_table(metrics: &[RunMetrics]) -> String {
    let mut s = String::from(
        "seed,detection_delay,false_alarms,alarms,threshold_1,threshold_2,transmissions,max_eps1_1,max_eps1_2\n",
    );
    for m in metrics {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            m.seed,
            m.detection_delay.map_or(String::new(), |d| d.to_string()),
            m.false_alarm_count,
            m.alarm_count,
            m.threshold_steady_state[0],
            m.threshold_steady_state[1],
            m.transmissions_count,
            m.max_abs_eps1[0],
            m.max_abs_eps1[1],
        ));
    }
    s
}

fn cmd_sweep(scenario: &Path, seeds: u64, out: &Path) -> Result<(), Error> {
    let base = load_scenario(scenario)?;
    let configs: Vec<ScenarioConfig> = (0..seeds)
        .map(|k| ScenarioConfig {
            seed: base.seed + k,
            ..base.clone()
        })
        .collect();
    let results: Vec<Result<RunMetrics, Error>> = configs
        .par_iter()
        .map(|cfg| run(cfg).map(|o| o.metrics))
        .collect();
    let metrics = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let delays: Vec<f64> = metrics.iter().filter_map(|m| m.detection_delay).collect();
    let summary = json!({
        "scenario": base.name,
        "comm_mode": base.comm_mode,
        "runs": metrics.len(),
        "false_alarms_total": metrics.iter().map(|m| m.false_alarm_count).sum::<usize>(),
        "detected_runs": delays.len(),
        "detection_delay_mean": mean(delays.iter().copied()),
        "detection_delay_max": delays.iter().copied().reduce(f64::max),
        "threshold_steady_state_mean": [
            mean(metrics.iter().map(|m| m.threshold_steady_state[0])),
            mean(metrics.iter().map(|m| m.threshold_steady_state[1])),
        ],
        "runs_detail": metrics,
    });

    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let json_path = out.join("sweep.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    fs::write(&json_path, text).map_err(|e| io_err(&json_path, e))?;
    let csv_path = out.join("sweep.csv");
    fs::write(&csv_path, sweep_table(&metrics)).map_err(|e| io_err(&csv_path, e))?;

    println!(
        "{} ({}): {} runs, false alarms {}, detected {}/{} (mean delay {} s, max {} s)",
        base.name,
        base.comm_mode,
        metrics.len(),
        summary["false_alarms_total"],
        delays.len(),
        metrics.len(),
        fmt_opt(mean(delays.iter().copied())),
        fmt_opt(delays.iter().copied().reduce(f64::max)),
    );
    Ok(())
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn cmd_calibrate(scenario: &Path) -> Result<(), Error> {
    let cfg = load_scenario(scenario)?;
    let steady = calibrate(&cfg)?;
    let report = json!({
        "scenario": cfg.name,
        "comm_mode": cfg.comm_mode,
        "target": cfg.attack.target,
        "threshold_steady_state": [steady[0], steady[1]],
        "reference_steady_threshold": platoon_core::scenario::REFERENCE_STEADY_THRESHOLD,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            comm,
            duration,
            no_attack,
        } => cmd_run(scenario, *seed, out, *comm, *duration, *no_attack),
        Command::Sweep {
            scenario,
            seeds,
            out,
        } => cmd_sweep(scenario, *seeds, out),
        Command::Calibrate { scenario } => cmd_calibrate(scenario),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
