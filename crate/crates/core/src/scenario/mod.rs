//! Scenario loading, closed-loop runs, metrics and output files.

mod config;
mod emit;
mod metrics;
mod sim;

pub use config::{load_scenario, AttackConfig, CalibratedAttack, LeadProfile, ScenarioConfig};
pub use emit::{
    alarms_json, emit, summary_json, trace_header, write_eoi_plot, write_trace,
    write_transmissions, TRACE_FORMAT_VERSION,
};
pub use metrics::{
    compute_metrics, max_abs_eps1, steady_state_threshold, RunMetrics, EPS1_TRANSIENT,
    REFERENCE_DELAY_CONTINUOUS, REFERENCE_DELAY_EVENT, REFERENCE_STEADY_THRESHOLD,
};
pub use sim::{
    calibrate, run, simulate, FollowerRecord, RunOutput, Trace, TraceRecord, TransmissionEvent,
};
