//! Simulation and cyber-attack detection for CACC vehicle platoons.
//!
//! A string of vehicles under cooperative adaptive cruise control exchanges
//! intended accelerations over an event-triggered V2V link. Each follower
//! runs a sliding-mode observer on its spacing-error outputs; the filtered
//! output injection is compared against adaptive thresholds that are robust
//! to bounded sensor noise and to the error introduced by event triggering,
//! and doubles as an estimate of an injected payload offset.
//!
//! * [`dynamics`]: vehicle model, spacing policy, control law, noise.
//! * [`network`]: trigger rule, delivery, injected attacks.
//! * [`observer`]: sliding-mode observer and injection filter.
//! * [`thresholds`]: analytic bounds, OSA/MSA thresholds, alarms.
//! * [`estimator`]: attack magnitude estimate.
//! * [`scenario`]: configuration, closed-loop runs, metrics and outputs.

pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod network;
pub mod observer;
pub mod scenario;
pub mod thresholds;

pub use dynamics::{
    build_error_matrices, CaccGains, ErrorMatrices, NoiseModel, VehicleParams, VehicleState,
};
pub use error::{Error, Result};
pub use network::{AttackSignal, CommMode, TriggerConfig};
pub use observer::ObserverConfig;
pub use scenario::{load_scenario, run, RunMetrics, RunOutput, ScenarioConfig};
pub use thresholds::{AlarmEvent, BoundSet};
