//! Event-triggered V2V delivery of the predecessor's intended acceleration,
//! with an optional man-in-the-middle injection on the payload.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack on time comparisons so tick arithmetic in floating point does not
/// move a trigger by one sample.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommMode {
    /// The payload is refreshed every simulation step.
    Continuous,
    /// The payload is refreshed when the trigger rule fires.
    Event,
}

impl std::fmt::Display for CommMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CommMode::Continuous => f.write_str("continuous"),
            CommMode::Event => f.write_str("event"),
        }
    }
}

impl std::str::FromStr for CommMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "continuous" => Ok(CommMode::Continuous),
            "event" => Ok(CommMode::Event),
            other => Err(format!("unknown comm mode `{other}` (continuous|event)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerConfig {
    /// Minimum inter-transmission time (s).
    pub t_low: f64,
    /// Maximum inter-transmission time (s).
    pub t_high: f64,
    /// Drift of the sender's (position, velocity) measurement that triggers a send.
    pub dy_low: [f64; 2],
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            t_low: 0.1,
            t_high: 1.0,
            dy_low: [4.0, 0.5],
        }
    }
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_low > 0.0 && self.t_low < self.t_high && self.t_high.is_finite()) {
            return Err(Error::invalid(
                "trigger",
                format!(
                    "need 0 < t_low < t_high, got {} / {}",
                    self.t_low, self.t_high
                ),
            ));
        }
        if self.dy_low.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::invalid("dy_low", "components must be > 0"));
        }
        Ok(())
    }
}

/// Piecewise-constant injection `phi(t)`: each breakpoint `(t_k, phi_k)`
/// holds until the next one. Zero before the first breakpoint.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttackSignal {
    schedule: Vec<(f64, f64)>,
}

impl AttackSignal {
    pub fn new(mut schedule: Vec<(f64, f64)>) -> Result<Self> {
        if schedule
            .iter()
            .any(|(t, v)| !t.is_finite() || !v.is_finite())
        {
            return Err(Error::invalid("attack.schedule", "entries must be finite"));
        }
        schedule.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { schedule })
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn constant_from(onset: f64, magnitude: f64) -> Self {
        Self {
            schedule: vec![(onset, magnitude)],
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        // last breakpoint with t_k <= t
        let idx = self.schedule.partition_point(|(tk, _)| *tk <= t + TIME_EPS);
        if idx == 0 {
            0.0
        } else {
            self.schedule[idx - 1].1
        }
    }

    /// First instant with a nonzero injection, if any.
    pub fn onset(&self) -> Option<f64> {
        self.schedule
            .iter()
            .find(|(_, v)| *v != 0.0)
            .map(|(t, _)| *t)
    }

    pub fn is_empty(&self) -> bool {
        self.onset().is_none()
    }

    pub fn schedule(&self) -> &[(f64, f64)] {
        &self.schedule
    }
}

/// Per-link transmission bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommState {
    /// Last transmission time.
    pub tau_last: f64,
    /// Sender's (p, v) measurement at `tau_last`.
    pub y_ref: Vector2<f64>,
    /// Value delivered at `tau_last`.
    pub u_tilde_last: f64,
    /// Value delivered at the transmission before `tau_last`.
    pub u_tilde_prev: Option<f64>,
    /// Injection contained in `u_tilde_last`.
    pub phi_applied: f64,
    pub transmissions: u64,
}

impl CommState {
    /// The link starts with a transmission at `t0`.
    pub fn initial(u_true: f64, y_local: Vector2<f64>, t0: f64, attack: &AttackSignal) -> Self {
        let phi = attack.value(t0);
        Self {
            tau_last: t0,
            y_ref: y_local,
            u_tilde_last: u_true + phi,
            u_tilde_prev: None,
            phi_applied: phi,
            transmissions: 1,
        }
    }
}

pub fn trigger_check(cs: &CommState, y_local: &Vector2<f64>, t: f64, cfg: &TriggerConfig) -> bool {
    let elapsed = t - cs.tau_last;
    if elapsed >= cfg.t_high - TIME_EPS {
        return true;
    }
    if elapsed <= cfg.t_low + TIME_EPS {
        return false;
    }
    (0..2).any(|j| (cs.y_ref[j] - y_local[j]).abs() >= cfg.dy_low[j])
}

/// Delivers `u_true + phi(t)` and rotates the history.
pub fn transmit(
    cs: &CommState,
    u_true: f64,
    y_local: &Vector2<f64>,
    t: f64,
    attack: &AttackSignal,
) -> CommState {
    let phi = attack.value(t);
    CommState {
        tau_last: t,
        y_ref: *y_local,
        u_tilde_last: u_true + phi,
        u_tilde_prev: Some(cs.u_tilde_last),
        phi_applied: phi,
        transmissions: cs.transmissions + 1,
    }
}

/// Communication-induced part of the delivery error, `u~ - phi - u_true`.
pub fn comm_error(u_true: f64, cs: &CommState) -> f64 {
    cs.u_tilde_last - cs.phi_applied - u_true
}

/// Change of the delivered value over the last inter-transmission interval.
pub fn delta_u_bar(cs: &CommState) -> Result<f64> {
    cs.u_tilde_prev
        .map(|prev| cs.u_tilde_last - prev)
        .ok_or(Error::InsufficientHistory)
}

/// Watches the sender's true input between transmissions and flags windows
/// where the delivery error exceeded the change measured at the window's end,
/// i.e. where the input had an interior extremum.
#[derive(Debug, Clone, Copy, Default)]
pub struct WindowExtremum {
    start: f64,
    max_dev: f64,
}

impl WindowExtremum {
    pub fn reset(&mut self, u_at_send: f64) {
        self.start = u_at_send;
        self.max_dev = 0.0;
    }

    pub fn observe(&mut self, u_true: f64) {
        self.max_dev = self.max_dev.max((u_true - self.start).abs());
    }

    /// True when the window that ends at a send of `u_true_now` broke the
    /// monotonicity assumption beyond `tol`.
    pub fn violated(&self, u_true_now: f64, tol: f64) -> bool {
        self.max_dev > (u_true_now - self.start).abs() + tol
    }
}
